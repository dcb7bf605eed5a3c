//! Assembly of the disordered Holstein Hamiltonian on the truncated space.
//!
//! `H = γ J⊗1 + H_f` with
//! `H_f = V⊗1 + α Σ_u δ_u⊗(b_u + b_u†) + ω 1⊗Σ_u b_u†b_u + α²/ω`,
//! represented in the occupation basis of [`StateSpace`]. Ladder operators
//! carry the usual `√(n+1)` factors and any matrix element that would leave
//! the `N_ξ < K_tot` space is dropped.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::rng::keyed_unit;
use crate::sparse::SparseOperator;
use crate::state_space::{BasisIndex, Config, Lattice, StateSpace};

/// Maximum truncation loss tolerated by [`Model::displaced_state`].
pub const DISPLACED_LOSS_LIMIT: f64 = 1e-6;
/// Gram deviation above which re-orthonormalizing a displaced family is flagged.
pub const GRAM_TOLERANCE: f64 = 1e-6;
/// Gram deviation below which a displaced family is used as is.
pub const ORTHONORMAL_FLOOR: f64 = 1e-12;

/// Scalars of the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub dim: usize,
    /// Box radius `L`; sites satisfy `|u|_∞ < L`.
    pub radius: u32,
    /// Exclusive cap on the total excitation number of basis states.
    pub k_tot: u32,
    /// Per-site occupancy cap used for displacement matrices.
    pub m_site: u32,
    pub gamma: f64,
    pub omega: f64,
    pub alpha: f64,
    pub v_plus: f64,
    /// Excitation headroom a displaced state needs below `k_tot`.
    pub margin: u32,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            dim: 1,
            radius: 4,
            k_tot: 4,
            m_site: 12,
            gamma: 0.02,
            omega: 8.0,
            alpha: 0.5,
            v_plus: 1.0,
            margin: 2,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(invalid("d", "must be at least 1"));
        }
        if self.radius == 0 {
            return Err(invalid("L", "must be at least 1"));
        }
        if self.k_tot == 0 {
            return Err(invalid("k_tot", "must be at least 1"));
        }
        if self.m_site < self.k_tot {
            return Err(invalid("m_site", "per-site cap must be at least k_tot"));
        }
        for (name, v) in [
            ("gamma", self.gamma),
            ("omega", self.omega),
            ("alpha", self.alpha),
            ("v_plus", self.v_plus),
        ] {
            if !v.is_finite() {
                return Err(invalid(name, "must be finite"));
            }
        }
        if self.gamma < 0.0 {
            return Err(invalid("gamma", "hopping must be non-negative"));
        }
        if self.alpha < 0.0 {
            return Err(invalid("alpha", "coupling must be non-negative"));
        }
        if self.v_plus <= 0.0 {
            return Err(invalid("v_plus", "disorder amplitude must be positive"));
        }
        if self.omega <= self.v_plus {
            return Err(invalid("omega", "requires omega > v_plus"));
        }
        Ok(())
    }

    /// `β = α/ω`.
    pub fn beta(&self) -> f64 {
        self.alpha / self.omega
    }

    /// Width `V_+ + 4dγ` of each band `I_{n,γ}`.
    pub fn band_width(&self) -> f64 {
        self.v_plus + 4.0 * self.dim as f64 * self.gamma
    }

    pub fn n_sites(&self) -> usize {
        (2 * self.radius as usize - 1).pow(self.dim as u32)
    }
}

/// Single-site disorder law, given as a quantile function on `[0, 1)`.
pub trait DisorderLaw: Sync {
    fn quantile(&self, unit: f64) -> f64;
}

/// Uniform law on `[0, V_+]`.
#[derive(Debug, Clone, Copy)]
pub struct Uniform {
    pub v_plus: f64,
}

impl DisorderLaw for Uniform {
    fn quantile(&self, unit: f64) -> f64 {
        self.v_plus * unit
    }
}

/// One draw of the on-site potential.
#[derive(Debug, Clone, PartialEq)]
pub struct DisorderRealization {
    pub values: Vec<f64>,
    pub seed: u64,
}

impl DisorderRealization {
    /// Site `k` reads counter `k` of the keystream for `seed`.
    pub fn sample(n_sites: usize, law: &dyn DisorderLaw, seed: u64) -> Self {
        let values = (0..n_sites)
            .map(|k| law.quantile(keyed_unit(seed, 0, k as u64)))
            .collect();
        Self { values, seed }
    }

    /// A fixed potential, mostly for tests.
    pub fn from_values(values: Vec<f64>) -> Self {
        Self { values, seed: 0 }
    }
}

/// Uniform disorder on `[0, V_+]` keyed by `(seed, site)`.
pub fn sample_disorder(params: &ModelParams, seed: u64) -> DisorderRealization {
    DisorderRealization::sample(
        params.n_sites(),
        &Uniform {
            v_plus: params.v_plus,
        },
        seed,
    )
}

/// Tracer-sector Laplacian `⟨v|J|u⟩ = 2d δ_{uv} − δ_{|u−v|,1}` restricted to the box.
pub fn laplacian_matrix(lattice: &Lattice) -> SparseOperator {
    let diag = 2.0 * lattice.dim() as f64;
    let mut t = Vec::new();
    for u in 0..lattice.len() {
        t.push((u, u, diag));
        t.extend(lattice.neighbors(u).into_iter().map(|v| (u, v, -1.0)));
    }
    SparseOperator::from_triplets(lattice.len(), t).expect("indices are in range")
}

/// `e^{β(b†−b)}` in the single-site number basis `|0⟩..|M⟩`, from the
/// exponential of the truncated generator.
pub fn displacement_matrix(beta: f64, max_occupancy: u32) -> DMatrix<f64> {
    let n = max_occupancy as usize + 1;
    let mut gen = DMatrix::zeros(n, n);
    for k in 0..n - 1 {
        let s = ((k + 1) as f64).sqrt();
        gen[(k + 1, k)] = beta * s;
        gen[(k, k + 1)] = -beta * s;
    }
    gen.exp()
}

/// A displaced basis vector `|u⟩ ⊗ D_u|ξ⟩` projected to the truncated space.
#[derive(Debug, Clone)]
pub struct DisplacedState {
    pub site: usize,
    pub config: Config,
    /// Normalized nonzero amplitudes in the occupation basis.
    pub entries: Vec<(BasisIndex, f64)>,
    /// Squared norm lost to the total-excitation cap before renormalizing.
    pub loss: f64,
}

impl DisplacedState {
    pub fn to_dense(&self, dim: usize) -> DVector<f64> {
        let mut v = DVector::zeros(dim);
        for &(BasisIndex(i), a) in &self.entries {
            v[i] = a;
        }
        v
    }
}

/// Orthogonal projection onto a family of displaced states, stored as an
/// orthonormal range basis.
#[derive(Debug, Clone)]
pub struct DisplacedProjector {
    pub labels: Vec<(usize, Config)>,
    /// `dim × rank` matrix with orthonormal columns.
    pub range: DMatrix<f64>,
    /// `max |G − 1|` of the raw family's Gram matrix.
    pub gram_defect: f64,
    /// Largest truncation loss among the raw family.
    pub max_loss: f64,
    pub reorthonormalized: bool,
}

impl DisplacedProjector {
    pub fn rank(&self) -> usize {
        self.range.ncols()
    }

    pub fn dim(&self) -> usize {
        self.range.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.range.norm_squared()
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.range * (self.range.transpose() * v)
    }

    /// Frobenius norm of `R² − R`.
    pub fn idempotency_defect(&self) -> f64 {
        let g = self.range.transpose() * &self.range;
        let r = self.rank();
        let dg = g.clone() - DMatrix::identity(r, r);
        // R² − R = F (G − 1) Fᵀ; ‖·‖_F² = tr(G (G−1) G (G−1))
        let a = &g * &dg;
        (a.transpose().component_mul(&a)).sum().max(0.0).sqrt()
    }

    /// Number of singular values of the range above `threshold`.
    pub fn numerical_rank(&self, threshold: f64) -> usize {
        if self.rank() == 0 {
            return 0;
        }
        let g = self.range.transpose() * &self.range;
        g.symmetric_eigenvalues().iter().filter(|&&x| x > threshold).count()
    }

    pub fn to_operator(&self, drop_below: f64) -> SparseOperator {
        let dense = &self.range * self.range.transpose();
        SparseOperator::from_dense(&dense, drop_below).expect("square")
    }
}

/// Model on a fixed truncated space; disorder enters per assembly call.
#[derive(Debug, Clone)]
pub struct Model {
    params: ModelParams,
    space: StateSpace,
    // D(−β): the field eigenvectors are e^{−β(b†−b)}|ξ⟩ for this sign of the coupling
    displacement: DMatrix<f64>,
}

impl Model {
    pub fn new(params: ModelParams) -> Result<Self> {
        params.validate()?;
        let lattice = Lattice::new(params.dim, params.radius)?;
        let space = StateSpace::new(lattice, params.k_tot)?;
        let displacement = displacement_matrix(-params.beta(), params.m_site);
        Ok(Self {
            params,
            space,
            displacement,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn lattice(&self) -> &Lattice {
        self.space.lattice()
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn sample_disorder(&self, seed: u64) -> DisorderRealization {
        sample_disorder(&self.params, seed)
    }

    fn check_disorder(&self, disorder: &DisorderRealization) -> Result<()> {
        if disorder.values.len() != self.lattice().len() {
            return Err(Error::DimensionMismatch {
                expected: self.lattice().len(),
                got: disorder.values.len(),
            });
        }
        Ok(())
    }

    /// `J ⊗ 1` on the full truncated space.
    pub fn hopping(&self) -> SparseOperator {
        let lat = self.lattice();
        let diag = 2.0 * lat.dim() as f64;
        let neighbors: Vec<Vec<usize>> = (0..lat.len()).map(|u| lat.neighbors(u)).collect();
        let n = lat.len();
        let mut t = Vec::with_capacity(self.dim() * (1 + 2 * lat.dim()));
        for i in 0..self.dim() {
            let u = i % n;
            t.push((i, i, diag));
            t.extend(neighbors[u].iter().map(|&v| (i, i - u + v, -1.0)));
        }
        SparseOperator::from_triplets(self.dim(), t).expect("indices are in range")
    }

    pub fn field_hamiltonian(&self, disorder: &DisorderRealization) -> Result<SparseOperator> {
        self.check_disorder(disorder)?;
        let p = &self.params;
        let shift = p.alpha * p.alpha / p.omega;
        let n = self.lattice().len();
        let mut t = Vec::with_capacity(3 * self.dim());
        for (c_rank, config) in self.space.configs().iter().enumerate() {
            for u in 0..n {
                let i = c_rank * n + u;
                let diag = disorder.values[u] + p.omega * config.total() as f64 + shift;
                t.push((i, i, diag));
                if p.alpha != 0.0 && config.total() + 1 < p.k_tot {
                    let occ = config.occupancy(u);
                    let up = config.with_occupancy(u, occ + 1);
                    let j = self.space.rank_state(u, &up)?.0;
                    let v = p.alpha * ((occ + 1) as f64).sqrt();
                    t.push((i, j, v));
                    t.push((j, i, v));
                }
            }
        }
        SparseOperator::from_triplets(self.dim(), t)
    }

    /// `H = γ J⊗1 + H_f`.
    pub fn hamiltonian(&self, disorder: &DisorderRealization) -> Result<SparseOperator> {
        let hf = self.field_hamiltonian(disorder)?;
        if self.params.gamma == 0.0 {
            return Ok(hf);
        }
        hf.add_scaled(&self.hopping(), self.params.gamma)
    }

    /// Displaced vector without the margin/loss checks.
    pub fn displaced_state_unchecked(&self, site: usize, config: &Config) -> Result<DisplacedState> {
        self.space.rank_state(site, config)?;
        let n0 = config.occupancy(site) as usize;
        if n0 > self.params.m_site as usize {
            return Err(Error::ExceedsCap {
                total: n0 as u32,
                cap: self.params.m_site + 1,
            });
        }
        let others = config.total() - n0 as u32;
        let mut entries = Vec::new();
        let mut kept = 0.0;
        for m in 0..=self.params.m_site {
            if others + m >= self.params.k_tot {
                break;
            }
            let a = self.displacement[(m as usize, n0)];
            if a != 0.0 {
                let idx = self.space.rank_state(site, &config.with_occupancy(site, m))?;
                entries.push((idx, a));
                kept += a * a;
            }
        }
        let norm = kept.sqrt();
        entries.iter_mut().for_each(|(_, a)| *a /= norm);
        entries.sort_by_key(|e| e.0);
        Ok(DisplacedState {
            site,
            config: config.clone(),
            entries,
            loss: (1.0 - kept).max(0.0),
        })
    }

    /// `|u, ξ⟩ = |u⟩ ⊗ D_u|ξ⟩` with the displacement acting on site `u` only.
    pub fn displaced_state(&self, site: usize, config: &Config) -> Result<DisplacedState> {
        if config.total() + self.params.margin >= self.params.k_tot {
            return Err(invalid(
                "margin",
                format!(
                    "N_ξ = {} needs N_ξ < k_tot − margin = {}",
                    config.total(),
                    self.params.k_tot as i64 - self.params.margin as i64
                ),
            ));
        }
        let state = self.displaced_state_unchecked(site, config)?;
        if state.loss > DISPLACED_LOSS_LIMIT {
            return Err(Error::TruncationLoss {
                loss: state.loss,
                limit: DISPLACED_LOSS_LIMIT,
            });
        }
        Ok(state)
    }

    /// Dense displaced vector, checked.
    pub fn displaced_vector(&self, site: usize, config: &Config) -> Result<DVector<f64>> {
        Ok(self.displaced_state(site, config)?.to_dense(self.dim()))
    }

    /// `R_{L',K'}`: projection onto displaced states with tracer in
    /// `{|u| < radius}` and fewer than `cap` excitations supported there.
    ///
    /// A radius of `f64::INFINITY` gives the full box. A raw family whose Gram
    /// deviation exceeds [`ORTHONORMAL_FLOOR`] is symmetrically
    /// re-orthonormalized; deviations above [`GRAM_TOLERANCE`] are flagged.
    pub fn displaced_projector(&self, radius: f64, cap: u32) -> Result<DisplacedProjector> {
        let sites = self.lattice().sites_within(radius);
        let cap = cap.min(self.params.k_tot);
        let mut labels = Vec::new();
        let mut cols = Vec::new();
        let mut max_loss: f64 = 0.0;
        for config in self.space.configs() {
            if config.total() >= cap || !config.is_supported_in(&sites) {
                continue;
            }
            for &u in &sites {
                let s = self.displaced_state_unchecked(u, config)?;
                max_loss = max_loss.max(s.loss);
                cols.push(s.to_dense(self.dim()));
                labels.push((u, config.clone()));
            }
        }
        let mut range = if cols.is_empty() {
            DMatrix::zeros(self.dim(), 0)
        } else {
            DMatrix::from_columns(&cols)
        };
        let r = range.ncols();
        let gram = range.transpose() * &range;
        let gram_defect = (gram.clone() - DMatrix::identity(r, r)).amax();
        let reorthonormalized = gram_defect > GRAM_TOLERANCE;
        // small defects are also removed so the result is a projection to rounding
        if gram_defect > ORTHONORMAL_FLOOR {
            let eig = gram.symmetric_eigen();
            if eig.eigenvalues.min() <= 1e-12 {
                return Err(Error::NotOrthonormal {
                    deviation: gram_defect,
                });
            }
            let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|x| 1.0 / x.sqrt()));
            let w = &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose();
            range *= w;
        }
        Ok(DisplacedProjector {
            labels,
            range,
            gram_defect,
            max_loss,
            reorthonormalized,
        })
    }
}
