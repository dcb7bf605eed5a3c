//! Diagonalization, spectral measures and the band structure `J_N = ∪ I_{n,γ}`.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::krylov::{shift_invert_window, WindowOptions};
use crate::model::ModelParams;
use crate::sparse::SparseOperator;

/// Largest dimension handled by dense diagonalization.
pub const DENSE_LIMIT: usize = 4000;
/// Residual and orthonormality threshold of an accepted eigensystem.
pub const CERTIFICATE_TOL: f64 = 1e-8;
/// Atoms this close to a band edge count as inside.
pub const EDGE_TOL: f64 = 1e-12;

/// Orthonormal eigenpairs sorted by energy, with their certificates.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub energies: Vec<f64>,
    /// Column `j` is the eigenvector of `energies[j]`.
    pub vectors: DMatrix<f64>,
    /// `max_j ‖Hφ_j − E_jφ_j‖ / ‖H‖`.
    pub max_residual: f64,
    /// `max |ΦᵀΦ − 1|`.
    pub gram_deviation: f64,
    /// `false` for a windowed (iterative) decomposition.
    pub complete: bool,
}

impl EigenSystem {
    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.nrows()
    }

    /// `⟨φ_j, ψ⟩` for all `j`.
    pub fn coefficients(&self, psi: &DVector<f64>) -> DVector<f64> {
        self.vectors.tr_mul(psi)
    }

    /// `Σ_j φ_j c_j`.
    pub fn synthesize(&self, coeffs: &DVector<f64>) -> DVector<f64> {
        &self.vectors * coeffs
    }

    fn certify(mut self, h: &SparseOperator) -> Result<Self> {
        let norm = h.norm_bound().max(f64::MIN_POSITIVE);
        let mut worst: f64 = 0.0;
        for (j, &e) in self.energies.iter().enumerate() {
            let v = self.vectors.column(j).into_owned();
            let r = (h.mul_vec(&v) - &v * e).norm();
            worst = worst.max(r / norm);
        }
        let k = self.len();
        let gram = self.vectors.tr_mul(&self.vectors) - DMatrix::identity(k, k);
        self.max_residual = worst;
        self.gram_deviation = if k == 0 { 0.0 } else { gram.amax() };
        if self.max_residual >= CERTIFICATE_TOL || self.gram_deviation >= CERTIFICATE_TOL {
            return Err(Error::Certificate {
                residual: self.max_residual,
                gram: self.gram_deviation,
            });
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DiagonalizeOptions {
    pub dense_limit: usize,
    /// Energy window for the iterative path.
    pub window: Option<(f64, f64)>,
}

impl Default for DiagonalizeOptions {
    fn default() -> Self {
        Self {
            dense_limit: DENSE_LIMIT,
            window: None,
        }
    }
}

/// Full dense decomposition of a Hermitian operator.
pub fn diagonalize(h: &SparseOperator) -> Result<EigenSystem> {
    diagonalize_with(h, &DiagonalizeOptions::default())
}

pub fn diagonalize_with(h: &SparseOperator, opts: &DiagonalizeOptions) -> Result<EigenSystem> {
    if !h.is_hermitian() {
        return Err(Error::NotHermitian);
    }
    if h.dim() <= opts.dense_limit {
        let eig = h.to_dense().symmetric_eigen();
        let mut order: Vec<usize> = (0..h.dim()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let energies = order.iter().map(|&j| eig.eigenvalues[j]).collect();
        let cols: Vec<_> = order.iter().map(|&j| eig.eigenvectors.column(j)).collect();
        let vectors = if cols.is_empty() {
            DMatrix::zeros(0, 0)
        } else {
            DMatrix::from_columns(&cols)
        };
        return EigenSystem {
            energies,
            vectors,
            max_residual: 0.0,
            gram_deviation: 0.0,
            complete: true,
        }
        .certify(h);
    }
    let (lo, hi) = opts
        .window
        .ok_or_else(|| invalid("window", "dimension exceeds the dense limit; an energy window is required"))?;
    let (energies, vectors) = shift_invert_window(h, &WindowOptions::new(lo, hi))?;
    EigenSystem {
        energies,
        vectors,
        max_residual: 0.0,
        gram_deviation: 0.0,
        complete: false,
    }
    .certify(h)
}

/// Sorted eigenvalues only (dense).
pub fn eigenvalues(h: &SparseOperator) -> Result<Vec<f64>> {
    if !h.is_hermitian() {
        return Err(Error::NotHermitian);
    }
    let mut e: Vec<f64> = h.to_dense().symmetric_eigenvalues().iter().copied().collect();
    e.sort_by(f64::total_cmp);
    Ok(e)
}

/// Finite atomic measure `Σ_j w_j δ_{E_j}` sorted by energy.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMeasure {
    pub atoms: Vec<(f64, f64)>,
}

impl SpectralMeasure {
    /// Sorts the atoms; weights must be finite and non-negative.
    pub fn new(mut atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.iter().any(|&(e, w)| !e.is_finite() || !w.is_finite() || w < 0.0) {
            return Err(invalid("atoms", "energies must be finite and weights non-negative"));
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self { atoms })
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    pub fn first_moment(&self) -> f64 {
        self.atoms.iter().map(|a| a.0 * a.1).sum()
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Drops atoms of weight `≤ floor`.
    pub fn without_small(&self, floor: f64) -> Self {
        Self {
            atoms: self.atoms.iter().copied().filter(|a| a.1 > floor).collect(),
        }
    }

    /// Merges atoms whose energies are within `tol` of the previous one.
    pub fn merged(&self, tol: f64) -> Self {
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(self.atoms.len());
        for &(e, w) in &self.atoms {
            match out.last_mut() {
                Some(last) if e - last.0 <= tol => {
                    let m = last.1 + w;
                    if m > 0.0 {
                        last.0 = (last.0 * last.1 + e * w) / m;
                    }
                    last.1 = m;
                }
                _ => out.push((e, w)),
            }
        }
        Self { atoms: out }
    }

    /// Smallest distance between consecutive atoms of positive weight.
    pub fn min_gap(&self) -> Option<f64> {
        let pos: Vec<f64> = self.atoms.iter().filter(|a| a.1 > 0.0).map(|a| a.0).collect();
        pos.windows(2).map(|w| w[1] - w[0]).reduce(f64::min)
    }
}

/// Spectral measure of `ψ` in an eigensystem together with any missing mass.
#[derive(Debug, Clone)]
pub struct MeasureWithDeficit {
    pub measure: SpectralMeasure,
    /// `‖ψ‖² − Σ w_j`; nonzero only for windowed eigensystems.
    pub mass_deficit: f64,
}

/// Atoms `(E_j, |⟨φ_j, ψ⟩|²)`.
pub fn spectral_measure(es: &EigenSystem, psi: &DVector<f64>) -> MeasureWithDeficit {
    let c = es.coefficients(psi);
    let atoms: Vec<(f64, f64)> = es.energies.iter().zip(c.iter()).map(|(&e, &x)| (e, x * x)).collect();
    let measure = SpectralMeasure { atoms };
    let mass_deficit = psi.norm_squared() - measure.total_mass();
    MeasureWithDeficit {
        measure,
        mass_deficit,
    }
}

impl MeasureWithDeficit {
    pub fn is_complete(&self) -> bool {
        self.mass_deficit <= 1e-8
    }
}

/// Bands `I_{n,γ} = (nω, nω + width)` for `n = 0..=n_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandSet {
    pub omega: f64,
    pub width: f64,
    pub n_max: u32,
}

impl BandSet {
    pub fn new(params: &ModelParams, n_max: u32) -> Self {
        Self {
            omega: params.omega,
            width: params.band_width(),
            n_max,
        }
    }

    pub fn intervals(&self) -> Vec<(f64, f64)> {
        (0..=self.n_max)
            .map(|n| (n as f64 * self.omega, n as f64 * self.omega + self.width))
            .collect()
    }

    pub fn is_disjoint(&self) -> bool {
        self.omega > self.width
    }

    /// Index of the band containing `e`, edges included within [`EDGE_TOL`].
    pub fn band_of(&self, e: f64) -> Option<u32> {
        let n = (e / self.omega).floor();
        [n, n - 1.0, n + 1.0]
            .into_iter()
            .filter(|&k| k >= 0.0 && k <= self.n_max as f64)
            .find(|&k| {
                let lo = k * self.omega;
                e >= lo - EDGE_TOL && e <= lo + self.width + EDGE_TOL
            })
            .map(|k| k as u32)
    }

    pub fn contains(&self, e: f64) -> bool {
        self.band_of(e).is_some()
    }
}

/// `χ_{J_N} ψ = Σ_{E_j ∈ J_N} φ_j ⟨φ_j, ψ⟩`.
pub fn band_filter(es: &EigenSystem, psi: &DVector<f64>, bands: &BandSet) -> DVector<f64> {
    let mut c = es.coefficients(psi);
    for (j, &e) in es.energies.iter().enumerate() {
        if !bands.contains(e) {
            c[j] = 0.0;
        }
    }
    es.synthesize(&c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContainmentRow {
    pub energy: f64,
    pub band: u32,
    pub defect: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContainmentReport {
    pub rows: Vec<ContainmentRow>,
    pub max_defect: f64,
}

/// Distance of each low eigenvalue from its nearest band `[nω, nω + V_+ + 4dγ]`.
///
/// Only eigenvalues below `(n_max+1)ω` with band index `n ≤ k_tot − 2` are
/// reported; the top retained sector is distorted by the excitation cap.
pub fn band_containment_report(energies: &[f64], params: &ModelParams, n_max: u32) -> Result<ContainmentReport> {
    let width = params.band_width();
    if params.omega <= width {
        return Err(invalid("gamma", "bands overlap: requires omega > v_plus + 4 d gamma"));
    }
    let top = params.k_tot.saturating_sub(2).min(n_max);
    let mut rows = Vec::new();
    for &e in energies {
        if e >= (n_max as f64 + 1.0) * params.omega {
            continue;
        }
        let n = (e / params.omega).round().max(0.0);
        if n > top as f64 || params.k_tot < 2 {
            continue;
        }
        let lo = n * params.omega;
        let defect = 0f64.max(lo - e).max(e - lo - width);
        rows.push(ContainmentRow {
            energy: e,
            band: n as u32,
            defect,
        });
    }
    let max_defect = rows.iter().map(|r| r.defect).fold(0.0, f64::max);
    Ok(ContainmentReport { rows, max_defect })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag_op(d: &[f64]) -> SparseOperator {
        SparseOperator::from_triplets(d.len(), d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect()).unwrap()
    }

    #[test]
    fn diagonal_input() {
        let es = diagonalize(&diag_op(&[3.0, -1.0, 2.0])).unwrap();
        assert_eq!(es.energies, vec![-1.0, 2.0, 3.0]);
        assert_eq!(es.vectors.column(0).iter().map(|x| x.abs()).collect::<Vec<_>>(), vec![0.0, 1.0, 0.0]);
        assert!(es.complete);
    }

    #[test]
    fn non_hermitian_rejected() {
        let h = SparseOperator::from_triplets(2, vec![(0, 1, 1.0)]).unwrap();
        assert!(matches!(diagonalize(&h), Err(Error::NotHermitian)));
    }

    #[test]
    fn reconstruction() {
        let n = 30;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, (i as f64 * 0.37).sin()));
            if i + 3 < n {
                t.push((i, i + 3, 0.2));
                t.push((i + 3, i, 0.2));
            }
        }
        let h = SparseOperator::from_triplets(n, t).unwrap();
        let es = diagonalize(&h).unwrap();
        let e = DMatrix::from_diagonal(&DVector::from_vec(es.energies.clone()));
        let rebuilt = &es.vectors * e * es.vectors.transpose();
        assert!((rebuilt - h.to_dense()).amax() < 1e-8 * h.norm_bound());
    }

    #[test]
    fn measure_examples() {
        let es = diagonalize(&diag_op(&[0.5, 1.5, 2.5])).unwrap();
        let psi = es.vectors.column(1).into_owned();
        let m = spectral_measure(&es, &psi);
        let heavy: Vec<_> = m.measure.atoms.iter().filter(|a| a.1 > 0.0).collect();
        assert_eq!(heavy, vec![&(1.5, 1.0)]);
        let psi = DVector::from_vec(vec![1.0, 2.0, -1.0]);
        let m = spectral_measure(&es, &psi);
        assert!((m.measure.total_mass() - 6.0).abs() < 1e-12);
        assert!((m.measure.first_moment() - (0.5 + 6.0 + 2.5)).abs() < 1e-12);
        assert!(m.is_complete());
    }

    #[test]
    fn band_membership() {
        let b = BandSet {
            omega: 8.0,
            width: 1.2,
            n_max: 1,
        };
        assert!(b.is_disjoint());
        assert_eq!(b.band_of(0.0), Some(0));
        assert_eq!(b.band_of(1.2 + 5e-13), Some(0));
        assert_eq!(b.band_of(8.5), Some(1));
        assert_eq!(b.band_of(4.0), None);
        assert_eq!(b.band_of(16.5), None);
        assert_eq!(b.band_of(-1e-13), Some(0));
    }

    #[test]
    fn filter_examples() {
        let es = diagonalize(&diag_op(&[0.5, 4.0, 8.2, 20.0])).unwrap();
        let psi = DVector::from_vec(vec![1.0, 1.0, 1.0, 1.0]);
        let wide = BandSet {
            omega: 8.0,
            width: 7.9,
            n_max: 0,
        };
        let f = band_filter(&es, &psi, &wide);
        assert_eq!(f, DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0]));
        let b = BandSet {
            omega: 8.0,
            width: 1.0,
            n_max: 1,
        };
        let f = band_filter(&es, &psi, &b);
        assert_eq!(band_filter(&es, &f, &b), f);
        let rest = &psi - &f;
        assert!((f.norm_squared() + rest.norm_squared() - psi.norm_squared()).abs() < 1e-12);
        let none = BandSet {
            omega: 100.0,
            width: 0.1,
            n_max: 0,
        };
        assert_eq!(band_filter(&es, &psi, &none), DVector::zeros(4));
    }

    #[test]
    fn containment_rows() {
        let p = ModelParams {
            gamma: 0.0,
            ..ModelParams::default()
        };
        let r = band_containment_report(&[0.2, 0.99, 8.5, 9.01, 17.0, 30.0], &p, 3).unwrap();
        // k_tot = 4 keeps bands 0..=2
        assert_eq!(r.rows.len(), 5);
        assert!((r.max_defect - 0.01).abs() < 1e-12);
        let bad = ModelParams {
            gamma: 2.0,
            ..ModelParams::default()
        };
        assert!(band_containment_report(&[0.0], &bad, 1).is_err());
    }
}
