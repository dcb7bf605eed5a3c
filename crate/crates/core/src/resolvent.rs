//! Green's function elements `⟨a|(H − z)^{-1}|b⟩`, fractional moments over
//! disorder, exponential decay fits and the contour representation of band
//! projections.

use nalgebra::{Complex, DMatrix, DVector, SymmetricTridiagonal};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::metric::{decay_exponent, LabeledState};
use crate::model::{DisorderRealization, Model};
use crate::rng::task_seed;
use crate::sparse::SparseOperator;
use crate::spectral::{EigenSystem, DENSE_LIMIT};
use crate::state_space::Lattice;

type C64 = Complex<f64>;

/// Relative residual demanded of every solve.
pub const SOLVE_TOL: f64 = 1e-10;
/// Smallest accepted `|Im z|`.
pub const MIN_IMAG: f64 = 1e-12;

/// Solves a tridiagonal system in place by Gaussian elimination with partial
/// pivoting. `dl` and `du` have length `n − 1`; all three bands are clobbered.
fn solve_tridiagonal(dl: &mut [C64], d: &mut [C64], du: &mut [C64], b: &mut [C64]) -> Result<()> {
    let n = d.len();
    let singular = || Error::NoConvergence { residual: f64::INFINITY };
    if n == 0 {
        return Ok(());
    }
    // second superdiagonal fill-in
    let mut du2 = vec![C64::new(0.0, 0.0); n.saturating_sub(2)];
    for i in 0..n - 1 {
        if d[i].norm() >= dl[i].norm() {
            if d[i] == C64::new(0.0, 0.0) {
                return Err(singular());
            }
            let fact = dl[i] / d[i];
            d[i + 1] -= fact * du[i];
            b[i + 1] -= fact * b[i];
        } else {
            let fact = d[i] / dl[i];
            d[i] = dl[i];
            let temp = d[i + 1];
            d[i + 1] = du[i] - fact * temp;
            if i + 2 < n {
                du2[i] = du[i + 1];
                du[i + 1] = -fact * du2[i];
            }
            du[i] = temp;
            let tb = b[i];
            b[i] = b[i + 1];
            b[i + 1] = tb - fact * b[i + 1];
        }
    }
    if d[n - 1] == C64::new(0.0, 0.0) {
        return Err(singular());
    }
    b[n - 1] /= d[n - 1];
    if n > 1 {
        b[n - 2] = (b[n - 2] - du[n - 2] * b[n - 1]) / d[n - 2];
    }
    for i in (0..n.saturating_sub(2)).rev() {
        b[i] = (b[i] - du[i] * b[i + 1] - du2[i] * b[i + 2]) / d[i];
    }
    Ok(())
}

fn split(v: &DVector<C64>) -> (DVector<f64>, DVector<f64>) {
    (v.map(|c| c.re), v.map(|c| c.im))
}

fn join(re: &DVector<f64>, im: &DVector<f64>) -> DVector<C64> {
    DVector::from_fn(re.len(), |i, _| C64::new(re[i], im[i]))
}

#[derive(Debug, Clone)]
enum Backend {
    /// `H = Q T Qᵀ` with `T` tridiagonal.
    Tridiagonal {
        q: DMatrix<f64>,
        diag: Vec<f64>,
        off: Vec<f64>,
    },
    /// Conjugate gradients on `(H − E)² + η²`.
    Iterative,
}

/// Reusable resolvent `(H − z)^{-1}` of a real symmetric operator.
#[derive(Debug, Clone)]
pub struct Resolvent {
    h: SparseOperator,
    backend: Backend,
}

impl Resolvent {
    pub fn new(h: &SparseOperator) -> Result<Self> {
        Self::with_dense_limit(h, DENSE_LIMIT)
    }

    pub fn with_dense_limit(h: &SparseOperator, dense_limit: usize) -> Result<Self> {
        if !h.is_hermitian() {
            return Err(Error::NotHermitian);
        }
        let backend = if h.dim() <= dense_limit {
            let (q, diag, off) = SymmetricTridiagonal::new(h.to_dense()).unpack();
            Backend::Tridiagonal {
                q,
                diag: diag.iter().copied().collect(),
                off: off.iter().copied().collect(),
            }
        } else {
            Backend::Iterative
        };
        Ok(Self { h: h.clone(), backend })
    }

    pub fn dim(&self) -> usize {
        self.h.dim()
    }

    pub fn operator(&self) -> &SparseOperator {
        &self.h
    }

    pub fn is_direct(&self) -> bool {
        matches!(self.backend, Backend::Tridiagonal { .. })
    }

    /// `(H − z) x = b`, certified to [`SOLVE_TOL`] relative residual.
    pub fn solve(&self, z: C64, b: &DVector<C64>) -> Result<DVector<C64>> {
        if z.im.abs() < MIN_IMAG {
            return Err(invalid("z", "|Im z| must be at least 1e-12"));
        }
        if b.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: b.len(),
            });
        }
        let bn = b.norm();
        if bn == 0.0 {
            return Ok(DVector::zeros(b.len()));
        }
        let mut x = self.raw_solve(z, b)?;
        let mut res = self.residual(z, &x, b);
        for _ in 0..3 {
            if res.norm() < SOLVE_TOL * bn {
                return Ok(x);
            }
            x += self.raw_solve(z, &res)?;
            res = self.residual(z, &x, b);
        }
        let r = res.norm() / bn;
        if r < SOLVE_TOL {
            Ok(x)
        } else {
            Err(Error::NoConvergence { residual: r })
        }
    }

    pub fn solve_real(&self, z: C64, b: &DVector<f64>) -> Result<DVector<C64>> {
        self.solve(z, &b.map(|v| C64::new(v, 0.0)))
    }

    /// `⟨a|(H − z)^{-1}|b⟩` for real `a`, `b`.
    pub fn element(&self, z: C64, a: &DVector<f64>, b: &DVector<f64>) -> Result<C64> {
        let x = self.solve_real(z, b)?;
        Ok(a.iter().zip(x.iter()).map(|(&ai, &xi)| xi * ai).sum())
    }

    /// `b − (H − z) x`.
    fn residual(&self, z: C64, x: &DVector<C64>, b: &DVector<C64>) -> DVector<C64> {
        let hx = self.h.mul_vec(x);
        b - (hx - x * z)
    }

    fn raw_solve(&self, z: C64, b: &DVector<C64>) -> Result<DVector<C64>> {
        match &self.backend {
            Backend::Tridiagonal { q, .. } => {
                let (re, im) = split(b);
                let y = join(&q.tr_mul(&re), &q.tr_mul(&im));
                let w = self.tridiagonal_shifted_solve(z, &y)?;
                let (wr, wi) = split(&w);
                Ok(join(&(q * wr), &(q * wi)))
            }
            Backend::Iterative => self.normal_equation_solve(z, b),
        }
    }

    /// `(T − z)^{-1} y` in tridiagonal coordinates.
    fn tridiagonal_shifted_solve(&self, z: C64, y: &DVector<C64>) -> Result<DVector<C64>> {
        let Backend::Tridiagonal { diag, off, .. } = &self.backend else {
            return Err(invalid("backend", "tridiagonal coordinates need the direct backend"));
        };
        let mut d: Vec<C64> = diag.iter().map(|&a| C64::new(a, 0.0) - z).collect();
        let mut dl: Vec<C64> = off.iter().map(|&b| C64::new(b, 0.0)).collect();
        let mut du = dl.clone();
        let mut x: Vec<C64> = y.iter().copied().collect();
        solve_tridiagonal(&mut dl, &mut d, &mut du, &mut x)?;
        Ok(DVector::from_vec(x))
    }

    /// `x = (H − z̄) y` with `((H − E)² + η²) y = b` solved by CG, per real component.
    fn normal_equation_solve(&self, z: C64, b: &DVector<C64>) -> Result<DVector<C64>> {
        let (e, eta) = (z.re, z.im);
        let apply = |v: &DVector<f64>| {
            let s = self.h.mul_vec(v) - v * e;
            self.h.mul_vec(&s) - &s * e + v * (eta * eta)
        };
        let (br, bi) = split(b);
        let yr = conjugate_gradient(&apply, &br, 1e-14, 20 * b.len())?;
        let yi = conjugate_gradient(&apply, &bi, 1e-14, 20 * b.len())?;
        let y = join(&yr, &yi);
        let hy = self.h.mul_vec(&y);
        Ok(hy - y * z.conj())
    }
}

fn conjugate_gradient(
    apply: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    b: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<DVector<f64>> {
    let bn = b.norm();
    let mut x = DVector::zeros(b.len());
    if bn == 0.0 {
        return Ok(x);
    }
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = r.norm_squared();
    for _ in 0..max_iter {
        if rr.sqrt() < tol * bn {
            return Ok(x);
        }
        let ap = apply(&p);
        let alpha = rr / p.dot(&ap);
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        let next = r.norm_squared();
        p = &r + &p * (next / rr);
        rr = next;
    }
    Err(Error::NoConvergence { residual: rr.sqrt() / bn })
}

/// `⟨a|(H − z)^{-1}|b⟩` between displaced states.
pub fn resolvent_element(model: &Model, h: &SparseOperator, z: C64, a: &LabeledState, b: &LabeledState) -> Result<C64> {
    let va = model.displaced_vector(a.site, &a.config)?;
    let vb = model.displaced_vector(b.site, &b.config)?;
    Resolvent::new(h)?.element(z, &va, &vb)
}

/// Empirical fractional moment `E|⟨a|(H − z)^{-1}|b⟩|^s`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimate {
    pub source: LabeledState,
    pub target: LabeledState,
    pub s: f64,
    pub z: C64,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

/// Displaced vectors of a pair list, grouped by source so that each sample
/// needs one solve per distinct source.
#[derive(Debug, Clone)]
pub struct PairSet {
    pub pairs: Vec<(LabeledState, LabeledState)>,
    sources: Vec<DVector<f64>>,
    source_of: Vec<usize>,
    targets: Vec<DVector<f64>>,
}

impl PairSet {
    pub fn new(model: &Model, pairs: Vec<(LabeledState, LabeledState)>) -> Result<Self> {
        let mut keys: Vec<&LabeledState> = Vec::new();
        let mut sources = Vec::new();
        let mut source_of = Vec::with_capacity(pairs.len());
        let mut targets = Vec::with_capacity(pairs.len());
        for (a, b) in &pairs {
            let k = match keys.iter().position(|k| *k == a) {
                Some(k) => k,
                None => {
                    keys.push(a);
                    sources.push(model.displaced_vector(a.site, &a.config)?);
                    keys.len() - 1
                }
            };
            source_of.push(k);
            targets.push(model.displaced_vector(b.site, &b.config)?);
        }
        Ok(Self {
            pairs,
            sources,
            source_of,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// `|G_z(a, b)|` for every pair under one disorder realization.
///
/// Uses `⟨b|(H − z)^{-1}|a⟩ = ⟨a|(H − z)^{-1}|b⟩` for real symmetric `H`.
pub fn green_magnitudes(model: &Model, pairs: &PairSet, z: C64, disorder: &DisorderRealization) -> Result<Vec<f64>> {
    let h = model.hamiltonian(disorder)?;
    let res = Resolvent::new(&h)?;
    let solved: Vec<DVector<C64>> = pairs.sources.iter().map(|a| res.solve_real(z, a)).collect::<Result<_>>()?;
    Ok(pairs
        .targets
        .iter()
        .zip(&pairs.source_of)
        .map(|(b, &k)| b.iter().zip(solved[k].iter()).map(|(&bi, &xi)| xi * bi).sum::<C64>().norm())
        .collect())
}

/// Magnitudes of sample `index` under `master`.
pub fn moment_sample(model: &Model, pairs: &PairSet, z: C64, master: u64, index: u64) -> Result<Vec<f64>> {
    let disorder = model.sample_disorder(task_seed(master, index));
    green_magnitudes(model, pairs, z, &disorder)
}

/// Means and standard errors of `|G|^s`, summed in sample order.
pub fn aggregate_moments(pairs: &PairSet, s: f64, z: C64, samples: &[Vec<f64>]) -> Vec<MomentEstimate> {
    let n = samples.len();
    (0..pairs.len())
        .map(|p| {
            let vals: Vec<f64> = samples.iter().map(|row| row[p].powf(s)).collect();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let var = if n > 1 {
                vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
            } else {
                0.0
            };
            MomentEstimate {
                source: pairs.pairs[p].0.clone(),
                target: pairs.pairs[p].1.clone(),
                s,
                z,
                mean,
                stderr: (var / n as f64).sqrt(),
                n,
            }
        })
        .collect()
}

/// Fractional-moment Monte Carlo over `n_samples` disorder realizations on
/// `workers` threads (the global pool when `None`). The result does not depend
/// on the worker count.
pub fn fractional_moment_mc(
    model: &Model,
    pairs: &PairSet,
    s: f64,
    z: C64,
    n_samples: usize,
    seed: u64,
    workers: Option<usize>,
) -> Result<Vec<MomentEstimate>> {
    if !(s > 0.0 && s < 1.0) {
        return Err(invalid("s", "fractional power must lie in (0, 1)"));
    }
    if n_samples == 0 {
        return Err(invalid("n_samples", "must be at least one"));
    }
    let run = || -> Result<Vec<Vec<f64>>> {
        (0..n_samples as u64)
            .into_par_iter()
            .map(|i| moment_sample(model, pairs, z, seed, i))
            .collect()
    };
    let samples = match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| invalid("workers", e.to_string()))?
            .install(run)?,
        None => run()?,
    };
    Ok(aggregate_moments(pairs, s, z, &samples))
}

/// `ln mean ≈ log_c − λ x` fitted by weighted least squares.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayFit {
    pub lambda_est: f64,
    pub log_c: f64,
    /// Weighted coefficient of determination.
    pub r2: f64,
    pub pairs_used: usize,
    pub excluded_zeros: usize,
    pub distinct_abscissae: usize,
}

/// Fits `(x, mean, stderr)` triples; weights are `(mean/stderr)²`, or uniform
/// when any standard error vanishes.
pub fn decay_fit(points: &[(f64, f64, f64)]) -> Result<DecayFit> {
    let used: Vec<(f64, f64, f64)> = points.iter().copied().filter(|p| p.1 > 0.0).collect();
    let excluded_zeros = points.len() - used.len();
    let mut xs: Vec<f64> = used.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    if xs.len() < 5 {
        return Err(Error::RankDeficient(format!(
            "{} distinct abscissae after excluding {} zero means; at least 5 are required",
            xs.len(),
            excluded_zeros
        )));
    }
    let uniform = used.iter().any(|p| !(p.2 > 0.0));
    let w: Vec<f64> = used
        .iter()
        .map(|p| if uniform { 1.0 } else { (p.1 / p.2).powi(2) })
        .collect();
    let y: Vec<f64> = used.iter().map(|p| p.1.ln()).collect();
    let sw: f64 = w.iter().sum();
    let mx = used.iter().zip(&w).map(|(p, w)| w * p.0).sum::<f64>() / sw;
    let my = y.iter().zip(&w).map(|(y, w)| w * y).sum::<f64>() / sw;
    let sxx: f64 = used.iter().zip(&w).map(|(p, w)| w * (p.0 - mx).powi(2)).sum();
    let sxy: f64 = used.iter().zip(&y).zip(&w).map(|((p, y), w)| w * (p.0 - mx) * (y - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::RankDeficient("abscissae carry no weighted spread".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().zip(&w).map(|(y, w)| w * (y - my).powi(2)).sum();
    let ss_res: f64 = used
        .iter()
        .zip(&y)
        .zip(&w)
        .map(|((p, y), w)| w * (y - intercept - slope * p.0).powi(2))
        .sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(DecayFit {
        lambda_est: -slope,
        log_c: intercept,
        r2,
        pairs_used: used.len(),
        excluded_zeros,
        distinct_abscissae: xs.len(),
    })
}

/// `Υ + |√N_ξ − √N_ζ|` of an estimate's pair.
pub fn estimate_abscissa(lattice: &Lattice, e: &MomentEstimate) -> f64 {
    decay_exponent(lattice, &e.source, &e.target, 1.0)
}

pub fn decay_fit_estimates(lattice: &Lattice, estimates: &[MomentEstimate]) -> Result<DecayFit> {
    let pts: Vec<(f64, f64, f64)> = estimates
        .iter()
        .map(|e| (estimate_abscissa(lattice, e), e.mean, e.stderr))
        .collect();
    decay_fit(&pts)
}

/// Rectangle `Γ_{n,γ,δ,ε} = ∂{x + iy : x ∈ (nω − ε, nω + w + ε), |y| < δ}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contour {
    pub x_lo: f64,
    pub x_hi: f64,
    pub delta: f64,
}

impl Contour {
    pub fn around_band(n: u32, omega: f64, width: f64, delta: f64, eps: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(invalid("delta", "must be positive"));
        }
        if !(eps >= 0.0 && eps < 0.5 * (omega - width)) {
            return Err(invalid("eps", "requires 0 ≤ ε < (ω − V_+ − 4dγ)/2"));
        }
        let lo = n as f64 * omega;
        Ok(Self {
            x_lo: lo - eps,
            x_hi: lo + width + eps,
            delta,
        })
    }

    pub fn encloses(&self, e: f64) -> bool {
        e > self.x_lo && e < self.x_hi
    }

    /// Distance from a real point to the contour.
    pub fn distance(&self, e: f64) -> f64 {
        let dx = (e - self.x_lo).abs().min((e - self.x_hi).abs());
        if self.encloses(e) {
            dx.min(self.delta)
        } else {
            (self.x_lo - e).max(e - self.x_hi)
        }
    }

    /// Corners in counterclockwise order starting bottom left.
    fn corners(&self) -> [C64; 4] {
        [
            C64::new(self.x_lo, -self.delta),
            C64::new(self.x_hi, -self.delta),
            C64::new(self.x_hi, self.delta),
            C64::new(self.x_lo, self.delta),
        ]
    }

    pub fn perimeter(&self) -> f64 {
        2.0 * (self.x_hi - self.x_lo) + 4.0 * self.delta
    }
}

#[derive(Debug, Clone)]
pub struct ContourCheck {
    /// Quadrature of `(1/2πi)∮ e^{−itw}(w − H)^{-1} ψ dw`.
    pub lhs: DVector<C64>,
    /// `χ_{(x_lo, x_hi)}(H) e^{−itH} ψ` from the eigensystem.
    pub rhs: DVector<C64>,
    pub gap: f64,
    /// Closest approach of the spectrum to the contour.
    pub min_distance: f64,
    pub intervals: usize,
}

/// Cauchy reconstruction of the band projection. Each side gets a composite
/// trapezoid rule with intervals proportional to its length, corrected at the
/// corners by the first Euler–Maclaurin endpoint term.
pub fn contour_filter_check(
    es: &EigenSystem,
    res: &Resolvent,
    psi: &DVector<f64>,
    contour: &Contour,
    t: f64,
    nodes: usize,
) -> Result<ContourCheck> {
    let Backend::Tridiagonal { q, .. } = &res.backend else {
        return Err(invalid("backend", "contour quadrature needs the direct backend"));
    };
    let min_distance = es.energies.iter().map(|&e| contour.distance(e)).fold(f64::INFINITY, f64::min);
    let floor = 10.0 * f64::EPSILON * contour.x_lo.abs().max(contour.x_hi.abs()).max(1.0);
    if es
        .energies
        .iter()
        .any(|&e| (e - contour.x_lo).abs() < floor || (e - contour.x_hi).abs() < floor)
    {
        return Err(Error::ContourHitsSpectrum { distance: min_distance });
    }
    let y = join(&q.tr_mul(psi), &DVector::zeros(psi.len()));
    let it = C64::new(0.0, t);
    // f(w) = e^{−itw}(w − T)^{-1}y = −e^{−itw}(T − w)^{-1}y
    let f = |w: C64| -> Result<DVector<C64>> { Ok(res.tridiagonal_shifted_solve(w, &y)? * (-(-it * w).exp())) };
    let df = |w: C64| -> Result<DVector<C64>> {
        let r = res.tridiagonal_shifted_solve(w, &y)?;
        let r2 = res.tridiagonal_shifted_solve(w, &r)?;
        let ph = (-it * w).exp();
        // d/dw of −e^{−itw}(T − w)^{-1}y
        Ok(r * (it * ph) - r2 * ph)
    };
    let corners = contour.corners();
    let perimeter = contour.perimeter();
    let mut acc = DVector::<C64>::zeros(psi.len());
    let mut intervals = 0;
    for k in 0..4 {
        let (a, b) = (corners[k], corners[(k + 1) % 4]);
        let len = (b - a).norm();
        let dir = (b - a) / len;
        let m = ((nodes as f64 * len / perimeter).round() as usize).max(2);
        intervals += m;
        let h = len / m as f64;
        for i in 0..=m {
            let w = a + dir * (i as f64 * h);
            let weight = if i == 0 || i == m { 0.5 * h } else { h };
            acc += f(w)? * (dir * weight);
        }
        let correction = (df(b)? - df(a)?) * (dir * dir * (h * h / 12.0));
        acc -= correction;
    }
    let scale = C64::new(0.0, 2.0 * std::f64::consts::PI).inv();
    let (ar, ai) = split(&(acc * scale));
    let lhs = join(&(q * ar), &(q * ai));
    let c = es.coefficients(psi);
    let mut rhs = DVector::<C64>::zeros(psi.len());
    for (j, &e) in es.energies.iter().enumerate() {
        if contour.encloses(e) {
            let phase = (-it * e).exp() * c[j];
            let col = es.vectors.column(j);
            for i in 0..rhs.len() {
                rhs[i] += phase * col[i];
            }
        }
    }
    let gap = (&lhs - &rhs).norm();
    Ok(ContourCheck {
        lhs,
        rhs,
        gap,
        min_distance,
        intervals,
    })
}
