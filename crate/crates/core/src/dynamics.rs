//! Cesàro time averages `⟨A⟩_{ψ,T} = (1/T)∫_0^T ⟨ψ(t)|A|ψ(t)⟩ dt` in closed form,
//! confinement profiles along the `(K_T, L_T)` schedule and the energy tail bound.

use std::collections::hash_map::Entry;
use std::collections::HashMap;

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::metric::LabeledState;
use crate::model::{DisplacedProjector, Model};
use crate::spectral::{band_filter, BandSet, EigenSystem};

/// Coefficients below this fraction of `‖ψ‖` are dropped from the double sum.
const SUPPORT_FLOOR: f64 = 1e-15;
/// Largest tolerated imaginary part of a time average.
pub const IMAG_TOL: f64 = 1e-10;
/// Orthonormality tolerance of a range family.
pub const RANGE_TOL: f64 = 1e-8;

/// `κ(Δ, T) = (1 − e^{−iΔT}) / (iΔT)`, the time average of `e^{−iΔt}`.
pub fn kappa(delta: f64, t: f64) -> Complex<f64> {
    let x = delta * t;
    if x.abs() < 1e-6 {
        let x2 = x * x;
        Complex::new(1.0 - x2 / 6.0 + x2 * x2 / 120.0, -x / 2.0 + x * x2 / 24.0)
    } else {
        Complex::new(x.sin() / x, -2.0 * (0.5 * x).sin().powi(2) / x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeAverage {
    pub t: f64,
    pub value: f64,
    /// Imaginary part discarded after the check against [`IMAG_TOL`].
    pub imag_residue: f64,
}

/// Precomputed pair weights `G_{jk} = Σ_χ m_j(χ) m_k(χ)` for one `(ψ, P)`,
/// evaluated at any horizon.
#[derive(Debug, Clone)]
pub struct TimeAverager {
    energies: Vec<f64>,
    gram: DMatrix<f64>,
    norm_sq: f64,
}

impl TimeAverager {
    /// `range` holds an orthonormal basis of `ran P` as columns.
    pub fn new(es: &EigenSystem, psi: &DVector<f64>, range: &DMatrix<f64>) -> Result<Self> {
        if psi.len() != es.dim() || range.nrows() != es.dim() {
            return Err(Error::DimensionMismatch {
                expected: es.dim(),
                got: if psi.len() != es.dim() { psi.len() } else { range.nrows() },
            });
        }
        let r = range.ncols();
        let deviation = if r == 0 {
            0.0
        } else {
            (range.tr_mul(range) - DMatrix::identity(r, r)).amax()
        };
        if deviation > RANGE_TOL {
            return Err(Error::NotOrthonormal { deviation });
        }
        let c = es.coefficients(psi);
        let floor = SUPPORT_FLOOR * psi.norm();
        let support: Vec<usize> = (0..c.len()).filter(|&j| c[j].abs() > floor).collect();
        let energies = support.iter().map(|&j| es.energies[j]).collect();
        let basis = es.vectors.select_columns(&support);
        let mut m = range.tr_mul(&basis);
        for (col, &j) in support.iter().enumerate() {
            m.column_mut(col).scale_mut(c[j]);
        }
        Ok(Self {
            energies,
            gram: m.tr_mul(&m),
            norm_sq: psi.norm_squared(),
        })
    }

    /// Number of eigenvectors in the support of `ψ`.
    pub fn support_len(&self) -> usize {
        self.energies.len()
    }

    pub fn norm_sq(&self) -> f64 {
        self.norm_sq
    }

    /// `⟨P⟩_{ψ,T}`.
    pub fn at(&self, t: f64) -> Result<TimeAverage> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(invalid("T", "horizon must be positive and finite"));
        }
        let n = self.energies.len();
        let (mut re, mut im) = (0.0, 0.0);
        for j in 0..n {
            re += self.gram[(j, j)];
            for k in j + 1..n {
                let g = self.gram[(j, k)];
                if g == 0.0 {
                    continue;
                }
                let a = kappa(self.energies[j] - self.energies[k], t);
                let b = kappa(self.energies[k] - self.energies[j], t);
                re += g * (a.re + b.re);
                im += g * (a.im + b.im);
            }
        }
        let scale = self.norm_sq.max(f64::MIN_POSITIVE);
        if im.abs() > IMAG_TOL * scale.max(1.0) {
            return Err(Error::ImaginaryResidue(im));
        }
        Ok(TimeAverage {
            t,
            value: re,
            imag_residue: im,
        })
    }
}

/// One-shot `⟨P⟩_{ψ,T}` for `P` given by an orthonormal range family.
pub fn time_avg_projection(es: &EigenSystem, psi: &DVector<f64>, range: &DMatrix<f64>, t: f64) -> Result<TimeAverage> {
    if !(t > 0.0) {
        return Err(invalid("T", "horizon must be positive"));
    }
    TimeAverager::new(es, psi, range)?.at(t)
}

/// `K_T = ⌈(ln ln T)^{1/2}⌉` (at least one) and `L_T = (ln T)^{q/K_T}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub q: f64,
    pub p: f64,
    pub dim: usize,
}

impl Schedule {
    pub fn new(q: f64, p: f64, dim: usize) -> Result<Self> {
        if !(q > 0.0) {
            return Err(invalid("q", "must be positive"));
        }
        if !(p > 2.0 * q * dim as f64) {
            return Err(invalid("p", format!("requires p > 2qd = {}", 2.0 * q * dim as f64)));
        }
        Ok(Self { q, p, dim })
    }

    pub fn k_t(&self, t: f64) -> u32 {
        if t <= std::f64::consts::E {
            return 1;
        }
        (t.ln().ln().max(0.0).sqrt().ceil() as u32).max(1)
    }

    pub fn l_t(&self, t: f64) -> f64 {
        t.ln().max(0.0).powf(self.q / self.k_t(t) as f64)
    }
}

/// Log-spaced horizons `10^lo ..= 10^hi`, one per decade.
pub fn decade_grid(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|k| 10f64.powi(k)).collect()
}

/// Projectors `R_{L,K}` keyed by the tracer sites they cover.
#[derive(Debug, Clone, Default)]
pub struct ProjectorCache {
    entries: HashMap<(usize, u32), DisplacedProjector>,
}

impl ProjectorCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&mut self, model: &Model, radius: f64, cap: u32) -> Result<&DisplacedProjector> {
        let key = (model.lattice().sites_within(radius).len(), cap.min(model.params().k_tot));
        match self.entries.entry(key) {
            Entry::Occupied(e) => Ok(e.into_mut()),
            Entry::Vacant(e) => Ok(e.insert(model.displaced_projector(radius, cap)?)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfinementPoint {
    pub t: f64,
    pub k_t: u32,
    pub l_t: f64,
    /// `⟨1 − R_{L_T,K_T}⟩_{ψ,T}`.
    pub leakage: f64,
    /// `L_T` reaches past the simulated box.
    pub capped: bool,
    /// `(N+1)ω/K_T + C e^{−λ L_T}` with the fitted constants.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfinementProfile {
    pub points: Vec<ConfinementPoint>,
    pub fit_c: f64,
    pub fit_lambda: f64,
    /// `max_T (leakage − bound) / bound`; non-positive when the bound holds.
    pub max_excess: f64,
}

/// Leakage profile of `ψ` along the schedule, with `(C, λ)` fitted by
/// log-linear regression of the leakage against `L_T`.
pub fn confinement_profile(
    model: &Model,
    cache: &mut ProjectorCache,
    es: &EigenSystem,
    psi: &DVector<f64>,
    schedule: &Schedule,
    t_grid: &[f64],
    n_band: u32,
) -> Result<ConfinementProfile> {
    let p = model.params();
    let box_radius = p.radius as f64;
    let mut points = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let k_t = schedule.k_t(t);
        let l_t = schedule.l_t(t);
        let proj = cache.get(model, l_t, k_t)?;
        let avg = time_avg_projection(es, psi, &proj.range, t)?;
        points.push(ConfinementPoint {
            t,
            k_t,
            l_t,
            leakage: (psi.norm_squared() - avg.value).max(0.0),
            capped: l_t > box_radius,
            bound: 0.0,
        });
    }
    let samples: Vec<(f64, f64)> = points
        .iter()
        .filter(|q| q.leakage > 0.0)
        .map(|q| (q.l_t, q.leakage.ln()))
        .collect();
    let (fit_c, fit_lambda) = match line_fit(&samples) {
        Some((slope, intercept)) => (intercept.exp(), -slope),
        None => (points.iter().map(|q| q.leakage).fold(0.0, f64::max), 0.0),
    };
    let head = (n_band as f64 + 1.0) * p.omega;
    let mut max_excess = f64::NEG_INFINITY;
    for q in &mut points {
        q.bound = head / q.k_t as f64 + fit_c * (-fit_lambda * q.l_t).exp();
        max_excess = max_excess.max((q.leakage - q.bound) / q.bound);
    }
    Ok(ConfinementProfile {
        points,
        fit_c,
        fit_lambda,
        max_excess,
    })
}

/// Ordinary least squares `y = a x + b`; `None` with fewer than two distinct `x`.
fn line_fit(samples: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = samples.len() as f64;
    let mx = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let my = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let sxx: f64 = samples.iter().map(|s| (s.0 - mx).powi(2)).sum();
    if samples.len() < 2 || sxx <= 1e-12 * mx.abs().max(1.0) {
        return None;
    }
    let sxy: f64 = samples.iter().map(|s| (s.0 - mx) * (s.1 - my)).sum();
    let a = sxy / sxx;
    Some((a, my - a * mx))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyTail {
    pub t: f64,
    /// `⟨1 − R_{∞,K}⟩_{ψ,T}`.
    pub lhs: f64,
    /// `(N+1)ω/K`.
    pub rhs: f64,
    pub tolerance: f64,
    pub holds: bool,
}

/// The energy tail bound for `ψ` band-filtered to `J_N`, with `R_{∞,K}` given,
/// at each horizon of `t_grid`.
///
/// The tolerance is `1e-8` plus the idempotency defect of the projector.
pub fn energy_tail_check(
    es: &EigenSystem,
    psi: &DVector<f64>,
    projector: &DisplacedProjector,
    k: u32,
    t_grid: &[f64],
    n_band: u32,
    omega: f64,
) -> Result<Vec<EnergyTail>> {
    if k == 0 {
        return Err(invalid("K", "must be at least one"));
    }
    let avg = TimeAverager::new(es, psi, &projector.range)?;
    let rhs = (n_band as f64 + 1.0) * omega / k as f64;
    let tolerance = 1e-8 + projector.idempotency_defect();
    t_grid
        .iter()
        .map(|&t| {
            let lhs = (psi.norm_squared() - avg.at(t)?.value).max(0.0);
            Ok(EnergyTail {
                t,
                lhs,
                rhs,
                tolerance,
                holds: lhs <= rhs + tolerance,
            })
        })
        .collect()
}

/// `(1/T)∫_0^T |⟨v,ζ|e^{itH}χ_{J_N}|u,ξ⟩|² dt` between displaced states.
pub fn survival_time_average(
    model: &Model,
    es: &EigenSystem,
    source: &LabeledState,
    target: &LabeledState,
    bands: &BandSet,
    t: f64,
) -> Result<f64> {
    if !(t > 0.0) {
        return Err(invalid("T", "horizon must be positive"));
    }
    let a = model.displaced_vector(source.site, &source.config)?;
    let b = model.displaced_vector(target.site, &target.config)?;
    let ca = es.coefficients(&a);
    let cb = es.coefficients(&b);
    let amp: Vec<(f64, f64)> = es
        .energies
        .iter()
        .enumerate()
        .filter(|&(_, &e)| bands.contains(e))
        .map(|(j, &e)| (e, ca[j] * cb[j]))
        .filter(|&(_, w)| w != 0.0)
        .collect();
    let mut sum = Complex::new(0.0, 0.0);
    for &(ej, wj) in &amp {
        for &(ek, wk) in &amp {
            sum += kappa(ej - ek, t) * (wj * wk);
        }
    }
    Ok(sum.re)
}

/// `ψ = ψ₁ + ψ₂` with `ψ₂` carried by the eigenvectors listed in `removed`.
pub fn split_by_atoms(es: &EigenSystem, psi: &DVector<f64>, removed: &[usize]) -> (DVector<f64>, DVector<f64>) {
    let c = es.coefficients(psi);
    let mut c2 = DVector::zeros(c.len());
    for &j in removed {
        c2[j] = c[j];
    }
    let c1 = &c - &c2;
    (es.synthesize(&c1), es.synthesize(&c2))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinkowskiCheck {
    /// `⟨R⟩_{ψ,T}`.
    pub lhs: f64,
    /// `(√⟨R⟩_{ψ₁,T} + ‖ψ₂‖ + ‖ψ_{ρS}‖)²`, with `ψ_{ρS} = 0`.
    pub rhs: f64,
    pub holds: bool,
}

/// Minkowski step of the delocalization chain for a splitting by spectral atoms.
pub fn minkowski_check(
    es: &EigenSystem,
    psi: &DVector<f64>,
    range: &DMatrix<f64>,
    removed: &[usize],
    t: f64,
) -> Result<MinkowskiCheck> {
    let (psi1, psi2) = split_by_atoms(es, psi, removed);
    let lhs = time_avg_projection(es, psi, range, t)?.value;
    let first = time_avg_projection(es, &psi1, range, t)?.value.max(0.0);
    let rhs = (first.sqrt() + psi2.norm()).powi(2);
    Ok(MinkowskiCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-10,
    })
}

/// Orthonormal range of the rank-one projector onto `φ / ‖φ‖`.
pub fn rank_one_range(phi: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = phi.norm();
    if n == 0.0 {
        return Err(invalid("phi", "zero vector"));
    }
    Ok(DMatrix::from_column_slice(phi.len(), 1, (phi / n).as_slice()))
}

/// `χ_{J_N} ψ / ‖χ_{J_N} ψ‖`.
pub fn normalized_band_state(es: &EigenSystem, psi: &DVector<f64>, bands: &BandSet) -> Result<DVector<f64>> {
    let f = band_filter(es, psi, bands);
    let n = f.norm();
    if n < 1e-12 {
        return Err(invalid("psi", "no weight inside the bands"));
    }
    Ok(f / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::diagonalize;
    use crate::sparse::SparseOperator;
    use crate::state_space::Config;
    use crate::ModelParams;

    fn random_instance(n: usize, seed: u64) -> (SparseOperator, DVector<f64>) {
        let u = |k: u64| crate::rng::keyed_unit(seed, 3, k) - 0.5;
        let mut t = Vec::new();
        for i in 0..n {
            for j in i..n {
                let v = u((i * n + j) as u64);
                t.push((i, j, v));
                if i != j {
                    t.push((j, i, v));
                }
            }
        }
        let psi = DVector::from_fn(n, |i, _| u((n * n + i) as u64));
        (SparseOperator::from_triplets(n, t).unwrap(), psi)
    }

    /// Composite Simpson rule for `(1/T)∫_0^T ‖Pψ(t)‖² dt`.
    fn quadrature(es: &EigenSystem, psi: &DVector<f64>, range: &DMatrix<f64>, t: f64, nodes: usize) -> f64 {
        let c = es.coefficients(psi);
        let a = range.tr_mul(&es.vectors);
        let f = |s: f64| {
            let re = DVector::from_fn(c.len(), |j, _| c[j] * (es.energies[j] * s).cos());
            let im = DVector::from_fn(c.len(), |j, _| -c[j] * (es.energies[j] * s).sin());
            (&a * re).norm_squared() + (&a * im).norm_squared()
        };
        let m = if nodes.is_multiple_of(2) { nodes } else { nodes - 1 };
        let h = t / m as f64;
        let mut s = f(0.0) + f(t);
        for i in 1..m {
            s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0 / t
    }

    #[test]
    fn kappa_branches_agree() {
        for &x in &[1e-7, 9.9e-7, 1.01e-6, 1e-3] {
            let series = kappa(x, 1.0);
            let exact = Complex::new(x.sin() / x, -2.0 * (x / 2.0).sin().powi(2) / x);
            assert!((series - exact).norm() < 1e-12, "{x}");
        }
        assert_eq!(kappa(0.0, 5.0), Complex::new(1.0, 0.0));
    }

    #[test]
    fn closed_form_matches_quadrature() {
        let (h, psi) = random_instance(50, 1);
        let es = diagonalize(&h).unwrap();
        let range = DMatrix::from_fn(50, 1, |i, _| if i < 7 { 1.0 } else { 0.0 }) / 7f64.sqrt();
        for &t in &[0.5, 3.0, 10.0] {
            let exact = time_avg_projection(&es, &psi, &range, t).unwrap().value;
            let q = quadrature(&es, &psi, &range, t, 2000);
            assert!((exact - q).abs() < 1e-6, "{t}: {exact} vs {q}");
        }
    }

    #[test]
    fn trivial_projections() {
        let (h, psi) = random_instance(20, 2);
        let es = diagonalize(&h).unwrap();
        let id = DMatrix::identity(20, 20);
        let v = time_avg_projection(&es, &psi, &id, 7.0).unwrap().value;
        assert!((v - psi.norm_squared()).abs() < 1e-12);
        let phi = es.vectors.column(4).into_owned();
        let r = rank_one_range(&phi).unwrap();
        for &t in &[0.1, 10.0, 1e6] {
            assert!((time_avg_projection(&es, &phi, &r, t).unwrap().value - 1.0).abs() < 1e-12);
        }
        assert!(time_avg_projection(&es, &psi, &id, 0.0).is_err());
        let skew = DMatrix::from_element(20, 1, 1.0);
        assert!(matches!(
            time_avg_projection(&es, &psi, &skew, 1.0),
            Err(Error::NotOrthonormal { .. })
        ));
    }

    #[test]
    fn schedule_values() {
        let s = Schedule::new(1.0, 3.0, 1).unwrap();
        assert_eq!(s.k_t(10.0), 1);
        assert!((s.l_t(10.0) - 10f64.ln()).abs() < 1e-12);
        assert_eq!(s.k_t(1e6), 2);
        assert!((s.l_t(1e6) - 1e6f64.ln().sqrt()).abs() < 1e-12);
        assert!(Schedule::new(1.0, 2.0, 1).is_err());
        assert!(Schedule::new(0.0, 3.0, 1).is_err());
    }

    fn small_model(gamma: f64) -> Model {
        Model::new(ModelParams {
            dim: 1,
            radius: 3,
            k_tot: 4,
            m_site: 12,
            gamma,
            omega: 8.0,
            alpha: 0.5,
            v_plus: 1.0,
            margin: 2,
        })
        .unwrap()
    }

    #[test]
    fn stationary_displaced_state_does_not_leak() {
        let model = small_model(0.0);
        let dis = model.sample_disorder(5);
        let h = model.hamiltonian(&dis).unwrap();
        let es = diagonalize(&h).unwrap();
        let o = model.lattice().origin();
        let psi = model.displaced_vector(o, &Config::vacuum()).unwrap();
        let schedule = Schedule::new(1.0, 3.0, 1).unwrap();
        let mut cache = ProjectorCache::new();
        let prof = confinement_profile(&model, &mut cache, &es, &psi, &schedule, &decade_grid(1, 6), 0).unwrap();
        for p in &prof.points {
            assert!(p.leakage < 1e-8, "{p:?}");
            assert!(p.leakage <= 1.0);
        }
    }

    #[test]
    fn survival_examples() {
        let model = small_model(0.0);
        let dis = model.sample_disorder(9);
        let es = diagonalize(&model.hamiltonian(&dis).unwrap()).unwrap();
        let bands = BandSet::new(model.params(), 1);
        let o = model.lattice().origin();
        let a = LabeledState::new(o, Config::vacuum());
        let b = LabeledState::new(o + 1, Config::vacuum());
        let s = survival_time_average(&model, &es, &a, &a, &bands, 50.0).unwrap();
        assert!((s - 1.0).abs() < 1e-6, "{s}");
        let off = survival_time_average(&model, &es, &a, &b, &bands, 50.0).unwrap();
        assert!(off.abs() < 1e-12);

        let model = small_model(0.05);
        let dis = model.sample_disorder(9);
        let es = diagonalize(&model.hamiltonian(&dis).unwrap()).unwrap();
        let direct = survival_time_average(&model, &es, &a, &b, &bands, 50.0).unwrap();
        let chi = band_filter(&es, &model.displaced_vector(a.site, &a.config).unwrap(), &bands);
        let r = rank_one_range(&model.displaced_vector(b.site, &b.config).unwrap()).unwrap();
        let via = time_avg_projection(&es, &chi, &r, 50.0).unwrap().value;
        assert!((direct - via).abs() < 1e-10);
    }

    #[test]
    fn energy_tail_beyond_cap_is_zero() {
        let model = small_model(0.02);
        let dis = model.sample_disorder(1);
        let es = diagonalize(&model.hamiltonian(&dis).unwrap()).unwrap();
        let bands = BandSet::new(model.params(), 1);
        let psi = normalized_band_state(&es, &model.displaced_vector(model.lattice().origin(), &Config::vacuum()).unwrap(), &bands).unwrap();
        let full = model.displaced_projector(f64::INFINITY, 5).unwrap();
        let r = energy_tail_check(&es, &psi, &full, 5, &[100.0], 1, 8.0).unwrap()[0];
        assert!(r.lhs < 1e-8 && r.holds);
        let r1 = energy_tail_check(&es, &psi, &model.displaced_projector(f64::INFINITY, 1).unwrap(), 1, &[100.0], 0, 8.0).unwrap()[0];
        assert_eq!(r1.rhs, 8.0);
        assert!(r1.holds);
    }

    #[test]
    fn minkowski_step() {
        let (h, psi) = random_instance(30, 4);
        let es = diagonalize(&h).unwrap();
        let range = DMatrix::from_fn(30, 3, |i, j| if i == j { 1.0 } else { 0.0 });
        let m = minkowski_check(&es, &psi, &range, &[2, 7, 11], 4.0).unwrap();
        assert!(m.holds, "{m:?}");
        let (a, b) = split_by_atoms(&es, &psi, &[2, 7, 11]);
        assert!((a + b - &psi).amax() < 1e-12);
    }
}
