//! Gauge functions `ρ(s) = |ln s|^{−p}` and finite-scale regularity of atomic
//! spectral measures.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{rank_one_range, TimeAverager};
use crate::error::{invalid, Error, Result};
use crate::spectral::{spectral_measure, EigenSystem, SpectralMeasure};

/// `ρ(s) = |ln s|^{−p}` on `(0, 1)`.
pub fn gauge_value(p: f64, s: f64) -> Result<f64> {
    if !(p > 0.0) {
        return Err(invalid("p", "gauge exponent must be positive"));
    }
    if !(s > 0.0 && s < 1.0) {
        return Err(invalid("s", "gauge is defined on (0, 1)"));
    }
    Ok(s.ln().abs().powf(-p))
}

/// `2 Σ_{k≥0} e^{−k²/2}`.
pub fn lattice_sum_constant() -> f64 {
    2.0 * (0..40).map(|k| (-(k * k) as f64 / 2.0).exp()).sum::<f64>()
}

/// Heaviest open window of width `eps`: `(mass, first atom, last atom)`.
///
/// An open interval of width `ε` can hold atoms `i..=j` exactly when
/// `E_j − E_i < ε`, so a two-pointer sweep over sorted atoms is exact.
pub fn max_window(mu: &SpectralMeasure, eps: f64) -> (f64, usize, usize) {
    let a = &mu.atoms;
    let mut best = (0.0, 0, 0);
    let mut lo = 0;
    for hi in 0..a.len() {
        while a[hi].0 - a[lo].0 >= eps {
            lo += 1;
        }
        // summed afresh so that equal windows give bit-identical masses
        let mass: f64 = a[lo..=hi].iter().map(|x| x.1).sum();
        if mass > best.0 {
            best = (mass, lo, hi);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderReport {
    pub eps: f64,
    /// `C(ε) = sup_s μ(s − ε/2, s + ε/2) / ρ(ε)`.
    pub constant: f64,
    pub window_mass: f64,
    pub center: f64,
}

/// Finite-scale uniform ρ-Hölder constant at scale `eps`.
pub fn uph_constant(mu: &SpectralMeasure, eps: f64, p: f64) -> Result<HolderReport> {
    if mu.is_empty() {
        return Err(invalid("mu", "measure has no atoms"));
    }
    let rho = gauge_value(p, eps)?;
    let (mass, i, j) = max_window(mu, eps);
    Ok(HolderReport {
        eps,
        constant: mass / rho,
        window_mass: mass,
        center: 0.5 * (mu.atoms[i].0 + mu.atoms[j].0),
    })
}

/// `n` log-spaced scales from `eps0` up to `eps0^{1/n}` (all below one).
pub fn log_scale_grid(eps0: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| eps0.powf(1.0 - k as f64 / n as f64)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct UphSplit {
    /// UρH part; same atom positions as the input.
    pub mu1: SpectralMeasure,
    /// Removed atoms; `mu1 + mu2` equals the input atom by atom.
    pub mu2: SpectralMeasure,
    /// Indices of the removed atoms.
    pub removed: Vec<usize>,
    /// `(removed mass, max_ε C(ε)/C_target)` after each greedy step.
    pub frontier: Vec<(f64, f64)>,
    pub grid: Vec<f64>,
}

fn worst_ratio(mu: &SpectralMeasure, grid: &[f64], p: f64, c_target: f64) -> Result<(f64, f64)> {
    let mut worst = (f64::NEG_INFINITY, grid[0]);
    for &eps in grid {
        let r = uph_constant(mu, eps, p)?.constant / c_target;
        if r > worst.0 {
            worst = (r, eps);
        }
    }
    Ok(worst)
}

/// Greedy splitting `μ = μ₁ + μ₂` with `C(ε) ≤ c_target` for `μ₁` on a log grid
/// of scales `≥ eps0` and `μ₂(ℝ) < eps_mass`.
///
/// Each step takes the worst window and removes the atoms of its heaviest
/// `eps0`-subwindow.
pub fn uph_split(mu: &SpectralMeasure, eps_mass: f64, eps0: f64, p: f64, c_target: f64) -> Result<UphSplit> {
    if !(eps_mass > 0.0) {
        return Err(invalid("eps_mass", "must be positive"));
    }
    if !(eps0 > 0.0 && eps0 < 1.0) {
        return Err(invalid("eps0", "scale floor must lie in (0, 1)"));
    }
    if !(c_target > 0.0) {
        return Err(invalid("c_target", "must be positive"));
    }
    let grid = log_scale_grid(eps0, 24);
    let mut mu1 = mu.clone();
    let mut removed = Vec::new();
    let mut removed_mass = 0.0;
    let mut frontier = Vec::new();
    loop {
        let (ratio, eps) = worst_ratio(&mu1, &grid, p, c_target)?;
        frontier.push((removed_mass, ratio));
        if ratio <= 1.0 {
            break;
        }
        let (_, i, j) = max_window(&mu1, eps);
        let window = SpectralMeasure {
            atoms: mu1.atoms[i..=j].to_vec(),
        };
        let (mass, a, b) = max_window(&window, eps0);
        if mass <= 0.0 {
            return Err(Error::InfeasibleSplit {
                removed: removed_mass,
                budget: eps_mass,
                frontier,
            });
        }
        for k in i + a..=i + b {
            if mu1.atoms[k].1 > 0.0 {
                removed.push(k);
                removed_mass += mu1.atoms[k].1;
                mu1.atoms[k].1 = 0.0;
            }
        }
        if removed_mass >= eps_mass {
            let (ratio, _) = worst_ratio(&mu1, &grid, p, c_target)?;
            frontier.push((removed_mass, ratio));
            return Err(Error::InfeasibleSplit {
                removed: removed_mass,
                budget: eps_mass,
                frontier,
            });
        }
    }
    removed.sort_unstable();
    let mut mu2 = mu.clone();
    for (k, atom) in mu2.atoms.iter_mut().enumerate() {
        if removed.binary_search(&k).is_err() {
            atom.1 = 0.0;
        }
    }
    Ok(UphSplit {
        mu1,
        mu2,
        removed,
        frontier,
        grid,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrichartzPoint {
    pub t: f64,
    /// `⟨|φ⟩⟨φ|⟩_{ψ,T}`.
    pub lhs: f64,
    /// `e√π C' ‖φ‖² ‖ψ‖ √(C_μ(1/T) ρ(1/T))`.
    pub rhs: f64,
    /// `1/T` at or above the atom-spacing floor.
    pub admissible: bool,
}

/// Smallest gap between distinct atoms of positive weight, ignoring exact ties.
fn spacing_floor(mu: &SpectralMeasure) -> f64 {
    mu.without_small(0.0)
        .atoms
        .windows(2)
        .map(|w| w[1].0 - w[0].0)
        .filter(|&g| g > 0.0)
        .fold(f64::INFINITY, f64::min)
}

fn check_horizons(t_grid: &[f64]) -> Result<()> {
    if t_grid.iter().any(|&t| !(t > 1.0)) {
        return Err(invalid("T", "horizons must exceed one"));
    }
    Ok(())
}

/// Dynamical bound of a rank-one observable against the regularity of `μ_ψ`.
///
/// `min_scale` overrides the admissibility floor, which defaults to the
/// smallest atom spacing of `μ_ψ`.
pub fn strichartz_check(
    es: &EigenSystem,
    psi: &DVector<f64>,
    phi: &DVector<f64>,
    t_grid: &[f64],
    p: f64,
    min_scale: Option<f64>,
) -> Result<Vec<StrichartzPoint>> {
    check_horizons(t_grid)?;
    let range = rank_one_range(phi)?;
    let avg = TimeAverager::new(es, psi, &range)?;
    let mu = spectral_measure(es, psi).measure;
    let floor = min_scale.unwrap_or_else(|| spacing_floor(&mu));
    let pref = std::f64::consts::E * std::f64::consts::PI.sqrt() * lattice_sum_constant() * phi.norm_squared() * psi.norm();
    t_grid
        .iter()
        .map(|&t| {
            let h = uph_constant(&mu, 1.0 / t, p)?;
            let rho = gauge_value(p, 1.0 / t)?;
            Ok(StrichartzPoint {
                t,
                lhs: phi.norm_squared() * avg.at(t)?.value,
                rhs: pref * (h.constant * rho).sqrt(),
                admissible: 1.0 / t >= floor,
            })
        })
        .collect()
}

/// Rank-`r` extension: `⟨P⟩_{ψ,T}` against `r` times the unit rank-one bound,
/// i.e. the Schatten-1 norm of `P` times the rank-one prefactor.
pub fn schatten_check(
    es: &EigenSystem,
    psi: &DVector<f64>,
    range: &DMatrix<f64>,
    t_grid: &[f64],
    p: f64,
    min_scale: Option<f64>,
) -> Result<Vec<StrichartzPoint>> {
    check_horizons(t_grid)?;
    let avg = TimeAverager::new(es, psi, range)?;
    let mu = spectral_measure(es, psi).measure;
    let floor = min_scale.unwrap_or_else(|| spacing_floor(&mu));
    let rank = range.ncols() as f64;
    let pref = std::f64::consts::E * std::f64::consts::PI.sqrt() * lattice_sum_constant() * psi.norm();
    t_grid
        .iter()
        .map(|&t| {
            let h = uph_constant(&mu, 1.0 / t, p)?;
            let rho = gauge_value(p, 1.0 / t)?;
            Ok(StrichartzPoint {
                t,
                lhs: avg.at(t)?.value,
                rhs: rank * pref * (h.constant * rho).sqrt(),
                admissible: 1.0 / t >= floor,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RhoProfile {
    /// `(δ, μ([x − δ/2, x + δ/2]) / ρ(δ))`.
    pub points: Vec<(f64, f64)>,
    /// Least-squares slope of the quotient against `ln(1/δ)`.
    pub trend_slope: f64,
}

/// Finite-scale upper ρ-derivative quotients of `μ` at `x`.
pub fn rho_derivative_profile(mu: &SpectralMeasure, x: f64, deltas: &[f64], p: f64) -> Result<RhoProfile> {
    let mut points = Vec::with_capacity(deltas.len());
    for &d in deltas {
        let rho = gauge_value(p, d)?;
        let mass: f64 = mu
            .atoms
            .iter()
            .filter(|a| (a.0 - x).abs() <= 0.5 * d)
            .map(|a| a.1)
            .sum();
        points.push((d, mass / rho));
    }
    let n = points.len() as f64;
    let trend_slope = if points.len() < 2 {
        0.0
    } else {
        let xs: Vec<f64> = points.iter().map(|q| -q.0.ln()).collect();
        let mx = xs.iter().sum::<f64>() / n;
        let my = points.iter().map(|q| q.1).sum::<f64>() / n;
        let sxx: f64 = xs.iter().map(|v| (v - mx).powi(2)).sum();
        let sxy: f64 = xs.iter().zip(&points).map(|(v, q)| (v - mx) * (q.1 - my)).sum();
        if sxx > 0.0 {
            sxy / sxx
        } else {
            0.0
        }
    };
    Ok(RhoProfile { points, trend_slope })
}

/// Writes `energy weight` lines in full precision, sorted by energy.
pub fn write_measure<W: Write>(mu: &SpectralMeasure, mut out: W) -> std::io::Result<()> {
    for &(e, w) in &mu.atoms {
        writeln!(out, "{e:e} {w:e}")?;
    }
    Ok(())
}

/// Reads two-column text; blank lines and `#` comments are skipped.
pub fn read_measure<R: BufRead>(input: R) -> Result<SpectralMeasure> {
    let mut atoms = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: k + 1,
            reason: e.to_string(),
        })?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let cols: Vec<&str> = body.split_whitespace().collect();
        let parse = |s: &str| {
            s.parse::<f64>().map_err(|e| Error::Parse {
                line: k + 1,
                reason: format!("{s:?}: {e}"),
            })
        };
        if cols.len() != 2 {
            return Err(Error::Parse {
                line: k + 1,
                reason: format!("expected 2 columns, found {}", cols.len()),
            });
        }
        atoms.push((parse(cols[0])?, parse(cols[1])?));
    }
    if atoms.windows(2).any(|w| w[1].0 < w[0].0) {
        return Err(Error::Parse {
            line: 0,
            reason: "atoms are not sorted by energy".into(),
        });
    }
    SpectralMeasure::new(atoms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::SparseOperator;
    use crate::spectral::diagonalize;

    fn comb(n: usize, span: f64) -> SpectralMeasure {
        let h = span / n as f64;
        SpectralMeasure::new((0..n).map(|k| ((k as f64 + 0.5) * h, 1.0 / n as f64)).collect()).unwrap()
    }

    /// Exhaustive sup over atom-endpoint windows.
    fn brute_window(mu: &SpectralMeasure, eps: f64) -> f64 {
        let a = &mu.atoms;
        let mut best: f64 = 0.0;
        for i in 0..a.len() {
            for j in i..a.len() {
                if a[j].0 - a[i].0 < eps {
                    best = best.max(a[i..=j].iter().map(|x| x.1).sum());
                }
            }
        }
        best
    }

    #[test]
    fn gauge_examples() {
        assert!((gauge_value(1.0, (-1f64).exp()).unwrap() - 1.0).abs() < 1e-12);
        assert!((gauge_value(2.0, (-10f64).exp()).unwrap() - 0.01).abs() < 1e-12);
        assert!(gauge_value(1.0, 0.0).is_err());
        assert!(gauge_value(1.0, 1.0).is_err());
        assert!(gauge_value(0.0, 0.5).is_err());
    }

    #[test]
    fn constant_examples() {
        let one = SpectralMeasure::new(vec![(0.3, 1.0)]).unwrap();
        for &e in &[0.01, 0.5] {
            let r = uph_constant(&one, e, 2.0).unwrap();
            assert!((r.constant - 1.0 / gauge_value(2.0, e).unwrap()).abs() < 1e-12);
        }
        let two = SpectralMeasure::new(vec![(0.0, 0.5), (0.3, 0.5)]).unwrap();
        let r = uph_constant(&two, 0.2, 1.0).unwrap();
        assert!((r.constant - 0.5 / gauge_value(1.0, 0.2).unwrap()).abs() < 1e-12);
        let c = comb(100, 1.0);
        let r = uph_constant(&c, 0.025, 1.0).unwrap();
        assert!((r.window_mass - 0.03).abs() < 1e-12);
        assert_eq!(uph_constant(&c, 0.025, 1.0).unwrap().window_mass, brute_window(&c, 0.025));
    }

    #[test]
    fn sweep_matches_brute_force() {
        for seed in 0..20u64 {
            let n = 1 + (seed as usize * 7) % 50;
            let atoms = (0..n)
                .map(|k| {
                    let e = crate::rng::keyed_unit(seed, 0, k as u64) * 2.0;
                    let w = crate::rng::keyed_unit(seed, 1, k as u64);
                    (e, w)
                })
                .collect();
            let mu = SpectralMeasure::new(atoms).unwrap();
            for &e in &[0.01, 0.07, 0.3, 0.9] {
                let (m, _, _) = max_window(&mu, e);
                assert!((m - brute_window(&mu, e)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn split_examples() {
        let flat = comb(100, 1.0);
        let grid = log_scale_grid(1e-3, 24);
        let target = grid
            .iter()
            .map(|&e| uph_constant(&flat, e, 1.0).unwrap().constant)
            .fold(0.0, f64::max);
        let s = uph_split(&flat, 0.1, 1e-3, 1.0, target).unwrap();
        assert!(s.removed.is_empty());
        assert_eq!(s.mu2.total_mass(), 0.0);

        let mut atoms: Vec<(f64, f64)> = flat.atoms.iter().map(|&(e, w)| (e, w * 0.7)).collect();
        atoms.push((0.501, 0.3));
        let spiked = SpectralMeasure::new(atoms).unwrap();
        let target = grid
            .iter()
            .map(|&e| {
                let scaled = SpectralMeasure::new(flat.atoms.iter().map(|&(x, w)| (x, w * 0.7)).collect()).unwrap();
                uph_constant(&scaled, e, 1.0).unwrap().constant
            })
            .fold(0.0, f64::max);
        let s = uph_split(&spiked, 0.35, 1e-3, 1.0, target).unwrap();
        assert_eq!(s.removed.len(), 1);
        assert_eq!(s.mu2.atoms[s.removed[0]], (0.501, 0.3));
        for (k, (a, b)) in s.mu1.atoms.iter().zip(&s.mu2.atoms).enumerate() {
            assert_eq!(a.1 + b.1, spiked.atoms[k].1);
        }
        assert!((s.mu1.total_mass() + s.mu2.total_mass() - spiked.total_mass()).abs() < 1e-12);

        match uph_split(&spiked, 0.1, 1e-3, 1.0, target) {
            Err(Error::InfeasibleSplit { frontier, .. }) => assert!(frontier.len() >= 2),
            other => panic!("{other:?}"),
        }
    }

    fn diag(values: &[f64]) -> SparseOperator {
        SparseOperator::from_triplets(values.len(), values.iter().enumerate().map(|(i, &v)| (i, i, v)).collect()).unwrap()
    }

    #[test]
    fn strichartz_degenerate_case() {
        let es = diagonalize(&diag(&[0.1, 0.4, 0.9])).unwrap();
        let psi = es.vectors.column(1).into_owned();
        for pt in strichartz_check(&es, &psi, &psi, &[2.0, 10.0, 1e4], 2.0, None).unwrap() {
            assert!((pt.lhs - 1.0).abs() < 1e-12);
            assert!(pt.rhs >= 1.0);
        }
        assert!(strichartz_check(&es, &psi, &psi, &[1.0], 2.0, None).is_err());
    }

    #[test]
    fn strichartz_flat_comb() {
        let n = 100;
        let energies: Vec<f64> = (0..n).map(|k| (k as f64 + 0.5) / n as f64).collect();
        let es = diagonalize(&diag(&energies)).unwrap();
        let psi = DVector::from_element(n, 0.1);
        let phi = DVector::from_fn(n, |i, _| crate::rng::keyed_unit(5, 0, i as u64) - 0.5);
        let grid = [2.0, 5.0, 10.0, 20.0, 50.0];
        for pt in strichartz_check(&es, &psi, &phi, &grid, 3.0, Some(0.02)).unwrap() {
            assert!(pt.admissible);
            assert!(pt.lhs <= pt.rhs, "{pt:?}");
        }
        let range = DMatrix::from_fn(n, 3, |i, j| if i == 10 * j + 3 { 1.0 } else { 0.0 });
        for pt in schatten_check(&es, &psi, &range, &grid, 3.0, Some(0.02)).unwrap() {
            assert!(pt.lhs <= pt.rhs);
        }
    }

    #[test]
    fn rho_profile_examples() {
        let mu = SpectralMeasure::new(vec![(0.0, 0.2), (0.5, 0.8)]).unwrap();
        let deltas = [0.3, 0.1, 0.01, 0.001];
        let at = rho_derivative_profile(&mu, 0.5, &deltas, 1.0).unwrap();
        assert!(at.points.windows(2).all(|w| w[1].1 > w[0].1));
        assert!(at.trend_slope > 0.0);
        let gap = rho_derivative_profile(&mu, 0.25, &deltas, 1.0).unwrap();
        assert!(gap.points.iter().all(|q| q.1 == 0.0));
        let c = comb(10_000, 1.0);
        let prof = rho_derivative_profile(&c, 0.5, &[0.1, 0.2], 1.0).unwrap();
        for &(d, q) in &prof.points {
            let expect = d / gauge_value(1.0, d).unwrap();
            assert!((q - expect).abs() < 1e-3 * expect.max(1.0), "{d}: {q} vs {expect}");
        }
    }

    #[test]
    fn measure_text_round_trip() {
        let mu = SpectralMeasure::new(vec![(-1.25, 0.1), (0.1 + 0.2, 1.0 / 3.0)]).unwrap();
        let mut buf = Vec::new();
        write_measure(&mu, &mut buf).unwrap();
        let back = read_measure(&buf[..]).unwrap();
        assert_eq!(back, mu);
        let text = "# header\n1 0.5\n\n2 0.5 # tail\n";
        assert_eq!(read_measure(text.as_bytes()).unwrap().len(), 2);
        assert!(matches!(read_measure("1 2 3\n".as_bytes()), Err(Error::Parse { line: 1, .. })));
        assert!(read_measure("2 1\n1 1\n".as_bytes()).is_err());
    }
}
