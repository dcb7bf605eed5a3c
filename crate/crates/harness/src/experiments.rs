//! The five experiments. Each returns its files as bytes so that the caller
//! decides where they go.

use std::time::Instant;

use holstein_core::dynamics::{confinement_profile, energy_tail_check, normalized_band_state, ProjectorCache, Schedule};
use holstein_core::gauge::{gauge_value, log_scale_grid, strichartz_check, uph_constant, write_measure};
use holstein_core::metric::decay_exponent;
use holstein_core::resolvent::{aggregate_moments, decay_fit_estimates, green_magnitudes, DecayFit, MomentEstimate, PairSet};
use holstein_core::spectral::{band_containment_report, spectral_measure};
use holstein_core::state_space::{bound_constant, count_bound, count_states};
use holstein_core::rng::task_seed;
use holstein_core::{diagonalize, upsilon, BandSet, Config, LabeledState, Lattice, Model, ModelParams};
use nalgebra::{Complex, DVector};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::ensemble::{run_ensemble, EnsembleOptions, TaskFailure};
use crate::HarnessError;

/// Largest containment defect accepted by `spectrum`.
pub const CONTAINMENT_TOL: f64 = 1e-6;

/// Energy-tail slack on top of the projector tolerance.
pub const TAIL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Count,
    Spectrum,
    Dynamics,
    Green,
    Measure,
}

impl Experiment {
    pub const ALL: [Experiment; 5] = [
        Experiment::Count,
        Experiment::Spectrum,
        Experiment::Dynamics,
        Experiment::Green,
        Experiment::Measure,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Count => "count",
            Experiment::Spectrum => "spectrum",
            Experiment::Dynamics => "dynamics",
            Experiment::Green => "green",
            Experiment::Measure => "measure",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == name)
    }
}

/// Files and bookkeeping of one experiment.
#[derive(Debug, Clone)]
pub struct Report {
    pub experiment: Experiment,
    pub files: Vec<(String, Vec<u8>)>,
    pub seeds: Vec<u64>,
    pub failures: Vec<TaskFailure>,
    /// Invariant violations found in the results.
    pub violations: Vec<String>,
    pub seconds: f64,
}

pub fn run(experiment: Experiment, config: &ExperimentConfig, opts: &EnsembleOptions) -> Result<Report, HarnessError> {
    let start = Instant::now();
    let mut report = match experiment {
        Experiment::Count => count(config)?,
        Experiment::Spectrum => spectrum(config, opts)?,
        Experiment::Dynamics => dynamics(config, opts)?,
        Experiment::Green => green(config, opts)?,
        Experiment::Measure => measure(config, opts)?,
    };
    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn json_bytes(v: &Value) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("json serializes");
    out.push(b'\n');
    out
}

fn model_of(config: &ExperimentConfig) -> Result<Model, HarnessError> {
    Ok(Model::new(config.params())?)
}

fn report(experiment: Experiment, files: Vec<(String, Vec<u8>)>) -> Report {
    Report {
        experiment,
        files,
        seeds: Vec::new(),
        failures: Vec::new(),
        violations: Vec::new(),
        seconds: 0.0,
    }
}

fn count(config: &ExperimentConfig) -> Result<Report, HarnessError> {
    let d = config.model.d;
    let grid: Vec<(usize, u32, u32)> = (1..=config.model.radius)
        .flat_map(|l| (1..=config.model.k_tot).map(move |k| (d, l, k)))
        .collect();
    let c = bound_constant(&grid)?;
    let mut rows = Vec::new();
    let mut discrepancies = Vec::new();
    for &(d, l, k) in &grid {
        let n = (2 * l as usize - 1).pow(d as u32);
        let sc = count_states(n, k)?;
        if !sc.formula_agrees() {
            discrepancies.push(json!({"n_sites": n, "K": k, "exact": sc.exact.to_string(), "formula": sc.closed_form.to_string()}));
        }
        rows.push(vec![
            d.to_string(),
            l.to_string(),
            n.to_string(),
            k.to_string(),
            sc.exact.to_string(),
            sc.closed_form.to_string(),
            sc.formula_agrees().to_string(),
            num(count_bound(c, d, l, k)),
        ]);
    }
    let summary = json!({
        "bound_constant": c,
        "rows": rows.len(),
        "formula_discrepancies": discrepancies,
    });
    Ok(report(
        Experiment::Count,
        vec![
            (
                "count.csv".into(),
                csv_bytes(&["d", "L", "n_sites", "K", "exact", "formula", "agrees", "bound"], &rows),
            ),
            ("count.json".into(), json_bytes(&summary)),
        ],
    ))
}

fn spectrum(config: &ExperimentConfig, opts: &EnsembleOptions) -> Result<Report, HarnessError> {
    let model = model_of(config)?;
    let params = *model.params();
    let n_max = params.k_tot.saturating_sub(2);
    let ens = run_ensemble(config.ensemble.n_samples, config.ensemble.seed, opts, |_, seed| {
        let h = model.hamiltonian(&model.sample_disorder(seed)).map_err(|e| e.to_string())?;
        let es = diagonalize(&h).map_err(|e| e.to_string())?;
        let rep = band_containment_report(&es.energies, &params, n_max).map_err(|e| e.to_string())?;
        Ok((rep, es.max_residual))
    })?;
    let mut rows = Vec::new();
    let mut max_defect: f64 = 0.0;
    let mut max_residual: f64 = 0.0;
    for (i, (rep, res)) in &ens.results {
        max_defect = max_defect.max(rep.max_defect);
        max_residual = max_residual.max(*res);
        for r in &rep.rows {
            rows.push(vec![i.to_string(), num(r.energy), r.band.to_string(), num(r.defect)]);
        }
    }
    let (scan, onset) = containment_scan(config, n_max)?;
    let bands = BandSet::new(&params, n_max);
    let summary = json!({
        "containment_onset_gamma": onset,
        "realizations": ens.results.len(),
        "failures": ens.failures,
        "bands": bands.intervals(),
        "max_defect": max_defect,
        "max_residual": max_residual,
    });
    let mut out = report(
        Experiment::Spectrum,
        vec![
            ("spectrum.csv".into(), csv_bytes(&["realization", "E", "band", "defect"], &rows)),
            ("gamma_scan.csv".into(), csv_bytes(&["gamma", "max_defect"], &scan)),
            ("spectrum.json".into(), json_bytes(&summary)),
        ],
    );
    if max_defect >= CONTAINMENT_TOL {
        out.violations.push(format!("band containment defect {max_defect:e}"));
    }
    out.seeds = ens.seeds;
    out.failures = ens.failures;
    Ok(out)
}

/// Containment defect of the first realization along `γ = 0.01 · 2^k`, up to
/// the first `γ` whose defect reaches [`CONTAINMENT_TOL`] or the band-overlap limit.
fn containment_scan(config: &ExperimentConfig, n_max: u32) -> Result<(Vec<Vec<String>>, Option<f64>), HarnessError> {
    let seed = task_seed(config.ensemble.seed, 0);
    let mut rows = Vec::new();
    let mut gamma = 0.01;
    loop {
        let params = ModelParams { gamma, ..config.params() };
        if params.omega <= params.band_width() {
            return Ok((rows, None));
        }
        let model = Model::new(params)?;
        let es = diagonalize(&model.hamiltonian(&model.sample_disorder(seed))?)?;
        let defect = band_containment_report(&es.energies, &params, n_max)?.max_defect;
        rows.push(vec![num(gamma), num(defect)]);
        if defect >= CONTAINMENT_TOL {
            return Ok((rows, Some(gamma)));
        }
        gamma *= 2.0;
    }
}

fn origin_source(model: &Model) -> Result<DVector<f64>, HarnessError> {
    Ok(model.displaced_vector(model.lattice().origin(), &Config::vacuum())?)
}

fn dynamics(config: &ExperimentConfig, opts: &EnsembleOptions) -> Result<Report, HarnessError> {
    let model = model_of(config)?;
    let a = &config.analysis;
    let p = *model.params();
    let bands = BandSet::new(&p, a.n_band);
    let schedule = Schedule::new(a.q, a.p, p.dim)?;
    let source = origin_source(&model)?;
    let mut cache = ProjectorCache::new();
    for &t in &a.t_grid {
        cache.get(&model, schedule.l_t(t), schedule.k_t(t))?;
    }
    let ks: Vec<u32> = (2..=p.k_tot).collect();
    let tails: Vec<_> = ks
        .iter()
        .map(|&k| model.displaced_projector(f64::INFINITY, k))
        .collect::<Result<_, _>>()?;
    let ens = run_ensemble(config.ensemble.n_samples, config.ensemble.seed, opts, |_, seed| {
        let run = || -> holstein_core::Result<_> {
            let es = diagonalize(&model.hamiltonian(&model.sample_disorder(seed))?)?;
            let psi = normalized_band_state(&es, &source, &bands)?;
            let mut local = cache.clone();
            let prof = confinement_profile(&model, &mut local, &es, &psi, &schedule, &a.t_grid, a.n_band)?;
            let mut checks = Vec::new();
            for (&k, proj) in ks.iter().zip(&tails) {
                checks.push((k, energy_tail_check(&es, &psi, proj, k, &a.t_grid, a.n_band, p.omega)?));
            }
            Ok((prof, checks))
        };
        run().map_err(|e| e.to_string())
    })?;
    let mut conf_rows = Vec::new();
    let mut tail_rows = Vec::new();
    let mut fits = Vec::new();
    let mut tail_violations = 0usize;
    let mut worst_excess = f64::NEG_INFINITY;
    for (i, (prof, checks)) in &ens.results {
        for q in &prof.points {
            conf_rows.push(vec![
                i.to_string(),
                num(q.t),
                q.k_t.to_string(),
                num(q.l_t),
                num(q.leakage),
                num(q.bound),
                q.capped.to_string(),
            ]);
        }
        worst_excess = worst_excess.max(prof.max_excess);
        fits.push(json!({"realization": i, "C": prof.fit_c, "lambda": prof.fit_lambda, "max_excess": prof.max_excess}));
        for (k, list) in checks {
            for c in list {
                let holds = c.lhs <= c.rhs + c.tolerance.max(TAIL_TOL);
                tail_violations += usize::from(!holds);
                tail_rows.push(vec![i.to_string(), k.to_string(), num(c.t), num(c.lhs), num(c.rhs), holds.to_string()]);
            }
        }
    }
    let summary = json!({
        "realizations": ens.results.len(),
        "failures": ens.failures,
        "fits": fits,
        "worst_excess": if fits.is_empty() { Value::Null } else { json!(worst_excess) },
        "energy_tail_checks": tail_rows.len(),
        "energy_tail_violations": tail_violations,
    });
    let mut out = report(
        Experiment::Dynamics,
        vec![
            (
                "confinement.csv".into(),
                csv_bytes(&["realization", "T", "K_T", "L_T", "leakage", "rhs_bound", "capped"], &conf_rows),
            ),
            (
                "energy_tail.csv".into(),
                csv_bytes(&["realization", "K", "T", "lhs", "rhs", "holds"], &tail_rows),
            ),
            ("dynamics.json".into(), json_bytes(&summary)),
        ],
    );
    if tail_violations > 0 {
        out.violations.push(format!("{tail_violations} energy-tail checks fail"));
    }
    out.seeds = ens.seeds;
    out.failures = ens.failures;
    Ok(out)
}

/// Vacuum pairs along the first axis from the two sources nearest the left
/// face, plus one-excitation targets from the first source when the cap allows.
pub fn green_pairs(model: &Model) -> Vec<(LabeledState, LabeledState, bool)> {
    let lat = model.lattice();
    let r = model.params().radius as i32 - 1;
    let at = |x: i32| {
        let mut c = vec![0; lat.dim()];
        c[0] = x;
        lat.index_of(&c).expect("site inside the box")
    };
    let mut pairs = Vec::new();
    for src in [-r, -r + 1].into_iter().filter(|&s| s <= r) {
        let a = LabeledState::new(at(src), Config::vacuum());
        for x in src..=r {
            pairs.push((a.clone(), LabeledState::new(at(x), Config::vacuum()), true));
        }
    }
    let p = model.params();
    if 1 + p.margin < p.k_tot {
        let a = LabeledState::new(at(-r), Config::vacuum());
        for x in -r..=r {
            pairs.push((a.clone(), LabeledState::new(at(x), Config::single(at(x))), false));
        }
    }
    pairs
}

fn coords(lat: &Lattice, site: usize) -> String {
    lat.site(site).iter().map(|c| c.to_string()).collect::<Vec<_>>().join(":")
}

fn fit_json(fit: Result<DecayFit, holstein_core::Error>) -> Value {
    match fit {
        Ok(f) => json!({
            "lambda_est": f.lambda_est,
            "log_c": f.log_c,
            "r2": f.r2,
            "pairs_used": f.pairs_used,
            "excluded_zeros": f.excluded_zeros,
            "distinct_abscissae": f.distinct_abscissae,
        }),
        Err(e) => json!({"error": e.to_string()}),
    }
}

fn green(config: &ExperimentConfig, opts: &EnsembleOptions) -> Result<Report, HarnessError> {
    let model = model_of(config)?;
    let a = &config.analysis;
    let lat = model.lattice();
    let tagged = green_pairs(&model);
    let vacuum_mask: Vec<bool> = tagged.iter().map(|t| t.2).collect();
    let pairs = PairSet::new(&model, tagged.into_iter().map(|(s, t, _)| (s, t)).collect())?;
    let zs: Vec<Complex<f64>> = a.z.iter().map(|z| Complex::new(z[0], z[1])).collect();
    let ens = run_ensemble(config.ensemble.n_samples, config.ensemble.seed, opts, |_, seed| {
        let dis = model.sample_disorder(seed);
        zs.iter()
            .map(|&z| green_magnitudes(&model, &pairs, z, &dis))
            .collect::<holstein_core::Result<Vec<_>>>()
            .map_err(|e| e.to_string())
    })?;
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    let mut violations = Vec::new();
    for (zi, &z) in zs.iter().enumerate() {
        if ens.results.is_empty() {
            violations.push("no successful samples".to_string());
            break;
        }
        let samples: Vec<Vec<f64>> = ens.values().map(|per_z| per_z[zi].clone()).collect();
        let est = aggregate_moments(&pairs, a.s, z, &samples);
        for (k, e) in est.iter().enumerate() {
            let gap = ((e.source.total() as f64).sqrt() - (e.target.total() as f64).sqrt()).abs();
            rows.push(vec![
                zi.to_string(),
                num(z.re),
                num(z.im),
                k.to_string(),
                coords(lat, e.source.site),
                e.source.total().to_string(),
                coords(lat, e.target.site),
                e.target.total().to_string(),
                upsilon(lat, &e.source, &e.target).to_string(),
                num(gap),
                num(decay_exponent(lat, &e.source, &e.target, a.lambda)),
                num(e.mean),
                num(e.stderr),
                e.n.to_string(),
            ]);
        }
        let vacuum: Vec<MomentEstimate> = est.iter().zip(&vacuum_mask).filter(|(_, &v)| v).map(|(e, _)| e.clone()).collect();
        let vacuum_fit = decay_fit_estimates(lat, &vacuum);
        if let Err(e) = &vacuum_fit {
            violations.push(format!("decay fit at z #{zi}: {e}"));
        }
        fits.push(json!({
            "z": [z.re, z.im],
            "s": a.s,
            "vacuum": fit_json(vacuum_fit),
            "all_pairs": fit_json(decay_fit_estimates(lat, &est)),
        }));
    }
    let summary = json!({
        "samples": ens.results.len(),
        "failures": ens.failures,
        "fits": fits,
    });
    let header = [
        "z_index", "z_re", "z_im", "pair", "source", "source_n", "target", "target_n", "upsilon", "sqrtn_gap", "exponent", "mean",
        "stderr", "n",
    ];
    let mut out = report(
        Experiment::Green,
        vec![("green.csv".into(), csv_bytes(&header, &rows)), ("fit.json".into(), json_bytes(&summary))],
    );
    out.violations = violations;
    out.seeds = ens.seeds;
    out.failures = ens.failures;
    Ok(out)
}

fn measure(config: &ExperimentConfig, opts: &EnsembleOptions) -> Result<Report, HarnessError> {
    let model = model_of(config)?;
    let a = &config.analysis;
    let bands = BandSet::new(model.params(), a.n_band);
    let source = origin_source(&model)?;
    let lat = model.lattice();
    let probe_site = lat.neighbors(lat.origin()).first().copied().unwrap_or(lat.origin());
    let phi = model.displaced_vector(probe_site, &Config::vacuum())?;
    let scales = log_scale_grid(a.eps0, 24);
    let ens = run_ensemble(config.ensemble.n_samples, config.ensemble.seed, opts, |_, seed| {
        let run = || -> holstein_core::Result<_> {
            let es = diagonalize(&model.hamiltonian(&model.sample_disorder(seed))?)?;
            let psi = normalized_band_state(&es, &source, &bands)?;
            let mu = spectral_measure(&es, &psi).measure;
            let holder = scales.iter().map(|&e| uph_constant(&mu, e, a.p)).collect::<holstein_core::Result<Vec<_>>>()?;
            let strichartz = strichartz_check(&es, &psi, &phi, &a.t_grid, a.p, None)?;
            Ok((mu, holder, strichartz))
        };
        run().map_err(|e| e.to_string())
    })?;
    let mut rows = Vec::new();
    let mut checked = 0usize;
    let mut failed = 0usize;
    let mut constants = Vec::new();
    for (i, (_, holder, strichartz)) in &ens.results {
        let c = holder.iter().map(|h| h.constant).fold(0.0, f64::max);
        constants.push(json!({"realization": i, "uph_constant": c}));
        for h in holder {
            let rho = gauge_value(a.p, h.eps).map_err(HarnessError::from)?;
            rows.push(vec![i.to_string(), "holder".into(), num(h.eps), num(h.window_mass), num(c * rho), "true".into()]);
        }
        for s in strichartz {
            if s.admissible {
                checked += 1;
                failed += usize::from(s.lhs > s.rhs);
            }
            rows.push(vec![i.to_string(), "strichartz".into(), num(s.t), num(s.lhs), num(s.rhs), s.admissible.to_string()]);
        }
    }
    let summary = json!({
        "realizations": ens.results.len(),
        "failures": ens.failures,
        "p": a.p,
        "constants": constants,
        "strichartz_checked": checked,
        "strichartz_violations": failed,
    });
    let mut files = vec![
        (
            "measure.csv".into(),
            csv_bytes(&["realization", "kind", "x", "lhs", "rhs", "admissible"], &rows),
        ),
        ("measure.json".into(), json_bytes(&summary)),
    ];
    if let Some((_, (mu, _, _))) = ens.results.first() {
        let mut atoms = Vec::new();
        write_measure(mu, &mut atoms).map_err(|e| HarnessError::Io(e.to_string()))?;
        files.push(("measure_atoms.txt".into(), atoms));
    }
    let mut out = report(Experiment::Measure, files);
    if failed > 0 {
        out.violations.push(format!("{failed} of {checked} admissible dynamical bounds fail"));
    }
    out.seeds = ens.seeds;
    out.failures = ens.failures;
    Ok(out)
}
