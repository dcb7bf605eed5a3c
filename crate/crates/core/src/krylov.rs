//! Iterative eigensolver for systems beyond dense reach: shift-invert Lanczos
//! with full reorthogonalization and locking, restarted until a sweep adds no
//! new certified pair inside the requested window.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rng::keyed_unit;
use crate::sparse::SparseOperator;

#[derive(Debug, Clone, Copy)]
pub struct WindowOptions {
    pub lo: f64,
    pub hi: f64,
    /// Lanczos steps per sweep.
    pub krylov_dim: usize,
    pub max_restarts: usize,
    /// Stop after this many pairs.
    pub max_pairs: usize,
    /// Residual threshold relative to the operator norm bound.
    pub tol: f64,
    /// Relative tolerance of the inner MINRES solves.
    pub inner_tol: f64,
}

impl WindowOptions {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self {
            lo,
            hi,
            krylov_dim: 80,
            max_restarts: 50,
            max_pairs: usize::MAX,
            tol: 1e-10,
            inner_tol: 1e-13,
        }
    }
}

/// MINRES for the symmetric, possibly indefinite system `(A − σ) x = b`.
///
/// Returns the iterate and its true relative residual.
pub fn minres(a: &SparseOperator, shift: f64, b: &DVector<f64>, tol: f64, max_iter: usize) -> (DVector<f64>, f64) {
    let n = b.len();
    let mut x = DVector::zeros(n);
    let beta1 = b.norm();
    if beta1 == 0.0 {
        return (x, 0.0);
    }
    let op = |v: &DVector<f64>| a.mul_vec(v) - v * shift;
    let mut r1 = b.clone();
    let mut r2 = b.clone();
    let mut y = b.clone();
    let mut w = DVector::zeros(n);
    let mut w2 = DVector::zeros(n);
    let (mut oldb, mut beta) = (0.0, beta1);
    let (mut dbar, mut epsln, mut phibar) = (0.0, 0.0, beta1);
    let (mut cs, mut sn) = (-1.0f64, 0.0f64);
    for itn in 1..=max_iter {
        let v = &y / beta;
        y = op(&v);
        if itn >= 2 {
            y -= &r1 * (beta / oldb);
        }
        let alfa = v.dot(&y);
        y -= &r2 * (alfa / beta);
        r1 = std::mem::replace(&mut r2, y.clone());
        oldb = beta;
        beta = r2.norm();
        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;
        let w1 = std::mem::replace(&mut w2, w.clone());
        w = (&v - &w1 * oldeps - &w2 * delta) / gamma;
        x += &w * phi;
        if phibar / beta1 < tol || beta == 0.0 {
            break;
        }
    }
    let res = (b - op(&x)).norm() / beta1;
    (x, res)
}

fn orthogonalize(w: &mut DVector<f64>, basis: &[DVector<f64>]) {
    // classical Gram–Schmidt, applied twice
    for _ in 0..2 {
        for q in basis {
            let c = q.dot(w);
            w.axpy(-c, q, 1.0);
        }
    }
}

/// Certified eigenpairs of `h` inside `[lo, hi]`, ascending.
pub fn shift_invert_window(h: &SparseOperator, opts: &WindowOptions) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = h.dim();
    let norm = h.norm_bound().max(f64::MIN_POSITIVE);
    // keep the shift off any exactly representable eigenvalue
    let sigma = 0.5 * (opts.lo + opts.hi) + 1e-7 * std::f64::consts::SQRT_2 * (opts.hi - opts.lo).max(1e-3);
    let mut locked: Vec<(f64, DVector<f64>)> = Vec::new();
    let mut unconverged_residual: Option<f64> = None;
    let m = opts.krylov_dim.min(n);

    for restart in 0..opts.max_restarts {
        let locked_vecs: Vec<DVector<f64>> = locked.iter().map(|(_, v)| v.clone()).collect();
        let mut q = DVector::from_fn(n, |i, _| keyed_unit(0x5eed, restart as u64, i as u64) - 0.5);
        orthogonalize(&mut q, &locked_vecs);
        let qn = q.norm();
        if qn < 1e-12 {
            break;
        }
        q /= qn;
        let mut basis = vec![q];
        let mut alphas = Vec::new();
        let mut betas: Vec<f64> = Vec::new();
        for j in 0..m {
            let (mut w, res) = minres(h, sigma, &basis[j], opts.inner_tol, 20 * n);
            if res > 1e3 * opts.inner_tol {
                return Err(Error::NoConvergence { residual: res });
            }
            let a = basis[j].dot(&w);
            w.axpy(-a, &basis[j], 1.0);
            if j > 0 {
                w.axpy(-betas[j - 1], &basis[j - 1], 1.0);
            }
            orthogonalize(&mut w, &locked_vecs);
            orthogonalize(&mut w, &basis);
            alphas.push(a);
            let b = w.norm();
            if j + 1 == m || b < 1e-12 * a.abs().max(1.0) {
                break;
            }
            betas.push(b);
            basis.push(w / b);
        }
        let k = alphas.len();
        let mut t = DMatrix::zeros(k, k);
        for i in 0..k {
            t[(i, i)] = alphas[i];
            if i + 1 < k {
                t[(i, i + 1)] = betas[i];
                t[(i + 1, i)] = betas[i];
            }
        }
        let eig = t.symmetric_eigen();
        let q_mat = DMatrix::from_columns(&basis[..k]);
        let mut added = 0;
        for i in 0..k {
            let theta = eig.eigenvalues[i];
            if theta.abs() < 1e-300 {
                continue;
            }
            let guess = sigma + 1.0 / theta;
            if guess < opts.lo - 1e-8 * norm || guess > opts.hi + 1e-8 * norm {
                continue;
            }
            let mut y = &q_mat * eig.eigenvectors.column(i);
            orthogonalize(&mut y, &locked.iter().map(|(_, v)| v.clone()).collect::<Vec<_>>());
            let yn = y.norm();
            if yn < 1e-8 {
                continue;
            }
            y /= yn;
            let hy = h.mul_vec(&y);
            let e = y.dot(&hy);
            let res = (hy - &y * e).norm() / norm;
            if e < opts.lo || e > opts.hi {
                continue;
            }
            if res < opts.tol {
                locked.push((e, y));
                added += 1;
            } else {
                unconverged_residual = Some(unconverged_residual.map_or(res, |r: f64| r.min(res)));
            }
        }
        if added == 0 || locked.len() >= opts.max_pairs {
            break;
        }
    }
    if locked.is_empty() {
        if let Some(residual) = unconverged_residual {
            return Err(Error::NoConvergence { residual });
        }
    }
    locked.sort_by(|a, b| a.0.total_cmp(&b.0));
    locked.truncate(opts.max_pairs);
    let energies = locked.iter().map(|(e, _)| *e).collect();
    let vectors = if locked.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&locked.iter().map(|(_, v)| v.clone()).collect::<Vec<_>>())
    };
    Ok((energies, vectors))
}
