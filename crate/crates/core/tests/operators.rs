use holstein_core::model::{displacement_matrix, laplacian_matrix, DisorderRealization};
use holstein_core::spectral::{diagonalize, diagonalize_with, eigenvalues, DiagonalizeOptions};
use holstein_core::state_space::{count_states, Config};
use holstein_core::{Model, ModelParams};
use nalgebra::DMatrix;

fn params(radius: u32, k_tot: u32, gamma: f64, alpha: f64) -> ModelParams {
    ModelParams {
        dim: 1,
        radius,
        k_tot,
        m_site: 12,
        gamma,
        omega: 8.0,
        alpha,
        v_plus: 1.0,
        margin: 2,
    }
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

#[test]
fn zero_coupling_spectrum_is_a_kronecker_sum() {
    let model = Model::new(params(3, 4, 0.3, 0.0)).unwrap();
    let dis = model.sample_disorder(8);
    let got = eigenvalues(&model.hamiltonian(&dis).unwrap()).unwrap();
    let lat = model.lattice();
    let anderson = laplacian_matrix(lat).to_dense() * 0.3 + DMatrix::from_diagonal(&nalgebra::DVector::from_vec(dis.values.clone()));
    let tracer = anderson.symmetric_eigenvalues();
    let mut oracle = Vec::new();
    for c in model.space().configs() {
        oracle.extend(tracer.iter().map(|e| e + 8.0 * c.total() as f64));
    }
    for (a, b) in got.iter().zip(sorted(oracle)) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn decoupled_tracer_spectrum_is_shifted_oscillator_ladder() {
    let model = Model::new(params(2, 7, 0.0, 0.5)).unwrap();
    let dis = DisorderRealization::from_values(vec![0.13, 0.71, 0.42]);
    let e = eigenvalues(&model.hamiltonian(&dis).unwrap()).unwrap();
    let low: Vec<f64> = e.into_iter().filter(|&x| x < 2.5 * 8.0).collect();
    let mut oracle = Vec::new();
    for c in model.space().configs().iter().filter(|c| c.total() <= 2) {
        oracle.extend(dis.values.iter().map(|v| v + 8.0 * c.total() as f64));
    }
    let oracle = sorted(oracle);
    assert_eq!(low.len(), oracle.len());
    for (a, b) in low.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Generalized Laguerre polynomial `L_n^{(a)}(x)` by the three-term recurrence.
fn laguerre(n: u32, a: f64, x: f64) -> f64 {
    let (mut l0, mut l1) = (1.0, 1.0 + a - x);
    if n == 0 {
        return l0;
    }
    for k in 1..n {
        let k = k as f64;
        let l2 = ((2.0 * k + 1.0 + a - x) * l1 - (k + a) * l0) / (k + 1.0);
        l0 = l1;
        l1 = l2;
    }
    l1
}

/// `⟨m|e^{β(b†−b)}|n⟩` in closed form.
fn displacement_element(beta: f64, m: u32, n: u32) -> f64 {
    let g = (-beta * beta / 2.0).exp();
    if m >= n {
        (factorial(n) / factorial(m)).sqrt() * beta.powi((m - n) as i32) * g * laguerre(n, (m - n) as f64, beta * beta)
    } else {
        (factorial(m) / factorial(n)).sqrt() * (-beta).powi((n - m) as i32) * g * laguerre(m, (n - m) as f64, beta * beta)
    }
}

#[test]
fn displacement_truncation_defect_shrinks_with_cutoff() {
    let beta = 2.0;
    let block = 4;
    let defects: Vec<f64> = [8u32, 12, 16, 20]
        .iter()
        .map(|&m| {
            let d = displacement_matrix(beta, m);
            let mut worst: f64 = 0.0;
            for i in 0..block {
                for j in 0..block {
                    worst = worst.max((d[(i, j)] - displacement_element(beta, i as u32, j as u32)).abs());
                }
            }
            worst
        })
        .collect();
    assert!(defects.windows(2).all(|w| w[1] < w[0]), "{defects:?}");
    assert!(defects[3] < 1e-4, "{defects:?}");
    let d = displacement_matrix(0.3, 10);
    assert!((d.transpose() * &d - DMatrix::identity(11, 11)).amax() < 1e-12);
}

#[test]
fn projector_rank_matches_sub_box_count() {
    let model = Model::new(params(3, 4, 0.02, 0.5)).unwrap();
    for &(radius, cap) in &[(1.0, 1u32), (2.0, 2), (2.0, 3), (3.0, 2), (f64::INFINITY, 3)] {
        let p = model.displaced_projector(radius, cap).unwrap();
        let n_sites = model.lattice().sites_within(radius).len();
        let exact = count_states(n_sites, cap).unwrap().exact_f64() as usize;
        assert_eq!(p.numerical_rank(1e-8), exact, "L = {radius}, K = {cap}");
        assert_eq!(p.rank(), exact);
        assert!(p.idempotency_defect() < 1e-10);
    }
}

#[test]
fn displaced_states_are_field_eigenvectors() {
    let model = Model::new(ModelParams {
        margin: 4,
        ..params(2, 7, 0.0, 0.5)
    })
    .unwrap();
    let dis = model.sample_disorder(4);
    let hf = model.field_hamiltonian(&dis).unwrap();
    let lat = model.lattice();
    for c in [Config::vacuum(), Config::single(lat.origin()), Config::single(0).with_occupancy(lat.origin(), 1)] {
        for u in 0..lat.len() {
            let v = model.displaced_vector(u, &c).unwrap();
            let e = dis.values[u] + 8.0 * c.total() as f64;
            let r = (hf.mul_vec(&v) - &v * e).norm();
            assert!(r < 1e-6, "{c:?} at {u}: {r:e}");
        }
    }
}

#[test]
fn windowed_path_matches_dense_spectrum() {
    let model = Model::new(params(3, 3, 0.05, 0.5)).unwrap();
    let h = model.hamiltonian(&model.sample_disorder(12)).unwrap();
    let dense = diagonalize(&h).unwrap();
    let opts = DiagonalizeOptions {
        dense_limit: 10,
        window: Some((-0.5, 1.5)),
    };
    let win = diagonalize_with(&h, &opts).unwrap();
    assert!(!win.complete);
    let expected: Vec<f64> = dense.energies.iter().copied().filter(|e| (-0.5..=1.5).contains(e)).collect();
    assert_eq!(win.energies.len(), expected.len());
    for (a, b) in win.energies.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-9);
    }
}
