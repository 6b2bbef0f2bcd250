use nalgebra::DMatrix;
use proptest::prelude::*;

use slowfast::equilibrium::{find_equilibrium, DEFAULT_TOL};
use slowfast::integrate::{integrate, IntegratorConfig};
use slowfast::linalg::eigenvalues;
use slowfast::models::SignRegion;
use slowfast::oscillation::{scan_parameter, ScanOptions};
use slowfast::studies::study;
use slowfast::{Matrix, ModelId, ParameterSet};

fn model() -> impl Strategy<Value = ModelId> {
    prop::sample::select(ModelId::ALL.to_vec())
}

/// A state inside the model's sign region with magnitudes in [0.05, 3].
fn state_for(m: ModelId, raw: &[f64]) -> Vec<f64> {
    m.def()
        .domain
        .iter()
        .zip(raw)
        .map(|(r, &v)| match r {
            SignRegion::NonPositive => -v,
            SignRegion::NonNegative => v,
            SignRegion::Free => v - 1.5,
        })
        .collect()
}

fn sorted(mut v: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    v
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 200,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn analytic_jacobians_match_differences(m in model(), raw in prop::collection::vec(0.05f64..3.0, 6)) {
        let def = m.def();
        let x = state_for(m, &raw[..def.dim]);
        let p = ParameterSet::defaults(m);
        let mut exact = Matrix::zeros(def.dim);
        def.eval_jacobian(p.values(), &x, &mut exact);
        let fd = def.fd_jacobian(p.values(), &x);
        let scale = fd.norm().max(1.0);
        for (a, b) in exact.as_slice().iter().zip(fd.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-5 * scale, "{m}: {a} vs {b}");
        }
    }

    #[test]
    fn eigenvalues_agree_with_nalgebra(n in 2usize..=6, entries in prop::collection::vec(-2.0f64..2.0, 36)) {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| entries[i * n..(i + 1) * n].to_vec()).collect();
        let ours = eigenvalues(&Matrix::from_rows(&rows)).unwrap();
        let oracle = DMatrix::from_row_slice(n, n, &entries[..n * n]).complex_eigenvalues();
        let a = sorted(ours.iter().map(|z| (z.re, z.im)).collect());
        let b = sorted(oracle.iter().map(|z| (z.re, z.im)).collect());
        prop_assert_eq!(a.len(), b.len());
        // sorting can pair up near-equal real parts differently, so match greedily
        let mut used = vec![false; b.len()];
        for (re, im) in a {
            let hit = (0..b.len())
                .filter(|&j| !used[j])
                .find(|&j| (b[j].0 - re).hypot(b[j].1 - im) < 1e-6);
            prop_assert!(hit.is_some(), "{re}+{im}i not in {b:?}");
            used[hit.unwrap()] = true;
        }
    }

    #[test]
    fn lu_solution_has_small_residual(entries in prop::collection::vec(-1.0f64..1.0, 16), rhs in prop::collection::vec(-1.0f64..1.0, 4)) {
        let rows: Vec<Vec<f64>> = entries.chunks(4).map(|r| r.to_vec()).collect();
        let mut a = Matrix::from_rows(&rows);
        for i in 0..4 {
            a[(i, i)] += 4.0;
        }
        let x = a.solve(&rhs).unwrap();
        let r = a.mul_vec(&x);
        for (u, v) in r.iter().zip(&rhs) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn gause_newton_hits_closed_form(eps in 0.01f64..0.9) {
        let p = ParameterSet::defaults(ModelId::Gause).with("eps", eps).unwrap();
        let x = eps * 10.0 / (1.0 - eps);
        let y = (1.0 - x / 15.0) * (x + 10.0);
        if x < 15.0 {
            let eq = find_equilibrium(&p, &[x * 1.02 + 0.01, y * 0.98], DEFAULT_TOL).unwrap();
            prop_assert!((eq.state[0] - x).abs() < 1e-9 && (eq.state[1] - y).abs() < 1e-9);
        }
    }
}

#[test]
fn integration_is_deterministic() {
    let s = study(ModelId::Enso);
    let p = s.params().with_bif_value(0.05);
    let cfg = IntegratorConfig::default();
    let a = integrate(&p, s.x0, (0.0, 300.0), &cfg).unwrap();
    let b = integrate(&p, s.x0, (0.0, 300.0), &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn parallel_scan_is_deterministic() {
    let s = study(ModelId::Fear);
    let grid = [0.01, 0.05, 0.1, 0.2, 0.3, 0.45];
    let opts = ScanOptions::with_observable(0);
    let a = scan_parameter(&s.params(), "eps", &grid, s.x0, &opts).unwrap();
    let b = scan_parameter(&s.params(), "eps", &grid, s.x0, &opts).unwrap();
    assert_eq!(a, b);
}
