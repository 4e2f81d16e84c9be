mod common;

use common::*;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use stratcov::data::{split_indices, QuantileBins, SplitSpec};
use stratcov::graph::{laplacian, solve_regularized_laplacian, Block, CgOptions};
use stratcov::linalg::{min_eig, spd_inverse, sym_eig, Matrix, SymMatrix};
use stratcov::model::{average_loss, conditional_forecast};
use stratcov::prox::{prox_local, prox_loss, StratumStats};
use stratcov::solver::{fit_admm, fit_admm_from, laplacian_penalty, laplacian_penalty_edges, FitConfig};
use stratcov::stap::{realify, realify_vector, ComplexHermitian};
use stratcov::{cartesian_product, cycle_graph, path_graph, LocalRegularizer, Record, StratDataset, StratModel};

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig { cases: n, failure_persistence: None, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(cases(100))]

    #[test]
    fn eigendecomposition_bounds(seed in any::<u64>(), n in 2usize..=20) {
        let a = random_sym(&mut rng(seed), n, 3.0);
        let eig = sym_eig(&a).unwrap();
        let q = &eig.q;
        let qtq = q.transpose().matmul(q).unwrap();
        let orth = qtq.frobenius_distance(&Matrix::identity(n));
        prop_assert!(orth <= 1e-10 * n as f64, "orthogonality {orth:e}");
        let rec = eig.reconstruct().frobenius_distance(&a);
        prop_assert!(rec <= 1e-8 * (1.0 + a.frobenius_norm()), "reconstruction {rec:e}");
        prop_assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn laplacian_structure(seed in any::<u64>(), k in 1usize..40, extra in 0usize..60) {
        let g = random_graph(&mut rng(seed), k, extra);
        let l = laplacian(&g);
        prop_assert_eq!(l.nnz(), k + 2 * g.edges().len());
        let d = l.diagonal();
        let scale = d.iter().cloned().fold(0.0, f64::max);
        for i in 0..k {
            let sum: f64 = l.row(i).map(|(_, v)| v).sum();
            prop_assert!(sum.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE));
        }
        let dense = l.to_dense();
        for i in 0..k {
            for j in 0..k {
                prop_assert_eq!(dense[i][j], dense[j][i]);
            }
        }
    }

    #[test]
    fn product_counts(a in 1usize..8, b in 3usize..8, cyc in any::<bool>()) {
        let g1 = path_graph(a, 1.0).unwrap();
        let g2 = if cyc { cycle_graph(b, 2.0).unwrap() } else { path_graph(b, 2.0).unwrap() };
        let p = cartesian_product(&g1, &g2);
        prop_assert_eq!(p.k(), a * b);
        prop_assert_eq!(p.edges().len(), a * g2.edges().len() + b * g1.edges().len());
    }

    #[test]
    fn cg_matches_dense_solve(seed in any::<u64>(), k in 2usize..=50, omega in 0.01f64..10.0) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, k, k);
        let l = laplacian(&g);
        let cols: Vec<Vec<f64>> = (0..3).map(|_| (0..k).map(|_| r.sample(StandardNormal)).collect()).collect();
        let b = Block::from_columns(k, &cols);
        let sol = solve_regularized_laplacian(&l, omega, &b, None, CgOptions::default()).unwrap();
        let mut a = stratcov_oracle::dense_laplacian(k, &g.edges().iter().map(|e| (e.i, e.j, e.w)).collect::<Vec<_>>());
        for i in 0..k {
            a[i * k + i] += 2.0 / omega;
        }
        for (c, rhs) in cols.iter().enumerate() {
            let x = stratcov_oracle::dense_solve(&a, k, rhs).unwrap();
            for i in 0..k {
                prop_assert!((sol.x.get(i, c) - x[i]).abs() <= 1e-8, "entry {i}: {} vs {}", sol.x.get(i, c), x[i]);
            }
        }
    }

    #[test]
    fn loss_prox_is_stationary_and_positive_definite(seed in any::<u64>(), n in 1usize..=10) {
        let mut r = rng(seed);
        let v = random_sym(&mut r, n, 5.0);
        let count = r.random_range(1..100);
        let omega = 10f64.powf(r.random_range(-2.0..1.0));
        let draws = r.random_range(1..20);
        let s = sample_cov(&mut r, n, draws);
        let theta = prox_loss(&v, &StratumStats::new(count, s.clone()), omega).unwrap();
        prop_assert!(min_eig(&theta).unwrap() > 0.0);
        let c = omega * count as f64;
        let resid = &(&(&s - &spd_inverse(&theta).unwrap()).scaled(c) + &theta) - &v;
        prop_assert!(resid.frobenius_norm() <= 1e-8 * (1.0 + v.frobenius_norm()));
    }

    #[test]
    fn smooth_local_proxes_are_stationary(seed in any::<u64>(), n in 1usize..=8, gamma in 0.0f64..5.0, omega in 0.01f64..10.0) {
        let v = random_sym(&mut rng(seed), n, 2.0);
        let t = prox_local(&v, &LocalRegularizer::Trace { gamma }, omega);
        let resid = &(&t - &v) + &SymMatrix::identity(n).scaled(omega * gamma);
        prop_assert!(resid.frobenius_norm() <= 1e-12 * (1.0 + v.frobenius_norm()));
        let f = prox_local(&v, &LocalRegularizer::Frobenius { gamma }, omega);
        let resid = &(&f - &v) + &f.scaled(omega * gamma);
        prop_assert!(resid.frobenius_norm() <= 1e-12 * (1.0 + v.frobenius_norm()));
    }

    #[test]
    fn scalar_l1_prox_beats_fine_grid(v in -5.0f64..5.0, gamma in 0.0f64..3.0, omega in 0.1f64..3.0) {
        // off-diagonal entries carry the penalty; a 2×2 exposes one of them
        let reg = LocalRegularizer::TracePlusOffDiagL1 { gamma_tr: 0.0, gamma_od: gamma };
        let x = prox_local(&SymMatrix::from_rows(&[vec![0.0, v], vec![v, 0.0]]).unwrap(), &reg, omega).get(0, 1);
        let h = |x: f64| 2.0 * omega * gamma * x.abs() + (x - v) * (x - v);
        let best = (-6000..=6000).map(|i| h(i as f64 * 1e-3)).fold(f64::INFINITY, f64::min);
        prop_assert!(h(x) <= best + 1e-12);
    }

    #[test]
    fn proxes_are_nonexpansive(seed in any::<u64>(), n in 1usize..=6) {
        let mut r = rng(seed);
        let v1 = random_sym(&mut r, n, 3.0);
        let v2 = random_sym(&mut r, n, 3.0);
        let d = v1.frobenius_distance(&v2);
        let stats = StratumStats::new(r.random_range(0..10), sample_cov(&mut r, n, 5));
        let p1 = prox_loss(&v1, &stats, 0.7).unwrap();
        let p2 = prox_loss(&v2, &stats, 0.7).unwrap();
        prop_assert!(p1.frobenius_distance(&p2) <= d * (1.0 + 1e-10));
        for reg in [
            LocalRegularizer::None,
            LocalRegularizer::Trace { gamma: 0.5 },
            LocalRegularizer::Frobenius { gamma: 0.5 },
            LocalRegularizer::L1 { gamma: 0.5 },
            LocalRegularizer::TracePlusOffDiagL1 { gamma_tr: 0.5, gamma_od: 0.3 },
        ] {
            let q1 = prox_local(&v1, &reg, 0.7);
            let q2 = prox_local(&v2, &reg, 0.7);
            prop_assert!(q1.frobenius_distance(&q2) <= d * (1.0 + 1e-12), "{reg}");
        }
    }

    #[test]
    fn penalty_forms_agree(seed in any::<u64>(), k in 1usize..20, n in 1usize..5) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, k, k);
        let theta: Vec<SymMatrix> = (0..k).map(|_| random_sym(&mut r, n, 1.0)).collect();
        let a = laplacian_penalty(&theta, &laplacian(&g));
        let b = laplacian_penalty_edges(&theta, &g);
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(f64::MIN_POSITIVE));
    }

    #[test]
    fn realify_is_homomorphism(seed in any::<u64>(), dim in 1usize..8) {
        let mut r = rng(seed);
        let h1 = ComplexHermitian::random_psd(&mut r, dim);
        let h2 = ComplexHermitian::random_psd(&mut r, dim);
        let sum = realify(&h1.add_scaled(1.0, &h2));
        let parts = &realify(&h1) + &realify(&h2);
        prop_assert!(sum.frobenius_distance(&parts) <= 1e-12);
        let v: Vec<Complex64> = (0..dim).map(|_| Complex64::new(r.sample(StandardNormal), r.sample(StandardNormal))).collect();
        let lhs = realify(&h1).mat_vec(&realify_vector(&v));
        let rhs = realify_vector(&h1.mul_vec(&v));
        for (a, b) in lhs.iter().zip(&rhs) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn quantile_bins_stay_in_range(seed in any::<u64>(), m in 1usize..200, bins in 1usize..12) {
        let mut r = rng(seed);
        let train: Vec<f64> = (0..m).map(|_| r.sample(StandardNormal)).collect();
        let qb = QuantileBins::fit(&train, bins).unwrap();
        for _ in 0..50 {
            let x: f64 = 10.0 * r.sample::<f64, _>(StandardNormal);
            prop_assert!(qb.assign(x) < bins);
        }
    }

    #[test]
    fn single_hidden_variance_is_reciprocal(seed in any::<u64>(), n in 2usize..6) {
        let mut r = rng(seed);
        let theta = random_spd(&mut r, n, 0.5);
        let m = StratModel::new(vec![theta.clone()], stratcov::RegGraph::edgeless(1).unwrap(), LocalRegularizer::None, None).unwrap();
        let hidden = r.random_range(0..n);
        let observed: Vec<usize> = (0..n).filter(|&i| i != hidden).collect();
        let y: Vec<f64> = observed.iter().map(|_| r.sample(StandardNormal)).collect();
        let f = conditional_forecast(&m, 0, &observed, &y).unwrap();
        prop_assert_eq!(f.cov.get(0, 0), 1.0 / theta.get(hidden, hidden));
        prop_assert!(conditional_forecast(&m, 0, &[], &[]).is_err());
    }
}

proptest! {
    #![proptest_config(cases(20))]

    #[test]
    fn split_is_partition(seed in any::<u64>(), m in 0usize..500, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        for trial in 0..50u64 {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let spec = SplitSpec::new(lo, hi - lo, 1.0 - hi, seed.wrapping_add(trial)).unwrap();
            let s = split_indices(m, &spec).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..m).collect::<Vec<_>>());
        }
    }

    #[test]
    fn fitted_models_are_converged_positive_definite_fixed_points(seed in any::<u64>(), k in 1usize..6, n in 1usize..4) {
        let mut r = rng(seed);
        let stats: Vec<StratumStats> = (0..k)
            .map(|i| {
                // all-empty data has no minimizer; the graph is connected so one record suffices
                let m = r.random_range(usize::from(i == 0)..6);
                if m == 0 { StratumStats::empty(n) } else { StratumStats::new(m, sample_cov(&mut r, n, m)) }
            })
            .collect();
        let g = random_graph(&mut r, k, 2);
        let lap = laplacian(&g);
        let reg = LocalRegularizer::TracePlusOffDiagL1 { gamma_tr: 0.1, gamma_od: 0.05 };
        let cfg = FitConfig { max_iter: 20_000, ..FitConfig::default() };
        let fit = fit_admm(&stats, &lap, &reg, &cfg).unwrap();
        prop_assert!(fit.diagnostics.converged);
        for h in &fit.diagnostics.history {
            prop_assert!(h.r_norm.is_finite() && h.r_norm >= 0.0 && h.s_norm.is_finite() && h.s_norm >= 0.0);
        }
        let last = fit.diagnostics.last().unwrap();
        prop_assert!(last.r_norm <= last.eps_pri && last.s_norm <= last.eps_dual);
        for t in &fit.state.theta {
            prop_assert!(min_eig(t).unwrap() > 0.0);
        }

        let tight = FitConfig { eps_abs: 1e-7, eps_rel: 1e-7, max_iter: 100_000, ..FitConfig::default() };
        let exact = fit_admm(&stats, &lap, &reg, &tight).unwrap();
        let one = FitConfig { max_iter: 1, ..tight };
        let again = fit_admm_from(exact.state.clone(), &stats, &lap, &reg, &one).unwrap();
        let moved: f64 = exact
            .theta_hat
            .iter()
            .zip(&again.theta_hat)
            .map(|(a, b)| a.frobenius_distance_sq(b))
            .sum::<f64>()
            .sqrt();
        prop_assert!(moved <= 1e-5, "moved {moved:e}");
    }

    #[test]
    fn training_loss_tracks_regularization_path(seed in any::<u64>(), which in 0usize..3) {
        let mut r = rng(seed);
        let (k, n) = (3, 3);
        let records: Vec<Record> = (0..24)
            .map(|i| Record { z: i % k, y: (0..n).map(|_| r.sample(StandardNormal)).collect() })
            .collect();
        let ds = StratDataset::new(n, k, records).unwrap();
        let graph = path_graph(k, 0.5).unwrap();
        let cfg = FitConfig { eps_abs: 1e-10, eps_rel: 1e-10, max_iter: 100_000, ..FitConfig::default() };
        let regs = |g: f64| match which {
            0 => LocalRegularizer::Trace { gamma: g },
            1 => LocalRegularizer::TracePlusOffDiagL1 { gamma_tr: 0.2, gamma_od: g },
            _ => LocalRegularizer::Frobenius { gamma: g },
        };
        let mut prev = f64::INFINITY;
        for g in [2.0, 1.0, 0.5, 0.1, 0.0] {
            let m = stratcov::fit(&ds, &graph, &regs(g), &cfg).unwrap();
            let loss = average_loss(&m, &ds).unwrap();
            prop_assert!(loss <= prev + 1e-7, "γ={g}: {loss} after {prev}");
            prev = loss;
        }
    }
}
