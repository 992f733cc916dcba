use amsa::experiment::{aggregate_trials, fit_rate, TrialSeries};
use amsa::problems::mfg::project_simplex;
use amsa::problems::softmax_policy;
use amsa::samplers::{stationary_distribution, tv_distance, FiniteKernel};
use amsa::stack::ParameterStack;
use proptest::prelude::*;

fn dims_and_data() -> impl Strategy<Value = (Vec<usize>, Vec<f64>)> {
    prop::collection::vec(1usize..5, 1..5).prop_flat_map(|dims| {
        let total: usize = dims.iter().sum();
        (Just(dims), prop::collection::vec(-100.0..100.0f64, total))
    })
}

fn stochastic_rows(m: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.05..1.0f64, m), m).prop_map(|rows| {
        rows.into_iter()
            .map(|r| {
                let s: f64 = r.iter().sum();
                r.into_iter().map(|v| v / s).collect()
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn stack_blocks_round_trip((dims, data) in dims_and_data()) {
        let s = ParameterStack::from_flat(&dims, data.clone()).unwrap();
        prop_assert_eq!(s.dims(), dims.clone());
        let back = ParameterStack::from_blocks(s.to_blocks()).unwrap();
        prop_assert_eq!(back.as_slice(), &data[..]);
        let sq: f64 = s.norms().iter().map(|n| n * n).sum();
        prop_assert!((sq.sqrt() - s.norm()).abs() <= 1e-9 * (1.0 + s.norm()));
    }

    #[test]
    fn stack_axpy_matches_elementwise((dims, data) in dims_and_data(), a in -3.0..3.0f64) {
        let x = ParameterStack::from_flat(&dims, data.clone()).unwrap();
        let mut y = ParameterStack::from_flat(&dims, data.iter().map(|v| v * 0.5 + 1.0).collect()).unwrap();
        let before = y.clone();
        y.axpy(a, &x).unwrap();
        for k in 0..data.len() {
            prop_assert_eq!(y.as_slice()[k], before.as_slice()[k] + a * x.as_slice()[k]);
        }
    }

    #[test]
    fn simplex_projection_is_the_nearest_point(
        v in prop::collection::vec(-5.0..5.0f64, 1..12),
        w in prop::collection::vec(0.0..1.0f64, 12),
    ) {
        let mut p = v.clone();
        project_simplex(&mut p);
        prop_assert!(p.iter().all(|x| *x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // Variational inequality against an arbitrary simplex point z.
        let z: Vec<f64> = {
            let w = &w[..v.len()];
            let s: f64 = w.iter().sum::<f64>() + 1e-12;
            w.iter().map(|x| (x + 1e-12 / v.len() as f64) / s).collect()
        };
        let ip: f64 = v.iter().zip(&p).zip(&z).map(|((vi, pi), zi)| (vi - pi) * (zi - pi)).sum();
        prop_assert!(ip <= 1e-9, "{ip}");
        let mut again = p.clone();
        project_simplex(&mut again);
        for (a, b) in again.iter().zip(&p) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_are_distributions_and_shift_invariant(
        logits in prop::collection::vec(-50.0..50.0f64, 12),
        shift in -100.0..100.0f64,
    ) {
        let pi = softmax_policy(&logits, 4).unwrap();
        prop_assert_eq!(pi.nrows(), 3);
        for r in 0..3 {
            prop_assert!((pi.row(r).sum() - 1.0).abs() < 1e-12);
            prop_assert!(pi.row(r).iter().all(|v| *v >= 0.0));
        }
        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        let pj = softmax_policy(&shifted, 4).unwrap();
        prop_assert!((pi - pj).abs().max() < 1e-12);
    }

    #[test]
    fn stationary_distribution_is_invariant(rows in (2usize..7).prop_flat_map(stochastic_rows)) {
        let kernel = FiniteKernel::fixed(rows.clone()).unwrap();
        let mu = stationary_distribution(&kernel, &[]).unwrap();
        prop_assert!((mu.sum() - 1.0).abs() < 1e-12);
        for j in 0..rows.len() {
            let next: f64 = (0..rows.len()).map(|i| mu[i] * rows[i][j]).sum();
            prop_assert!((next - mu[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn tv_is_a_bounded_symmetric_distance(rows in stochastic_rows(5)) {
        let d = tv_distance(&rows[0], &rows[1]).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, tv_distance(&rows[1], &rows[0]).unwrap());
        prop_assert_eq!(tv_distance(&rows[2], &rows[2]).unwrap(), 0.0);
    }

    #[test]
    fn power_laws_are_fitted_exactly(c in 0.01..100.0f64, p in 0.1..2.0f64) {
        let curve: Vec<(u64, f64)> = (0..=40u32)
            .map(|k| {
                let t = 10f64.powf(k as f64 / 8.0).round() as u64;
                (t, c * ((t + 1) as f64).powf(-p))
            })
            .collect();
        let fit = fit_rate(&curve, (1, 100_000)).unwrap();
        prop_assert!((fit.slope + p).abs() < 1e-9);
        prop_assert!((fit.intercept - c.ln()).abs() < 1e-8);
    }

    #[test]
    fn aggregation_is_affine(
        values in prop::collection::vec(prop::collection::vec(-10.0..10.0f64, 6), 1..8),
        a in -5.0..5.0f64,
        b in -5.0..5.0f64,
    ) {
        let times: Vec<u64> = (0..6).collect();
        let make = |f: &dyn Fn(f64) -> f64| -> Vec<TrialSeries> {
            values
                .iter()
                .map(|v| {
                    let mut s = TrialSeries::new(times.clone());
                    s.insert("q", v.iter().map(|x| f(*x)).collect()).unwrap();
                    s
                })
                .collect()
        };
        let base = aggregate_trials(&make(&|x| x)).unwrap();
        let mapped = aggregate_trials(&make(&|x| a * x + b)).unwrap();
        for k in 0..6 {
            let want = a * base["q"].mean[k] + b;
            prop_assert!((mapped["q"].mean[k] - want).abs() < 1e-9);
            prop_assert!((mapped["q"].stderr[k] - a.abs() * base["q"].stderr[k]).abs() < 1e-9);
        }
    }
}
