use featurevo::experiment::{RunLog, RunRow};
use featurevo::stats::{aggregate_curves, best_at, bootstrap_ci_mean, mann_whitney_u, mann_whitney_u_normal, SampleSet};
use proptest::prelude::*;

fn set(v: &[f64]) -> SampleSet {
    SampleSet::new("x", v.to_vec()).unwrap()
}

/// Two-sided p of `u` by listing every way to place `n` of `n + m` ranks.
fn enumerated_p(n: usize, m: usize, u: f64) -> f64 {
    let total_ranks = n + m;
    let (mut le, mut ge, mut all) = (0u64, 0u64, 0u64);
    for mask in 0u32..(1 << total_ranks) {
        if mask.count_ones() as usize != n {
            continue;
        }
        let rank_sum: usize = (0..total_ranks).filter(|i| mask >> i & 1 == 1).map(|i| i + 1).sum();
        let ui = (rank_sum - n * (n + 1) / 2) as f64;
        all += 1;
        le += (ui <= u) as u64;
        ge += (ui >= u) as u64;
    }
    ((2 * le.min(ge)) as f64 / all as f64).min(1.0)
}

#[test]
fn three_versus_three_separated() {
    let r = mann_whitney_u(&set(&[1.0, 2.0, 3.0]), &set(&[4.0, 5.0, 6.0])).unwrap();
    assert_eq!(r.u_a, 0.0);
    assert_eq!(r.u_b, 9.0);
    assert!(r.exact);
    assert_eq!(r.p, 0.1);
}

#[test]
fn exact_branch_matches_enumeration_on_small_samples() {
    for n in 1..=5 {
        for m in 1..=5 {
            for mask in 0u32..(1 << (n + m)) {
                if mask.count_ones() as usize != n {
                    continue;
                }
                let (a, b): (Vec<f64>, Vec<f64>) = {
                    let (mut a, mut b) = (vec![], vec![]);
                    for i in 0..n + m {
                        if mask >> i & 1 == 1 {
                            a.push(i as f64)
                        } else {
                            b.push(i as f64)
                        }
                    }
                    (a, b)
                };
                let r = mann_whitney_u(&set(&a), &set(&b)).unwrap();
                assert_eq!(r.p, enumerated_p(n, m, r.u_a), "n={n} m={m} mask={mask:b}");
            }
        }
    }
}

#[test]
fn ties_use_midranks_and_normal_branch() {
    let r = mann_whitney_u(&set(&[1.0, 2.0, 2.0]), &set(&[2.0, 3.0])).unwrap();
    assert!(!r.exact);
    // ranks 1, 3, 3 | 3, 5
    assert_eq!(r.u_a, 7.0 - 6.0);
    assert!(r.p > 0.0 && r.p <= 1.0);
}

#[test]
fn large_samples_use_normal_branch() {
    let a: Vec<f64> = (0..21).map(|i| i as f64).collect();
    let b: Vec<f64> = (0..20).map(|i| i as f64 + 100.0).collect();
    let r = mann_whitney_u(&set(&a), &set(&b)).unwrap();
    assert!(!r.exact);
    assert!(r.p > 0.0 && r.p < 1e-6);
}

#[test]
fn two_point_bootstrap_matches_binomial_percentiles() {
    // resampled means are Binomial(2, 1/2) / 2: 0, 0.5, 1 with mass 1/4, 1/2, 1/4
    let cdf = [(0.0, 0.25), (0.5, 0.75), (1.0, 1.0)];
    let pct = |q: f64| cdf.iter().find(|(_, c)| *c >= q).unwrap().0;
    let (lo, hi) = bootstrap_ci_mean(&set(&[0.0, 1.0]), 0.9, 10_000, 5).unwrap();
    assert!((lo - pct(0.05)).abs() <= 0.02, "{lo}");
    assert!((hi - pct(0.95)).abs() <= 0.02, "{hi}");
}

#[test]
fn bootstrap_is_deterministic_per_seed() {
    let s = set(&[1.0, 4.0, 2.0, 8.0, 5.0]);
    let a = bootstrap_ci_mean(&s, 0.9, 2000, 3).unwrap();
    assert_eq!(a, bootstrap_ci_mean(&s, 0.9, 2000, 3).unwrap());
    assert!(a.0 <= 4.0 && 4.0 <= a.1);
}

fn log_of(points: &[(u64, f64)]) -> RunLog {
    let mut log = RunLog::new("h".into(), 0, "EtE".into());
    let mut prev = 0;
    let mut best = f64::NEG_INFINITY;
    for (g, &(steps, score)) in points.iter().enumerate() {
        best = best.max(score);
        log.rows.push(RunRow {
            generation: g as u64,
            env_steps: steps,
            gen_steps: steps - prev,
            center_score: score,
            best_so_far: best,
            pop_mean: 0.0,
            pop_max: 0.0,
            train_mse: None,
            probe_mse: None,
        });
        prev = steps;
    }
    log
}

#[test]
fn curves_use_step_semantics() {
    let log = log_of(&[(100, 1.0), (200, 5.0)]);
    assert_eq!(best_at(&log, 50), Some(1.0));
    assert_eq!(best_at(&log, 199), Some(1.0));
    assert_eq!(best_at(&log, 200), Some(5.0));
    let c = aggregate_curves(&[log], &[50, 150, 250], 0.9, 100, 0).unwrap();
    assert_eq!(c.iter().map(|p| (p.mean, p.lo, p.hi)).collect::<Vec<_>>(), vec![(1.0, 1.0, 1.0), (1.0, 1.0, 1.0), (5.0, 5.0, 5.0)]);
}

#[test]
fn constant_curves_average() {
    let logs = [log_of(&[(10, 1.0), (20, 1.0)]), log_of(&[(15, 3.0), (30, 3.0)])];
    for p in aggregate_curves(&logs, &[5, 12, 40], 0.9, 500, 1).unwrap() {
        assert_eq!(p.mean, 2.0);
        assert!(p.lo <= 2.0 && p.hi >= 2.0);
    }
    assert!(aggregate_curves(&logs, &[5, 5], 0.9, 10, 1).is_err());
    assert!(aggregate_curves(&[], &[5], 0.9, 10, 1).is_err());
}

fn distinct(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::btree_set(-1000i32..1000, n).prop_map(|s| s.into_iter().map(|v| v as f64 / 7.0).collect())
}

proptest! {
    #[test]
    fn u_statistics_sum_to_product(a in prop::collection::vec(-5i32..5, 1..12), b in prop::collection::vec(-5i32..5, 1..12)) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        let r = mann_whitney_u(&set(&a), &set(&b)).unwrap();
        prop_assert_eq!(r.u_a + r.u_b, (a.len() * b.len()) as f64);
        prop_assert!(r.p > 0.0 && r.p <= 1.0);
        let s = mann_whitney_u(&set(&b), &set(&a)).unwrap();
        prop_assert_eq!(r.p, s.p);
        prop_assert_eq!(r.u_a, s.u_b);
    }

    #[test]
    fn exact_and_normal_agree_at_eight(v in distinct(16), mask in prop::sample::subsequence((0..16).collect::<Vec<usize>>(), 8)) {
        let a: Vec<f64> = mask.iter().map(|&i| v[i]).collect();
        let b: Vec<f64> = (0..16).filter(|i| !mask.contains(i)).map(|i| v[i]).collect();
        let exact = mann_whitney_u(&set(&a), &set(&b)).unwrap();
        let normal = mann_whitney_u_normal(&set(&a), &set(&b)).unwrap();
        prop_assert!(exact.exact && !normal.exact);
        // 0.01 holds in both tails; the widest gap over all U is 0.0109 at U = 24
        let tol = if exact.p <= 0.2 || exact.p >= 0.9 { 0.01 } else { 0.011 };
        prop_assert!((exact.p - normal.p).abs() < tol, "{} vs {}", exact.p, normal.p);
    }

    #[test]
    fn aggregated_means_are_monotone(runs in prop::collection::vec(prop::collection::vec((1u64..50, -10.0f64..10.0), 1..10), 1..5)) {
        let logs: Vec<RunLog> = runs.iter().map(|r| {
            let mut t = 0;
            log_of(&r.iter().map(|&(d, s)| { t += d; (t, s) }).collect::<Vec<_>>())
        }).collect();
        let marks: Vec<u64> = (0..30).map(|i| i * 20).collect();
        let c = aggregate_curves(&logs, &marks, 0.9, 200, 2).unwrap();
        for w in c.windows(2) {
            prop_assert!(w[1].mean >= w[0].mean - 1e-12);
        }
    }
}
