//! Acceptance criteria 1-10. Prints one PASS/FAIL line per criterion.
//!
//! `FEATUREVO_ACCEPTANCE=1,2,7` runs a subset.

use std::io::Write;
use std::net::TcpListener;
use std::time::{Duration, Instant};

use featurevo::bridge::{serve_tcp, BridgeEnv};
use featurevo::envs::conformance::{run_suite, ConformanceOptions};
use featurevo::envs::{EchoConfig, EchoEnv, EnvSource, Environment, RacecarConfig, SwingUp, SwingUpConfig};
use featurevo::es::{centered_rank_shape, es_step, evaluate_population, sample_perturbations, EpisodeOutcome, EsConfig};
use featurevo::experiment::{
    random_baseline, replication_seed, run_experiment, Condition, Experiment, ExperimentConfig, RunLog, RunOptions,
};
use featurevo::features::{pretrain, Dataset, EpisodeRecord, ExtractorDims, FeatureExtractor, FeatureKind, TrainConfig};
use featurevo::nn::{Activation, FeedForwardNet, LstmCell, LstmState};
use featurevo::stats::{mann_whitney_u, median, SampleSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

#[derive(Deserialize)]
struct Pilot {
    spiral_sts_mse: f64,
    racecar_random_baseline: f64,
}

fn pilot() -> Pilot {
    serde_json::from_str(include_str!("fixtures/pilot.json")).unwrap()
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn selected(id: u32) -> bool {
    match std::env::var("FEATUREVO_ACCEPTANCE") {
        Ok(list) if !list.trim().is_empty() => list.split(',').any(|s| s.trim() == id.to_string()),
        _ => true,
    }
}

/// Writes around the test harness capture so the lines always show.
fn say(line: &str) {
    let mut err = std::io::stderr();
    let _ = writeln!(err, "{line}");
    let _ = err.flush();
}

fn criterion(id: u32, name: &str, limit: Duration, check: impl FnOnce() -> Verdict) -> Option<bool> {
    if !selected(id) {
        return None;
    }
    let t = Instant::now();
    let v = check();
    let elapsed = t.elapsed();
    let in_time = elapsed <= limit;
    let pass = v.pass && in_time;
    let timing = format!("{:.1} s, limit {} s", elapsed.as_secs_f64(), limit.as_secs());
    let late = if in_time { "" } else { ", over time" };
    say(&format!("criterion {id:>2} {} {name}: {} ({timing}{late})", if pass { "PASS" } else { "FAIL" }, v.detail));
    Some(pass)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

fn ff_gradients() -> f64 {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let depth = rng.gen_range(1..=3);
        let sizes: Vec<usize> = (0..=depth).map(|_| rng.gen_range(1..=8)).collect();
        let act = if trial % 2 == 0 { Activation::Linear } else { Activation::Tanh };
        let mut net = FeedForwardNet::random(&sizes, act, &mut rng);
        let x: Vec<f64> = (0..net.input_dim()).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let r: Vec<f64> = (0..net.output_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |net: &FeedForwardNet, x: &[f64]| net.forward(x).unwrap().iter().zip(&r).map(|(o, r)| o * r).sum::<f64>();
        let (grad, dx) = net.backward(&x, &r).unwrap();
        let base = net.params().values().to_vec();
        for k in 0..base.len() {
            let mut p = base.clone();
            p[k] += h;
            net.set_values(&p).unwrap();
            let up = loss(&net, &x);
            p[k] -= 2.0 * h;
            net.set_values(&p).unwrap();
            let down = loss(&net, &x);
            worst = worst.max(rel_err(grad.values()[k], (up - down) / (2.0 * h)));
        }
        net.set_values(&base).unwrap();
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let up = loss(&net, &xp);
            xp[i] -= 2.0 * h;
            let down = loss(&net, &xp);
            worst = worst.max(rel_err(dx[i], (up - down) / (2.0 * h)));
        }
    }
    worst
}

fn lstm_gradients() -> f64 {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + trial);
        let (d, hs, len) = (rng.gen_range(1..=4), rng.gen_range(1..=5), rng.gen_range(1..=6));
        let mut cell = LstmCell::random(d, hs, &mut rng);
        let inputs: Vec<Vec<f64>> = (0..len).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let r: Vec<Vec<f64>> = (0..len).map(|_| (0..hs).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let init = LstmState::zeros(hs);
        let loss = |cell: &LstmCell, inputs: &[Vec<f64>]| {
            let (caches, _) = cell.forward_sequence(&init, inputs).unwrap();
            caches.iter().zip(&r).map(|(c, rt)| c.h.iter().zip(rt).map(|(a, b)| a * b).sum::<f64>()).sum::<f64>()
        };
        let (caches, _) = cell.forward_sequence(&init, &inputs).unwrap();
        let mut grad = vec![0.0; cell.params().len()];
        let mut dx = vec![vec![]; len];
        cell.backward_sequence(&caches, Some(&r), None, &mut grad, Some(&mut dx)).unwrap();
        let base = cell.params().values().to_vec();
        for k in 0..base.len() {
            let mut p = base.clone();
            p[k] += h;
            cell.params_mut().values_mut().copy_from_slice(&p);
            let up = loss(&cell, &inputs);
            p[k] -= 2.0 * h;
            cell.params_mut().values_mut().copy_from_slice(&p);
            let down = loss(&cell, &inputs);
            worst = worst.max(rel_err(grad[k], (up - down) / (2.0 * h)));
        }
        cell.params_mut().values_mut().copy_from_slice(&base);
        for t in 0..len {
            for j in 0..d {
                let mut xi = inputs.clone();
                xi[t][j] += h;
                let up = loss(&cell, &xi);
                xi[t][j] -= 2.0 * h;
                let down = loss(&cell, &xi);
                worst = worst.max(rel_err(dx[t][j], (up - down) / (2.0 * h)));
            }
        }
    }
    worst
}

fn c1_gradients() -> Verdict {
    let (ff, lstm) = (ff_gradients(), lstm_gradients());
    verdict(ff < 1e-5 && lstm < 1e-5, format!("max rel err ff {ff:.2e}, lstm {lstm:.2e} (< 1e-5)"))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn c2_sphere() -> Verdict {
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let cfg = EsConfig { population: 40, sigma: 0.05, learning_rate: 0.05, seed, ..EsConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut center: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n0 = norm(&center);
        let mut adam = cfg.adam(20);
        for g in 0..200 {
            let p = sample_perturbations(&cfg, g, 20).unwrap();
            let eval = evaluate_population(&mut [()], &center, &p, &cfg, g, |_, th, _| {
                Ok(EpisodeOutcome { score: -th.iter().map(|x| x * x).sum::<f64>(), steps: 1, aux: () })
            })
            .unwrap();
            let u = centered_rank_shape(&eval.fitness).unwrap();
            es_step(&mut center, &p, &u, &cfg, &mut adam).unwrap();
        }
        worst = worst.max(norm(&center) / n0);
    }
    verdict(worst < 0.05, format!("worst final/initial norm {worst:.4} over 10 seeds (< 0.05)"))
}

fn c3_rank_invariance() -> Verdict {
    let transforms: [fn(f64) -> f64; 5] = [f64::exp, |x| 3.0 * x - 7.0, |x| x * x * x + x, f64::atan, |x| x.exp() + x];
    let mut identical = 0;
    for case in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(case);
        let pop = 2 * rng.gen_range(1..=20);
        let dim = rng.gen_range(1..=12);
        let cfg = EsConfig { population: pop, seed: case, ..EsConfig::default() };
        let p = sample_perturbations(&cfg, case % 7, dim).unwrap();
        let f: Vec<f64> = (0..pop).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let t = transforms[(case % 5) as usize];
        let g: Vec<f64> = f.iter().map(|&x| t(x)).collect();
        let start: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (mut ca, mut cb) = (start.clone(), start);
        let (mut aa, mut ab) = (cfg.adam(dim), cfg.adam(dim));
        let ga = es_step(&mut ca, &p, &centered_rank_shape(&f).unwrap(), &cfg, &mut aa).unwrap();
        let gb = es_step(&mut cb, &p, &centered_rank_shape(&g).unwrap(), &cfg, &mut ab).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        if bits(&ca) == bits(&cb) && bits(&ga) == bits(&gb) && aa == ab {
            identical += 1;
        }
    }
    verdict(identical == 1000, format!("{identical}/1000 pairs bit-identical"))
}

fn c4_parallel_determinism() -> Verdict {
    let config = ExperimentConfig {
        condition: "StS*".parse().unwrap(),
        max_steps: Some(500),
        seed: 4,
        dataset_episodes: 2,
        pretrain_epochs: 5,
        probe_episodes: 1,
        ..ExperimentConfig::default()
    };
    let run = |workers| {
        let mut exp = Experiment::new(config.clone(), workers).unwrap();
        for _ in 0..20 {
            exp.step_generation().unwrap();
        }
        (exp.log().to_csv(), exp.checkpoint_bytes())
    };
    let (one, eight) = (run(1), run(8));
    let rows = one.0.lines().filter(|l| !l.starts_with('#')).count() - 1;
    verdict(one == eight, format!("{rows} rows, run logs {} and checkpoints {}", same(one.0 == eight.0), same(one.1 == eight.1)))
}

fn same(b: bool) -> &'static str {
    if b {
        "identical"
    } else {
        "differ"
    }
}

fn c5_spiral() -> Verdict {
    let (rho, w) = (0.997f64, 0.1f64);
    let mut x = [1.0, 0.0];
    let mut e = EpisodeRecord::new();
    for _ in 0..1000 {
        e.push(x.to_vec(), vec![0.0]);
        x = [rho * (w.cos() * x[0] - w.sin() * x[1]), rho * (w.sin() * x[0] + w.cos() * x[1])];
    }
    let ds = Dataset::from_episodes(2, 1, vec![e]).unwrap();
    let dims = ExtractorDims { hidden: 50, window: 5, ..ExtractorDims::default() };
    let mut fx = FeatureExtractor::new(FeatureKind::Sts, 2, 1, dims, 0).unwrap();
    let r = pretrain(&mut fx, &ds, &TrainConfig { epochs: 500, seed: 0, ..TrainConfig::default() }).unwrap();
    verdict(r.final_mse < 1e-3, format!("mse {:.3e} -> {:.3e} (< 1e-3; pilot {:.3e})", r.initial_mse, r.final_mse, pilot().spiral_sts_mse))
}

/// Budget and environment shared by the two racecar learning criteria.
fn racecar_base() -> ExperimentConfig {
    ExperimentConfig { max_steps: Some(1000), budget: 2_000_000, ..ExperimentConfig::default() }
}

fn quiet_run(config: ExperimentConfig) -> RunLog {
    run_experiment(config, &RunOptions { workers: 1, out_dir: None, checkpoint_every: 0, progress: false }, false).unwrap()
}

fn c6_drift() -> Verdict {
    let base = ExperimentConfig {
        dataset_episodes: 5,
        pretrain_epochs: 50,
        epochs_per_generation: 10,
        replacement_fraction: 0.01,
        probe_episodes: 5,
        ..racecar_base()
    };
    let mut detail = Vec::new();
    let mut pass = true;
    for (frozen, continual) in [("AE", "AE*"), ("StS", "StS*")] {
        let mut wins = 0;
        let mut pairs = Vec::new();
        for r in 0..5 {
            let seed = replication_seed(base.seed, r);
            let probe = |c: &str| {
                let t = Instant::now();
                let log = quiet_run(ExperimentConfig { condition: c.parse().unwrap(), seed, ..base.clone() });
                let mse = log.probes().last().map(|p| p.1).unwrap_or(f64::NAN);
                say(&format!("    {c} replication {r}: final probe {mse:.3e} ({:.0} s)", t.elapsed().as_secs_f64()));
                mse
            };
            let (f, c) = (probe(frozen), probe(continual));
            if f > c {
                wins += 1;
            }
            pairs.push(format!("{f:.1e}/{c:.1e}"));
        }
        pass &= wins >= 4;
        detail.push(format!("{frozen} > {continual} in {wins}/5 [{}]", pairs.join(" ")));
    }
    verdict(pass, detail.join("; "))
}

fn c7_wiring() -> Verdict {
    let mut wrong = Vec::new();
    for condition in Condition::ALL {
        let exp = Experiment::new(ExperimentConfig { condition, ..ExperimentConfig::default() }, 1).unwrap();
        let want = match condition.kind {
            FeatureKind::None => exp.env_spec().obs_dim,
            FeatureKind::AeFm => 100,
            _ => 50,
        };
        if exp.policy_input_dim() != want || exp.extractor().feature_dim() != want {
            wrong.push(format!("{condition}: {} != {want}", exp.policy_input_dim()));
        }
    }
    let detail = if wrong.is_empty() { "9/9 conditions match".to_string() } else { wrong.join(", ") };
    verdict(wrong.is_empty(), detail)
}

/// Two-sided p from counting every split of ranks 0..n+m into groups of n and m.
fn enumerated_distribution(n: usize, m: usize) -> Vec<u64> {
    let mut counts = vec![0u64; n * m + 1];
    for mask in 0u32..(1 << (n + m)) {
        if mask.count_ones() as usize != n {
            continue;
        }
        let mut u = 0;
        let mut b_below = 0;
        for bit in 0..n + m {
            if mask & (1 << bit) != 0 {
                u += b_below;
            } else {
                b_below += 1;
            }
        }
        counts[u] += 1;
    }
    counts
}

fn c8_mann_whitney() -> Verdict {
    let mut checked = 0u64;
    let mut mismatches = 0u64;
    for n in 1..=8 {
        for m in 1..=8 {
            let counts = enumerated_distribution(n, m);
            let total: u64 = counts.iter().sum();
            for mask in 0u32..(1 << (n + m)) {
                if mask.count_ones() as usize != n {
                    continue;
                }
                let (mut a, mut b) = (Vec::new(), Vec::new());
                for bit in 0..n + m {
                    if mask & (1 << bit) != 0 {
                        a.push(bit as f64)
                    } else {
                        b.push(bit as f64)
                    }
                }
                let r = mann_whitney_u(&SampleSet::new("a", a).unwrap(), &SampleSet::new("b", b).unwrap()).unwrap();
                let u = r.u_a as usize;
                let le: u64 = counts[..=u].iter().sum();
                let ge: u64 = counts[u..].iter().sum();
                let want = ((2 * le.min(ge)) as f64 / total as f64).min(1.0);
                checked += 1;
                if r.p != want || !r.exact {
                    mismatches += 1;
                }
            }
        }
    }
    let small =
        mann_whitney_u(&SampleSet::new("a", vec![1.0, 2.0, 3.0]).unwrap(), &SampleSet::new("b", vec![4.0, 5.0, 6.0]).unwrap()).unwrap();
    verdict(
        mismatches == 0 && small.p == 0.1,
        format!("{mismatches} mismatches over {checked} arrangements; {{1,2,3}} vs {{4,5,6}} p = {}", small.p),
    )
}

fn c9_learning_signal() -> Verdict {
    let base = racecar_base();
    let mut env = EnvSource::parse("racecar", base.max_steps).unwrap().make().unwrap();
    let baseline = random_baseline(env.as_mut(), 20, 0).unwrap();
    let pinned = pilot().racecar_random_baseline;
    let finals: Vec<f64> = (0..5)
        .map(|r| {
            let seed = replication_seed(base.seed, r);
            let t = Instant::now();
            let best = quiet_run(ExperimentConfig { condition: "EtE".parse().unwrap(), seed, ..base.clone() }).final_best().unwrap();
            say(&format!("    EtE replication {r}: final best {best} ({:.0} s)", t.elapsed().as_secs_f64()));
            best
        })
        .collect();
    let med = median(&finals);
    let matches_pilot = (baseline - pinned).abs() <= 1e-9 * pinned.abs().max(1.0);
    verdict(
        med >= 3.0 * baseline && matches_pilot,
        format!(
            "median final best {med:.2} vs 3 x baseline {:.2} (baseline {baseline:.4}, pilot {pinned:.4}); finals {finals:?}",
            3.0 * baseline
        ),
    )
}

fn c10_conformance() -> Verdict {
    let opts = ConformanceOptions::default();
    let mut results = Vec::new();
    let mut check = |name: &str, report: Result<_, _>| {
        results.push(match report {
            Ok(_) => (true, format!("{name} ok")),
            Err(e) => (false, format!("{name}: {e:?}")),
        })
    };
    let racecar = EnvSource::racecar(RacecarConfig { max_steps: 300, ..RacecarConfig::default() }).unwrap();
    check("racecar", run_suite(|| racecar.make(), &opts));
    check(
        "swingup",
        run_suite(
            || Ok(Box::new(SwingUp::new(SwingUpConfig { max_steps: 300, ..SwingUpConfig::default() })?) as Box<dyn Environment>),
            &opts,
        ),
    );
    let echo = EchoConfig { max_steps: 100, ..EchoConfig::default() };
    check("echo", run_suite(|| Ok(Box::new(EchoEnv::new(echo.clone())?) as Box<dyn Environment>), &opts));

    let listener = std::sync::Arc::new(TcpListener::bind("127.0.0.1:0").unwrap());
    let addr = format!("tcp:{}", listener.local_addr().unwrap());
    let servers: Vec<_> = (0..3)
        .map(|_| {
            let (listener, echo) = (listener.clone(), echo.clone());
            std::thread::spawn(move || serve_tcp(&mut EchoEnv::new(echo).unwrap(), &listener))
        })
        .collect();
    check("tcp bridge", run_suite(|| Ok(Box::new(BridgeEnv::connect(&addr)?) as Box<dyn Environment>), &opts));
    for s in servers {
        let _ = s.join();
    }
    let cmd = format!("cmd:{} bridge-serve --env echo --max-steps 100", env!("CARGO_BIN_EXE_featurevo"));
    check("process bridge", run_suite(|| Ok(Box::new(BridgeEnv::connect(&cmd)?) as Box<dyn Environment>), &opts));
    let pass = results.iter().all(|r| r.0);
    verdict(pass, results.into_iter().map(|r| r.1).collect::<Vec<_>>().join(", "))
}

#[test]
fn acceptance() {
    let secs = Duration::from_secs;
    say("");
    let outcomes = [
        criterion(1, "gradient correctness", secs(30), c1_gradients),
        criterion(2, "ES sphere", secs(10), c2_sphere),
        criterion(3, "rank invariance", secs(5), c3_rank_invariance),
        criterion(4, "determinism under parallelism", secs(300), c4_parallel_determinism),
        criterion(5, "seq2seq learnability", secs(300), c5_spiral),
        criterion(6, "drift reproduction", secs(7200), c6_drift),
        criterion(7, "condition wiring", secs(1), c7_wiring),
        criterion(8, "Mann-Whitney exactness", secs(60), c8_mann_whitney),
        criterion(9, "racecar learning signal", secs(3600), c9_learning_signal),
        criterion(10, "environment conformance", secs(60), c10_conformance),
    ];
    let failed: Vec<usize> = outcomes.iter().enumerate().filter(|(_, o)| **o == Some(false)).map(|(i, _)| i + 1).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
