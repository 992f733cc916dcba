//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use amsa::diagnostics::{
    annotate_trajectory, check_lemma_bound_x, check_lemma_lipschitz, residuals, sample_grid, target_identity_gap,
    TARGET_TOL,
};
use amsa::experiment::{run_experiment, ExperimentConfig, ExperimentEnv, Summary};
use amsa::problems::{make_nested_linear, KernelKind};
use amsa::samplers::{fit_ergodicity, mixing_time, stationary_distribution, tv_curve, FiniteKernel};
use amsa::schedules::{
    check_amsa_conditions, compliant_amsa, optimal_msa_exponents, predict_msa_rate, tau_from_certificate,
    ConditionConstants, SolverKind, StepSchedule,
};
use amsa::solvers::{amsa_step, run, FInit, InitialPoint, RecordPlan, RunOptions, SolverState};
use amsa::systems::{Operator, OperatorSystem};

type Outcome = Result<(bool, String), Box<dyn std::error::Error>>;

/// Everything a criterion produced, for the determinism rerun.
#[derive(Default)]
struct Evidence {
    text: BTreeMap<u32, String>,
    dirs: BTreeMap<u32, PathBuf>,
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn experiment(name: &str, out: &Path, threads: usize) -> Result<Summary, Box<dyn std::error::Error>> {
    let path = configs().join(name);
    let config = ExperimentConfig::from_json(&fs::read_to_string(&path)?)?;
    let env = ExperimentEnv {
        threads: Some(threads),
        base_dir: Some(configs()),
    };
    let report = run_experiment(&config, &env)?;
    report.write(out)?;
    Ok(report.summary)
}

fn slopes(s: &Summary) -> Result<(f64, f64), Box<dyn std::error::Error>> {
    let get = |k: &str| s.solvers.get(k).and_then(|r| r.slope).ok_or(format!("no {k} slope"));
    Ok((get("amsa")?, get("msa")?))
}

fn msa_exponents(name: &str) -> Result<Vec<f64>, Box<dyn std::error::Error>> {
    let config = ExperimentConfig::from_json(&fs::read_to_string(configs().join(name))?)?;
    let n = config.problem.build(Some(&configs()))?.n_levels();
    let sc = config.solvers.iter().find(|s| s.kind == SolverKind::Msa).ok_or("no msa solver")?;
    Ok(sc.schedule.build(SolverKind::Msa, n)?.exponents().to_vec())
}

fn criterion_1(out: &Path, threads: usize, ev: &mut Evidence) -> Outcome {
    let s = experiment("nested_linear_n2.json", out, threads)?;
    let (a, m) = slopes(&s)?;
    let exps = msa_exponents("nested_linear_n2.json")?;
    let exps_ok = exps == [1.0, 2.0 / 3.0];
    ev.dirs.insert(1, out.to_path_buf());
    let pass = a <= -0.80 && (-0.85..=-0.45).contains(&m) && a <= m - 0.10 && exps_ok;
    Ok((pass, format!("amsa slope {a:.3} (<= -0.80), msa slope {m:.3} (in [-0.85, -0.45]), msa exponents {exps:?}")))
}

fn criterion_2(out: &Path, threads: usize, ev: &mut Evidence) -> Outcome {
    let s = experiment("nested_linear_n3.json", out, threads)?;
    let (a, m) = slopes(&s)?;
    let exps = msa_exponents("nested_linear_n3.json")?;
    let exps_ok = exps == [1.0, 0.75, 0.5];
    ev.dirs.insert(2, out.to_path_buf());
    let pass = a <= -0.80 && (-0.70..=-0.30).contains(&m) && exps_ok;
    Ok((pass, format!("amsa slope {a:.3} (<= -0.80), msa slope {m:.3} (in [-0.70, -0.30]), msa exponents {exps:?}")))
}

fn criterion_3(ev: &mut Evidence) -> Outcome {
    let rates: Vec<(i64, i64)> = [2, 3, 4]
        .into_iter()
        .map(|n| predict_msa_rate(n).map(|r| (*r.numer(), *r.denom())))
        .collect::<Result<_, _>>()?;
    let exps: Vec<(i64, i64)> = optimal_msa_exponents(3)?.iter().map(|r| (*r.numer(), *r.denom())).collect();
    let pass = rates == [(2, 3), (1, 2), (2, 5)] && exps == [(1, 1), (3, 4), (1, 2)];
    let text = format!("rates {rates:?}, exponents(3) {exps:?}");
    ev.text.insert(3, text.clone());
    Ok((pass, text))
}

fn criterion_4(ev: &mut Evidence) -> Outcome {
    let mut worst_v: f64 = 0.0;
    let mut benchmarks = 0;
    for dims in [vec![3, 3], vec![3, 3, 3], vec![2, 4, 1]] {
        for kernel in [KernelKind::Fixed, KernelKind::Iid, KernelKind::Mixture] {
            for seed in 0..3 {
                let sys = make_nested_linear(dims.len(), &dims, 0.5, 0.1, 0.5, kernel, seed)?;
                let star = sys.metadata().solution.clone().ok_or("benchmark without a stored solution")?;
                let f = sys.mean_operator(&star)?;
                let d = residuals(&sys, 0, &star, &f, SolverKind::Amsa, TARGET_TOL)?;
                worst_v = worst_v.max(d.v);
                benchmarks += 1;
            }
        }
    }
    let sys = make_nested_linear(3, &[3, 3, 3], 0.5, 0.1, 0.5, KernelKind::Fixed, 0)?;
    let points = sample_grid(sys.dims(), None, 2.0, 20, 11)?;
    let mut worst_gap: f64 = 0.0;
    for (k, p) in points.iter().enumerate() {
        // Cycle through every valid (prefix length, j) pair.
        let (i, j) = [(0, 1), (0, 2), (1, 2)][k % 3];
        let prefix: Vec<_> = (0..i).map(|l| p.block_vector(l)).collect();
        worst_gap = worst_gap.max(target_identity_gap(&sys, &prefix, j)?);
    }
    let text = format!("max V at solution {worst_v:.2e} over {benchmarks} benchmarks (<= 1e-14), max identity gap {worst_gap:.2e} over 20 prefixes (<= 1e-7)");
    ev.text.insert(4, text.clone());
    Ok((worst_v <= 1e-14 && worst_gap <= 1e-7, text))
}

fn criterion_5(ev: &mut Evidence) -> Outcome {
    let sys = make_nested_linear(2, &[3, 3], 0.5, 0.1, 0.5, KernelKind::Fixed, 0)?;
    let h = 1000.0;
    let c = vec![64.0, 128.0];
    let init = InitialPoint::zeros(sys.dims())?;
    let mut state = SolverState::new(&sys, SolverKind::Amsa, &init, FInit::FirstSample, 3)?;
    let mut mismatches = 0usize;
    for t in 0..10_000u64 {
        // c_λ = t + h + 1 pins λ_t to exactly 1.
        let schedule = StepSchedule::amsa(h, t as f64 + h + 1.0, c.clone())?;
        assert_eq!(schedule.lambda(t), 1.0);
        amsa_step(&mut state, &sys, &schedule)?;
        if state.f.as_slice().iter().zip(state.last_sample()).any(|(a, b)| a.to_bits() != b.to_bits()) {
            mismatches += 1;
        }
    }
    let text = format!("{mismatches} of 10000 iterations differ from the raw sample");
    ev.text.insert(5, format!("{text}; final theta {:?}", state.theta.as_slice()));
    Ok((mismatches == 0, text))
}

/// Smallest `t` with `max_x TV(P^t(x,·), μ) ≤ a` by repeated multiplication.
fn brute_mixing(p: [[f64; 2]; 2], mu: [f64; 2], a: f64) -> usize {
    let mut pt = [[1.0, 0.0], [0.0, 1.0]];
    for t in 0..10_000 {
        let tv = pt
            .iter()
            .map(|row| 0.5 * ((row[0] - mu[0]).abs() + (row[1] - mu[1]).abs()))
            .fold(0.0, f64::max);
        if tv <= a {
            return t;
        }
        let mut next = [[0.0; 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                next[r][c] = pt[r][0] * p[0][c] + pt[r][1] * p[1][c];
            }
        }
        pt = next;
    }
    usize::MAX
}

fn criterion_6(ev: &mut Evidence) -> Outcome {
    let (p, q) = (0.2, 0.3);
    let rows = [[1.0 - p, p], [q, 1.0 - q]];
    let kernel = FiniteKernel::fixed(rows.iter().map(|r| r.to_vec()).collect())?;
    let mu = stationary_distribution(&kernel, &[])?;
    let mu_ok = (mu[0] - 0.6).abs() <= 1e-10 && (mu[1] - 0.4).abs() <= 1e-10;
    let mut mixing = Vec::new();
    for a in [0.1, 0.01, 0.001] {
        mixing.push((a, mixing_time(&kernel, &[], a)?, brute_mixing(rows, [0.6, 0.4], a)));
    }
    let mixing_ok = mixing.iter().all(|(_, got, want)| got == want);
    let cert = fit_ergodicity(&kernel, &[], 200)?;
    let measured = tv_curve(&kernel.matrix(&[]), 200)?;
    // Closed form: the deviation contracts by 1 - p - q per step.
    let dominated = (0..=200).all(|t| {
        let closed = 0.6 * (1.0 - p - q).powi(t as i32);
        let env = cert.envelope(t);
        env >= measured[t] && env >= closed * (1.0 - 1e-12)
    });
    let text = format!(
        "mu ({:.12}, {:.12}), mixing (a, lib, oracle) {mixing:?}, certificate m={:.4} rho={:.4} dominates to t=200: {dominated}",
        mu[0], mu[1], cert.m_const, cert.rho
    );
    ev.text.insert(6, text.clone());
    Ok((mu_ok && mixing_ok && dominated, text))
}

fn criterion_7(ev: &mut Evidence) -> Outcome {
    let sys: OperatorSystem = make_nested_linear(2, &[3, 3], 0.5, 0.1, 0.5, KernelKind::Fixed, 0)?;
    let meta = sys.metadata();
    let delta = meta.delta.ok_or("no stored delta")?;
    let l = meta.lipschitz.ok_or("no stored Lipschitz constant")?;
    let kernel = sys.kernel().ok_or("no kernel")?;
    let cert = fit_ergodicity(kernel, &vec![0.0; sys.total_dim()], 200)?;
    let schedule = compliant_amsa(2, delta, l, 1.0, &|a| cert.tau(a) as u64)?;
    let horizon = 1000;
    let tau = tau_from_certificate(&cert, &schedule);
    let k = ConditionConstants {
        delta,
        lipschitz: l,
        d: 1.0,
        tau: &tau,
    };
    let conditions = check_amsa_conditions(&schedule, &k, horizon)?;
    let mut traj = run(
        &sys,
        &schedule,
        SolverKind::Amsa,
        horizon,
        0,
        &InitialPoint::zeros(sys.dims())?,
        &RecordPlan::Dense,
        &RunOptions::default(),
    )?;
    annotate_trajectory(&mut traj, &sys, &schedule, None, TARGET_TOL)?;
    let lip = check_lemma_lipschitz(&traj, &schedule, l)?.with_preconditions(&conditions);
    let bx = check_lemma_bound_x(&traj, &schedule, delta, l)?.with_preconditions(&conditions);
    let text = format!(
        "conditions {}, Lipschitz lemma {} violations in {} checks, bound_x lemma {} violations in {} checks",
        if conditions.pass { "hold" } else { "fail" },
        lip.violations,
        lip.checks.len(),
        bx.violations,
        bx.checks.len()
    );
    ev.text.insert(7, format!("{text}; {}", serde_json::to_string(&(&lip, &bx))?));
    Ok((conditions.pass && lip.violations == 0 && bx.violations == 0, text))
}

fn criterion_8(out: &Path, threads: usize, ev: &mut Evidence) -> Outcome {
    let config = ExperimentConfig::mfg_reference();
    let env = ExperimentEnv {
        threads: Some(threads),
        base_dir: None,
    };
    let report = run_experiment(&config, &env)?;
    report.write(out)?;
    ev.dirs.insert(8, out.to_path_buf());
    let s = &report.summary;
    let mut parts = Vec::new();
    let mut pass = s.seeds.count == 20;
    for (name, r) in &s.solvers {
        for q in ["grad_norm", "meanfield_gap"] {
            let d = r.decrease.get(q).ok_or(format!("{name} has no {q} decrease check"))?;
            pass &= d.decreased && d.from_t == 100;
            parts.push(format!("{name} {q} {:.3e} -> {:.3e}", d.from_value, d.final_value));
        }
    }
    for c in &s.comparisons {
        pass &= c.amsa_le_msa == Some(true);
        parts.push(format!("{}: amsa <= msa {}", c.quantity, c.amsa_le_msa == Some(true)));
    }
    pass &= s.comparisons.len() == 2;
    Ok((pass, parts.join(", ")))
}

fn all_files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else if let Ok(bytes) = fs::read(&p) {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), bytes);
            }
        }
    }
    out
}

fn report(n: u32, start: Instant, outcome: Outcome, failures: &mut u32) {
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok((true, detail)) => println!("PASS criterion {n} ({secs:.1}s): {detail}"),
        Ok((false, detail)) => {
            *failures += 1;
            println!("FAIL criterion {n} ({secs:.1}s): {detail}");
        }
        Err(e) => {
            *failures += 1;
            println!("FAIL criterion {n} ({secs:.1}s): error: {e}");
        }
    }
}

fn run_all(root: &Path, threads: usize, ev: &mut Evidence, failures: Option<&mut u32>) {
    let mut sink = 0;
    let failures = failures.unwrap_or(&mut sink);
    let print = root.ends_with("first");
    let mut step = |n: u32, f: &mut dyn FnMut(&mut Evidence) -> Outcome| {
        let start = Instant::now();
        let outcome = f(ev);
        if print {
            report(n, start, outcome, failures);
        }
    };
    step(1, &mut |ev| criterion_1(&root.join("n2"), threads, ev));
    step(2, &mut |ev| criterion_2(&root.join("n3"), threads, ev));
    step(3, &mut criterion_3);
    step(4, &mut criterion_4);
    step(5, &mut criterion_5);
    step(6, &mut criterion_6);
    step(7, &mut criterion_7);
    step(8, &mut |ev| criterion_8(&root.join("mfg"), threads, ev));
}

fn criterion_9(first: &Evidence, second: &Evidence) -> Outcome {
    let mut differing = Vec::new();
    let mut files = 0;
    for (n, dir) in &first.dirs {
        let other = second.dirs.get(n).ok_or(format!("criterion {n} produced no rerun output"))?;
        let (a, b) = (all_files(dir), all_files(other));
        files += a.len();
        if a.is_empty() || a != b {
            differing.push(format!("criterion {n} files"));
        }
    }
    for (n, text) in &first.text {
        if second.text.get(n) != Some(text) {
            differing.push(format!("criterion {n} results"));
        }
    }
    if differing.is_empty() {
        Ok((true, format!("{files} output files and {} result records identical at 1 and 3 threads", first.text.len())))
    } else {
        Ok((false, format!("differences: {}", differing.join(", "))))
    }
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let mut failures = 0;
    let mut first = Evidence::default();
    run_all(&tmp.path().join("first"), 1, &mut first, Some(&mut failures));
    let start = Instant::now();
    let mut second = Evidence::default();
    run_all(&tmp.path().join("second"), 3, &mut second, None);
    report(9, start, criterion_9(&first, &second), &mut failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
