//! Multi-seed experiments: configuration, parallel execution, averaging,
//! rate fits and report files.
//!
//! A run writes `curves.csv` (columns `t, solver, quantity, mean, stderr`),
//! `summary.json` and one `plot_<quantity>.svg` per recorded quantity. All
//! outputs are a pure function of the configuration: trials run in parallel
//! but are reduced in seed order.

pub mod fit;
pub mod plot;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::{annotate_trajectory, TARGET_TOL};
use crate::error::{Error, Result};
use crate::problems::mfg::{make_random_mfg, mfg_metrics, MfgSystem};
use crate::problems::nested_linear::NestedLinearSpec;
use crate::samplers::fit_ergodicity;
use crate::schedules::{optimal_msa_exponents, predict_amsa_rate, predict_msa_rate, ratio_to_f64, SolverKind, StepSchedule};
use crate::solvers::{run, FInit, InitialPoint, RecordPlan, RunOptions, Trajectory};
use crate::stack::ParameterStack;
use crate::systems::{Operator, OperatorSystem};

pub use fit::{aggregate_trials, default_window, fit_rate, MeanCurve, RateFit, TrialSeries};

pub const CONFIG_VERSION: u32 = 1;
/// Largest fraction of diverged trials an experiment tolerates.
pub const MAX_DIVERGED_FRACTION: f64 = 0.2;
/// Fitted slopes above this count as "no decay".
const NO_DECAY_SLOPE: f64 = -0.01;

/// Where the system comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProblemSpec {
    NestedLinear(NestedLinearSpec),
    Mfg(MfgProblem),
    /// A system JSON document on disk, relative to the config file.
    File { path: PathBuf },
    /// A system JSON document embedded in the config.
    Inline { system: serde_json::Value },
}

/// Parameters of a random mean-field game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MfgProblem {
    #[serde(default = "default_states")]
    pub n_states: usize,
    #[serde(default = "default_actions")]
    pub n_actions: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_floor")]
    pub ergodicity_floor: f64,
    #[serde(default)]
    pub meanfield_coupling: f64,
    #[serde(default = "one")]
    pub value_anchor: f64,
}

fn default_states() -> usize {
    30
}
fn default_actions() -> usize {
    10
}
fn default_floor() -> f64 {
    0.05
}
fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}

impl Default for MfgProblem {
    fn default() -> Self {
        Self {
            n_states: 30,
            n_actions: 10,
            seed: 0,
            ergodicity_floor: 0.05,
            meanfield_coupling: 0.0,
            value_anchor: 1.0,
        }
    }
}

impl MfgProblem {
    pub fn build(&self) -> Result<MfgSystem> {
        let mut spec = make_random_mfg(self.n_states, self.n_actions, self.seed, self.ergodicity_floor)?;
        spec.meanfield_coupling = self.meanfield_coupling;
        spec.value_anchor = self.value_anchor;
        MfgSystem::new(spec)
    }
}

impl ProblemSpec {
    /// Builds the system; relative file paths resolve against `base_dir`.
    pub fn build(&self, base_dir: Option<&Path>) -> Result<OperatorSystem> {
        match self {
            ProblemSpec::NestedLinear(spec) => Ok(spec.build()?.into()),
            ProblemSpec::Mfg(p) => Ok(p.build()?.into()),
            ProblemSpec::File { path } => {
                let full = match base_dir {
                    Some(b) if path.is_relative() => b.join(path),
                    _ => path.clone(),
                };
                OperatorSystem::from_json(&fs::read_to_string(&full)?)
            }
            ProblemSpec::Inline { system } => OperatorSystem::from_json(&system.to_string()),
        }
    }
}

/// Step-size constants for one solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScheduleSpec {
    /// Constants given directly. Accelerated runs need `c_lambda`; baseline
    /// runs default to the rate-optimal exponents.
    Explicit {
        h: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c_lambda: Option<f64>,
        c: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        exponents: Option<Vec<f64>>,
    },
    /// `c_1 = 32/δ`. Accelerated: `c_i = c_1 · level_ratio^{i-1}` and
    /// `c_λ = lambda_ratio · c_N`. Baseline: `lower` gives `c_2..c_N`.
    Practical {
        delta: f64,
        h: f64,
        #[serde(default = "two")]
        level_ratio: f64,
        #[serde(default = "two")]
        lambda_ratio: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lower: Option<Vec<f64>>,
    },
}

impl ScheduleSpec {
    pub fn build(&self, kind: SolverKind, n: usize) -> Result<StepSchedule> {
        let schedule = match (self, kind) {
            (ScheduleSpec::Explicit { h, c_lambda, c, .. }, SolverKind::Amsa) => {
                let cl = c_lambda.ok_or_else(|| Error::Config("an amsa schedule needs c_lambda".into()))?;
                StepSchedule::amsa(*h, cl, c.clone())?
            }
            (ScheduleSpec::Explicit { h, c, exponents, .. }, SolverKind::Msa) => {
                let e = match exponents {
                    Some(e) => e.clone(),
                    None => optimal_msa_exponents(c.len())?.into_iter().map(ratio_to_f64).collect(),
                };
                StepSchedule::msa(*h, c.clone(), e)?
            }
            (
                ScheduleSpec::Practical {
                    delta,
                    h,
                    level_ratio,
                    lambda_ratio,
                    ..
                },
                SolverKind::Amsa,
            ) => StepSchedule::practical_amsa(n, *delta, *h, *level_ratio, *lambda_ratio)?,
            (ScheduleSpec::Practical { delta, h, lower, .. }, SolverKind::Msa) => {
                let lower = lower
                    .as_ref()
                    .ok_or_else(|| Error::Config("a practical msa schedule needs `lower`".into()))?;
                StepSchedule::practical_msa(*delta, *h, lower)?
            }
        };
        if schedule.n_levels() != n {
            return Err(Error::Config(format!(
                "{kind} schedule has {} levels but the problem has {n}",
                schedule.n_levels()
            )));
        }
        Ok(schedule)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub kind: SolverKind,
    pub schedule: ScheduleSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSpec {
    pub count: u64,
    #[serde(default)]
    pub base: u64,
}

/// Rate-fit and decrease-check settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// Fit over the last this many decades of recorded `t`.
    #[serde(default = "default_decades")]
    pub decades: f64,
    /// Earliest fitted iteration. Defaults to `max(10 h, 10 τ)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip: Option<u64>,
    /// Quantity to fit; defaults to `V`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantity: Option<String>,
    /// A fit passes when `slope ≤ predicted + tolerance`.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Every quantity is compared between this iteration and the horizon.
    #[serde(default = "default_decrease_from")]
    pub decrease_from: u64,
}

fn default_decades() -> f64 {
    1.5
}
fn default_tolerance() -> f64 {
    0.2
}
fn default_decrease_from() -> u64 {
    100
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            decades: default_decades(),
            skip: None,
            quantity: None,
            tolerance: default_tolerance(),
            decrease_from: default_decrease_from(),
        }
    }
}

/// What is recorded per trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricSet {
    /// `V` (and the weighted baseline value when constants are known).
    #[default]
    Lyapunov,
    /// Exact policy-gradient norm and mean-field gap; needs an MFG problem.
    Mfg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub config_version: u32,
    #[serde(default)]
    pub name: String,
    pub problem: ProblemSpec,
    pub solvers: Vec<SolverConfig>,
    pub horizon: u64,
    pub seeds: SeedSpec,
    #[serde(default)]
    pub record: RecordPlan,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub metrics: MetricSet,
    /// Initial `θ` per level; zeros (then projected) when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub f_init: FInit,
    /// Output directory; not part of the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Also write every trajectory under `trajectories/`.
    #[serde(default)]
    pub dump_trajectories: bool,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.config_version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config_version {} is not supported (expected {CONFIG_VERSION})",
                self.config_version
            )));
        }
        if self.seeds.count < 1 {
            return Err(Error::Config("seeds.count must be at least 1".into()));
        }
        if self.horizon < 100 {
            return Err(Error::Config(format!("horizon must be at least 100, got {}", self.horizon)));
        }
        if self.solvers.is_empty() {
            return Err(Error::Config("no solvers configured".into()));
        }
        let kinds: BTreeSet<_> = self.solvers.iter().map(|s| s.kind.as_str()).collect();
        if kinds.len() != self.solvers.len() {
            return Err(Error::Config("each solver kind may appear once".into()));
        }
        if !(self.fit.decades > 0.0) {
            return Err(Error::Config("fit.decades must be positive".into()));
        }
        if self.fit.decrease_from >= self.horizon {
            return Err(Error::Config("fit.decrease_from must be below the horizon".into()));
        }
        if self.metrics == MetricSet::Mfg && !matches!(self.problem, ProblemSpec::Mfg(_)) {
            return Err(Error::Config("mfg metrics need an mfg problem".into()));
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON, with the
    /// output directory removed.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output = None;
        let digest = Sha256::digest(serde_json::to_vec(&c)?);
        Ok(hex::encode(digest)[..16].to_string())
    }

    /// The mean-field game comparison with tuned constants.
    ///
    /// Both solvers share `c_1`; the baseline constants of the lower levels
    /// are chosen so that every step size agrees with the accelerated one at
    /// `t = 0`.
    pub fn mfg_reference() -> Self {
        let h = 1000.0;
        let c = [200.0, 800.0, 1000.0];
        let msa_c = vec![c[0], c[1] / (h + 1.0f64).powf(0.25), c[2] / (h + 1.0f64).sqrt()];
        Self {
            config_version: CONFIG_VERSION,
            name: "mfg".into(),
            problem: ProblemSpec::Mfg(MfgProblem::default()),
            solvers: vec![
                SolverConfig {
                    kind: SolverKind::Amsa,
                    schedule: ScheduleSpec::Explicit {
                        h,
                        c_lambda: Some(1000.0),
                        c: c.to_vec(),
                        exponents: None,
                    },
                },
                SolverConfig {
                    kind: SolverKind::Msa,
                    schedule: ScheduleSpec::Explicit {
                        h,
                        c_lambda: None,
                        c: msa_c,
                        exponents: None,
                    },
                },
            ],
            horizon: 100_000,
            seeds: SeedSpec { count: 20, base: 0 },
            record: RecordPlan::LogSpaced {
                per_decade: 10,
                cap: 512,
            },
            fit: FitConfig::default(),
            metrics: MetricSet::Mfg,
            initial: None,
            f_init: FInit::FirstSample,
            output: None,
            dump_trajectories: false,
        }
    }
}

/// Execution settings that do not affect results.
#[derive(Debug, Clone, Default)]
pub struct ExperimentEnv {
    /// Worker threads; the global pool when `None`.
    pub threads: Option<usize>,
    /// Directory relative problem paths resolve against.
    pub base_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecreaseCheck {
    pub from_t: u64,
    pub from_value: f64,
    pub final_value: f64,
    pub decreased: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub trajectories: u64,
    pub diverged: u64,
    pub fit_quantity: String,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub r_squared: Option<f64>,
    pub window: Option<(u64, u64)>,
    pub n_points: Option<usize>,
    pub predicted_slope: Option<f64>,
    /// `slope - predicted_slope`.
    pub gap: Option<f64>,
    /// `ok`, `no decay`, `not fitted`, `diverged` or `fit error: ...`.
    pub status: String,
    pub pass: bool,
    pub final_values: BTreeMap<String, f64>,
    pub decrease: BTreeMap<String, DecreaseCheck>,
}

impl SolverSummary {
    pub fn fit(&self) -> Option<RateFit> {
        Some(RateFit {
            slope: self.slope?,
            intercept: self.intercept?,
            r_squared: self.r_squared?,
            window: self.window?,
            n_points: self.n_points?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub quantity: String,
    pub final_values: BTreeMap<String, f64>,
    /// Whether the accelerated final value is at most the baseline one.
    pub amsa_le_msa: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_version: u32,
    pub name: String,
    pub config_hash: String,
    pub horizon: u64,
    pub seeds: SeedSpec,
    pub metrics: MetricSet,
    /// Per-solver results, keyed by solver name.
    #[serde(flatten)]
    pub solvers: BTreeMap<String, SolverSummary>,
    pub comparisons: Vec<Comparison>,
    pub pass: bool,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub summary: Summary,
    /// Averaged curves per solver, in configuration order.
    pub curves: Vec<(SolverKind, BTreeMap<String, MeanCurve>)>,
    /// Every trajectory, kept only when dumping was requested.
    pub trajectories: Vec<Trajectory>,
}

struct TrialOutcome {
    series: Option<TrialSeries>,
    trajectory: Option<Trajectory>,
}

fn initial_point(config: &ExperimentConfig, system: &OperatorSystem) -> Result<InitialPoint> {
    let mut theta = match &config.initial {
        Some(blocks) => {
            let t = ParameterStack::from_blocks(blocks.clone())?;
            t.ensure_shape(system.dims())?;
            t
        }
        None => ParameterStack::zeros(system.dims())?,
    };
    system.project(&mut theta);
    Ok(InitialPoint::from_theta(theta))
}

fn trial_series(
    traj: &mut Trajectory,
    system: &OperatorSystem,
    schedule: &StepSchedule,
    metrics: MetricSet,
) -> Result<TrialSeries> {
    let mut series = TrialSeries::new(traj.records.iter().map(|r| r.t).collect());
    match metrics {
        MetricSet::Lyapunov => {
            let meta = system.metadata();
            let weights = meta.delta.zip(meta.lipschitz);
            annotate_trajectory(traj, system, schedule, weights, TARGET_TOL)?;
            let diag = |r: &crate::solvers::Record| r.diagnostics.clone().expect("annotated");
            series.insert("V", traj.records.iter().map(|r| diag(r).v).collect())?;
            if traj.records.iter().all(|r| diag(r).weighted_v.is_some()) {
                series.insert("V_weighted", traj.records.iter().map(|r| diag(r).weighted_v.unwrap()).collect())?;
            }
        }
        MetricSet::Mfg => {
            let OperatorSystem::Mfg(mfg) = system else {
                return Err(Error::Config("mfg metrics need an mfg problem".into()));
            };
            let mut grad = Vec::with_capacity(traj.records.len());
            let mut gap = Vec::with_capacity(traj.records.len());
            for r in &traj.records {
                let (g, m) = mfg_metrics(mfg, r.theta.block(0), r.theta.block(1))?;
                grad.push(g);
                gap.push(m);
            }
            series.insert("grad_norm", grad)?;
            series.insert("meanfield_gap", gap)?;
        }
    }
    Ok(series)
}

/// Predicted slope of `V` for `schedule`, when the theory gives one.
fn predicted_slope(schedule: &StepSchedule) -> Result<Option<f64>> {
    let n = schedule.n_levels();
    match schedule.kind() {
        SolverKind::Amsa => Ok(Some(-ratio_to_f64(predict_amsa_rate(n)?))),
        SolverKind::Msa => {
            let optimal = optimal_msa_exponents(n)?;
            let matches = optimal
                .iter()
                .zip(schedule.exponents())
                .all(|(r, e)| (ratio_to_f64(*r) - e).abs() < 1e-12);
            Ok(matches.then(|| -ratio_to_f64(predict_msa_rate(n).expect("n checked"))))
        }
    }
}

/// Transient excluded from fits: `max(10 h, 10 τ(a))` with `a` the first
/// averaging weight (accelerated) or the first fastest step (baseline).
fn transient(system: &OperatorSystem, schedule: &StepSchedule, theta0: &ParameterStack) -> u64 {
    let h = schedule.h();
    let a = match schedule.kind() {
        SolverKind::Amsa => schedule.lambda(0),
        SolverKind::Msa => schedule.alpha(schedule.n_levels() - 1, 0),
    };
    let tau = match system.kernel() {
        Some(k) if a < 1.0 => fit_ergodicity(k, theta0.as_slice(), 200)
            .map(|c| c.tau(a) as u64)
            .unwrap_or(0),
        _ => 0,
    };
    ((10.0 * h).ceil() as u64).max(10 * tau)
}

/// Runs every solver over every seed and summarizes.
pub fn run_experiment(config: &ExperimentConfig, env: &ExperimentEnv) -> Result<ExperimentReport> {
    config.validate()?;
    let system = config.problem.build(env.base_dir.as_deref())?;
    let hash = config.hash()?;
    let init = initial_point(config, &system)?;
    let mut times = config.record.times(config.horizon);
    times.push(config.fit.decrease_from);
    times.sort_unstable();
    times.dedup();
    let plan = RecordPlan::Explicit { times };
    let options = RunOptions {
        f_init: config.f_init,
        ..RunOptions::default()
    };
    let pool = match env.threads {
        Some(n) => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
        ),
        None => None,
    };
    let seeds: Vec<u64> = (0..config.seeds.count).map(|k| config.seeds.base + k).collect();
    let fit_quantity = config.fit.quantity.clone().unwrap_or_else(|| match config.metrics {
        MetricSet::Lyapunov => "V".into(),
        MetricSet::Mfg => "grad_norm".into(),
    });

    let mut curves = Vec::new();
    let mut solvers = BTreeMap::new();
    let mut trajectories = Vec::new();
    for sc in &config.solvers {
        let schedule = sc.schedule.build(sc.kind, system.n_levels())?;
        let work = || -> Vec<Result<TrialOutcome>> {
            seeds
                .par_iter()
                .map(|&seed| {
                    let mut traj = run(&system, &schedule, sc.kind, config.horizon, seed, &init, &plan, &options)?;
                    let series = if traj.diverged.is_some() {
                        log::warn!("{} seed {seed} diverged", sc.kind);
                        None
                    } else {
                        Some(trial_series(&mut traj, &system, &schedule, config.metrics)?)
                    };
                    Ok(TrialOutcome {
                        series,
                        trajectory: config.dump_trajectories.then_some(traj),
                    })
                })
                .collect()
        };
        let outcomes = match &pool {
            Some(p) => p.install(work),
            None => work(),
        };
        let mut series = Vec::with_capacity(outcomes.len());
        let mut diverged = 0u64;
        for o in outcomes {
            let o = o?;
            match o.series {
                Some(s) => series.push(s),
                None => diverged += 1,
            }
            trajectories.extend(o.trajectory);
        }
        log::info!("{}: {} trials, {diverged} diverged", sc.kind, seeds.len());
        let mean = if series.is_empty() {
            BTreeMap::new()
        } else {
            aggregate_trials(&series)?
        };
        let skip = config
            .fit
            .skip
            .unwrap_or_else(|| transient(&system, &schedule, &init.theta0));
        let summary = summarize(config, &schedule, &mean, &fit_quantity, skip, seeds.len() as u64, diverged)?;
        solvers.insert(sc.kind.to_string(), summary);
        curves.push((sc.kind, mean));
    }

    let comparisons = compare(&curves);
    let mut pass = solvers.values().all(|s| s.pass);
    if config.metrics == MetricSet::Mfg {
        pass &= comparisons.iter().all(|c| c.amsa_le_msa != Some(false));
    }
    Ok(ExperimentReport {
        summary: Summary {
            config_version: CONFIG_VERSION,
            name: config.name.clone(),
            config_hash: hash,
            horizon: config.horizon,
            seeds: config.seeds,
            metrics: config.metrics,
            solvers,
            comparisons,
            pass,
        },
        curves,
        trajectories,
    })
}

fn summarize(
    config: &ExperimentConfig,
    schedule: &StepSchedule,
    mean: &BTreeMap<String, MeanCurve>,
    fit_quantity: &str,
    skip: u64,
    trials: u64,
    diverged: u64,
) -> Result<SolverSummary> {
    let mut s = SolverSummary {
        trajectories: trials,
        diverged,
        fit_quantity: fit_quantity.to_string(),
        slope: None,
        intercept: None,
        r_squared: None,
        window: None,
        n_points: None,
        predicted_slope: None,
        gap: None,
        status: String::new(),
        pass: false,
        final_values: BTreeMap::new(),
        decrease: BTreeMap::new(),
    };
    let too_many_diverged = diverged as f64 > MAX_DIVERGED_FRACTION * trials as f64;
    if mean.is_empty() {
        s.status = "diverged".into();
        return Ok(s);
    }
    for (q, c) in mean {
        let (t_end, last) = c.last().expect("non-empty");
        s.final_values.insert(q.clone(), last);
        if let Some(from) = c.at(config.fit.decrease_from) {
            s.decrease.insert(
                q.clone(),
                DecreaseCheck {
                    from_t: config.fit.decrease_from,
                    from_value: from,
                    final_value: last,
                    decreased: last < from && t_end > config.fit.decrease_from,
                },
            );
        }
    }
    match config.metrics {
        MetricSet::Mfg => {
            s.status = "not fitted".into();
            s.pass = !too_many_diverged && s.decrease.values().all(|d| d.decreased);
        }
        MetricSet::Lyapunov => {
            let curve = mean
                .get(fit_quantity)
                .ok_or_else(|| Error::Config(format!("quantity {fit_quantity} was not recorded")))?;
            let window = default_window(config.horizon, config.fit.decades, skip);
            s.predicted_slope = predicted_slope(schedule)?;
            match fit_rate(&curve.points(), window) {
                Ok(f) => {
                    s.slope = Some(f.slope);
                    s.intercept = Some(f.intercept);
                    s.r_squared = Some(f.r_squared);
                    s.window = Some(f.window);
                    s.n_points = Some(f.n_points);
                    s.gap = s.predicted_slope.map(|p| f.slope - p);
                    s.status = if f.slope > NO_DECAY_SLOPE { "no decay" } else { "ok" }.into();
                }
                Err(Error::Fit(m)) if m.contains("all-zero") => s.status = "no decay".into(),
                Err(e) => s.status = format!("fit error: {e}"),
            }
            s.pass = !too_many_diverged
                && s.status == "ok"
                && s.gap.is_none_or(|g| g <= config.fit.tolerance);
        }
    }
    Ok(s)
}

fn compare(curves: &[(SolverKind, BTreeMap<String, MeanCurve>)]) -> Vec<Comparison> {
    let quantities: BTreeSet<&String> = curves.iter().flat_map(|(_, m)| m.keys()).collect();
    let mut out = Vec::new();
    for q in quantities {
        let final_values: BTreeMap<String, f64> = curves
            .iter()
            .filter_map(|(k, m)| Some((k.to_string(), m.get(q)?.last()?.1)))
            .collect();
        if final_values.len() < 2 {
            continue;
        }
        let amsa_le_msa = match (final_values.get("amsa"), final_values.get("msa")) {
            (Some(a), Some(m)) => Some(a <= m),
            _ => None,
        };
        out.push(Comparison {
            quantity: q.clone(),
            final_values,
            amsa_le_msa,
        });
    }
    out
}

/// Shortest representation that parses back to the same value.
fn num(v: f64) -> String {
    format!("{v:?}")
}

impl ExperimentReport {
    /// Writes `curves.csv`, `summary.json`, the plots and any trajectories.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("curves.csv")).map_err(csv_err)?;
        w.write_record(["t", "solver", "quantity", "mean", "stderr"]).map_err(csv_err)?;
        for (kind, curves) in &self.curves {
            for (q, c) in curves {
                for k in 0..c.t.len() {
                    w.write_record([c.t[k].to_string(), kind.to_string(), q.clone(), num(c.mean[k]), num(c.stderr[k])])
                        .map_err(csv_err)?;
                }
            }
        }
        w.flush()?;
        let mut json = serde_json::to_string_pretty(&self.summary)?;
        json.push('\n');
        fs::write(dir.join("summary.json"), json)?;
        let quantities: BTreeSet<&String> = self.curves.iter().flat_map(|(_, m)| m.keys()).collect();
        for q in quantities {
            let fits: Vec<(String, Option<RateFit>, Option<f64>)> = self
                .curves
                .iter()
                .map(|(k, _)| {
                    let s = &self.summary.solvers[k.as_str()];
                    if &s.fit_quantity == q {
                        (k.to_string(), s.fit(), s.predicted_slope)
                    } else {
                        (k.to_string(), None, None)
                    }
                })
                .collect();
            let series: Vec<plot::Series<'_>> = self
                .curves
                .iter()
                .zip(&fits)
                .filter_map(|((_, m), (label, fit, pred))| {
                    Some(plot::Series {
                        label,
                        curve: m.get(q)?,
                        fit: fit.as_ref(),
                        predicted_slope: *pred,
                    })
                })
                .collect();
            fs::write(dir.join(format!("plot_{q}.svg")), plot::render_svg(q, &series))?;
        }
        if !self.trajectories.is_empty() {
            let tdir = dir.join("trajectories");
            fs::create_dir_all(&tdir)?;
            for t in &self.trajectories {
                t.dump(&tdir, &format!("{}_seed{}", t.solver, t.seed), &self.summary.config_hash)?;
            }
        }
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Averaged curves read back from `curves.csv`, keyed by solver then quantity.
pub fn read_curves(path: &Path) -> Result<BTreeMap<String, BTreeMap<String, MeanCurve>>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers = r.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["t", "solver", "quantity", "mean", "stderr"] {
        return Err(Error::Config(format!("{} is not a curves file", path.display())));
    }
    let mut out: BTreeMap<String, BTreeMap<String, MeanCurve>> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let parse = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| Error::Config(format!("bad number {:?} in {}", &rec[i], path.display())))
        };
        let t: u64 = rec[0]
            .parse()
            .map_err(|_| Error::Config(format!("bad time {:?} in {}", &rec[0], path.display())))?;
        let c = out
            .entry(rec[1].to_string())
            .or_default()
            .entry(rec[2].to_string())
            .or_insert_with(|| MeanCurve {
                t: Vec::new(),
                mean: Vec::new(),
                stderr: Vec::new(),
            });
        if c.t.last().is_some_and(|last| *last >= t) {
            return Err(Error::Config(format!("times out of order in {}", path.display())));
        }
        c.t.push(t);
        c.mean.push(parse(3)?);
        c.stderr.push(parse(4)?);
    }
    Ok(out)
}

/// Refit of one solver's curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeEntry {
    pub quantity: String,
    pub fit: Option<RateFit>,
    pub status: String,
}

/// Refits the curves of a finished run.
///
/// Windows and fitted quantities come from `summary.json` when it is present
/// next to `curves.csv`; otherwise every solver's `V` is fitted over the last
/// `decades` decades.
pub fn analyze_dir(dir: &Path, decades: f64) -> Result<BTreeMap<String, AnalyzeEntry>> {
    let curves = read_curves(&dir.join("curves.csv"))?;
    let summary: Option<Summary> = match fs::read_to_string(dir.join("summary.json")) {
        Ok(s) => Some(serde_json::from_str(&s)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e.into()),
    };
    let mut out = BTreeMap::new();
    for (solver, qs) in &curves {
        let stored = summary.as_ref().and_then(|s| s.solvers.get(solver));
        let quantity = stored.map_or_else(|| "V".to_string(), |s| s.fit_quantity.clone());
        let Some(curve) = qs.get(&quantity) else {
            out.insert(
                solver.clone(),
                AnalyzeEntry {
                    quantity,
                    fit: None,
                    status: "quantity not recorded".into(),
                },
            );
            continue;
        };
        let window = match stored.and_then(|s| s.window) {
            Some(w) => w,
            None => {
                let t_end = curve.last().map_or(0, |p| p.0);
                default_window(t_end, decades, 0)
            }
        };
        let entry = match fit_rate(&curve.points(), window) {
            Ok(f) => AnalyzeEntry {
                quantity,
                fit: Some(f),
                status: "ok".into(),
            },
            Err(e) => AnalyzeEntry {
                quantity,
                fit: None,
                status: format!("fit error: {e}"),
            },
        };
        out.insert(solver.clone(), entry);
    }
    Ok(out)
}
