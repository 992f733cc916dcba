//! The accelerated iteration and the baseline.
//!
//! One accelerated step, with every operator read at the pre-update `θ_t`:
//!
//! ```text
//! θ_{i,t+1} = θ_{i,t} - α_{i,t} f_{i,t}
//! f_{i,t+1} = (1 - λ_t) f_{i,t} + λ_t F_i(θ_t, X_t)
//! X_{t+1}  ~ P_{θ_t}(X_t, ·)
//! ```
//!
//! The baseline replaces the first two lines by `θ_{i,t+1} = θ_{i,t} - α_{i,t} F_i(θ_t, X_t)`.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnostics::DiagnosticsRecord;
use crate::error::{Error, Result};
use crate::samplers::{seeded_rng, SampleRng};
use crate::schedules::{SolverKind, StepSchedule};
use crate::stack::ParameterStack;
use crate::systems::Operator;

/// Default bound on `‖θ‖` beyond which a run counts as diverged.
pub const DEFAULT_DIVERGENCE_CAP: f64 = 1e12;

/// Iterate `(θ_t, f_t, X_t)` plus the sample generator.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub t: u64,
    pub theta: ParameterStack,
    /// Operator estimates; identically zero for the baseline.
    pub f: ParameterStack,
    pub x_state: usize,
    pub rng: SampleRng,
    sample: Vec<f64>,
    alphas: Vec<f64>,
    offsets: Vec<usize>,
    divergence_cap: f64,
}

/// How the operator estimates start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FInit {
    /// `f_0 = F(θ_0, X_0)`.
    #[default]
    FirstSample,
    Zero,
}

/// Initial point of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialPoint {
    pub theta0: ParameterStack,
    #[serde(default)]
    pub f0: Option<ParameterStack>,
    #[serde(default)]
    pub x0: usize,
}

impl InitialPoint {
    /// `θ_0 = 0`, `X_0 = 0`, default operator estimates.
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Ok(Self::from_theta(ParameterStack::zeros(dims)?))
    }

    pub fn from_theta(theta0: ParameterStack) -> Self {
        Self {
            theta0,
            f0: None,
            x0: 0,
        }
    }
}

impl SolverState {
    /// A fresh state. `f` is taken from `f0` when given, otherwise from `f_init`.
    pub fn new<S: Operator + ?Sized>(
        system: &S,
        kind: SolverKind,
        init: &InitialPoint,
        f_init: FInit,
        seed: u64,
    ) -> Result<Self> {
        init.theta0.ensure_shape(system.dims())?;
        if init.x0 >= system.sample_space_size() {
            return Err(Error::StateOutOfRange {
                state: init.x0,
                size: system.sample_space_size(),
            });
        }
        let f = match (&init.f0, kind, f_init) {
            (Some(f0), SolverKind::Amsa, _) => {
                f0.ensure_shape(system.dims())?;
                f0.clone()
            }
            (None, SolverKind::Amsa, FInit::FirstSample) => {
                let mut f = ParameterStack::zeros(system.dims())?;
                system.eval_into(&init.theta0, init.x0, f.as_mut_slice());
                f.check_finite("initial operator estimate")?;
                f
            }
            _ => ParameterStack::zeros(system.dims())?,
        };
        let d = init.theta0.total_dim();
        Ok(Self {
            t: 0,
            theta: init.theta0.clone(),
            f,
            x_state: init.x0,
            rng: seeded_rng(seed),
            sample: vec![0.0; d],
            alphas: vec![0.0; system.n_levels()],
            offsets: init.theta0.offsets().to_vec(),
            divergence_cap: DEFAULT_DIVERGENCE_CAP,
        })
    }

    pub fn with_divergence_cap(mut self, cap: f64) -> Self {
        self.divergence_cap = cap;
        self
    }

    /// The raw sample `F(θ_{t-1}, X_{t-1})` read by the most recent step.
    pub fn last_sample(&self) -> &[f64] {
        &self.sample
    }

    fn check_divergence(&self) -> Result<()> {
        if let Some(level) = self.theta.first_non_finite_level() {
            return Err(Error::Divergence { t: self.t, level });
        }
        if let Some(level) = self.f.first_non_finite_level() {
            return Err(Error::Divergence { t: self.t, level });
        }
        if self.theta.norm() > self.divergence_cap {
            let norms = self.theta.norms();
            let level = (0..norms.len())
                .max_by(|a, b| norms[*a].total_cmp(&norms[*b]))
                .unwrap_or(0);
            return Err(Error::Divergence { t: self.t, level });
        }
        Ok(())
    }
}

fn check_schedule<S: Operator + ?Sized>(system: &S, schedule: &StepSchedule, kind: SolverKind) -> Result<()> {
    if schedule.kind() != kind {
        return Err(Error::Usage(format!(
            "{kind} step needs a {kind} schedule, got {}",
            schedule.kind()
        )));
    }
    if schedule.n_levels() != system.n_levels() {
        return Err(Error::ShapeMismatch {
            expected: vec![system.n_levels()],
            actual: vec![schedule.n_levels()],
        });
    }
    Ok(())
}

/// One accelerated step.
pub fn amsa_step<S: Operator + ?Sized>(
    state: &mut SolverState,
    system: &S,
    schedule: &StepSchedule,
) -> Result<()> {
    check_schedule(system, schedule, SolverKind::Amsa)?;
    amsa_step_unchecked(state, system, schedule)
}

fn amsa_step_unchecked<S: Operator + ?Sized>(
    state: &mut SolverState,
    system: &S,
    schedule: &StepSchedule,
) -> Result<()> {
    let t = state.t;
    let lambda = schedule.lambda(t);
    schedule.alphas_into(t, &mut state.alphas);
    system.eval_into(&state.theta, state.x_state, &mut state.sample);
    let next = system.draw_next(&state.theta, state.x_state, &mut state.rng)?;
    let offsets = &state.offsets;
    let theta = state.theta.as_mut_slice();
    let f = state.f.as_mut_slice();
    for (level, alpha) in state.alphas.iter().enumerate() {
        for k in offsets[level]..offsets[level + 1] {
            theta[k] -= alpha * f[k];
            f[k] = (1.0 - lambda) * f[k] + lambda * state.sample[k];
        }
    }
    system.project(&mut state.theta);
    state.x_state = next;
    state.t += 1;
    state.check_divergence()
}

/// One baseline step.
pub fn msa_step<S: Operator + ?Sized>(
    state: &mut SolverState,
    system: &S,
    schedule: &StepSchedule,
) -> Result<()> {
    check_schedule(system, schedule, SolverKind::Msa)?;
    msa_step_unchecked(state, system, schedule)
}

fn msa_step_unchecked<S: Operator + ?Sized>(
    state: &mut SolverState,
    system: &S,
    schedule: &StepSchedule,
) -> Result<()> {
    let t = state.t;
    schedule.alphas_into(t, &mut state.alphas);
    system.eval_into(&state.theta, state.x_state, &mut state.sample);
    let next = system.draw_next(&state.theta, state.x_state, &mut state.rng)?;
    let offsets = &state.offsets;
    let theta = state.theta.as_mut_slice();
    for (level, alpha) in state.alphas.iter().enumerate() {
        for k in offsets[level]..offsets[level + 1] {
            theta[k] -= alpha * state.sample[k];
        }
    }
    system.project(&mut state.theta);
    state.x_state = next;
    state.t += 1;
    state.check_divergence()
}

/// Which iterations a run keeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RecordPlan {
    /// Only `t = 0` and the final iterate.
    None,
    /// Every iteration.
    Dense,
    /// `t = 0` and roughly `per_decade` log-spaced iterations per decade,
    /// thinned to at most `cap` records.
    LogSpaced { per_decade: u32, cap: usize },
    /// Exactly these iterations (plus `0` and the final iterate).
    Explicit { times: Vec<u64> },
}

impl Default for RecordPlan {
    fn default() -> Self {
        RecordPlan::LogSpaced {
            per_decade: 60,
            cap: 512,
        }
    }
}

impl RecordPlan {
    /// Recorded iterations for a run of `horizon` steps, ascending.
    pub fn times(&self, horizon: u64) -> Vec<u64> {
        let mut set: BTreeSet<u64> = BTreeSet::new();
        set.insert(0);
        set.insert(horizon);
        match self {
            RecordPlan::None => {}
            RecordPlan::Dense => set.extend(0..=horizon),
            RecordPlan::LogSpaced { per_decade, cap } => {
                let mut grid = crate::schedules::log_grid(horizon, (*per_decade).max(1));
                if grid.len() > *cap && *cap >= 2 {
                    let n = grid.len();
                    grid = (0..*cap)
                        .map(|k| grid[(k * (n - 1)) / (cap - 1)])
                        .collect();
                }
                set.extend(grid);
            }
            RecordPlan::Explicit { times } => set.extend(times.iter().copied().filter(|t| *t <= horizon)),
        }
        set.into_iter().collect()
    }
}

/// A kept iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: u64,
    pub theta: ParameterStack,
    pub f: ParameterStack,
    pub x_state: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<DiagnosticsRecord>,
}

/// The records of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub seed: u64,
    pub solver: SolverKind,
    pub horizon: u64,
    pub records: Vec<Record>,
    /// Set when the run stopped early; the last record is the last finite
    /// iterate.
    pub diverged: Option<DivergenceInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceInfo {
    pub t: u64,
    pub level: usize,
}

impl Trajectory {
    pub fn terminal(&self) -> &Record {
        self.records.last().expect("a trajectory has at least one record")
    }

    /// Writes the `t,level,quantity,value` dump. Levels are 1-based; level 0
    /// holds whole-stack quantities such as `V`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,level,quantity,value")?;
        for r in &self.records {
            for (i, v) in r.theta.norms().iter().enumerate() {
                writeln!(out, "{},{},theta_norm,{:e}", r.t, i + 1, v)?;
            }
            for (i, v) in r.f.norms().iter().enumerate() {
                writeln!(out, "{},{},f_norm,{:e}", r.t, i + 1, v)?;
            }
            if let Some(d) = &r.diagnostics {
                for (i, v) in d.x_norms.iter().enumerate() {
                    writeln!(out, "{},{},x_norm,{:e}", r.t, i + 1, v)?;
                }
                for (i, v) in d.df_norms.iter().enumerate() {
                    writeln!(out, "{},{},df_norm,{:e}", r.t, i + 1, v)?;
                }
                writeln!(out, "{},0,V,{:e}", r.t, d.v)?;
                if let Some(w) = d.weighted_v {
                    writeln!(out, "{},0,V_weighted,{:e}", r.t, w)?;
                }
            }
        }
        Ok(())
    }

    /// Writes `<stem>.csv` and the `<stem>.json` sidecar into `dir`.
    pub fn dump(&self, dir: &Path, stem: &str, config_hash: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let file = std::fs::File::create(dir.join(format!("{stem}.csv")))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w)?;
        w.flush()?;
        let sidecar = TrajectorySidecar {
            seed: self.seed,
            solver: self.solver,
            config_hash: config_hash.to_string(),
            diverged: self.diverged.is_some(),
        };
        std::fs::write(
            dir.join(format!("{stem}.json")),
            serde_json::to_string_pretty(&sidecar)? + "\n",
        )?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectorySidecar {
    pub seed: u64,
    pub solver: SolverKind,
    pub config_hash: String,
    pub diverged: bool,
}

/// Run options beyond the core inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub f_init: FInit,
    pub divergence_cap: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            f_init: FInit::FirstSample,
            divergence_cap: DEFAULT_DIVERGENCE_CAP,
        }
    }
}

/// Runs `horizon` steps of `kind` from `init`, keeping the iterates selected
/// by `plan`. Divergence stops the run and is reported on the trajectory, not
/// as an error.
#[allow(clippy::too_many_arguments)]
pub fn run<S: Operator + ?Sized>(
    system: &S,
    schedule: &StepSchedule,
    kind: SolverKind,
    horizon: u64,
    seed: u64,
    init: &InitialPoint,
    plan: &RecordPlan,
    options: &RunOptions,
) -> Result<Trajectory> {
    if horizon < 1 {
        return Err(Error::Domain("horizon must be at least 1".into()));
    }
    check_schedule(system, schedule, kind)?;
    let mut state = SolverState::new(system, kind, init, options.f_init, seed)?
        .with_divergence_cap(options.divergence_cap);
    let times = plan.times(horizon);
    let mut next_record = times.iter().peekable();
    let mut records = Vec::with_capacity(times.len());
    let snapshot = |s: &SolverState| Record {
        t: s.t,
        theta: s.theta.clone(),
        f: s.f.clone(),
        x_state: s.x_state,
        diagnostics: None,
    };
    let mut keep = |s: &SolverState, records: &mut Vec<Record>| {
        if next_record.peek() == Some(&&s.t) {
            records.push(snapshot(s));
            next_record.next();
        }
    };
    keep(&state, &mut records);
    let mut diverged = None;
    // The last finite iterate, so a divergent run can end on a usable record.
    let mut prev = snapshot(&state);
    while state.t < horizon {
        prev.t = state.t;
        prev.x_state = state.x_state;
        prev.theta.as_mut_slice().copy_from_slice(state.theta.as_slice());
        prev.f.as_mut_slice().copy_from_slice(state.f.as_slice());
        let step = match kind {
            SolverKind::Amsa => amsa_step_unchecked(&mut state, system, schedule),
            SolverKind::Msa => msa_step_unchecked(&mut state, system, schedule),
        };
        match step {
            Ok(()) => keep(&state, &mut records),
            Err(Error::Divergence { t, level }) => {
                diverged = Some(DivergenceInfo { t, level });
                if records.last().map(|r| r.t) != Some(prev.t) {
                    records.push(prev);
                }
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Trajectory {
        seed,
        solver: kind,
        horizon,
        records,
        diverged,
    })
}
