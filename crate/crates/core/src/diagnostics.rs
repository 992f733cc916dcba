//! Learning targets, residuals, Lyapunov values and assumption estimates.
//!
//! For a prefix `θ_{1:i-1}` the learning targets `y_{i:N}(θ_{1:i-1})` solve
//! the bottom `N - i + 1` mean equations with the prefix frozen. The residuals
//! of an iterate are
//!
//! ```text
//! x_i  = θ_i - y_i(θ_{1:i-1})
//! Δf_i = f_i - F̄_i(θ)
//! ```
//!
//! All quantities here are computed on a single iterate; expectations are
//! realized later by averaging over seeds.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::samplers::{seeded_rng, ErgodicityCertificate};
use crate::schedules::{lyapunov_weights_from, ConditionReport, SolverKind, StepSchedule};
use crate::stack::ParameterStack;
use crate::solvers::Trajectory;
use crate::systems::{check_affine_bound, offsets, Operator};

/// Default tolerance on the residuals of the target equations.
pub const TARGET_TOL: f64 = 1e-9;
const FIXED_POINT_MAX_ITER: usize = 200_000;

/// How learning targets are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetMode {
    /// Closed-form targets when the system has them, else a direct solve for
    /// affine means, else damped iteration.
    #[default]
    Auto,
    AffineDirect,
    FixedPoint,
}

/// Targets `y_{i:N}` for a prefix of length `i - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedTargets {
    pub prefix_len: usize,
    pub targets: Vec<DVector<f64>>,
    /// `‖F̄_j(prefix, y)‖` for every solved level `j`.
    pub residual_norms: Vec<f64>,
}

fn assemble(dims: &[usize], prefix: &[DVector<f64>], tail: &[DVector<f64>]) -> Result<ParameterStack> {
    let mut flat = Vec::with_capacity(dims.iter().sum());
    for v in prefix.iter().chain(tail) {
        flat.extend_from_slice(v.as_slice());
    }
    ParameterStack::from_flat(dims, flat)
}

fn check_prefix<S: Operator + ?Sized>(system: &S, prefix: &[DVector<f64>]) -> Result<()> {
    let dims = system.dims();
    if prefix.len() > dims.len() {
        return Err(Error::LevelOutOfRange {
            level: prefix.len(),
            n_levels: dims.len(),
        });
    }
    for (level, (p, d)) in prefix.iter().zip(dims).enumerate() {
        if p.len() != *d {
            return Err(Error::DimensionMismatch {
                level,
                expected: *d,
                actual: p.len(),
            });
        }
    }
    Ok(())
}

/// Solves the bottom levels for the frozen `prefix` (`prefix.len()` levels).
pub fn solve_nested_targets<S: Operator + ?Sized>(
    system: &S,
    prefix: &[DVector<f64>],
    tol: f64,
    mode: TargetMode,
) -> Result<NestedTargets> {
    check_prefix(system, prefix)?;
    let i = prefix.len();
    let n = system.n_levels();
    if i == n {
        return Ok(NestedTargets {
            prefix_len: i,
            targets: Vec::new(),
            residual_norms: Vec::new(),
        });
    }
    let targets = match mode {
        TargetMode::AffineDirect => affine_targets(system, prefix)?,
        TargetMode::FixedPoint => fixed_point_targets(system, prefix, tol)?,
        TargetMode::Auto => match system.exact_targets(prefix) {
            Some(t) => t?,
            None if system.affine_mean().is_some() => affine_targets(system, prefix)?,
            None => fixed_point_targets(system, prefix, tol)?,
        },
    };
    let theta = assemble(system.dims(), prefix, &targets)?;
    let mean = system.mean_operator(&theta)?;
    let residual_norms: Vec<f64> = (i..n).map(|j| mean.block_vector(j).norm()).collect();
    Ok(NestedTargets {
        prefix_len: i,
        targets,
        residual_norms,
    })
}

fn affine_targets<S: Operator + ?Sized>(system: &S, prefix: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    let am = system
        .affine_mean()
        .ok_or_else(|| Error::Unsupported("affine-direct targets need an affine mean operator".into()))?;
    let dims = system.dims();
    let off = offsets(dims);
    let i = prefix.len();
    let lo = off[i];
    let d = off[dims.len()];
    let m = am.a.view((lo, lo), (d - lo, d - lo)).into_owned();
    let mut rhs = -am.b.rows(lo, d - lo).into_owned();
    if lo > 0 {
        let c = am.a.view((lo, 0), (d - lo, lo));
        let mut p = DVector::zeros(lo);
        for (k, v) in prefix.iter().enumerate() {
            p.rows_mut(off[k], dims[k]).copy_from(v);
        }
        rhs -= c * p;
    }
    let y = solve_dense(m, &rhs)?;
    Ok((i..dims.len())
        .map(|j| y.rows(off[j] - lo, dims[j]).into_owned())
        .collect())
}

/// Solves `m y = rhs`, rejecting numerically singular systems.
fn solve_dense(m: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let sv = m.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > 1e-13 * smax) {
        return Err(Error::Degenerate(format!(
            "target system has condition number {:e}",
            smax / smin
        )));
    }
    m.lu()
        .solve(rhs)
        .ok_or_else(|| Error::Degenerate("singular target system".into()))
}

/// Damped iteration `y ← y - η F̄_{i:N}(prefix, y)`.
///
/// The step starts at `δ/L²` from the system metadata (or 0.5) and is halved
/// whenever the residual grows. Convergence requires the lower block of the
/// mean operator to be monotone jointly, which holds for weakly coupled
/// systems.
fn fixed_point_targets<S: Operator + ?Sized>(
    system: &S,
    prefix: &[DVector<f64>],
    tol: f64,
) -> Result<Vec<DVector<f64>>> {
    let dims = system.dims().to_vec();
    let n = dims.len();
    let i = prefix.len();
    let off = offsets(&dims);
    let meta = system.metadata();
    let mut eta = match (meta.delta, meta.lipschitz) {
        (Some(d), Some(l)) if d > 0.0 && l > 0.0 => d / (l * l),
        _ => 0.5,
    };
    let mut theta = ParameterStack::zeros(&dims)?;
    for (k, v) in prefix.iter().enumerate() {
        theta.block_mut(k).copy_from_slice(v.as_slice());
    }
    if let Some(sol) = &meta.solution {
        if sol.same_shape(&theta) {
            for j in i..n {
                theta.block_mut(j).copy_from_slice(sol.block(j));
            }
        }
    }
    system.project(&mut theta);
    let lo = off[i];
    let level_norms = |mean: &ParameterStack| -> Vec<f64> { (i..n).map(|j| mean.block_vector(j).norm()).collect() };
    let mut mean = system.mean_operator(&theta)?;
    let mut res = level_norms(&mean);
    let mut total: f64 = res.iter().map(|r| r * r).sum::<f64>().sqrt();
    for _ in 0..FIXED_POINT_MAX_ITER {
        if res.iter().all(|r| *r <= tol) {
            return Ok((i..n).map(|j| theta.block_vector(j)).collect());
        }
        let mut trial = theta.clone();
        for (t, g) in trial.as_mut_slice()[lo..].iter_mut().zip(&mean.as_slice()[lo..]) {
            *t -= eta * g;
        }
        for (k, v) in prefix.iter().enumerate() {
            trial.block_mut(k).copy_from_slice(v.as_slice());
        }
        system.project(&mut trial);
        let trial_mean = system.mean_operator(&trial)?;
        let trial_res = level_norms(&trial_mean);
        let trial_total: f64 = trial_res.iter().map(|r| r * r).sum::<f64>().sqrt();
        if trial_total <= total || trial_total <= tol {
            theta = trial;
            mean = trial_mean;
            res = trial_res;
            total = trial_total;
        } else {
            eta *= 0.5;
            if eta < 1e-12 {
                break;
            }
        }
    }
    Err(Error::NonConvergence {
        iterations: FIXED_POINT_MAX_ITER,
        residuals: res,
    })
}

/// Checks `y_j(prefix) = y_j(prefix, y_{i:j-1}(prefix))` where `i = prefix.len()`.
pub fn verify_target_identity<S: Operator + ?Sized>(
    system: &S,
    prefix: &[DVector<f64>],
    j: usize,
    tol: f64,
) -> Result<bool> {
    Ok(target_identity_gap(system, prefix, j)? <= tol)
}

/// Norm of the difference between both sides of the target identity.
pub fn target_identity_gap<S: Operator + ?Sized>(system: &S, prefix: &[DVector<f64>], j: usize) -> Result<f64> {
    let i = prefix.len();
    if !(i < j && j < system.n_levels()) {
        return Err(Error::Domain(format!(
            "need prefix length < j < N, got prefix length {i}, j = {j}"
        )));
    }
    let full = solve_nested_targets(system, prefix, TARGET_TOL, TargetMode::Auto)?;
    let lhs = &full.targets[j - i];
    let mut extended = prefix.to_vec();
    extended.extend(full.targets[..j - i].iter().cloned());
    let rhs = &solve_nested_targets(system, &extended, TARGET_TOL, TargetMode::Auto)?.targets[0];
    Ok((lhs - rhs).norm())
}

/// Residual norms and Lyapunov value of one iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: u64,
    pub x_norms: Vec<f64>,
    /// Empty for the baseline, which keeps no operator estimates.
    pub df_norms: Vec<f64>,
    /// `Σ_i ‖x_i‖² + ‖Δf_i‖²` (accelerated) or `Σ_i ‖x_i‖²` (baseline).
    pub v: f64,
    /// Weighted baseline Lyapunov value (three levels only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weighted_v: Option<f64>,
}

/// `x_i` for every level of `theta`.
pub fn optimal_residuals<S: Operator + ?Sized>(system: &S, theta: &ParameterStack, tol: f64) -> Result<Vec<DVector<f64>>> {
    theta.ensure_shape(system.dims())?;
    let n = system.n_levels();
    let blocks: Vec<DVector<f64>> = (0..n).map(|i| theta.block_vector(i)).collect();
    (0..n)
        .map(|i| {
            let t = solve_nested_targets(system, &blocks[..i], tol, TargetMode::Auto)?;
            Ok(&blocks[i] - &t.targets[0])
        })
        .collect()
}

/// Residuals of the iterate `(θ, f)` at iteration `t`.
pub fn residuals<S: Operator + ?Sized>(
    system: &S,
    t: u64,
    theta: &ParameterStack,
    f: &ParameterStack,
    kind: SolverKind,
    tol: f64,
) -> Result<DiagnosticsRecord> {
    let x = optimal_residuals(system, theta, tol)?;
    let x_norms: Vec<f64> = x.iter().map(|v| v.norm()).collect();
    let mut v: f64 = x_norms.iter().map(|n| n * n).sum();
    let df_norms = match kind {
        SolverKind::Amsa => {
            f.ensure_shape(system.dims())?;
            let mean = system.mean_operator(theta)?;
            let norms: Vec<f64> = (0..system.n_levels())
                .map(|i| crate::stack::norm(&(f.block_vector(i) - mean.block_vector(i)).as_slice().to_vec()))
                .collect();
            v += norms.iter().map(|n| n * n).sum::<f64>();
            norms
        }
        SolverKind::Msa => Vec::new(),
    };
    Ok(DiagnosticsRecord {
        t,
        x_norms,
        df_norms,
        v,
        weighted_v: None,
    })
}

/// `‖x_1‖² + v_2 ‖x_2‖² + v_3 ‖x_3‖²` at iteration `t`.
pub fn weighted_msa_lyapunov(
    record: &DiagnosticsRecord,
    t: u64,
    schedule: &StepSchedule,
    delta: f64,
    l: f64,
) -> Result<f64> {
    let (v2, v3) = crate::schedules::msa_lyapunov_weights(schedule, t, delta, l)?;
    if record.x_norms.len() != 3 {
        return Err(Error::Unsupported("weighted Lyapunov value needs three levels".into()));
    }
    Ok(weighted_from(&record.x_norms, v2, v3))
}

pub(crate) fn weighted_from(x: &[f64], v2: f64, v3: f64) -> f64 {
    x[0] * x[0] + v2 * x[1] * x[1] + v3 * x[2] * x[2]
}

/// Fills in the diagnostics of every record of `traj`.
///
/// With `weights = Some((δ, L))` three-level baseline runs also get the
/// weighted Lyapunov value.
pub fn annotate_trajectory<S: Operator + ?Sized>(
    traj: &mut Trajectory,
    system: &S,
    schedule: &StepSchedule,
    weights: Option<(f64, f64)>,
    tol: f64,
) -> Result<()> {
    let kind = traj.solver;
    for r in &mut traj.records {
        let mut d = residuals(system, r.t, &r.theta, &r.f, kind, tol)?;
        if let (SolverKind::Msa, Some((delta, l)), 3) = (kind, weights, system.n_levels()) {
            let a = schedule.alphas(r.t);
            let (v2, v3) = lyapunov_weights_from(a[0], a[1], a[2], delta, l);
            d.weighted_v = Some(weighted_from(&d.x_norms, v2, v3));
        }
        r.diagnostics = Some(d);
    }
    Ok(())
}

/// Effective matrices `M_i` of an affine system: the map `θ_i ↦ F̄_i` with
/// every lower level at its target, by block elimination.
pub fn effective_matrices<S: Operator + ?Sized>(system: &S) -> Result<Vec<DMatrix<f64>>> {
    let am = system
        .affine_mean()
        .ok_or_else(|| Error::Unsupported("effective matrices need an affine mean operator".into()))?;
    effective_matrices_of(&am.a, system.dims())
}

/// [`effective_matrices`] for a bare matrix over a stack with `dims`.
pub fn effective_matrices_of(a: &DMatrix<f64>, dims: &[usize]) -> Result<Vec<DMatrix<f64>>> {
    let off = offsets(dims);
    let d = off[dims.len()];
    let mut out = Vec::with_capacity(dims.len());
    for i in 0..dims.len() {
        let (lo, hi) = (off[i], off[i + 1]);
        let a_ii = a.view((lo, lo), (hi - lo, hi - lo)).into_owned();
        if hi == d {
            out.push(a_ii);
            continue;
        }
        let a_il = a.view((lo, hi), (hi - lo, d - hi));
        let a_li = a.view((hi, lo), (d - hi, hi - lo)).into_owned();
        let a_ll = a.view((hi, hi), (d - hi, d - hi)).into_owned();
        let solved = a_ll
            .lu()
            .solve(&a_li)
            .ok_or_else(|| Error::Degenerate(format!("lower block below level {i} is singular")))?;
        out.push(a_ii - a_il * solved);
    }
    Ok(out)
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    min_sym_eig(m)
}

fn min_sym_eig(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

/// Estimated nested strong-monotonicity modulus.
///
/// Affine systems: smallest eigenvalue of the symmetric part of every
/// effective matrix (exact, prefix independent). Other systems: smallest
/// sampled Rayleigh quotient over `pair_count` perturbation pairs per level
/// around each sample in `theta_samples`.
pub fn estimate_nested_delta<S: Operator + ?Sized>(
    system: &S,
    theta_samples: &[ParameterStack],
    pair_count: usize,
    tol: f64,
) -> Result<f64> {
    Ok(nested_delta_per_level(system, theta_samples, pair_count, tol)?
        .into_iter()
        .fold(f64::INFINITY, f64::min))
}

/// Per-level version of [`estimate_nested_delta`].
pub fn nested_delta_per_level<S: Operator + ?Sized>(
    system: &S,
    theta_samples: &[ParameterStack],
    pair_count: usize,
    tol: f64,
) -> Result<Vec<f64>> {
    if system.affine_mean().is_some() {
        return Ok(effective_matrices(system)?.iter().map(min_sym_eig).collect());
    }
    if theta_samples.is_empty() || pair_count == 0 {
        return Err(Error::Domain("sampled estimation needs samples and pairs".into()));
    }
    let n = system.n_levels();
    let mut rng = seeded_rng(0xde17a);
    let mut out = vec![f64::INFINITY; n];
    for sample in theta_samples {
        sample.ensure_shape(system.dims())?;
        let blocks: Vec<DVector<f64>> = (0..n).map(|i| sample.block_vector(i)).collect();
        for (i, best) in out.iter_mut().enumerate() {
            let eval = |theta_i: &DVector<f64>| -> Result<DVector<f64>> {
                let mut prefix = blocks[..i].to_vec();
                prefix.push(theta_i.clone());
                let tail = solve_nested_targets(system, &prefix, tol, TargetMode::Auto)?.targets;
                let full = assemble(system.dims(), &prefix, &tail)?;
                Ok(system.mean_operator(&full)?.block_vector(i))
            };
            for _ in 0..pair_count {
                let a = &blocks[i] + DVector::from_fn(blocks[i].len(), |_, _| rng.random::<f64>() - 0.5);
                let b = &blocks[i] + DVector::from_fn(blocks[i].len(), |_, _| rng.random::<f64>() - 0.5);
                let diff = &a - &b;
                let q = (eval(&a)? - eval(&b)?).dot(&diff) / diff.norm_squared();
                *best = best.min(q);
            }
        }
    }
    Ok(out)
}

/// Sampled constants of the Lipschitz, target-bound and energy assumptions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimates {
    /// Largest sampled ratio for operator and target Lipschitz continuity.
    pub l_hat: f64,
    /// Largest sampled target norm `‖y_i(θ_{1:i-1})‖`.
    pub b_hat: f64,
    /// Largest sampled `‖F_i(θ, X)‖`.
    pub d_bound: f64,
}

/// Most pairs examined by [`estimate_lipschitz_bounds`].
const MAX_PAIRS: usize = 2_000;
/// Larger sample spaces are examined on a seeded subset of this size.
pub const MAX_EXAMINED_STATES: usize = 256;

/// States examined by the sampled estimators, in ascending order.
pub fn examined_states(m: usize) -> Vec<usize> {
    if m <= MAX_EXAMINED_STATES {
        return (0..m).collect();
    }
    let mut rng = seeded_rng(0x57a7e5);
    let mut picked = rand::seq::index::sample(&mut rng, m, MAX_EXAMINED_STATES).into_vec();
    picked.sort_unstable();
    picked
}

/// Estimates `L`, `B` and the sample bound over a finite grid of points.
///
/// Operator ratios use `‖F_i(θ,X) - F_i(θ',X)‖ / Σ_j ‖θ_j - θ'_j‖` over the
/// states of [`examined_states`]; target ratios use
/// `‖y_k(p) - y_k(p')‖ / Σ_j ‖p_j - p'_j‖`.
pub fn estimate_lipschitz_bounds<S: Operator + ?Sized>(
    system: &S,
    grid: &[ParameterStack],
    tol: f64,
) -> Result<LipschitzEstimates> {
    let n = system.n_levels();
    let states = examined_states(system.sample_space_size());
    let m = states.len();
    let dims = system.dims().to_vec();
    let off = offsets(&dims);
    let total = off[n];
    for g in grid {
        g.ensure_shape(&dims)?;
    }
    // Samples and targets per grid point.
    let mut samples = Vec::with_capacity(grid.len());
    let mut targets: Vec<Vec<Option<Vec<DVector<f64>>>>> = Vec::with_capacity(grid.len());
    let mut d_bound: f64 = 0.0;
    let mut b_hat: f64 = 0.0;
    for g in grid {
        let mut buf = vec![0.0; total * m];
        for (x, state) in states.iter().enumerate() {
            system.eval_into(g, *state, &mut buf[x * total..(x + 1) * total]);
            for i in 0..n {
                d_bound = d_bound.max(crate::stack::norm(&buf[x * total + off[i]..x * total + off[i + 1]]));
            }
        }
        samples.push(buf);
        let blocks: Vec<DVector<f64>> = (0..n).map(|i| g.block_vector(i)).collect();
        let mut per_prefix = Vec::with_capacity(n);
        for i in 0..n {
            match solve_nested_targets(system, &blocks[..i], tol, TargetMode::Auto) {
                Ok(t) => {
                    b_hat = b_hat.max(t.targets[0].norm());
                    per_prefix.push(Some(t.targets));
                }
                Err(Error::Unsupported(_)) => per_prefix.push(None),
                Err(e) => return Err(e),
            }
        }
        targets.push(per_prefix);
    }
    let mut l_hat: f64 = 0.0;
    let mut pairs = 0;
    'outer: for a in 0..grid.len() {
        for b in (a + 1)..grid.len() {
            if pairs >= MAX_PAIRS {
                break 'outer;
            }
            pairs += 1;
            let level_dist: Vec<f64> = (0..n)
                .map(|i| (grid[a].block_vector(i) - grid[b].block_vector(i)).norm())
                .collect();
            let full: f64 = level_dist.iter().sum();
            if full > 0.0 {
                for x in 0..m {
                    for i in 0..n {
                        let lo = x * total;
                        let diff: f64 = (off[i]..off[i + 1])
                            .map(|k| (samples[a][lo + k] - samples[b][lo + k]).powi(2))
                            .sum::<f64>()
                            .sqrt();
                        l_hat = l_hat.max(diff / full);
                    }
                }
            }
            for i in 1..n {
                let pd: f64 = level_dist[..i].iter().sum();
                if pd == 0.0 {
                    continue;
                }
                if let (Some(ta), Some(tb)) = (&targets[a][i], &targets[b][i]) {
                    for (ya, yb) in ta.iter().zip(tb) {
                        l_hat = l_hat.max((ya - yb).norm() / pd);
                    }
                }
            }
        }
    }
    Ok(LipschitzEstimates { l_hat, b_hat, d_bound })
}

/// Summary of the numeric assumption checks on a system.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub delta_hat: f64,
    #[serde(rename = "L_hat")]
    pub l_hat: f64,
    #[serde(rename = "B_hat")]
    pub b_hat: f64,
    #[serde(rename = "D_bound")]
    pub d_bound: f64,
    pub details: AssumptionDetails,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionDetails {
    pub delta_per_level: Vec<f64>,
    /// `exact (affine)` or a description of the sampled region.
    pub delta_method: String,
    pub strongly_monotone: bool,
    pub grid_points: usize,
    pub grid_radius: f64,
    /// Whether the affine growth bound holds on the grid with the stored `L`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub affine_bound_with_stored_l: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stored_delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stored_lipschitz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ergodicity: Option<ErgodicityCertificate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel_lipschitz_bound: Option<f64>,
    /// Residual norm at the stored solution, when there is one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solution_residual: Option<f64>,
}

/// Random grid of `count` points with entries uniform in `[-radius, radius]`
/// around `center` (or the origin).
pub fn sample_grid(dims: &[usize], center: Option<&ParameterStack>, radius: f64, count: usize, seed: u64) -> Result<Vec<ParameterStack>> {
    let mut rng = seeded_rng(seed);
    let total: usize = dims.iter().sum();
    (0..count)
        .map(|_| {
            let flat: Vec<f64> = (0..total)
                .map(|k| {
                    let c = center.map_or(0.0, |c| c.as_slice()[k]);
                    c + radius * (2.0 * rng.random::<f64>() - 1.0)
                })
                .collect();
            ParameterStack::from_flat(dims, flat)
        })
        .collect()
}

/// Runs every assumption estimator on `system` over a random grid.
pub fn assumption_report<S: Operator + ?Sized>(
    system: &S,
    grid_points: usize,
    grid_radius: f64,
    seed: u64,
) -> Result<AssumptionReport> {
    let meta = system.metadata();
    let mut grid = sample_grid(system.dims(), meta.solution.as_ref(), grid_radius, grid_points, seed)?;
    for g in &mut grid {
        system.project(g);
    }
    let affine = system.affine_mean().is_some();
    let delta_per_level = nested_delta_per_level(system, &grid, 4, TARGET_TOL)?;
    let delta_hat = delta_per_level.iter().copied().fold(f64::INFINITY, f64::min);
    let est = estimate_lipschitz_bounds(system, &grid, TARGET_TOL)?;
    let affine_bound_with_stored_l = match meta.lipschitz {
        Some(l) => {
            let mut ok = true;
            for g in &grid {
                ok &= check_affine_bound(system, g, l)?.iter().flatten().all(|b| *b);
            }
            Some(ok)
        }
        None => None,
    };
    let (ergodicity, kernel_lipschitz_bound) = match system.kernel() {
        Some(k) => {
            let zero = vec![0.0; system.total_dim()];
            (
                crate::samplers::fit_ergodicity(k, &zero, 200).ok(),
                Some(k.lipschitz_bound()),
            )
        }
        None => (None, None),
    };
    let solution_residual = match &meta.solution {
        Some(sol) => {
            let mean = system.mean_operator(sol)?;
            Some(mean.norm())
        }
        None => None,
    };
    Ok(AssumptionReport {
        delta_hat,
        l_hat: est.l_hat,
        b_hat: est.b_hat,
        d_bound: est.d_bound,
        details: AssumptionDetails {
            delta_per_level,
            delta_method: if affine {
                "exact (affine)".into()
            } else {
                format!("sampled: {grid_points} points, radius {grid_radius}, 4 pairs per level")
            },
            strongly_monotone: delta_hat > 0.0,
            grid_points,
            grid_radius,
            affine_bound_with_stored_l,
            stored_delta: meta.delta,
            stored_lipschitz: meta.lipschitz,
            ergodicity,
            kernel_lipschitz_bound,
            solution_residual,
        },
    })
}

/// One evaluated instance of a pathwise inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheck {
    pub t: u64,
    pub level: usize,
    pub lhs: f64,
    pub rhs: f64,
    /// Rounding allowance added to `rhs`.
    pub allowance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub lemma: String,
    pub checks: Vec<LemmaCheck>,
    pub violations: usize,
    /// Whether the step-size preconditions were verified; `None` if unknown.
    pub preconditions_pass: Option<bool>,
    pub note: String,
}

impl LemmaReport {
    /// Attaches the outcome of the step-size condition check.
    pub fn with_preconditions(mut self, report: &ConditionReport) -> Self {
        self.preconditions_pass = Some(report.pass);
        if !report.pass {
            self.note = format!(
                "step-size preconditions failed ({}); violations do not contradict the lemma",
                report.failures().map(|r| r.name.as_str()).collect::<Vec<_>>().join(", ")
            );
        }
        self
    }
}

fn dense_pairs(traj: &Trajectory) -> Result<Vec<(usize, usize)>> {
    if traj.solver != SolverKind::Amsa {
        return Err(Error::Usage("the lemma checks apply to accelerated runs".into()));
    }
    let recs = &traj.records;
    if recs.len() < 2 {
        return Err(Error::Usage("need at least two consecutive records".into()));
    }
    let mut out = Vec::with_capacity(recs.len() - 1);
    for k in 0..recs.len() - 1 {
        if recs[k + 1].t != recs[k].t + 1 {
            return Err(Error::Usage(format!(
                "records at t = {} and t = {} are not consecutive; use a dense record plan",
                recs[k].t,
                recs[k + 1].t
            )));
        }
        if recs[k].diagnostics.is_none() || recs[k + 1].diagnostics.is_none() {
            return Err(Error::Usage("records lack diagnostics; annotate the trajectory first".into()));
        }
        out.push((k, k + 1));
    }
    Ok(out)
}

/// Unit roundoff of `f64`.
const EPS: f64 = f64::EPSILON;

/// Checks `‖θ_i^{t+1} - θ_i^t‖ ≤ α_i^t (‖Δf_i^t‖ + N L² Σ_{k≥i} ‖x_k^t‖)` at
/// every consecutive pair of records.
///
/// The left side is a difference of two stored iterates and carries a
/// rounding error of a few ulps of `‖θ_i‖`; that amount is granted as an
/// allowance.
pub fn check_lemma_lipschitz(traj: &Trajectory, schedule: &StepSchedule, l: f64) -> Result<LemmaReport> {
    let pairs = dense_pairs(traj)?;
    let n = schedule.n_levels();
    let nf = n as f64;
    let mut checks = Vec::new();
    for (a, b) in pairs {
        let (ra, rb) = (&traj.records[a], &traj.records[b]);
        let d = ra.diagnostics.as_ref().expect("checked");
        for i in 0..n {
            let step = (rb.theta.block_vector(i) - ra.theta.block_vector(i)).norm();
            let tail: f64 = d.x_norms[i..].iter().sum();
            let rhs = schedule.alpha(i, ra.t) * (d.df_norms[i] + nf * l * l * tail);
            let allowance = 4.0 * EPS * (ra.theta.block_vector(i).norm() + rb.theta.block_vector(i).norm());
            checks.push(LemmaCheck {
                t: ra.t,
                level: i,
                lhs: step,
                rhs,
                allowance,
                pass: step <= rhs + allowance,
            });
        }
    }
    let violations = checks.iter().filter(|c| !c.pass).count();
    Ok(LemmaReport {
        lemma: "Lipschitz".into(),
        checks,
        violations,
        preconditions_pass: None,
        note: String::new(),
    })
}

/// Checks the one-step bound on `‖x_i^{t+1}‖²` at every consecutive pair of
/// records:
///
/// ```text
/// ‖x_i'‖² ≤ (1 - δα_i/4)‖x_i‖² + Σ_{j<i} δα_j/(8N) ‖x_j‖²
///          + (9N³L⁶/δ + 8N²L³) α_i Σ_{j>i} ‖x_j‖² + (3/δ + L) α_i Σ_j ‖Δf_j‖²
/// ```
///
/// Both squared norms come from target solves at nearby points, so their
/// difference is only resolved to a relative accuracy of order
/// `ε (1 + ‖θ‖)`; that amount is granted as an allowance.
pub fn check_lemma_bound_x(traj: &Trajectory, schedule: &StepSchedule, delta: f64, l: f64) -> Result<LemmaReport> {
    let pairs = dense_pairs(traj)?;
    let n = schedule.n_levels();
    let nf = n as f64;
    let coupling = 9.0 * nf.powi(3) * l.powi(6) / delta + 8.0 * nf * nf * l.powi(3);
    let df_weight = 3.0 / delta + l;
    let mut checks = Vec::new();
    for (a, b) in pairs {
        let (ra, rb) = (&traj.records[a], &traj.records[b]);
        let da = ra.diagnostics.as_ref().expect("checked");
        let db = rb.diagnostics.as_ref().expect("checked");
        let alphas = schedule.alphas(ra.t);
        let df_sq: f64 = da.df_norms.iter().map(|v| v * v).sum();
        let scale = 1.0 + ra.theta.norm().max(rb.theta.norm());
        for i in 0..n {
            let xi = da.x_norms[i];
            let above: f64 = (0..i)
                .map(|j| delta * alphas[j] / (8.0 * nf) * da.x_norms[j].powi(2))
                .sum();
            let below: f64 = da.x_norms[i + 1..].iter().map(|v| v * v).sum();
            let rhs = xi * xi - delta * alphas[i] / 4.0 * xi * xi
                + above
                + coupling * alphas[i] * below
                + df_weight * alphas[i] * df_sq;
            let lhs = db.x_norms[i].powi(2);
            let allowance = 64.0 * EPS * scale * (xi + db.x_norms[i]) * (1.0 + xi + db.x_norms[i]);
            checks.push(LemmaCheck {
                t: ra.t,
                level: i,
                lhs,
                rhs,
                allowance,
                pass: lhs <= rhs + allowance,
            });
        }
    }
    let violations = checks.iter().filter(|c| !c.pass).count();
    Ok(LemmaReport {
        lemma: "bound_x".into(),
        checks,
        violations,
        preconditions_pass: None,
        note: String::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::FiniteKernel;
    use crate::systems::{AffineSystem, Metadata};

    fn one_state() -> FiniteKernel {
        FiniteKernel::fixed(vec![vec![1.0]]).unwrap()
    }

    /// Two levels of dimension 1 with `F̄(θ) = A θ + b`.
    fn two_level(a: [f64; 4], b: [f64; 2]) -> AffineSystem {
        AffineSystem::new(
            vec![1, 1],
            DMatrix::from_row_slice(2, 2, &a),
            DVector::from_row_slice(&b),
            DMatrix::zeros(1, 2),
            one_state(),
            Metadata::default(),
        )
        .unwrap()
    }

    #[test]
    fn scalar_identity_residual() {
        let s = AffineSystem::new(
            vec![1],
            DMatrix::identity(1, 1),
            DVector::zeros(1),
            DMatrix::zeros(1, 1),
            one_state(),
            Metadata::default(),
        )
        .unwrap();
        let th = ParameterStack::from_blocks(vec![vec![2.0]]).unwrap();
        let f = ParameterStack::zeros(&[1]).unwrap();
        let d = residuals(&s, 0, &th, &f, SolverKind::Amsa, TARGET_TOL).unwrap();
        assert_eq!(d.x_norms, vec![2.0]);
        // f = 0 gives Δf = -F̄(θ) = -2.
        assert_eq!(d.df_norms, vec![2.0]);
        assert_eq!(d.v, 8.0);
    }

    #[test]
    fn decoupled_targets_ignore_prefix() {
        let s = two_level([2.0, 0.0, 0.0, 4.0], [1.0, -2.0]);
        for p in [-3.0, 0.0, 5.0] {
            let t = solve_nested_targets(&s, &[DVector::from_element(1, p)], 1e-12, TargetMode::AffineDirect).unwrap();
            assert_eq!(t.targets[0][0], 0.5);
        }
        let all = solve_nested_targets(&s, &[], 1e-12, TargetMode::AffineDirect).unwrap();
        assert_eq!(all.targets[0][0], -0.5);
        assert!(verify_target_identity(&s, &[], 1, 1e-12).unwrap());
    }

    #[test]
    fn coupled_targets_and_delta() {
        // F̄_1 = θ_1 + 0.5 θ_2 - 1, F̄_2 = 0.5 θ_1 + 2 θ_2.
        let s = two_level([1.0, 0.5, 0.5, 2.0], [-1.0, 0.0]);
        let y2 = solve_nested_targets(&s, &[DVector::from_element(1, 2.0)], 1e-12, TargetMode::AffineDirect).unwrap();
        assert!((y2.targets[0][0] + 0.5).abs() < 1e-15);
        // M_1 = 1 - 0.5 * 0.5 / 2 = 0.875.
        let m = effective_matrices(&s).unwrap();
        assert!((m[0][(0, 0)] - 0.875).abs() < 1e-15);
        assert!((estimate_nested_delta(&s, &[], 0, 1e-9).unwrap() - 0.875).abs() < 1e-15);
        let fp = solve_nested_targets(&s, &[], 1e-12, TargetMode::FixedPoint).unwrap();
        let direct = solve_nested_targets(&s, &[], 1e-12, TargetMode::AffineDirect).unwrap();
        for (a, b) in fp.targets.iter().zip(&direct.targets) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn negative_modulus_is_reported() {
        let s = two_level([-1.0, 0.0, 0.0, 1.0], [0.0, 0.0]);
        assert!(estimate_nested_delta(&s, &[], 0, 1e-9).unwrap() <= -1.0);
    }

    #[test]
    fn weighted_lyapunov_arithmetic() {
        let r = DiagnosticsRecord {
            t: 0,
            x_norms: vec![1.0, 1.0, 1.0],
            df_norms: vec![],
            v: 3.0,
            weighted_v: None,
        };
        assert_eq!(weighted_from(&r.x_norms, 2.0, 3.0), 6.0);
        let zero = DiagnosticsRecord {
            x_norms: vec![0.0; 3],
            ..r
        };
        let s = StepSchedule::practical_msa(1.0, 10.0, &[1.0, 1.0]).unwrap();
        assert_eq!(weighted_msa_lyapunov(&zero, 5, &s, 1.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn lipschitz_estimates_zero_operator() {
        let z = crate::systems::ZeroSystem::new(vec![2], one_state()).unwrap();
        let grid = sample_grid(&[2], None, 1.0, 10, 1).unwrap();
        let e = estimate_lipschitz_bounds(&z, &grid, 1e-9).unwrap();
        assert_eq!(e.l_hat, 0.0);
        assert_eq!(e.d_bound, 0.0);
    }
}
