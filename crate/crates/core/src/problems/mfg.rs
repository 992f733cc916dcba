//! Tabular mean-field game as a three-level operator system.
//!
//! Levels, from slowest to fastest:
//!
//! 1. softmax policy logits `θ ∈ R^{S·A}` (row-major, index `s·A + a`);
//! 2. the mean-field estimate `u ∈ Δ_S`;
//! 3. the differential value function and average-reward tracker
//!    `(V, Ĵ) ∈ R^{S+1}`.
//!
//! Samples are transitions `(s, a, s')`, indexed as `(s·A + a)·S + s'`. The
//! chain over transitions moves to `(s', a', s'')` with `a' ~ π(·|s')` and
//! `s'' ~ 𝒫(·|s', a', u)`, so every operator is a deterministic function of
//! its sample and `θ`.
//!
//! The value level carries the extra term `κ · mean(V) · 1`, which pins down
//! the additive constant of `V` (the Bellman equation alone only determines
//! `V` up to a shift).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::samplers::{self, SampleRng};
use crate::stack::ParameterStack;
use crate::systems::{Metadata, Operator};

/// Iteration cap for the mean-field fixed point when `𝒫` depends on `u`.
const MEANFIELD_MAX_ITER: usize = 100_000;

/// A finite mean-field game: states, actions, transitions and rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfgSpec {
    pub n_states: usize,
    pub n_actions: usize,
    /// `transition[s][a][s'] = 𝒫_0(s' | s, a)`.
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `reward[s][a] ∈ [0, 1]`.
    pub reward: Vec<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ergodicity_floor: f64,
    /// Weight `β` of the population in the transition:
    /// `𝒫(·|s,a,u) = (1 - β) 𝒫_0(·|s,a) + β u`.
    #[serde(default)]
    pub meanfield_coupling: f64,
    /// Normalization weight `κ` on the mean of `V`.
    #[serde(default = "default_anchor")]
    pub value_anchor: f64,
}

fn default_anchor() -> f64 {
    1.0
}

/// Random game with `S` states and `A` actions.
///
/// Each `𝒫_0(·|s,a)` is a flat-Dirichlet draw mixed with the uniform
/// distribution at weight `floor`, so every entry is at least `floor / S`.
/// Rewards are uniform on `[0, 1]`.
pub fn make_random_mfg(n_states: usize, n_actions: usize, seed: u64, floor: f64) -> Result<MfgSpec> {
    if n_states == 0 || n_actions == 0 {
        return Err(Error::Domain("an MFG needs at least one state and one action".into()));
    }
    if !(0.0..=1.0).contains(&floor) {
        return Err(Error::Domain(format!("ergodicity floor {floor} outside [0, 1]")));
    }
    let mut rng = samplers::seeded_rng(seed);
    let uniform = 1.0 / n_states as f64;
    let mut transition = Vec::with_capacity(n_states);
    for _ in 0..n_states {
        let mut per_action = Vec::with_capacity(n_actions);
        for _ in 0..n_actions {
            let mut row: Vec<f64> = (0..n_states).map(|_| Exp1.sample(&mut rng)).collect();
            let total: f64 = row.iter().sum();
            for v in &mut row {
                *v = (1.0 - floor) * (*v / total) + floor * uniform;
            }
            renormalize(&mut row);
            per_action.push(row);
        }
        transition.push(per_action);
    }
    let reward = (0..n_states)
        .map(|_| (0..n_actions).map(|_| rng.random::<f64>()).collect())
        .collect();
    Ok(MfgSpec {
        n_states,
        n_actions,
        transition,
        reward,
        seed,
        ergodicity_floor: floor,
        meanfield_coupling: 0.0,
        value_anchor: 1.0,
    })
}

/// Pushes the rounding error of a probability row into its largest entry.
fn renormalize(row: &mut [f64]) {
    let s: f64 = row.iter().sum();
    let (imax, _) = row
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty row");
    row[imax] += 1.0 - s;
}

/// Row-wise softmax of `S × A` logits given row-major.
pub fn softmax_policy(logits: &[f64], n_actions: usize) -> Result<DMatrix<f64>> {
    if n_actions == 0 || logits.len() % n_actions != 0 {
        return Err(Error::ShapeMismatch {
            expected: vec![n_actions],
            actual: vec![logits.len()],
        });
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("policy logits".into()));
    }
    let n_states = logits.len() / n_actions;
    let mut pi = DMatrix::zeros(n_states, n_actions);
    let mut row = vec![0.0; n_actions];
    for s in 0..n_states {
        softmax_row(&logits[s * n_actions..(s + 1) * n_actions], &mut row);
        for (a, p) in row.iter().enumerate() {
            pi[(s, a)] = *p;
        }
    }
    Ok(pi)
}

fn softmax_row(logits: &[f64], out: &mut [f64]) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, l) in out.iter_mut().zip(logits) {
        *o = (l - m).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &mut [f64]) {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut shift = 0.0;
    for (k, x) in sorted.iter().enumerate() {
        cum += x;
        let candidate = (cum - 1.0) / (k + 1) as f64;
        if x - candidate > 0.0 {
            shift = candidate;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - shift).max(0.0);
    }
}

/// The mean-field game operator system.
#[derive(Debug, Clone, PartialEq)]
pub struct MfgSystem {
    spec: MfgSpec,
    dims: Vec<usize>,
    /// `𝒫_0` flattened as `(s·A + a)·S + s'`.
    p0: Vec<f64>,
    /// `r` flattened as `s·A + a`.
    reward: Vec<f64>,
    metadata: Metadata,
}

/// Builds the three-level system for `spec`.
pub fn mfg_operator_system(spec: &MfgSpec) -> Result<MfgSystem> {
    MfgSystem::new(spec.clone())
}

impl MfgSystem {
    pub fn new(spec: MfgSpec) -> Result<Self> {
        let (ns, na) = (spec.n_states, spec.n_actions);
        if ns == 0 || na == 0 {
            return Err(Error::Domain("an MFG needs at least one state and one action".into()));
        }
        if ns * na * ns > 1_000_000 {
            return Err(Error::Unsupported(format!(
                "{ns} states x {na} actions gives too many transition samples"
            )));
        }
        if spec.transition.len() != ns || spec.reward.len() != ns {
            return Err(Error::Config(format!(
                "transition/reward must have {ns} state rows"
            )));
        }
        let mut p0 = Vec::with_capacity(ns * na * ns);
        let mut reward = Vec::with_capacity(ns * na);
        for (s, (per_action, rew)) in spec.transition.iter().zip(&spec.reward).enumerate() {
            if per_action.len() != na || rew.len() != na {
                return Err(Error::Config(format!("state {s} must list {na} actions")));
            }
            for (a, row) in per_action.iter().enumerate() {
                if row.len() != ns {
                    return Err(Error::Config(format!(
                        "transition row ({s}, {a}) has length {} (expected {ns})",
                        row.len()
                    )));
                }
                samplers::check_stochastic_row(row)
                    .map_err(|e| Error::Kernel(format!("transition row ({s}, {a}): {e}")))?;
                p0.extend_from_slice(row);
            }
            if let Some(r) = rew.iter().find(|r| !r.is_finite()) {
                return Err(Error::NonFinite(format!("reward {r} in state {s}")));
            }
            reward.extend_from_slice(rew);
        }
        if !(0.0..=1.0).contains(&spec.meanfield_coupling) {
            return Err(Error::Domain(format!(
                "meanfield_coupling {} outside [0, 1]",
                spec.meanfield_coupling
            )));
        }
        if !(spec.value_anchor > 0.0 && spec.value_anchor.is_finite()) {
            return Err(Error::Domain(format!(
                "value_anchor must be positive, got {}",
                spec.value_anchor
            )));
        }
        Ok(Self {
            dims: vec![ns * na, ns, ns + 1],
            spec,
            p0,
            reward,
            metadata: Metadata::default(),
        })
    }

    pub fn spec(&self) -> &MfgSpec {
        &self.spec
    }

    fn ns(&self) -> usize {
        self.spec.n_states
    }

    fn na(&self) -> usize {
        self.spec.n_actions
    }

    /// Sample index of the transition `(s, a, s')`.
    pub fn sample_index(&self, s: usize, a: usize, s_next: usize) -> usize {
        (s * self.na() + a) * self.ns() + s_next
    }

    /// The transition `(s, a, s')` encoded by a sample index.
    pub fn decode_sample(&self, x: usize) -> (usize, usize, usize) {
        let s_next = x % self.ns();
        let sa = x / self.ns();
        (sa / self.na(), sa % self.na(), s_next)
    }

    /// Mean field as used inside the transition kernel (projected so the
    /// kernel stays stochastic for any `u`).
    fn kernel_meanfield(&self, u: &[f64]) -> Option<Vec<f64>> {
        if self.spec.meanfield_coupling == 0.0 {
            return None;
        }
        let mut v = u.to_vec();
        project_simplex(&mut v);
        Some(v)
    }

    /// `𝒫(·|s, a, u)` into `out`.
    fn transition_row(&self, s: usize, a: usize, u: Option<&[f64]>, out: &mut [f64]) {
        let ns = self.ns();
        let base = &self.p0[(s * self.na() + a) * ns..(s * self.na() + a + 1) * ns];
        match u {
            None => out.copy_from_slice(base),
            Some(u) => {
                let beta = self.spec.meanfield_coupling;
                for ((o, p), w) in out.iter_mut().zip(base).zip(u) {
                    *o = (1.0 - beta) * p + beta * w;
                }
            }
        }
    }

    /// State transition matrix `P^{π,u}`.
    pub fn state_matrix(&self, pi: &DMatrix<f64>, u: &[f64]) -> DMatrix<f64> {
        let ns = self.ns();
        let mf = self.kernel_meanfield(u);
        let mut p = DMatrix::zeros(ns, ns);
        let mut row = vec![0.0; ns];
        for s in 0..ns {
            for a in 0..self.na() {
                self.transition_row(s, a, mf.as_deref(), &mut row);
                let w = pi[(s, a)];
                for (s2, v) in row.iter().enumerate() {
                    p[(s, s2)] += w * v;
                }
            }
        }
        p
    }

    /// `Σ_{s'} 𝒫(s'|s,a,u) V(s')` for every `(s, a)`, flattened as `s·A + a`.
    fn expected_next_value(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let ns = self.ns();
        let mf = self.kernel_meanfield(u);
        let mut row = vec![0.0; ns];
        let mut out = vec![0.0; ns * self.na()];
        for s in 0..ns {
            for a in 0..self.na() {
                self.transition_row(s, a, mf.as_deref(), &mut row);
                out[s * self.na() + a] = row.iter().zip(v).map(|(p, v)| p * v).sum();
            }
        }
        out
    }

    /// Differential value function and average reward of `π` under mean
    /// field `u`, given the stationary state distribution `mu`.
    ///
    /// Solves the value-level equations `μ(s)(r_π(s) - J + (P V)(s) - V(s)) = κ mean(V)`.
    fn value_solve(
        &self,
        pi: &DMatrix<f64>,
        p: &DMatrix<f64>,
        mu: &DVector<f64>,
    ) -> Result<(DVector<f64>, f64)> {
        let ns = self.ns();
        let r_pi = DVector::from_fn(ns, |s, _| {
            (0..self.na()).map(|a| pi[(s, a)] * self.reward[s * self.na() + a]).sum::<f64>()
        });
        let j = mu.dot(&r_pi);
        let kappa = self.spec.value_anchor / ns as f64;
        let mut m = DMatrix::from_element(ns, ns, kappa);
        for s in 0..ns {
            for s2 in 0..ns {
                let id = if s == s2 { 1.0 } else { 0.0 };
                m[(s, s2)] += mu[s] * (id - p[(s, s2)]);
            }
        }
        let rhs = DVector::from_fn(ns, |s, _| mu[s] * (r_pi[s] - j));
        let v = m
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Degenerate("value-function system is singular".into()))?;
        Ok((v, j))
    }

    /// Stationary state distribution of `P^{π,u}`.
    fn state_stationary(&self, pi: &DMatrix<f64>, u: &[f64]) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let p = self.state_matrix(pi, u);
        let mu = samplers::stationary_of_matrix(&p)?;
        Ok((p, mu))
    }

    /// The mean field induced by `π`: the fixed point `u = v^{π,u}`.
    pub fn induced_meanfield(&self, pi: &DMatrix<f64>) -> Result<DVector<f64>> {
        let ns = self.ns();
        let mut u = DVector::from_element(ns, 1.0 / ns as f64);
        if self.spec.meanfield_coupling == 0.0 {
            return Ok(self.state_stationary(pi, u.as_slice())?.1);
        }
        let mut last = f64::INFINITY;
        for _ in 0..MEANFIELD_MAX_ITER {
            let (_, next) = self.state_stationary(pi, u.as_slice())?;
            last = (&next - &u).norm();
            u = next;
            if last <= 1e-14 {
                return Ok(u);
            }
        }
        Err(Error::NonConvergence {
            iterations: MEANFIELD_MAX_ITER,
            residuals: vec![last],
        })
    }

    fn policy(&self, theta: &ParameterStack) -> DMatrix<f64> {
        softmax_policy(theta.block(0), self.na()).expect("logits validated by the stack")
    }
}

impl Operator for MfgSystem {
    fn dims(&self) -> &[usize] {
        &self.dims
    }

    fn sample_space_size(&self) -> usize {
        self.ns() * self.na() * self.ns()
    }

    fn eval_level_into(&self, level: usize, theta: &ParameterStack, state: usize, out: &mut [f64]) {
        let (s, a, s2) = self.decode_sample(state);
        let ns = self.ns();
        let na = self.na();
        let vj = theta.block(2);
        let (v, jhat) = (&vj[..ns], vj[ns]);
        let r = self.reward[s * na + a];
        let td = r - jhat + v[s2] - v[s];
        match level {
            0 => {
                out.fill(0.0);
                let row = &mut out[s * na..(s + 1) * na];
                softmax_row(&theta.block(0)[s * na..(s + 1) * na], row);
                for (b, o) in row.iter_mut().enumerate() {
                    let ind = if b == a { 1.0 } else { 0.0 };
                    *o = -td * (ind - *o);
                }
            }
            1 => {
                out.copy_from_slice(theta.block(1));
                out[s] -= 1.0;
            }
            _ => {
                let anchor = self.spec.value_anchor * v.iter().sum::<f64>() / ns as f64;
                out[..ns].fill(anchor);
                out[s] -= td;
                out[ns] = jhat - r;
            }
        }
    }

    fn draw_next(&self, theta: &ParameterStack, state: usize, rng: &mut SampleRng) -> Result<usize> {
        if state >= self.sample_space_size() {
            return Err(Error::StateOutOfRange {
                state,
                size: self.sample_space_size(),
            });
        }
        let (_, _, s) = self.decode_sample(state);
        let na = self.na();
        let mut pi_row = vec![0.0; na];
        softmax_row(&theta.block(0)[s * na..(s + 1) * na], &mut pi_row);
        let a = samplers::inverse_cdf(&pi_row, rng.random::<f64>());
        let mf = self.kernel_meanfield(theta.block(1));
        let mut row = vec![0.0; self.ns()];
        self.transition_row(s, a, mf.as_deref(), &mut row);
        let s2 = samplers::inverse_cdf(&row, rng.random::<f64>());
        Ok(self.sample_index(s, a, s2))
    }

    fn stationary(&self, theta: &ParameterStack) -> Result<DVector<f64>> {
        let pi = self.policy(theta);
        let (_, mu) = self.state_stationary(&pi, theta.block(1))?;
        let mf = self.kernel_meanfield(theta.block(1));
        let ns = self.ns();
        let mut out = DVector::zeros(self.sample_space_size());
        let mut row = vec![0.0; ns];
        for s in 0..ns {
            for a in 0..self.na() {
                self.transition_row(s, a, mf.as_deref(), &mut row);
                let w = mu[s] * pi[(s, a)];
                for (s2, p) in row.iter().enumerate() {
                    out[self.sample_index(s, a, s2)] = w * p;
                }
            }
        }
        Ok(out)
    }

    fn mean_operator(&self, theta: &ParameterStack) -> Result<ParameterStack> {
        theta.ensure_shape(&self.dims)?;
        let ns = self.ns();
        let na = self.na();
        let pi = self.policy(theta);
        let u = theta.block(1);
        let (_, mu) = self.state_stationary(&pi, u)?;
        let vj = theta.block(2);
        let (v, jhat) = (&vj[..ns], vj[ns]);
        let next_v = self.expected_next_value(u, v);
        let mut out = ParameterStack::zeros(&self.dims)?;

        let mut value_mean = vec![0.0; ns];
        let mut reward_mean = 0.0;
        {
            let g = out.block_mut(0);
            for s in 0..ns {
                let q: Vec<f64> = (0..na)
                    .map(|a| self.reward[s * na + a] - jhat + next_v[s * na + a] - v[s])
                    .collect();
                let q_bar: f64 = (0..na).map(|a| pi[(s, a)] * q[a]).sum();
                for a in 0..na {
                    g[s * na + a] = -mu[s] * pi[(s, a)] * (q[a] - q_bar);
                    reward_mean += mu[s] * pi[(s, a)] * self.reward[s * na + a];
                }
                value_mean[s] = q_bar;
            }
        }
        for (o, (uu, m)) in out.block_mut(1).iter_mut().zip(u.iter().zip(mu.iter())) {
            *o = uu - m;
        }
        let anchor = self.spec.value_anchor * v.iter().sum::<f64>() / ns as f64;
        let lvl = out.block_mut(2);
        for s in 0..ns {
            lvl[s] = anchor - mu[s] * value_mean[s];
        }
        lvl[ns] = jhat - reward_mean;
        out.check_finite("MFG mean operator")?;
        Ok(out)
    }

    fn project(&self, theta: &mut ParameterStack) {
        project_simplex(theta.block_mut(1));
    }

    fn exact_targets(&self, prefix: &[DVector<f64>]) -> Option<Result<Vec<DVector<f64>>>> {
        let targets = || -> Result<Vec<DVector<f64>>> {
            let ns = self.ns();
            match prefix.len() {
                0 => Err(Error::Unsupported(
                    "the policy level has no unique target (softmax logits are shift invariant)".into(),
                )),
                1 | 2 => {
                    let pi = softmax_policy(prefix[0].as_slice(), self.na())?;
                    let mut out = Vec::new();
                    let u = if prefix.len() == 1 {
                        let u = self.induced_meanfield(&pi)?;
                        out.push(u.clone());
                        u
                    } else {
                        prefix[1].clone()
                    };
                    let (p, mu) = self.state_stationary(&pi, u.as_slice())?;
                    let (v, j) = self.value_solve(&pi, &p, &mu)?;
                    let mut vj = DVector::zeros(ns + 1);
                    vj.rows_mut(0, ns).copy_from(&v);
                    vj[ns] = j;
                    out.push(vj);
                    Ok(out)
                }
                _ => Ok(Vec::new()),
            }
        };
        Some(targets())
    }

    fn metadata(&self) -> &Metadata {
        &self.metadata
    }
}

/// Policy-gradient norm and mean-field gap of the iterate `(θ, u)`.
///
/// The gradient is the exact `∇_θ J(π_θ, u)`, built from the stationary
/// distribution `v^{π,u}` and the exact differential value function; the gap
/// is `‖u - v^{π,u}‖`.
pub fn mfg_metrics(system: &MfgSystem, logits: &[f64], u: &[f64]) -> Result<(f64, f64)> {
    let ns = system.ns();
    let na = system.na();
    if logits.len() != ns * na || u.len() != ns {
        return Err(Error::ShapeMismatch {
            expected: vec![ns * na, ns],
            actual: vec![logits.len(), u.len()],
        });
    }
    let pi = softmax_policy(logits, na)?;
    let (p, v_dist) = system.state_stationary(&pi, u)?;
    let (value, j) = system.value_solve(&pi, &p, &v_dist)?;
    let next_v = system.expected_next_value(u, value.as_slice());
    let mut grad_sq = 0.0;
    for s in 0..ns {
        let q: Vec<f64> = (0..na)
            .map(|a| system.reward[s * na + a] - j + next_v[s * na + a])
            .collect();
        let q_bar: f64 = (0..na).map(|a| pi[(s, a)] * q[a]).sum();
        for a in 0..na {
            let g = v_dist[s] * pi[(s, a)] * (q[a] - q_bar);
            grad_sq += g * g;
        }
    }
    let gap = u
        .iter()
        .zip(v_dist.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok((grad_sq.sqrt(), gap))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{evaluate_mean_operator, evaluate_operator};

    fn stack(sys: &MfgSystem, logits: Vec<f64>, u: Vec<f64>, vj: Vec<f64>) -> ParameterStack {
        let st = ParameterStack::from_blocks(vec![logits, u, vj]).unwrap();
        st.ensure_shape(sys.dims()).unwrap();
        st
    }

    #[test]
    fn softmax_examples() {
        let pi = softmax_policy(&[0.0; 6], 3).unwrap();
        assert!(pi.iter().all(|p| (*p - 1.0 / 3.0).abs() < 1e-15));
        let pi = softmax_policy(&[1f64.ln(), 3f64.ln()], 2).unwrap();
        assert!((pi[(0, 0)] - 0.25).abs() < 1e-15 && (pi[(0, 1)] - 0.75).abs() < 1e-15);
        let shifted = softmax_policy(&[1f64.ln() + 5.0, 3f64.ln() + 5.0], 2).unwrap();
        assert!((shifted - pi).norm() < 1e-15);
    }

    #[test]
    fn simplex_projection() {
        let mut v = vec![0.2, 0.3, 0.5];
        project_simplex(&mut v);
        assert_eq!(v, vec![0.2, 0.3, 0.5]);
        let mut v = vec![2.0, 0.0];
        project_simplex(&mut v);
        assert_eq!(v, vec![1.0, 0.0]);
        let mut v = vec![0.5, 0.5, 0.5];
        project_simplex(&mut v);
        assert!(v.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn generator_examples() {
        let one = make_random_mfg(1, 3, 9, 0.05).unwrap();
        assert!(one.transition[0].iter().all(|r| r == &vec![1.0]));
        let full = make_random_mfg(4, 2, 1, 1.0).unwrap();
        for row in full.transition.iter().flatten() {
            assert!(row.iter().all(|p| (p - 0.25).abs() < 1e-15));
        }
        let a = make_random_mfg(5, 2, 3, 0.05).unwrap();
        assert_eq!(a, make_random_mfg(5, 2, 3, 0.05).unwrap());
        assert_ne!(a, make_random_mfg(5, 2, 4, 0.05).unwrap());
    }

    #[test]
    fn single_state_value_level() {
        let spec = make_random_mfg(1, 1, 0, 0.05).unwrap();
        let sys = mfg_operator_system(&spec).unwrap();
        let r = spec.reward[0][0];
        let th = stack(&sys, vec![0.0], vec![1.0], vec![0.0, 0.3]);
        let f3 = evaluate_operator(&sys, 2, &th, 0).unwrap();
        // V(s') = V(s): the TD error is r - Ĵ, entered with a minus sign.
        assert!((f3.values[0] + (r - 0.3)).abs() < 1e-15);
        assert!((f3.values[1] - (0.3 - r)).abs() < 1e-15);
        let f2 = evaluate_mean_operator(&sys, 1, &th).unwrap();
        assert_eq!(f2.values[0], 0.0);
        let (_, gap) = mfg_metrics(&sys, &[0.0], &[1.0]).unwrap();
        assert_eq!(gap, 0.0);
    }

    #[test]
    fn constant_reward_has_zero_gradient() {
        let mut spec = make_random_mfg(4, 3, 2, 0.1).unwrap();
        for row in &mut spec.reward {
            row.fill(0.7);
        }
        let sys = mfg_operator_system(&spec).unwrap();
        let logits: Vec<f64> = (0..12).map(|k| (k as f64 * 0.37).sin()).collect();
        let (g, _) = mfg_metrics(&sys, &logits, &[0.25; 4]).unwrap();
        assert!(g < 1e-12, "grad {g}");
        let targets = sys
            .exact_targets(&[DVector::from_vec(logits.clone())])
            .unwrap()
            .unwrap();
        let vj = &targets[1];
        assert!((vj[4] - 0.7).abs() < 1e-12);
        assert!(vj.rows(0, 4).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn mean_operator_matches_sample_sum() {
        let spec = make_random_mfg(3, 2, 11, 0.05).unwrap();
        let sys = mfg_operator_system(&spec).unwrap();
        let th = stack(
            &sys,
            vec![0.1, -0.4, 0.3, 0.0, 1.0, 0.2],
            vec![0.2, 0.5, 0.3],
            vec![0.4, -0.1, 0.2, 0.6],
        );
        let closed = sys.mean_operator(&th).unwrap();
        let mu = sys.stationary(&th).unwrap();
        let mut sum = vec![0.0; th.total_dim()];
        let mut buf = vec![0.0; th.total_dim()];
        for (x, w) in mu.iter().enumerate() {
            sys.eval_into(&th, x, &mut buf);
            for (s, b) in sum.iter_mut().zip(&buf) {
                *s += w * b;
            }
        }
        for (a, b) in closed.as_slice().iter().zip(&sum) {
            assert!((a - b).abs() < 1e-13, "{a} vs {b}");
        }
    }

    #[test]
    fn targets_zero_the_lower_levels() {
        let mut spec = make_random_mfg(5, 3, 4, 0.05).unwrap();
        spec.meanfield_coupling = 0.3;
        let sys = mfg_operator_system(&spec).unwrap();
        let logits: Vec<f64> = (0..15).map(|k| (k as f64).cos()).collect();
        let t = sys
            .exact_targets(&[DVector::from_vec(logits.clone())])
            .unwrap()
            .unwrap();
        let th = stack(&sys, logits, t[0].as_slice().to_vec(), t[1].as_slice().to_vec());
        let mean = sys.mean_operator(&th).unwrap();
        assert!(mean.block_vector(1).norm() < 1e-10);
        assert!(mean.block_vector(2).norm() < 1e-10);
    }

    #[test]
    fn stationary_over_transitions_is_invariant() {
        let spec = make_random_mfg(3, 2, 5, 0.05).unwrap();
        let sys = mfg_operator_system(&spec).unwrap();
        let th = stack(
            &sys,
            vec![0.5, -0.5, 0.0, 0.2, 1.0, -1.0],
            vec![1.0 / 3.0; 3],
            vec![0.0; 4],
        );
        let mu = sys.stationary(&th).unwrap();
        assert!((mu.sum() - 1.0).abs() < 1e-12);
        // One step of the transition chain maps μ to itself.
        let pi = softmax_policy(th.block(0), 2).unwrap();
        let n = sys.sample_space_size();
        let mut next = vec![0.0; n];
        for x in 0..n {
            let (_, _, s) = sys.decode_sample(x);
            for a in 0..2 {
                for s2 in 0..3 {
                    next[sys.sample_index(s, a, s2)] +=
                        mu[x] * pi[(s, a)] * spec.transition[s][a][s2];
                }
            }
        }
        for (a, b) in next.iter().zip(mu.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
