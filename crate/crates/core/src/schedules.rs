//! Step-size schedules.
//!
//! The accelerated solver uses `λ_t = c_λ / (t + h + 1)` and
//! `α_{i,t} = c_i / (t + h + 1)`. The baseline uses polynomial steps
//! `α_{i,t} = c_i / (t + h + 1)^{a_i}` with `a_1 ≥ a_2 ≥ ... ≥ a_N`.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::samplers::ErgodicityCertificate;

/// Which solver a schedule drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Amsa,
    Msa,
}

impl SolverKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverKind::Amsa => "amsa",
            SolverKind::Msa => "msa",
        }
    }
}

impl std::fmt::Display for SolverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "amsa" => Ok(SolverKind::Amsa),
            "msa" => Ok(SolverKind::Msa),
            other => Err(Error::Usage(format!("unknown solver {other:?}"))),
        }
    }
}

/// Step sizes `λ_t` and `α_{i,t}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleJson", into = "ScheduleJson")]
pub struct StepSchedule {
    kind: SolverKind,
    h: f64,
    c_lambda: f64,
    c: Vec<f64>,
    exponents: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ScheduleJson {
    kind: SolverKind,
    n_levels: usize,
    h: f64,
    #[serde(default)]
    c_lambda: f64,
    c: Vec<f64>,
    #[serde(default)]
    exponents: Vec<f64>,
}

impl TryFrom<ScheduleJson> for StepSchedule {
    type Error = Error;

    fn try_from(j: ScheduleJson) -> Result<Self> {
        if j.c.len() != j.n_levels {
            return Err(Error::Config(format!(
                "schedule lists {} constants for {} levels",
                j.c.len(),
                j.n_levels
            )));
        }
        match j.kind {
            SolverKind::Amsa => {
                if !j.exponents.is_empty() && j.exponents.iter().any(|a| *a != 1.0) {
                    return Err(Error::Config("amsa schedules have unit exponents".into()));
                }
                StepSchedule::amsa(j.h, j.c_lambda, j.c)
            }
            SolverKind::Msa => StepSchedule::msa(j.h, j.c, j.exponents),
        }
    }
}

impl From<StepSchedule> for ScheduleJson {
    fn from(s: StepSchedule) -> Self {
        ScheduleJson {
            kind: s.kind,
            n_levels: s.c.len(),
            h: s.h,
            c_lambda: s.c_lambda,
            c: s.c,
            exponents: s.exponents,
        }
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
    }
}

impl StepSchedule {
    /// `λ_t = c_λ/(t+h+1)`, `α_{i,t} = c_i/(t+h+1)`.
    pub fn amsa(h: f64, c_lambda: f64, c: Vec<f64>) -> Result<Self> {
        if !(h >= 0.0 && h.is_finite()) {
            return Err(Error::Config(format!("h must be non-negative, got {h}")));
        }
        check_positive("c_lambda", c_lambda)?;
        if c.is_empty() {
            return Err(Error::Config("a schedule needs at least one level".into()));
        }
        for (i, ci) in c.iter().enumerate() {
            check_positive(&format!("c[{i}]"), *ci)?;
        }
        let n = c.len();
        Ok(Self {
            kind: SolverKind::Amsa,
            h,
            c_lambda,
            c,
            exponents: vec![1.0; n],
        })
    }

    /// `α_{i,t} = c_i/(t+h+1)^{a_i}` with non-increasing exponents in `(0, 1]`.
    pub fn msa(h: f64, c: Vec<f64>, exponents: Vec<f64>) -> Result<Self> {
        if !(h >= 0.0 && h.is_finite()) {
            return Err(Error::Config(format!("h must be non-negative, got {h}")));
        }
        if c.is_empty() || c.len() != exponents.len() {
            return Err(Error::Config(format!(
                "{} constants but {} exponents",
                c.len(),
                exponents.len()
            )));
        }
        for (i, ci) in c.iter().enumerate() {
            check_positive(&format!("c[{i}]"), *ci)?;
        }
        if let Some(a) = exponents.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
            return Err(Error::Config(format!("exponent {a} outside (0, 1]")));
        }
        if exponents.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Config(format!(
                "exponents {exponents:?} must be non-increasing across levels"
            )));
        }
        Ok(Self {
            kind: SolverKind::Msa,
            h,
            c_lambda: 0.0,
            c,
            exponents,
        })
    }

    /// An accelerated schedule with `c_1 = 32/δ`, `c_{i+1} = level_ratio · c_i`
    /// and `c_λ = lambda_ratio · c_N`.
    ///
    /// This relaxes every other constant of the theoretical condition block,
    /// which would otherwise force steps too small to observe any decay at
    /// practical horizons.
    pub fn practical_amsa(n: usize, delta: f64, h: f64, level_ratio: f64, lambda_ratio: f64) -> Result<Self> {
        check_positive("delta", delta)?;
        check_positive("level_ratio", level_ratio)?;
        if n == 0 {
            return Err(Error::Domain("N must be at least 1".into()));
        }
        let c: Vec<f64> = (0..n).map(|i| 32.0 / delta * level_ratio.powi(i as i32)).collect();
        let c_lambda = lambda_ratio * c[n - 1];
        Self::amsa(h, c_lambda, c)
    }

    /// A baseline schedule with `c_1 = 32/δ`, the given constants for the
    /// remaining levels and the rate-optimal exponents.
    pub fn practical_msa(delta: f64, h: f64, lower: &[f64]) -> Result<Self> {
        check_positive("delta", delta)?;
        let n = lower.len() + 1;
        let mut c = vec![32.0 / delta];
        c.extend_from_slice(lower);
        let exponents = optimal_msa_exponents(n)?
            .into_iter()
            .map(|r| ratio_to_f64(r))
            .collect();
        Self::msa(h, c, exponents)
    }

    pub fn kind(&self) -> SolverKind {
        self.kind
    }

    pub fn n_levels(&self) -> usize {
        self.c.len()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn c_lambda(&self) -> f64 {
        self.c_lambda
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn exponents(&self) -> &[f64] {
        &self.exponents
    }

    /// `λ_t` (zero for baseline schedules).
    pub fn lambda(&self, t: u64) -> f64 {
        self.c_lambda / (t as f64 + self.h + 1.0)
    }

    /// `α_{i,t}`.
    pub fn alpha(&self, level: usize, t: u64) -> f64 {
        let base = t as f64 + self.h + 1.0;
        match self.kind {
            SolverKind::Amsa => self.c[level] / base,
            SolverKind::Msa => self.c[level] / base.powf(self.exponents[level]),
        }
    }

    /// `α_{i,t}` for every level, written into `out`.
    pub fn alphas_into(&self, t: u64, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.alpha(i, t);
        }
    }

    pub fn alphas(&self, t: u64) -> Vec<f64> {
        (0..self.n_levels()).map(|i| self.alpha(i, t)).collect()
    }
}

/// `(λ_t, [α_{1,t}, ..., α_{N,t}])` of an accelerated schedule.
pub fn amsa_stepsizes(schedule: &StepSchedule, t: u64) -> Result<(f64, Vec<f64>)> {
    if schedule.kind != SolverKind::Amsa {
        return Err(Error::Usage("amsa_stepsizes needs an amsa schedule".into()));
    }
    Ok((schedule.lambda(t), schedule.alphas(t)))
}

/// Constants entering the step-size conditions.
pub struct ConditionConstants<'a> {
    pub delta: f64,
    pub lipschitz: f64,
    /// The sample-bound constant `D`; no closed form is known, 1 is the
    /// conventional default.
    pub d: f64,
    /// Mixing time `τ_t` used at iteration `t`.
    pub tau: &'a dyn Fn(u64) -> u64,
}

/// One row of a [`ConditionReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub name: String,
    pub worst_t: u64,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
    /// First checked `t` from which the row holds everywhere on the grid.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_pass_t: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub rows: Vec<ConditionRow>,
    pub pass: bool,
    pub caveat: String,
}

impl ConditionReport {
    pub fn row(&self, name: &str) -> Option<&ConditionRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ConditionRow> {
        self.rows.iter().filter(|r| !r.pass)
    }
}

/// `t = 0` plus a log-spaced grid up to `horizon`.
pub(crate) fn log_grid(horizon: u64, per_decade: u32) -> Vec<u64> {
    let mut out = vec![0u64];
    let top = (horizon.max(1) as f64).log10();
    let steps = (top * per_decade as f64).ceil() as u64;
    for k in 0..=steps {
        let t = 10f64.powf(k as f64 / per_decade as f64).round() as u64;
        let t = t.min(horizon);
        if *out.last().unwrap() != t {
            out.push(t);
        }
    }
    out
}

/// Evaluates every inequality of the accelerated step-size condition block.
///
/// Rows depending on `t` are checked at `t = 0` and on a log-spaced grid up to
/// `horizon`; the worst ratio `lhs/rhs` is reported. Ratio rows of the
/// `c/(t+h+1)` form do not depend on `t` and are evaluated once.
pub fn check_amsa_conditions(
    schedule: &StepSchedule,
    k: &ConditionConstants<'_>,
    horizon: u64,
) -> Result<ConditionReport> {
    if schedule.kind != SolverKind::Amsa {
        return Err(Error::Usage("check_amsa_conditions needs an amsa schedule".into()));
    }
    if !(k.delta > 0.0 && k.delta <= 1.0) {
        return Err(Error::Domain(format!("delta must lie in (0, 1], got {}", k.delta)));
    }
    if !(k.lipschitz > 0.0) || !(k.d > 0.0) {
        return Err(Error::Domain("L and D must be positive".into()));
    }
    if horizon < 1 {
        return Err(Error::Domain("horizon must be at least 1".into()));
    }
    let (delta, l, d) = (k.delta, k.lipschitz, k.d);
    let n = schedule.n_levels() as f64;
    let grid = log_grid(horizon, 20);
    let mut rows = Vec::new();

    let mut over_grid = |name: String, f: &dyn Fn(u64) -> (f64, f64)| {
        let mut worst = (0u64, f64::NEG_INFINITY, 0.0, 0.0);
        let mut first_pass = None;
        for &t in &grid {
            let (lhs, rhs) = f(t);
            let ratio = lhs / rhs;
            if ratio > worst.1 {
                worst = (t, ratio, lhs, rhs);
            }
            if lhs <= rhs {
                first_pass.get_or_insert(t);
            } else {
                first_pass = None;
            }
        }
        rows.push(ConditionRow {
            name,
            worst_t: worst.0,
            lhs: worst.2,
            rhs: worst.3,
            pass: worst.2 <= worst.3,
            first_pass_t: first_pass,
        });
    };

    let c1_target = 32.0 / delta;
    let c1 = schedule.c[0];
    let c1_ok = ((c1 - c1_target) / c1_target).abs() <= 1e-12;
    over_grid("c_1 = 32/delta".into(), &|_| {
        if c1_ok {
            (c1, c1)
        } else {
            ((c1 - c1_target).abs() + c1_target, c1_target)
        }
    });
    over_grid("lambda <= 1/4".into(), &|t| (schedule.lambda(t), 0.25));
    over_grid("tau^2 lambda_{t-tau} <= 1/(8 D N^3)".into(), &|t| {
        let tau = (k.tau)(t);
        let lag = t.saturating_sub(tau);
        ((tau as f64).powi(2) * schedule.lambda(lag), 1.0 / (8.0 * d * n.powi(3)))
    });
    let alpha_cap = (delta * delta / (80.0 * n.powi(8) * l.powi(6)))
        .min(delta / (40.0 * n.powi(5) * l.powi(6)))
        .min(2.0 / (5.0 * n * l * l))
        .min(1.0 / delta);
    let ratio_cap = (1.0 / (8.0 * (d * n.powi(3) + 3.0 / delta + l)))
        .min(delta / (32.0 * d * n.powi(3)))
        .min(delta / (32.0 * (9.0 * n.powi(4) * l.powi(6) / delta + 8.0 * n.powi(3) * l.powi(3))))
        .min(16.0 / delta);
    let level_cap = delta / 16.0 / (9.0 * n.powi(3) * l.powi(3) / 2.0 + 4.0 * n.powi(6) * l.powi(6) / delta);
    let square_cap = (delta.powf(1.5) / (64.0 * n.powi(7))).min(8.0 / (5.0 * n.powi(3) * l.powi(3)));
    for i in 0..schedule.n_levels() {
        let lvl = i + 1;
        over_grid(format!("alpha_{lvl} cap"), &|t| (schedule.alpha(i, t), alpha_cap));
        over_grid(format!("alpha_{lvl}/lambda cap"), &|_| {
            (schedule.c[i] / schedule.c_lambda, ratio_cap)
        });
        if i > 0 {
            over_grid(format!("alpha_{}/alpha_{lvl} cap", lvl - 1), &|_| {
                (schedule.c[i - 1] / schedule.c[i], level_cap)
            });
        }
        over_grid(format!("alpha_{lvl}^2/alpha_1 cap"), &|t| {
            (schedule.alpha(i, t).powi(2) / schedule.alpha(0, t), square_cap)
        });
    }
    let pass = rows.iter().all(|r| r.pass);
    Ok(ConditionReport {
        rows,
        pass,
        caveat: format!(
            "D = {d} was supplied by the caller; the conditions involve an unspecified \
             constant D, so a pass certifies compliance only for that value"
        ),
    })
}

/// The mixing-time function `τ_t = ceil(c_mixing · ln(m_const / λ_t))`.
pub fn tau_from_certificate<'a>(
    cert: &'a ErgodicityCertificate,
    schedule: &'a StepSchedule,
) -> impl Fn(u64) -> u64 + 'a {
    move |t| cert.tau(schedule.lambda(t).min(1.0 - 1e-12)) as u64
}

/// Constants of the smallest schedule satisfying the condition block for the
/// given `δ, L, D, N` at every `t ≥ 0`, with `τ_t` supplied by `tau_at_lambda`.
///
/// `c_1 = 32/δ`; every `c_i` is as small as the level-ratio and square
/// conditions allow; `c_λ` is the smallest ratio-compliant value; `h` is
/// increased until every `t`-dependent row holds.
pub fn compliant_amsa(
    n: usize,
    delta: f64,
    lipschitz: f64,
    d: f64,
    tau_at_lambda: &dyn Fn(f64) -> u64,
) -> Result<StepSchedule> {
    if !(delta > 0.0 && delta <= 1.0) || n == 0 {
        return Err(Error::Domain("need 0 < delta <= 1 and N >= 1".into()));
    }
    let nf = n as f64;
    let l = lipschitz;
    let level_cap = delta / 16.0 / (9.0 * nf.powi(3) * l.powi(3) / 2.0 + 4.0 * nf.powi(6) * l.powi(6) / delta);
    let ratio_cap = (1.0 / (8.0 * (d * nf.powi(3) + 3.0 / delta + l)))
        .min(delta / (32.0 * d * nf.powi(3)))
        .min(delta / (32.0 * (9.0 * nf.powi(4) * l.powi(6) / delta + 8.0 * nf.powi(3) * l.powi(3))))
        .min(16.0 / delta);
    let mut c = vec![32.0 / delta];
    for i in 1..n {
        // A hair above the bound so rounding cannot flip the inequality.
        c.push(c[i - 1] / level_cap * (1.0 + 1e-9));
    }
    let c_lambda = c[n - 1] / ratio_cap * (1.0 + 1e-9);
    let mut h = c_lambda * 4.0;
    for _ in 0..200 {
        let s = StepSchedule::amsa(h, c_lambda, c.clone())?;
        let tau = |t: u64| tau_at_lambda(s.lambda(t).min(1.0 - 1e-12));
        let k = ConditionConstants {
            delta,
            lipschitz,
            d,
            tau: &tau,
        };
        if check_amsa_conditions(&s, &k, 1_000_000_000)?.pass {
            return Ok(s);
        }
        h *= 2.0;
    }
    Err(Error::Domain("no compliant h found".into()))
}

fn check_levels(n: usize) -> Result<()> {
    if n < 1 {
        return Err(Error::Domain("N must be at least 1".into()));
    }
    Ok(())
}

pub fn ratio_to_f64(r: Ratio<i64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Rate-optimal baseline exponents `a_i = (N + 2 - i)/(N + 1)`, `i = 1..N`.
pub fn optimal_msa_exponents(n: usize) -> Result<Vec<Ratio<i64>>> {
    check_levels(n)?;
    let n = n as i64;
    Ok((1..=n).map(|i| Ratio::new(n + 2 - i, n + 1)).collect())
}

/// Decay exponent `2/(N+1)` of the baseline's Lyapunov function.
pub fn predict_msa_rate(n: usize) -> Result<Ratio<i64>> {
    check_levels(n)?;
    Ok(Ratio::new(2, n as i64 + 1))
}

/// Decay exponent of the accelerated solver, 1 for every `N`.
pub fn predict_amsa_rate(n: usize) -> Result<Ratio<i64>> {
    check_levels(n)?;
    Ok(Ratio::from_integer(1))
}

/// Weights `(v_2, v_3)` of the three-level baseline Lyapunov function at `t`.
pub fn msa_lyapunov_weights(schedule: &StepSchedule, t: u64, delta: f64, l: f64) -> Result<(f64, f64)> {
    if schedule.kind != SolverKind::Msa {
        return Err(Error::Usage("msa_lyapunov_weights needs an msa schedule".into()));
    }
    if schedule.n_levels() != 3 {
        return Err(Error::Unsupported(format!(
            "weights are defined for three levels, schedule has {}",
            schedule.n_levels()
        )));
    }
    let a = schedule.alphas(t);
    Ok(lyapunov_weights_from(a[0], a[1], a[2], delta, l))
}

pub(crate) fn lyapunov_weights_from(a1: f64, a2: f64, a3: f64, delta: f64, l: f64) -> (f64, f64) {
    let v2 = 1728.0 * l.powi(6) * a1 / (delta * delta * a2);
    let v3 = 8.0 * a1 / (delta * a3) * (216.0 * l.powi(6) / delta + 373_248.0 * l.powi(12) / delta.powi(3));
    (v2, v3)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_mixing(_: u64) -> u64 {
        1
    }

    #[test]
    fn amsa_examples() {
        let s = StepSchedule::amsa(0.0, 1.0, vec![1.0]).unwrap();
        assert_eq!(amsa_stepsizes(&s, 0).unwrap().0, 1.0);
        let s = StepSchedule::amsa(127.0, 64.0, vec![32.0]).unwrap();
        assert_eq!(amsa_stepsizes(&s, 0).unwrap().1, vec![0.25]);
        let (l0, a0) = amsa_stepsizes(&s, 5).unwrap();
        let (l1, a1) = amsa_stepsizes(&s, 6).unwrap();
        assert!(l1 < l0 && a1[0] < a0[0]);
        let m = StepSchedule::msa(0.0, vec![1.0], vec![1.0]).unwrap();
        assert!(matches!(amsa_stepsizes(&m, 0), Err(Error::Usage(_))));
    }

    #[test]
    fn c1_row() {
        let k = ConditionConstants {
            delta: 1.0,
            lipschitz: 1.0,
            d: 1.0,
            tau: &no_mixing,
        };
        let good = StepSchedule::amsa(1000.0, 100.0, vec![32.0]).unwrap();
        assert!(check_amsa_conditions(&good, &k, 100).unwrap().row("c_1 = 32/delta").unwrap().pass);
        let bad = StepSchedule::amsa(1000.0, 100.0, vec![16.0]).unwrap();
        assert!(!check_amsa_conditions(&bad, &k, 100).unwrap().row("c_1 = 32/delta").unwrap().pass);
    }

    #[test]
    fn lambda_row_fails_at_zero() {
        let k = ConditionConstants {
            delta: 1.0,
            lipschitz: 1.0,
            d: 1.0,
            tau: &no_mixing,
        };
        let s = StepSchedule::amsa(9.0, 3.0, vec![32.0]).unwrap();
        let row = check_amsa_conditions(&s, &k, 100).unwrap().row("lambda <= 1/4").unwrap().clone();
        assert!(!row.pass);
        assert_eq!(row.worst_t, 0);
        assert!((row.lhs - 0.3).abs() < 1e-15);
    }

    #[test]
    fn equal_constants_fail_level_ratio() {
        let k = ConditionConstants {
            delta: 1.0,
            lipschitz: 1.0,
            d: 1.0,
            tau: &no_mixing,
        };
        let s = StepSchedule::amsa(1e6, 100.0, vec![32.0, 32.0]).unwrap();
        let r = check_amsa_conditions(&s, &k, 100).unwrap();
        let row = r.row("alpha_1/alpha_2 cap").unwrap();
        assert_eq!(row.lhs, 1.0);
        assert!(!row.pass && !r.pass);
    }

    #[test]
    fn compliant_schedule_passes() {
        let s = compliant_amsa(2, 0.5, 2.0, 1.0, &|_| 10).unwrap();
        assert_eq!(s.c()[0], 64.0);
        let tau = |_: u64| 10;
        let k = ConditionConstants {
            delta: 0.5,
            lipschitz: 2.0,
            d: 1.0,
            tau: &tau,
        };
        assert!(check_amsa_conditions(&s, &k, 1_000_000).unwrap().pass);
    }

    #[test]
    fn exponent_and_rate_tables() {
        let r = |a, b| Ratio::new(a, b);
        assert_eq!(optimal_msa_exponents(3).unwrap(), vec![r(1, 1), r(3, 4), r(1, 2)]);
        assert_eq!(optimal_msa_exponents(2).unwrap(), vec![r(1, 1), r(2, 3)]);
        assert_eq!(
            optimal_msa_exponents(5).unwrap(),
            vec![r(1, 1), r(5, 6), r(4, 6), r(3, 6), r(2, 6)]
        );
        assert_eq!(predict_msa_rate(2).unwrap(), r(2, 3));
        assert_eq!(predict_msa_rate(3).unwrap(), r(1, 2));
        assert_eq!(predict_msa_rate(4).unwrap(), r(2, 5));
        assert_eq!(predict_amsa_rate(7).unwrap(), r(1, 1));
        assert!(optimal_msa_exponents(0).is_err());
        assert!(predict_msa_rate(0).is_err());
    }

    #[test]
    fn lyapunov_weight_examples() {
        let (v2, _) = lyapunov_weights_from(0.001, 0.01, 0.1, 1.0, 1.0);
        assert!((v2 - 172.8).abs() < 1e-9);
        let (v2, _) = lyapunov_weights_from(0.5, 0.5, 0.5, 1.0, 1.0);
        assert!((v2 - 1728.0).abs() < 1e-9);
        let s = StepSchedule::practical_msa(1.0, 10.0, &[1.0, 1.0]).unwrap();
        let mut prev = msa_lyapunov_weights(&s, 0, 1.0, 1.0).unwrap();
        for t in log_grid(10_000_000, 10).into_iter().skip(1) {
            let w = msa_lyapunov_weights(&s, t, 1.0, 1.0).unwrap();
            assert!(w.0 <= prev.0 && w.1 <= prev.1);
            prev = w;
        }
        let two = StepSchedule::practical_msa(1.0, 10.0, &[1.0]).unwrap();
        assert!(matches!(
            msa_lyapunov_weights(&two, 0, 1.0, 1.0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn schedule_json() {
        let s = StepSchedule::msa(10.0, vec![64.0, 20.0], vec![1.0, 2.0 / 3.0]).unwrap();
        let v = serde_json::to_value(&s).unwrap();
        assert_eq!(v["kind"], "msa");
        assert_eq!(v["n_levels"], 2);
        let back: StepSchedule = serde_json::from_value(v).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<StepSchedule>(
            r#"{"kind":"msa","n_levels":2,"h":1,"c":[1,1],"exponents":[0.5,1.0]}"#
        )
        .is_err());
    }
}
