//! Finite-state Markov noise.
//!
//! Samples are produced by a row-stochastic kernel `P_θ` over `m` states.
//! Because the state space is finite, stationary distributions, total
//! variation distances and mixing times are all computed exactly by dense
//! linear algebra; chains are limited to [`MAX_DENSE_STATES`] states.
//!
//! Two kernel families are supported. A *fixed* kernel ignores `θ`. A
//! *θ-mixture* kernel blends two base kernels,
//!
//! ```text
//! P_θ = (1 - ε c(θ)) P_a + ε c(θ) P_b,    c(θ) = clamp(w · θ + bias, 0, 1),
//! ```
//!
//! which is Lipschitz in `θ` with an explicitly computable constant
//! (see [`FiniteKernel::lipschitz_bound`]).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest chain handled by the dense routines in this module.
pub const MAX_DENSE_STATES: usize = 200;
/// Iteration cap for [`mixing_time`].
pub const MIXING_CAP: usize = 1_000_000;
/// Margin added to the second eigenvalue modulus in [`fit_ergodicity`].
pub const RHO_MARGIN: f64 = 1e-6;

const ROW_SUM_TOL: f64 = 1e-12;
const DIST_SUM_TOL: f64 = 1e-9;

/// Random number generator driving every sample path.
pub type SampleRng = ChaCha8Rng;

/// Deterministic generator from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> SampleRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A `θ`-parameterized transition kernel on `m` states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelJson", into = "KernelJson")]
pub struct FiniteKernel {
    m: usize,
    family: KernelFamily,
}

#[derive(Debug, Clone, PartialEq)]
enum KernelFamily {
    Fixed {
        p: Vec<f64>,
    },
    ThetaMixture {
        p_a: Vec<f64>,
        p_b: Vec<f64>,
        epsilon: f64,
        clamp_weights: Vec<f64>,
        clamp_bias: f64,
    },
}

impl FiniteKernel {
    /// A kernel that does not depend on `θ`. Rows are given in state order.
    pub fn fixed(rows: Vec<Vec<f64>>) -> Result<Self> {
        let (m, p) = flatten_stochastic(&rows, "P")?;
        Ok(Self {
            m,
            family: KernelFamily::Fixed { p },
        })
    }

    /// The mixture `(1 - ε c(θ)) P_a + ε c(θ) P_b`.
    pub fn theta_mixture(
        p_a: Vec<Vec<f64>>,
        p_b: Vec<Vec<f64>>,
        epsilon: f64,
        clamp_weights: Vec<f64>,
        clamp_bias: f64,
    ) -> Result<Self> {
        let (m, p_a) = flatten_stochastic(&p_a, "P_a")?;
        let (mb, p_b) = flatten_stochastic(&p_b, "P_b")?;
        if m != mb {
            return Err(Error::Kernel(format!("P_a has {m} states but P_b has {mb}")));
        }
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::Kernel(format!("epsilon {epsilon} outside [0, 1]")));
        }
        if !clamp_bias.is_finite() || clamp_weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Kernel("non-finite clamp parameters".into()));
        }
        Ok(Self {
            m,
            family: KernelFamily::ThetaMixture {
                p_a,
                p_b,
                epsilon,
                clamp_weights,
                clamp_bias,
            },
        })
    }

    /// Every row equal to `mu`: consecutive samples are independent draws.
    pub fn iid(mu: &[f64]) -> Result<Self> {
        Self::fixed(vec![mu.to_vec(); mu.len()])
    }

    /// Number of states.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn is_theta_independent(&self) -> bool {
        match &self.family {
            KernelFamily::Fixed { .. } => true,
            KernelFamily::ThetaMixture { epsilon, .. } => *epsilon == 0.0,
        }
    }

    /// Length of the flattened `θ` this kernel expects, if it reads `θ` at all.
    pub fn theta_len(&self) -> Option<usize> {
        match &self.family {
            KernelFamily::Fixed { .. } => None,
            KernelFamily::ThetaMixture { clamp_weights, .. } => Some(clamp_weights.len()),
        }
    }

    /// The blend weight `ε c(θ)` (zero for fixed kernels).
    pub fn mixture_weight(&self, theta: &[f64]) -> f64 {
        match &self.family {
            KernelFamily::Fixed { .. } => 0.0,
            KernelFamily::ThetaMixture {
                epsilon,
                clamp_weights,
                clamp_bias,
                ..
            } => {
                let z: f64 = clamp_weights
                    .iter()
                    .zip(theta)
                    .map(|(w, t)| w * t)
                    .sum::<f64>()
                    + clamp_bias;
                epsilon * z.clamp(0.0, 1.0)
            }
        }
    }

    /// Writes row `state` of `P_θ` into `out` (length `m`).
    pub fn row_into(&self, theta: &[f64], state: usize, out: &mut [f64]) {
        let m = self.m;
        match &self.family {
            KernelFamily::Fixed { p } => out.copy_from_slice(&p[state * m..(state + 1) * m]),
            KernelFamily::ThetaMixture { p_a, p_b, .. } => {
                let w = self.mixture_weight(theta);
                let ra = &p_a[state * m..(state + 1) * m];
                let rb = &p_b[state * m..(state + 1) * m];
                for ((o, a), b) in out.iter_mut().zip(ra).zip(rb) {
                    *o = (1.0 - w) * a + w * b;
                }
            }
        }
    }

    /// The full matrix `P_θ`.
    pub fn matrix(&self, theta: &[f64]) -> DMatrix<f64> {
        let m = self.m;
        let mut row = vec![0.0; m];
        let mut out = DMatrix::zeros(m, m);
        for x in 0..m {
            self.row_into(theta, x, &mut row);
            for (y, v) in row.iter().enumerate() {
                out[(x, y)] = *v;
            }
        }
        out
    }

    /// Largest row-wise TV distance between the two base kernels
    /// (zero for fixed kernels).
    pub fn max_row_tv(&self) -> f64 {
        match &self.family {
            KernelFamily::Fixed { .. } => 0.0,
            KernelFamily::ThetaMixture { p_a, p_b, .. } => {
                let m = self.m;
                (0..m)
                    .map(|x| {
                        0.5 * p_a[x * m..(x + 1) * m]
                            .iter()
                            .zip(&p_b[x * m..(x + 1) * m])
                            .map(|(a, b)| (a - b).abs())
                            .sum::<f64>()
                    })
                    .fold(0.0, f64::max)
            }
        }
    }

    /// A constant `L` for which both kernel regularity conditions hold for
    /// every pair `θ, θ'`:
    ///
    /// * `TV(d P_θ, d' P_θ') ≤ TV(d, d') + L ‖θ - θ'‖` for all distributions;
    /// * `TV(μ_θ, μ_θ') ≤ L ‖θ - θ'‖`.
    ///
    /// Both follow from `max_x TV(P_θ(x,·), P_θ'(x,·)) ≤ ε ‖w‖ max-row-TV(P_a, P_b) ‖θ - θ'‖`;
    /// the stationary bound is amplified by `1 / (1 - β)` where `β` bounds the
    /// Dobrushin coefficient of every mixture. Returns infinity when `β = 1`.
    pub fn lipschitz_bound(&self) -> f64 {
        match &self.family {
            KernelFamily::Fixed { .. } => 0.0,
            KernelFamily::ThetaMixture {
                p_a,
                p_b,
                epsilon,
                clamp_weights,
                ..
            } => {
                let per_row = epsilon * crate::stack::norm(clamp_weights) * self.max_row_tv();
                if per_row == 0.0 {
                    return 0.0;
                }
                let beta = dobrushin(p_a, self.m).max(dobrushin(p_b, self.m));
                if beta >= 1.0 {
                    f64::INFINITY
                } else {
                    per_row / (1.0 - beta)
                }
            }
        }
    }
}

/// Dobrushin ergodicity coefficient: the largest TV distance between two rows.
fn dobrushin(p: &[f64], m: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for x in 0..m {
        for y in (x + 1)..m {
            let tv = 0.5
                * (0..m)
                    .map(|k| (p[x * m + k] - p[y * m + k]).abs())
                    .sum::<f64>();
            worst = worst.max(tv);
        }
    }
    worst
}

fn flatten_stochastic(rows: &[Vec<f64>], name: &str) -> Result<(usize, Vec<f64>)> {
    let m = rows.len();
    if m == 0 {
        return Err(Error::Kernel(format!("{name} has no rows")));
    }
    if m > MAX_DENSE_STATES {
        return Err(Error::Kernel(format!(
            "{name} has {m} states; at most {MAX_DENSE_STATES} are supported"
        )));
    }
    let mut flat = Vec::with_capacity(m * m);
    for (x, row) in rows.iter().enumerate() {
        if row.len() != m {
            return Err(Error::Kernel(format!(
                "{name} row {x} has length {} (expected {m})",
                row.len()
            )));
        }
        check_stochastic_row(row).map_err(|e| Error::Kernel(format!("{name} row {x}: {e}")))?;
        flat.extend_from_slice(row);
    }
    Ok((m, flat))
}

pub(crate) fn check_stochastic_row(row: &[f64]) -> std::result::Result<(), String> {
    if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(format!("entry {v} is negative or non-finite"));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > ROW_SUM_TOL {
        return Err(format!("sums to {s}"));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct KernelJson {
    m: usize,
    family: String,
    #[serde(rename = "P", skip_serializing_if = "Option::is_none", default)]
    p: Option<Vec<Vec<f64>>>,
    #[serde(rename = "P_a", skip_serializing_if = "Option::is_none", default)]
    p_a: Option<Vec<Vec<f64>>>,
    #[serde(rename = "P_b", skip_serializing_if = "Option::is_none", default)]
    p_b: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    clamp_weights: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    clamp_bias: Option<f64>,
}

fn unflatten(p: &[f64], m: usize) -> Vec<Vec<f64>> {
    p.chunks(m).map(<[f64]>::to_vec).collect()
}

impl From<FiniteKernel> for KernelJson {
    fn from(k: FiniteKernel) -> Self {
        let m = k.m;
        match k.family {
            KernelFamily::Fixed { p } => KernelJson {
                m,
                family: "fixed".into(),
                p: Some(unflatten(&p, m)),
                p_a: None,
                p_b: None,
                epsilon: None,
                clamp_weights: None,
                clamp_bias: None,
            },
            KernelFamily::ThetaMixture {
                p_a,
                p_b,
                epsilon,
                clamp_weights,
                clamp_bias,
            } => KernelJson {
                m,
                family: "theta-mixture".into(),
                p: None,
                p_a: Some(unflatten(&p_a, m)),
                p_b: Some(unflatten(&p_b, m)),
                epsilon: Some(epsilon),
                clamp_weights: Some(clamp_weights),
                clamp_bias: Some(clamp_bias),
            },
        }
    }
}

impl TryFrom<KernelJson> for FiniteKernel {
    type Error = Error;

    fn try_from(j: KernelJson) -> Result<Self> {
        let kernel = match j.family.as_str() {
            "fixed" => {
                let p = j.p.or(j.p_a).ok_or_else(|| Error::Kernel("missing \"P\"".into()))?;
                FiniteKernel::fixed(p)?
            }
            "theta-mixture" => {
                let missing = |f: &str| Error::Kernel(format!("missing \"{f}\""));
                FiniteKernel::theta_mixture(
                    j.p_a.ok_or_else(|| missing("P_a"))?,
                    j.p_b.ok_or_else(|| missing("P_b"))?,
                    j.epsilon.ok_or_else(|| missing("epsilon"))?,
                    j.clamp_weights.ok_or_else(|| missing("clamp_weights"))?,
                    j.clamp_bias.unwrap_or(0.0),
                )?
            }
            other => return Err(Error::Kernel(format!("unknown kernel family {other:?}"))),
        };
        if kernel.m != j.m {
            return Err(Error::Kernel(format!(
                "declared m = {} but matrices have {} states",
                j.m, kernel.m
            )));
        }
        Ok(kernel)
    }
}

fn check_distribution(u: &[f64], name: &str) -> Result<()> {
    if let Some((i, v)) = u
        .iter()
        .enumerate()
        .find(|(_, v)| !v.is_finite() || **v < 0.0)
    {
        return Err(Error::InvalidDistribution(format!(
            "{name}[{i}] = {v} is negative or non-finite"
        )));
    }
    let s: f64 = u.iter().sum();
    if (s - 1.0).abs() > DIST_SUM_TOL {
        return Err(Error::InvalidDistribution(format!("{name} sums to {s}")));
    }
    Ok(())
}

/// Total variation distance `½ Σ |u1 - u2|` between two distributions.
pub fn tv_distance(u1: &[f64], u2: &[f64]) -> Result<f64> {
    if u1.len() != u2.len() {
        return Err(Error::InvalidDistribution(format!(
            "lengths differ ({} vs {})",
            u1.len(),
            u2.len()
        )));
    }
    check_distribution(u1, "u1")?;
    check_distribution(u2, "u2")?;
    Ok(tv_unchecked(u1, u2))
}

pub(crate) fn tv_unchecked(u1: &[f64], u2: &[f64]) -> f64 {
    let l1: f64 = u1.iter().zip(u2).map(|(a, b)| (a - b).abs()).sum();
    (0.5 * l1).min(1.0)
}

/// Stationary distribution of `P_θ`.
pub fn stationary_distribution(kernel: &FiniteKernel, theta: &[f64]) -> Result<DVector<f64>> {
    stationary_of_matrix(&kernel.matrix(theta))
}

/// Unique stationary distribution of a row-stochastic matrix.
///
/// Solves `μ (P - I) = 0, Σ μ = 1` directly. A reducible chain makes the
/// system singular and yields [`Error::Ergodicity`].
pub fn stationary_of_matrix(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let m = p.nrows();
    if m != p.ncols() || m == 0 {
        return Err(Error::Kernel(format!("matrix is {}x{}", p.nrows(), p.ncols())));
    }
    let mut a = p.transpose() - DMatrix::identity(m, m);
    for j in 0..m {
        a[(m - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(m);
    rhs[m - 1] = 1.0;

    // Reducible chains have a multi-dimensional null space, which leaves the
    // bordered system rank deficient.
    let svd = a.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-12 * smax.max(1.0)) {
        return Err(Error::Ergodicity(format!(
            "stationary distribution is not unique (smallest singular value {smin:e})"
        )));
    }
    let mut mu = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Ergodicity("singular stationarity system".into()))?;
    for v in mu.iter_mut() {
        if *v < 0.0 {
            if *v < -1e-9 {
                return Err(Error::Ergodicity(format!("negative stationary mass {v}")));
            }
            *v = 0.0;
        }
    }
    let s = mu.sum();
    mu /= s;
    let residual = (p.transpose() * &mu - &mu).abs().sum();
    if residual > 1e-10 {
        return Err(Error::Ergodicity(format!("stationarity residual {residual:e}")));
    }
    Ok(mu)
}

/// Worst-start TV distance to stationarity, `sup_x TV(P^t(x,·), μ)`, for
/// `t = 0..=horizon`.
///
/// The deviation `P^t - 1μ` is propagated directly (rows re-projected onto
/// zero sum after every step) so that geometric decay is resolved far below
/// machine epsilon instead of flooring at rounding noise.
pub fn tv_curve(p: &DMatrix<f64>, horizon: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(horizon + 1);
    let mut walker = DeviationWalker::new(p)?;
    out.push(walker.sup_tv());
    for _ in 0..horizon {
        walker.step();
        out.push(walker.sup_tv());
    }
    Ok(out)
}

struct DeviationWalker<'a> {
    p: &'a DMatrix<f64>,
    mu: DVector<f64>,
    dev: DMatrix<f64>,
}

impl<'a> DeviationWalker<'a> {
    fn new(p: &'a DMatrix<f64>) -> Result<Self> {
        let m = p.nrows();
        if m > MAX_DENSE_STATES {
            return Err(Error::Kernel(format!(
                "{m} states exceeds the dense limit {MAX_DENSE_STATES}"
            )));
        }
        let mu = stationary_of_matrix(p)?;
        let mut dev = DMatrix::identity(m, m);
        for x in 0..m {
            for y in 0..m {
                dev[(x, y)] -= mu[y];
            }
        }
        Ok(Self { p, mu, dev })
    }

    fn step(&mut self) {
        self.dev = &self.dev * self.p;
        let m = self.mu.len();
        for x in 0..m {
            let s: f64 = self.dev.row(x).sum();
            for y in 0..m {
                self.dev[(x, y)] -= s * self.mu[y];
            }
        }
    }

    fn sup_tv(&self) -> f64 {
        self.dev
            .row_iter()
            .map(|r| 0.5 * r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// Smallest `t` with `sup_x TV(P_θ^t(x,·), μ_θ) ≤ a`.
pub fn mixing_time(kernel: &FiniteKernel, theta: &[f64], a: f64) -> Result<usize> {
    mixing_time_of_matrix(&kernel.matrix(theta), a)
}

pub fn mixing_time_of_matrix(p: &DMatrix<f64>, a: f64) -> Result<usize> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::Domain(format!("mixing level {a} outside (0, 1)")));
    }
    let mut walker = DeviationWalker::new(p)?;
    let mut tv = walker.sup_tv();
    for t in 0..=MIXING_CAP {
        if tv <= a {
            return Ok(t);
        }
        walker.step();
        tv = walker.sup_tv();
    }
    Err(Error::MixingCap {
        cap: MIXING_CAP,
        last_tv: tv,
    })
}

/// Constants of a geometric ergodicity bound
/// `sup_x TV(P^t(x,·), μ) ≤ m_const · rho^t`, together with the mixing-time
/// constant `c_mixing` such that `τ(a) ≤ ceil(c_mixing · ln(m_const / a))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErgodicityCertificate {
    pub m_const: f64,
    pub rho: f64,
    pub c_mixing: f64,
}

impl ErgodicityCertificate {
    /// Upper bound on the mixing time at level `a`.
    pub fn tau(&self, a: f64) -> usize {
        let v = self.c_mixing * (self.m_const / a).ln();
        if v <= 0.0 {
            0
        } else {
            v.ceil() as usize
        }
    }

    /// The geometric envelope `m_const · rho^t`.
    pub fn envelope(&self, t: usize) -> f64 {
        self.m_const * self.rho.powi(t as i32)
    }
}

/// Levels `a = 2^-1, ..., 2^-20` at which the mixing-time bound is fitted.
pub fn certificate_levels() -> impl Iterator<Item = f64> {
    (1..=20).map(|k| 0.5f64.powi(k))
}

/// Fits an [`ErgodicityCertificate`] to `P_θ` over `t = 0..=horizon`.
pub fn fit_ergodicity(
    kernel: &FiniteKernel,
    theta: &[f64],
    horizon: usize,
) -> Result<ErgodicityCertificate> {
    fit_ergodicity_of_matrix(&kernel.matrix(theta), horizon)
}

pub fn fit_ergodicity_of_matrix(p: &DMatrix<f64>, horizon: usize) -> Result<ErgodicityCertificate> {
    let eig = p.complex_eigenvalues();
    let mut moduli: Vec<f64> = eig.iter().map(|z| z.norm()).collect();
    moduli.sort_by(|a, b| b.total_cmp(a));
    let second = moduli.get(1).copied().unwrap_or(0.0);
    let rho = second + RHO_MARGIN;
    if rho >= 1.0 {
        return Err(Error::NonGeometric { rho });
    }
    let curve = tv_curve(p, horizon)?;
    let mut m_const: f64 = 1.0;
    for (t, tv) in curve.iter().enumerate() {
        let env = rho.powi(t as i32);
        if *tv > 0.0 {
            if env == 0.0 {
                return Err(Error::NonGeometric { rho });
            }
            m_const = m_const.max(tv / env);
        }
    }
    m_const *= 1.0 + 1e-9;

    let mut c_mixing = 1.0 / (1.0 / rho).ln();
    for a in certificate_levels() {
        let tau = mixing_time_of_matrix(p, a)? as f64;
        let scale = (m_const / a).ln();
        c_mixing = c_mixing.max(tau / scale);
    }
    Ok(ErgodicityCertificate {
        m_const,
        rho,
        c_mixing,
    })
}

/// Per-pair outcome of [`validate_kernel_lipschitz`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LipschitzPairResult {
    pub theta_distance: f64,
    /// `L ‖θ - θ'‖ - TV(μ_θ, μ_θ')`; negative means violated.
    pub stationary_margin: f64,
    /// Smallest `TV(d, d') + L ‖θ - θ'‖ - TV(d P_θ, d' P_θ')` over the start set.
    pub transition_margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub l_claim: f64,
    pub pairs: Vec<LipschitzPairResult>,
    pub worst_margin: f64,
    pub all_pass: bool,
}

/// Number of random interior start distributions added to the point masses
/// and the uniform distribution when checking the transition inequality.
const RANDOM_STARTS: usize = 8;

/// Checks both kernel regularity inequalities for every `(θ, θ')` pair.
///
/// The transition inequality is evaluated for all pairs drawn from the start
/// set {point masses, uniform, [`RANDOM_STARTS`] fixed random interior
/// distributions}.
pub fn validate_kernel_lipschitz(
    kernel: &FiniteKernel,
    theta_pairs: &[(Vec<f64>, Vec<f64>)],
    l_claim: f64,
) -> Result<LipschitzReport> {
    let m = kernel.m();
    let mut starts: Vec<DVector<f64>> = (0..m)
        .map(|x| {
            let mut e = DVector::zeros(m);
            e[x] = 1.0;
            e
        })
        .collect();
    starts.push(DVector::from_element(m, 1.0 / m as f64));
    let mut rng = seeded_rng(0x5eed_0f_57a7);
    for _ in 0..RANDOM_STARTS {
        let mut d = DVector::from_fn(m, |_, _| -rng.random::<f64>().max(1e-300).ln());
        let s = d.sum();
        d /= s;
        starts.push(d);
    }

    let mut pairs = Vec::with_capacity(theta_pairs.len());
    for (th, th2) in theta_pairs {
        let dist = th
            .iter()
            .zip(th2)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let p1 = kernel.matrix(th);
        let p2 = kernel.matrix(th2);
        let mu1 = stationary_of_matrix(&p1)?;
        let mu2 = stationary_of_matrix(&p2)?;
        let slack = l_claim * dist;
        let stationary_margin = slack - tv_unchecked(mu1.as_slice(), mu2.as_slice());

        let next1: Vec<DVector<f64>> = starts.iter().map(|d| p1.tr_mul(d)).collect();
        let next2: Vec<DVector<f64>> = starts.iter().map(|d| p2.tr_mul(d)).collect();
        let mut transition_margin = f64::INFINITY;
        for (a, (d, dn)) in starts.iter().zip(&next1).enumerate() {
            for (b, (dh, dhn)) in starts.iter().zip(&next2).enumerate() {
                let before = if a == b {
                    0.0
                } else {
                    tv_unchecked(d.as_slice(), dh.as_slice())
                };
                let after = tv_unchecked(dn.as_slice(), dhn.as_slice());
                transition_margin = transition_margin.min(before + slack - after);
            }
        }
        // Rounding in the matrix products is far below this resolution.
        let pass = stationary_margin >= -1e-12 && transition_margin >= -1e-12;
        pairs.push(LipschitzPairResult {
            theta_distance: dist,
            stationary_margin,
            transition_margin,
            pass,
        });
    }
    let worst_margin = pairs
        .iter()
        .map(|p| p.stationary_margin.min(p.transition_margin))
        .fold(f64::INFINITY, f64::min);
    let all_pass = pairs.iter().all(|p| p.pass);
    Ok(LipschitzReport {
        l_claim,
        pairs,
        worst_margin,
        all_pass,
    })
}

/// Inverse-CDF draw from a probability row using `u ∈ [0, 1)`.
pub fn inverse_cdf(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (j, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    // Only reachable when rounding leaves the cumulative sum below u.
    row.iter().rposition(|p| *p > 0.0).unwrap_or(row.len() - 1)
}

/// Draws `X' ~ P_θ(state, ·)`.
pub fn draw_next<R: Rng + ?Sized>(
    kernel: &FiniteKernel,
    theta: &[f64],
    state: usize,
    rng: &mut R,
) -> Result<usize> {
    if state >= kernel.m() {
        return Err(Error::StateOutOfRange {
            state,
            size: kernel.m(),
        });
    }
    let mut row = vec![0.0; kernel.m()];
    kernel.row_into(theta, state, &mut row);
    check_stochastic_row(&row).map_err(|e| Error::Kernel(format!("row {state}: {e}")))?;
    Ok(inverse_cdf(&row, rng.random::<f64>()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state(p: f64, q: f64) -> FiniteKernel {
        FiniteKernel::fixed(vec![vec![1.0 - p, p], vec![q, 1.0 - q]]).unwrap()
    }

    #[test]
    fn tv_examples() {
        let u = [0.3, 0.7];
        assert_eq!(tv_distance(&u, &u).unwrap(), 0.0);
        assert_eq!(tv_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!((tv_distance(&[0.5, 0.5], &[0.9, 0.1]).unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn tv_rejects_non_distributions() {
        let err = tv_distance(&[0.5, 0.6], &[0.5, 0.5]).unwrap_err();
        assert!(err.to_string().contains("sums to"));
        assert!(tv_distance(&[1.5, -0.5], &[0.5, 0.5]).is_err());
        assert!(tv_distance(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn stationary_examples() {
        let k = two_state(0.2, 0.3);
        let mu = stationary_distribution(&k, &[]).unwrap();
        assert!((mu[0] - 0.6).abs() < 1e-12 && (mu[1] - 0.4).abs() < 1e-12);

        let ds = FiniteKernel::fixed(vec![
            vec![0.2, 0.5, 0.3],
            vec![0.5, 0.3, 0.2],
            vec![0.3, 0.2, 0.5],
        ])
        .unwrap();
        let mu = stationary_distribution(&ds, &[]).unwrap();
        for v in mu.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }

        let id = FiniteKernel::fixed(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            stationary_distribution(&id, &[]),
            Err(Error::Ergodicity(_))
        ));
    }

    #[test]
    fn mixing_examples() {
        assert_eq!(mixing_time(&two_state(0.5, 0.5), &[], 0.01).unwrap(), 1);
        // From either start the TV distance is 0.5 * 0.8^t; 0.8^t <= 0.02 first at t = 18.
        assert_eq!(mixing_time(&two_state(0.1, 0.1), &[], 0.01).unwrap(), 18);
        let ds = FiniteKernel::fixed(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert_eq!(mixing_time(&ds, &[], 0.6).unwrap(), 0);
        assert!(mixing_time(&ds, &[], 1.0).is_err());
    }

    #[test]
    fn certificate_examples() {
        let c = fit_ergodicity(&two_state(0.5, 0.5), &[], 50).unwrap();
        assert!((c.rho - RHO_MARGIN).abs() < 1e-9);
        let c = fit_ergodicity(&two_state(0.2, 0.3), &[], 50).unwrap();
        assert!((c.rho - 0.5 - RHO_MARGIN).abs() < 1e-9);
        let id = FiniteKernel::fixed(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            fit_ergodicity(&id, &[], 10),
            Err(Error::NonGeometric { .. })
        ));
    }

    #[test]
    fn deterministic_draws() {
        let perm = FiniteKernel::fixed(vec![
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0],
        ])
        .unwrap();
        let mut rng = seeded_rng(3);
        for s in 0..3 {
            for _ in 0..10 {
                assert_eq!(draw_next(&perm, &[], s, &mut rng).unwrap(), (s + 1) % 3);
            }
        }
        assert_eq!(inverse_cdf(&[1.0, 0.0, 0.0], 0.999_999), 0);
        assert!(draw_next(&perm, &[], 3, &mut rng).is_err());
    }

    #[test]
    fn kernel_validation() {
        assert!(FiniteKernel::fixed(vec![vec![0.5, 0.6], vec![0.5, 0.5]]).is_err());
        assert!(FiniteKernel::fixed(vec![vec![1.0, 0.0]]).is_err());
        assert!(FiniteKernel::fixed(vec![vec![-0.5, 1.5], vec![0.5, 0.5]]).is_err());
    }

    #[test]
    fn kernel_json_round_trip() {
        let k = FiniteKernel::theta_mixture(
            vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            0.1,
            vec![1.0, -1.0],
            0.5,
        )
        .unwrap();
        let json = serde_json::to_value(&k).unwrap();
        assert_eq!(json["family"], "theta-mixture");
        assert_eq!(json["P_a"][1][0], 0.2);
        let back: FiniteKernel = serde_json::from_value(json).unwrap();
        assert_eq!(back, k);
        let fixed: FiniteKernel =
            serde_json::from_str(r#"{"m":2,"family":"fixed","P":[[0.5,0.5],[1.0,0.0]]}"#).unwrap();
        assert!(fixed.is_theta_independent());
        assert!(serde_json::from_str::<FiniteKernel>(r#"{"m":3,"family":"fixed","P":[[1.0]]}"#).is_err());
    }

    #[test]
    fn mixture_weight_clamps() {
        let k = FiniteKernel::theta_mixture(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            0.5,
            vec![1.0],
            0.0,
        )
        .unwrap();
        assert_eq!(k.mixture_weight(&[-3.0]), 0.0);
        assert_eq!(k.mixture_weight(&[0.4]), 0.2);
        assert_eq!(k.mixture_weight(&[7.0]), 0.5);
        let p = k.matrix(&[7.0]);
        assert_eq!(p[(0, 1)], 0.5);
    }
}
