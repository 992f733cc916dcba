//! Coupled operator systems over a finite sample space.
//!
//! A system supplies the `N` stochastic operators `F_i(θ, X)`, the Markov
//! kernel generating `X`, and optional known constants. Everything the
//! solvers and diagnostics need goes through the [`Operator`] trait, so custom
//! systems (for example instrumented test doubles) plug in alongside the
//! built-in [`OperatorSystem`] kinds.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::mfg::MfgSystem;
use crate::samplers::{self, FiniteKernel, SampleRng};
use crate::stack::{LevelVector, ParameterStack};

/// Known constants of a system. Absent values are simply unknown.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solution: Option<ParameterStack>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_scale: Option<f64>,
    /// Set when the stored solution is an exact root of every mean operator.
    #[serde(default)]
    pub mean_consistent: bool,
}

/// The mean operator written as `F̄(θ) = A θ + b` on the flattened stack.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMean {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// A system of `N` coupled stochastic operators.
///
/// Levels are indexed from 0 (the slowest, highest level) to `N - 1`.
pub trait Operator: Sync {
    fn dims(&self) -> &[usize];

    /// Number of states of the sample space.
    fn sample_space_size(&self) -> usize;

    /// Writes `F_level(θ, state)` into `out`. Inputs are already validated.
    fn eval_level_into(&self, level: usize, theta: &ParameterStack, state: usize, out: &mut [f64]);

    /// Writes every level of `F(θ, state)` into `out` (the flattened stack).
    fn eval_into(&self, theta: &ParameterStack, state: usize, out: &mut [f64]) {
        let offsets = theta.offsets();
        for level in 0..self.dims().len() {
            self.eval_level_into(level, theta, state, &mut out[offsets[level]..offsets[level + 1]]);
        }
    }

    /// Draws `X' ~ P_θ(state, ·)`.
    fn draw_next(&self, theta: &ParameterStack, state: usize, rng: &mut SampleRng) -> Result<usize>;

    /// Stationary distribution of the sample chain at `θ`.
    fn stationary(&self, theta: &ParameterStack) -> Result<DVector<f64>>;

    /// Every level of the exact mean operator `F̄(θ)`.
    fn mean_operator(&self, theta: &ParameterStack) -> Result<ParameterStack> {
        let mu = self.stationary(theta)?;
        let mut acc = ParameterStack::zeros(self.dims())?;
        let mut buf = vec![0.0; acc.total_dim()];
        for (x, w) in mu.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            self.eval_into(theta, x, &mut buf);
            for (a, v) in acc.as_mut_slice().iter_mut().zip(&buf) {
                *a += w * v;
            }
        }
        acc.check_finite("mean operator")?;
        Ok(acc)
    }

    /// Feasibility map applied to the decision variable after each update.
    fn project(&self, _theta: &mut ParameterStack) {}

    /// The mean operator as an affine map, when it is one for every `θ`.
    fn affine_mean(&self) -> Option<AffineMean> {
        None
    }

    /// Closed-form learning targets `y_{i:N}(prefix)` for `i = prefix.len()`,
    /// when the system knows them.
    fn exact_targets(&self, _prefix: &[DVector<f64>]) -> Option<Result<Vec<DVector<f64>>>> {
        None
    }

    fn metadata(&self) -> &Metadata;

    /// The sampling kernel, for systems driven by a [`FiniteKernel`].
    fn kernel(&self) -> Option<&FiniteKernel> {
        None
    }

    fn n_levels(&self) -> usize {
        self.dims().len()
    }

    fn total_dim(&self) -> usize {
        self.dims().iter().sum()
    }
}

fn check_level<S: Operator + ?Sized>(system: &S, level: usize) -> Result<()> {
    if level >= system.n_levels() {
        return Err(Error::LevelOutOfRange {
            level,
            n_levels: system.n_levels(),
        });
    }
    Ok(())
}

fn check_state<S: Operator + ?Sized>(system: &S, state: usize) -> Result<()> {
    if state >= system.sample_space_size() {
        return Err(Error::StateOutOfRange {
            state,
            size: system.sample_space_size(),
        });
    }
    Ok(())
}

/// `F_level(θ, state)`.
pub fn evaluate_operator<S: Operator + ?Sized>(
    system: &S,
    level: usize,
    theta: &ParameterStack,
    state: usize,
) -> Result<LevelVector> {
    check_level(system, level)?;
    theta.ensure_shape(system.dims())?;
    check_state(system, state)?;
    let mut out = vec![0.0; system.dims()[level]];
    system.eval_level_into(level, theta, state, &mut out);
    let values = DVector::from_vec(out);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("F_{level} at state {state}")));
    }
    Ok(LevelVector { level, values })
}

/// `F̄_level(θ)`, the stationary expectation of `F_level(θ, X)`.
pub fn evaluate_mean_operator<S: Operator + ?Sized>(
    system: &S,
    level: usize,
    theta: &ParameterStack,
) -> Result<LevelVector> {
    check_level(system, level)?;
    theta.ensure_shape(system.dims())?;
    let mean = system.mean_operator(theta)?;
    Ok(LevelVector {
        level,
        values: mean.block_vector(level),
    })
}

/// Evaluates `‖F_i(θ, X)‖ ≤ L (Σ_j ‖θ_j‖ + 1)` for every level `i` and state
/// `X`. Entry `[i][x]` is the outcome for level `i` at state `x`.
pub fn check_affine_bound<S: Operator + ?Sized>(
    system: &S,
    theta: &ParameterStack,
    l: f64,
) -> Result<Vec<Vec<bool>>> {
    theta.ensure_shape(system.dims())?;
    if !(l > 0.0) {
        return Err(Error::Domain(format!("L must be positive, got {l}")));
    }
    let rhs = l * (theta.norms().iter().sum::<f64>() + 1.0);
    let mut buf = vec![0.0; theta.total_dim()];
    let offsets = theta.offsets().to_vec();
    let mut out = vec![Vec::with_capacity(system.sample_space_size()); system.n_levels()];
    for x in 0..system.sample_space_size() {
        system.eval_into(theta, x, &mut buf);
        for (i, row) in out.iter_mut().enumerate() {
            row.push(crate::stack::norm(&buf[offsets[i]..offsets[i + 1]]) <= rhs);
        }
    }
    Ok(out)
}

/// The identically zero operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroSystem {
    dims: Vec<usize>,
    kernel: FiniteKernel,
    #[serde(default)]
    metadata: Metadata,
}

impl ZeroSystem {
    pub fn new(dims: Vec<usize>, kernel: FiniteKernel) -> Result<Self> {
        ParameterStack::zeros(&dims)?;
        Ok(Self {
            dims,
            kernel,
            metadata: Metadata::default(),
        })
    }
}

impl Operator for ZeroSystem {
    fn dims(&self) -> &[usize] {
        &self.dims
    }

    fn sample_space_size(&self) -> usize {
        self.kernel.m()
    }

    fn eval_level_into(&self, _: usize, _: &ParameterStack, _: usize, out: &mut [f64]) {
        out.fill(0.0);
    }

    fn draw_next(&self, theta: &ParameterStack, state: usize, rng: &mut SampleRng) -> Result<usize> {
        samplers::draw_next(&self.kernel, theta.as_slice(), state, rng)
    }

    fn stationary(&self, theta: &ParameterStack) -> Result<DVector<f64>> {
        samplers::stationary_distribution(&self.kernel, theta.as_slice())
    }

    fn mean_operator(&self, _: &ParameterStack) -> Result<ParameterStack> {
        ParameterStack::zeros(&self.dims)
    }

    fn kernel(&self) -> Option<&FiniteKernel> {
        Some(&self.kernel)
    }

    /// Every point is a root; the targets are taken at the origin.
    fn exact_targets(&self, prefix: &[DVector<f64>]) -> Option<Result<Vec<DVector<f64>>>> {
        Some(Ok(self.dims[prefix.len()..].iter().map(|d| DVector::zeros(*d)).collect()))
    }

    fn affine_mean(&self) -> Option<AffineMean> {
        let d = self.total_dim();
        Some(AffineMean {
            a: DMatrix::zeros(d, d),
            b: DVector::zeros(d),
        })
    }

    fn metadata(&self) -> &Metadata {
        &self.metadata
    }
}

/// `F(θ, X) = A θ + b + g(X)` on the flattened stack, with Markov noise `X`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSystem {
    dims: Vec<usize>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    /// Row `x` is the noise vector `g(x)`.
    noise: DMatrix<f64>,
    kernel: FiniteKernel,
    metadata: Metadata,
    /// `Σ_x μ(x) g(x)` when the kernel does not depend on `θ`.
    fixed_noise_mean: Option<(DVector<f64>, DVector<f64>)>,
}

impl AffineSystem {
    /// `a` is the full `D × D` matrix over the flattened stack, `noise` has one
    /// row of length `D` per sample state.
    pub fn new(
        dims: Vec<usize>,
        a: DMatrix<f64>,
        b: DVector<f64>,
        noise: DMatrix<f64>,
        kernel: FiniteKernel,
        metadata: Metadata,
    ) -> Result<Self> {
        ParameterStack::zeros(&dims)?;
        let d: usize = dims.iter().sum();
        if a.nrows() != d || a.ncols() != d {
            return Err(Error::ShapeMismatch {
                expected: vec![d, d],
                actual: vec![a.nrows(), a.ncols()],
            });
        }
        if b.len() != d {
            return Err(Error::ShapeMismatch {
                expected: vec![d],
                actual: vec![b.len()],
            });
        }
        if noise.nrows() != kernel.m() || noise.ncols() != d {
            return Err(Error::ShapeMismatch {
                expected: vec![kernel.m(), d],
                actual: vec![noise.nrows(), noise.ncols()],
            });
        }
        if let Some(len) = kernel.theta_len() {
            if len != d {
                return Err(Error::Kernel(format!(
                    "clamp weights have length {len} but the stack has {d} entries"
                )));
            }
        }
        if a.iter().chain(b.iter()).chain(noise.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("affine system coefficients".into()));
        }
        let fixed_noise_mean = if kernel.is_theta_independent() {
            let mu = samplers::stationary_distribution(&kernel, &vec![0.0; d])?;
            let g = noise.tr_mul(&mu);
            Some((mu, g))
        } else {
            None
        };
        Ok(Self {
            dims,
            a,
            b,
            noise,
            kernel,
            metadata,
            fixed_noise_mean,
        })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn noise(&self) -> &DMatrix<f64> {
        &self.noise
    }

    pub fn kernel(&self) -> &FiniteKernel {
        &self.kernel
    }

    /// Block `A_ij` as a `d_i × d_j` matrix.
    pub fn block(&self, i: usize, j: usize) -> DMatrix<f64> {
        let off = offsets(&self.dims);
        self.a
            .view((off[i], off[j]), (self.dims[i], self.dims[j]))
            .into_owned()
    }

    pub fn set_metadata(&mut self, metadata: Metadata) {
        self.metadata = metadata;
    }
}

pub(crate) fn offsets(dims: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(dims.len() + 1);
    let mut acc = 0;
    out.push(0);
    for d in dims {
        acc += d;
        out.push(acc);
    }
    out
}

impl Operator for AffineSystem {
    fn dims(&self) -> &[usize] {
        &self.dims
    }

    fn sample_space_size(&self) -> usize {
        self.kernel.m()
    }

    fn eval_level_into(&self, level: usize, theta: &ParameterStack, state: usize, out: &mut [f64]) {
        let lo = theta.offsets()[level];
        let th = theta.as_slice();
        for (r, o) in out.iter_mut().enumerate() {
            let row = lo + r;
            let mut acc = self.b[row] + self.noise[(state, row)];
            for (c, t) in th.iter().enumerate() {
                acc += self.a[(row, c)] * t;
            }
            *o = acc;
        }
    }

    fn eval_into(&self, theta: &ParameterStack, state: usize, out: &mut [f64]) {
        let th = theta.as_slice();
        for (row, o) in out.iter_mut().enumerate() {
            let mut acc = self.b[row] + self.noise[(state, row)];
            for (c, t) in th.iter().enumerate() {
                acc += self.a[(row, c)] * t;
            }
            *o = acc;
        }
    }

    fn draw_next(&self, theta: &ParameterStack, state: usize, rng: &mut SampleRng) -> Result<usize> {
        samplers::draw_next(&self.kernel, theta.as_slice(), state, rng)
    }

    fn stationary(&self, theta: &ParameterStack) -> Result<DVector<f64>> {
        match &self.fixed_noise_mean {
            Some((mu, _)) => Ok(mu.clone()),
            None => samplers::stationary_distribution(&self.kernel, theta.as_slice()),
        }
    }

    fn mean_operator(&self, theta: &ParameterStack) -> Result<ParameterStack> {
        theta.ensure_shape(&self.dims)?;
        let th = DVector::from_column_slice(theta.as_slice());
        let g = match &self.fixed_noise_mean {
            Some((_, g)) => g.clone(),
            None => {
                let mu = samplers::stationary_distribution(&self.kernel, theta.as_slice())?;
                self.noise.tr_mul(&mu)
            }
        };
        let v = &self.a * th + &self.b + g;
        ParameterStack::from_flat(&self.dims, v.as_slice().to_vec())
    }

    fn affine_mean(&self) -> Option<AffineMean> {
        self.fixed_noise_mean.as_ref().map(|(_, g)| AffineMean {
            a: self.a.clone(),
            b: &self.b + g,
        })
    }

    fn kernel(&self) -> Option<&FiniteKernel> {
        Some(&self.kernel)
    }

    fn metadata(&self) -> &Metadata {
        &self.metadata
    }
}

/// The built-in system kinds, serializable as one JSON document.
#[derive(Debug, Clone, PartialEq)]
pub enum OperatorSystem {
    Zero(ZeroSystem),
    Affine(AffineSystem),
    Mfg(MfgSystem),
}

impl OperatorSystem {
    fn inner(&self) -> &dyn Operator {
        match self {
            OperatorSystem::Zero(s) => s,
            OperatorSystem::Affine(s) => s,
            OperatorSystem::Mfg(s) => s,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            OperatorSystem::Zero(_) => "zero",
            OperatorSystem::Affine(_) => "affine",
            OperatorSystem::Mfg(_) => "mfg",
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&SystemDocument::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: SystemDocument = serde_json::from_str(s)?;
        doc.try_into()
    }
}

impl Operator for OperatorSystem {
    fn dims(&self) -> &[usize] {
        self.inner().dims()
    }
    fn sample_space_size(&self) -> usize {
        self.inner().sample_space_size()
    }
    fn eval_level_into(&self, level: usize, theta: &ParameterStack, state: usize, out: &mut [f64]) {
        self.inner().eval_level_into(level, theta, state, out)
    }
    fn eval_into(&self, theta: &ParameterStack, state: usize, out: &mut [f64]) {
        self.inner().eval_into(theta, state, out)
    }
    fn draw_next(&self, theta: &ParameterStack, state: usize, rng: &mut SampleRng) -> Result<usize> {
        self.inner().draw_next(theta, state, rng)
    }
    fn stationary(&self, theta: &ParameterStack) -> Result<DVector<f64>> {
        self.inner().stationary(theta)
    }
    fn mean_operator(&self, theta: &ParameterStack) -> Result<ParameterStack> {
        self.inner().mean_operator(theta)
    }
    fn project(&self, theta: &mut ParameterStack) {
        self.inner().project(theta)
    }
    fn affine_mean(&self) -> Option<AffineMean> {
        self.inner().affine_mean()
    }
    fn exact_targets(&self, prefix: &[DVector<f64>]) -> Option<Result<Vec<DVector<f64>>>> {
        self.inner().exact_targets(prefix)
    }
    fn metadata(&self) -> &Metadata {
        self.inner().metadata()
    }
    fn kernel(&self) -> Option<&FiniteKernel> {
        self.inner().kernel()
    }
}

impl From<ZeroSystem> for OperatorSystem {
    fn from(s: ZeroSystem) -> Self {
        OperatorSystem::Zero(s)
    }
}

impl From<AffineSystem> for OperatorSystem {
    fn from(s: AffineSystem) -> Self {
        OperatorSystem::Affine(s)
    }
}

impl From<MfgSystem> for OperatorSystem {
    fn from(s: MfgSystem) -> Self {
        OperatorSystem::Mfg(s)
    }
}

/// On-disk form of a system: common header plus a kind-specific payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SystemDocument {
    n_levels: usize,
    dims: Vec<usize>,
    sample_space_size: usize,
    #[serde(flatten)]
    payload: Payload,
    #[serde(default)]
    metadata: Metadata,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Payload {
    Zero {
        kernel: FiniteKernel,
    },
    Affine {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        noise: Vec<Vec<f64>>,
        kernel: FiniteKernel,
    },
    Mfg {
        spec: crate::problems::mfg::MfgSpec,
    },
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if let Some(r) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::Config(format!(
            "{what}: row of length {} (expected {ncols})",
            r.len()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl From<&OperatorSystem> for SystemDocument {
    fn from(s: &OperatorSystem) -> Self {
        let payload = match s {
            OperatorSystem::Zero(z) => Payload::Zero {
                kernel: z.kernel.clone(),
            },
            OperatorSystem::Affine(a) => Payload::Affine {
                a: rows(&a.a),
                b: a.b.iter().copied().collect(),
                noise: rows(&a.noise),
                kernel: a.kernel.clone(),
            },
            OperatorSystem::Mfg(m) => Payload::Mfg {
                spec: m.spec().clone(),
            },
        };
        SystemDocument {
            n_levels: s.n_levels(),
            dims: s.dims().to_vec(),
            sample_space_size: s.sample_space_size(),
            payload,
            metadata: s.metadata().clone(),
        }
    }
}

impl TryFrom<SystemDocument> for OperatorSystem {
    type Error = Error;

    fn try_from(doc: SystemDocument) -> Result<Self> {
        let system: OperatorSystem = match doc.payload {
            Payload::Zero { kernel } => {
                let mut z = ZeroSystem::new(doc.dims.clone(), kernel)?;
                z.metadata = doc.metadata;
                z.into()
            }
            Payload::Affine { a, b, noise, kernel } => {
                let d: usize = doc.dims.iter().sum();
                AffineSystem::new(
                    doc.dims.clone(),
                    from_rows(&a, d, "A")?,
                    DVector::from_vec(b),
                    from_rows(&noise, d, "noise")?,
                    kernel,
                    doc.metadata,
                )?
                .into()
            }
            Payload::Mfg { spec } => MfgSystem::new(spec)?.into(),
        };
        if system.dims() != doc.dims.as_slice() || system.n_levels() != doc.n_levels {
            return Err(Error::Config(format!(
                "header dims {:?} do not match the payload ({:?})",
                doc.dims,
                system.dims()
            )));
        }
        if system.sample_space_size() != doc.sample_space_size {
            return Err(Error::Config(format!(
                "header sample_space_size {} does not match the payload ({})",
                doc.sample_space_size,
                system.sample_space_size()
            )));
        }
        Ok(system)
    }
}
