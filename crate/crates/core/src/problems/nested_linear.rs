//! Nested strongly monotone affine benchmarks with known constants.
//!
//! The mean operator is `F̄(θ) = A θ + b` with symmetric positive definite
//! diagonal blocks and weakly coupled off-diagonal blocks. Samples add
//! `σ g(X)` with `g` centered under the stationary distribution at `θ = 0`.
//! For `θ`-dependent kernels the stored solution is the root of the full
//! mean operator, found by chord iterations.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diagnostics::{effective_matrices_of, min_sym_eigenvalue};
use crate::error::{Error, Result};
use crate::samplers::{seeded_rng, stationary_distribution, FiniteKernel, SampleRng};
use crate::stack::ParameterStack;
use crate::systems::{offsets, AffineSystem, Metadata, Operator, OperatorSystem};

/// Regeneration attempts before giving up.
pub const MAX_ATTEMPTS: u64 = 20;
/// Number of states of the generated kernel.
pub const DEFAULT_STATES: usize = 5;
/// Chord iterations allowed when locating the root under a `θ`-dependent kernel.
const ROOT_MAX_ITER: usize = 500;
/// Relative residual at which the root is accepted.
const ROOT_TOL: f64 = 1e-14;

/// Kind of Markov kernel generating the samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    /// A random ergodic kernel.
    #[default]
    Fixed,
    /// Independent draws from a random distribution.
    Iid,
    /// A `θ`-dependent mixture of two random ergodic kernels.
    Mixture,
}

/// Generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NestedLinearSpec {
    pub dims: Vec<usize>,
    pub delta_target: f64,
    #[serde(default)]
    pub coupling_scale: f64,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub kernel_kind: KernelKind,
    #[serde(default = "default_states")]
    pub n_states: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_states() -> usize {
    DEFAULT_STATES
}

impl NestedLinearSpec {
    pub fn new(dims: Vec<usize>, delta_target: f64, coupling_scale: f64, sigma: f64) -> Self {
        Self {
            dims,
            delta_target,
            coupling_scale,
            sigma,
            kernel_kind: KernelKind::Fixed,
            n_states: DEFAULT_STATES,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_kernel(mut self, kind: KernelKind) -> Self {
        self.kernel_kind = kind;
        self
    }

    pub fn build(&self) -> Result<AffineSystem> {
        build(self)
    }
}

/// Builds a nested affine system with `N = dims.len()` levels.
pub fn make_nested_linear(
    n: usize,
    dims: &[usize],
    delta_target: f64,
    coupling_scale: f64,
    sigma: f64,
    kernel_kind: KernelKind,
    seed: u64,
) -> Result<OperatorSystem> {
    if dims.len() != n {
        return Err(Error::Generation(format!("{n} levels but {} dimensions", dims.len())));
    }
    let spec = NestedLinearSpec {
        dims: dims.to_vec(),
        delta_target,
        coupling_scale,
        sigma,
        kernel_kind,
        n_states: DEFAULT_STATES,
        seed,
    };
    Ok(build(&spec)?.into())
}

fn gaussian_matrix(rng: &mut SampleRng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        0.0
    } else {
        m.singular_values().max()
    }
}

/// Random ergodic kernel: exponential rows mixed with 20% uniform.
fn random_rows(rng: &mut SampleRng, m: usize) -> Vec<Vec<f64>> {
    (0..m)
        .map(|_| {
            let raw: Vec<f64> = (0..m).map(|_| Exp1.sample(rng)).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|v| 0.8 * v / s + 0.2 / m as f64).collect()
        })
        .collect()
}

fn random_kernel(rng: &mut SampleRng, kind: KernelKind, m: usize, total: usize) -> Result<FiniteKernel> {
    match kind {
        KernelKind::Fixed => FiniteKernel::fixed(random_rows(rng, m)),
        KernelKind::Iid => {
            let row = random_rows(rng, 1.max(m)).swap_remove(0);
            let s: f64 = row.iter().sum();
            FiniteKernel::iid(&row.iter().map(|v| v / s).collect::<Vec<_>>())
        }
        KernelKind::Mixture => {
            let a = random_rows(rng, m);
            let b = random_rows(rng, m);
            let w = 1.0 / (total as f64).sqrt();
            FiniteKernel::theta_mixture(a, b, 0.5, vec![w; total], 0.0)
        }
    }
}

fn build(spec: &NestedLinearSpec) -> Result<AffineSystem> {
    let NestedLinearSpec {
        dims,
        delta_target,
        coupling_scale,
        sigma,
        ..
    } = spec;
    if !(*delta_target > 0.0 && *delta_target <= 1.0) {
        return Err(Error::Domain(format!("delta_target must lie in (0, 1], got {delta_target}")));
    }
    if !(*coupling_scale >= 0.0 && coupling_scale.is_finite()) {
        return Err(Error::Domain(format!("coupling_scale must be finite and >= 0, got {coupling_scale}")));
    }
    if !(*sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::Domain("dims must be non-empty and positive".into()));
    }
    if spec.n_states == 0 {
        return Err(Error::Domain("n_states must be positive".into()));
    }
    let mut best = f64::NEG_INFINITY;
    for attempt in 0..MAX_ATTEMPTS {
        let seed = spec.seed.wrapping_add(attempt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        match attempt_build(spec, seed)? {
            Ok(system) => return Ok(system),
            Err(delta) => best = best.max(delta),
        }
    }
    Err(Error::Generation(format!(
        "nested modulus stayed below {} after {MAX_ATTEMPTS} attempts (best {best:.4}); \
         try a smaller coupling_scale",
        delta_target / 2.0
    )))
}

/// One generation attempt; `Ok(Err(δ))` means the modulus check rejected it.
fn attempt_build(spec: &NestedLinearSpec, seed: u64) -> Result<std::result::Result<AffineSystem, f64>> {
    let dims = &spec.dims;
    let n = dims.len();
    let off = offsets(dims);
    let total = off[n];
    let mut rng = seeded_rng(seed);
    let mut a = DMatrix::zeros(total, total);
    for i in 0..n {
        let d = dims[i];
        let q = gaussian_matrix(&mut rng, d, d).qr().q();
        let eigs = DVector::from_fn(d, |_, _| spec.delta_target * (1.0 + rng.random::<f64>()));
        let block = q.transpose() * DMatrix::from_diagonal(&eigs) * &q;
        let block = (&block + block.transpose()) * 0.5;
        a.view_mut((off[i], off[i]), (d, d)).copy_from(&block);
        for j in 0..n {
            if i == j {
                continue;
            }
            let mut c = gaussian_matrix(&mut rng, d, dims[j]);
            let s = spectral_norm(&c);
            if spec.coupling_scale == 0.0 || s == 0.0 {
                c.fill(0.0);
            } else {
                c *= spec.coupling_scale / s;
            }
            a.view_mut((off[i], off[j]), (d, dims[j])).copy_from(&c);
        }
    }
    let b = DVector::from_fn(total, |_, _| 2.0 * rng.random::<f64>() - 1.0);
    let kernel = random_kernel(&mut rng, spec.kernel_kind, spec.n_states, total)?;

    let effective = effective_matrices_of(&a, dims)?;
    let delta = effective.iter().map(min_sym_eigenvalue).fold(f64::INFINITY, f64::min);
    if !(delta >= spec.delta_target / 2.0) {
        return Ok(Err(delta));
    }

    let m = spec.n_states;
    let mu = stationary_distribution(&kernel, &vec![0.0; total])?;
    let mut noise = gaussian_matrix(&mut rng, m, total) * spec.sigma;
    let centre = noise.tr_mul(&mu);
    for mut row in noise.row_iter_mut() {
        row -= centre.transpose();
    }

    let lu = a.clone().lu();
    let mut solution = lu
        .solve(&(-&b))
        .ok_or_else(|| Error::Degenerate("stacked system is singular".into()))?;
    let l = lipschitz_constant(&a, &b, &noise, dims)?;
    let target_bound = target_bound(&a, dims, &solution)?;
    let mut metadata = Metadata {
        delta: Some(delta),
        lipschitz: Some(l),
        target_bound: Some(target_bound),
        solution: Some(ParameterStack::from_flat(dims, solution.as_slice().to_vec())?),
        noise_scale: Some(spec.sigma),
        mean_consistent: true,
    };
    let mut system = AffineSystem::new(dims.clone(), a, b, noise, kernel, metadata.clone())?;
    if !system.kernel().is_theta_independent() {
        // The noise is centred at θ = 0 only, so the root moves with the
        // stationary distribution. Chord iterations with the fixed matrix A.
        let mut converged = false;
        let mut residual = f64::INFINITY;
        for _ in 0..ROOT_MAX_ITER {
            let stack = ParameterStack::from_flat(dims, solution.as_slice().to_vec())?;
            let mean = DVector::from_column_slice(system.mean_operator(&stack)?.as_slice());
            residual = mean.norm();
            if residual <= ROOT_TOL * (1.0 + solution.norm()) {
                converged = true;
                break;
            }
            solution -= lu.solve(&mean).expect("factorization succeeded above");
        }
        if !converged {
            return Err(Error::NonConvergence {
                iterations: ROOT_MAX_ITER,
                residuals: vec![residual],
            });
        }
        metadata.solution = Some(ParameterStack::from_flat(dims, solution.as_slice().to_vec())?);
        system.set_metadata(metadata);
    }
    Ok(Ok(system))
}

/// Sensitivity blocks `K = -M^{-1} C` of the targets below a prefix of `p` levels.
fn target_sensitivity(a: &DMatrix<f64>, dims: &[usize], p: usize) -> Result<DMatrix<f64>> {
    let off = offsets(dims);
    let (lo, d) = (off[p], off[dims.len()]);
    let m = a.view((lo, lo), (d - lo, d - lo)).into_owned();
    let c = a.view((lo, 0), (d - lo, lo)).into_owned();
    m.lu()
        .solve(&(-c))
        .ok_or_else(|| Error::Degenerate(format!("lower block below level {p} is singular")))
}

/// Smallest `L` valid for every Lipschitz and growth condition of the system.
///
/// Takes the largest of: every block norm `‖A_ij‖`, every sample offset
/// `‖b_i + g_i(x)‖`, and every block norm of the target sensitivities.
fn lipschitz_constant(a: &DMatrix<f64>, b: &DVector<f64>, noise: &DMatrix<f64>, dims: &[usize]) -> Result<f64> {
    let off = offsets(dims);
    let n = dims.len();
    let mut l: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            l = l.max(spectral_norm(&a.view((off[i], off[j]), (dims[i], dims[j])).into_owned()));
        }
        for row in noise.row_iter() {
            let v = b.rows(off[i], dims[i]) + row.columns(off[i], dims[i]).transpose();
            l = l.max(v.norm());
        }
    }
    for p in 1..n {
        let k = target_sensitivity(a, dims, p)?;
        for r in p..n {
            for c in 0..p {
                let blk = k.view((off[r] - off[p], off[c]), (dims[r], dims[c])).into_owned();
                l = l.max(spectral_norm(&blk));
            }
        }
    }
    // A few ulps so that the bound survives rounding in the checks.
    Ok(l * (1.0 + 1e-12))
}

/// Largest own-level target norm `‖y_i(θ_{1:i-1})‖` over prefixes within
/// unit distance of the solution (per level).
///
/// Targets are affine in the prefix, so the supremum over that region is at
/// most `‖θ*_i‖ + Σ_{c<i} ‖K_{ic}‖`.
fn target_bound(a: &DMatrix<f64>, dims: &[usize], solution: &DVector<f64>) -> Result<f64> {
    let off = offsets(dims);
    let n = dims.len();
    let mut bound = solution.rows(0, dims[0]).norm();
    for i in 1..n {
        let k = target_sensitivity(a, dims, i)?;
        let spread: f64 = (0..i)
            .map(|c| spectral_norm(&k.view((0, off[c]), (dims[i], dims[c])).into_owned()))
            .sum();
        bound = bound.max(solution.rows(off[i], dims[i]).norm() + spread);
    }
    Ok(bound)
}
