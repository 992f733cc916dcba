//! Stacked decision variables.
//!
//! A [`ParameterStack`] holds `N` real blocks of fixed lengths `d_1, ..., d_N`
//! in one contiguous buffer. Both the decision variable and the auxiliary
//! operator estimates of the accelerated solver are stacks of this shape.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The stacked variable `(θ_1, ..., θ_N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct ParameterStack {
    data: Vec<f64>,
    offsets: Vec<usize>,
}

impl ParameterStack {
    /// All-zero stack with the given block dimensions.
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        validate_dims(dims)?;
        let mut offsets = Vec::with_capacity(dims.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for &d in dims {
            acc += d;
            offsets.push(acc);
        }
        Ok(Self {
            data: vec![0.0; acc],
            offsets,
        })
    }

    /// Build a stack from explicit blocks. Every entry must be finite.
    pub fn from_blocks(blocks: Vec<Vec<f64>>) -> Result<Self> {
        let dims: Vec<usize> = blocks.iter().map(Vec::len).collect();
        let mut stack = Self::zeros(&dims)?;
        for (i, b) in blocks.iter().enumerate() {
            stack.block_mut(i).copy_from_slice(b);
        }
        stack.check_finite("ParameterStack::from_blocks")?;
        Ok(stack)
    }

    /// Build a stack from a flat buffer split according to `dims`.
    pub fn from_flat(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        let mut stack = Self::zeros(dims)?;
        if data.len() != stack.data.len() {
            return Err(Error::DimensionMismatch {
                level: 0,
                expected: stack.data.len(),
                actual: data.len(),
            });
        }
        stack.data = data;
        stack.check_finite("ParameterStack::from_flat")?;
        Ok(stack)
    }

    pub fn n_levels(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn dims(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn dim(&self, level: usize) -> usize {
        self.offsets[level + 1] - self.offsets[level]
    }

    /// Total number of scalar entries.
    pub fn total_dim(&self) -> usize {
        self.data.len()
    }

    /// Start offset of each block inside the flat buffer (length `N + 1`).
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn block(&self, level: usize) -> &[f64] {
        &self.data[self.offsets[level]..self.offsets[level + 1]]
    }

    pub fn block_mut(&mut self, level: usize) -> &mut [f64] {
        let (lo, hi) = (self.offsets[level], self.offsets[level + 1]);
        &mut self.data[lo..hi]
    }

    pub fn block_vector(&self, level: usize) -> DVector<f64> {
        DVector::from_column_slice(self.block(level))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn to_blocks(&self) -> Vec<Vec<f64>> {
        (0..self.n_levels()).map(|i| self.block(i).to_vec()).collect()
    }

    /// Concatenation of blocks `range.start..range.end` as one vector.
    pub fn segment(&self, levels: std::ops::Range<usize>) -> DVector<f64> {
        DVector::from_column_slice(&self.data[self.offsets[levels.start]..self.offsets[levels.end]])
    }

    /// Per-level Euclidean norms.
    pub fn norms(&self) -> Vec<f64> {
        (0..self.n_levels()).map(|i| norm(self.block(i))).collect()
    }

    /// Euclidean norm of the whole stack.
    pub fn norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn same_shape(&self, other: &ParameterStack) -> bool {
        self.offsets == other.offsets
    }

    pub fn ensure_shape(&self, dims: &[usize]) -> Result<()> {
        if self.n_levels() != dims.len() {
            return Err(Error::ShapeMismatch {
                expected: dims.to_vec(),
                actual: self.dims(),
            });
        }
        for (level, &d) in dims.iter().enumerate() {
            if self.dim(level) != d {
                return Err(Error::DimensionMismatch {
                    level,
                    expected: d,
                    actual: self.dim(level),
                });
            }
        }
        Ok(())
    }

    /// `self <- self + a * x`, blockwise.
    pub fn axpy(&mut self, a: f64, x: &ParameterStack) -> Result<()> {
        if !self.same_shape(x) {
            return Err(Error::ShapeMismatch {
                expected: self.dims(),
                actual: x.dims(),
            });
        }
        for (y, xv) in self.data.iter_mut().zip(&x.data) {
            *y += a * xv;
        }
        self.check_finite("ParameterStack::axpy")
    }

    /// Index of the first level containing a NaN or infinity, if any.
    pub fn first_non_finite_level(&self) -> Option<usize> {
        (0..self.n_levels()).find(|&i| self.block(i).iter().any(|v| !v.is_finite()))
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        match self.first_non_finite_level() {
            None => Ok(()),
            Some(level) => Err(Error::NonFinite(format!("{context} (level {level})"))),
        }
    }
}

impl TryFrom<Vec<Vec<f64>>> for ParameterStack {
    type Error = Error;

    fn try_from(blocks: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_blocks(blocks)
    }
}

impl From<ParameterStack> for Vec<Vec<f64>> {
    fn from(stack: ParameterStack) -> Self {
        stack.to_blocks()
    }
}

/// Per-level Euclidean norms of a stack.
pub fn stack_norms(theta: &ParameterStack) -> Vec<f64> {
    theta.norms()
}

/// Returns `y + a * x` without modifying the inputs.
pub fn stack_axpy(a: f64, x: &ParameterStack, y: &ParameterStack) -> Result<ParameterStack> {
    let mut out = y.clone();
    out.axpy(a, x)?;
    Ok(out)
}

/// One evaluated level of an operator system.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelVector {
    pub level: usize,
    pub values: DVector<f64>,
}

impl LevelVector {
    pub fn norm(&self) -> f64 {
        self.values.norm()
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.is_empty() {
        return Err(Error::Domain("a stack needs at least one level".into()));
    }
    if let Some(level) = dims.iter().position(|&d| d == 0) {
        return Err(Error::DimensionMismatch {
            level,
            expected: 1,
            actual: 0,
        });
    }
    Ok(())
}
