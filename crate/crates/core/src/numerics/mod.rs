//! Dense `f64` tensors, a reverse-mode tape, and a finite-difference checker.

mod grad_check;
mod graph;
mod kernels;
pub mod record;
mod tensor;

pub use grad_check::{grad_check, GradCheckReport};
pub use graph::{Graph, Var};
pub use tensor::Tensor;

use crate::error::Result;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Eager matrix product (no tape).
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let (a, b) = (g.constant(a.clone()), g.constant(b.clone()));
    let out = g.matmul(a, b)?;
    Ok(g.value(out).clone())
}

pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let x = g.constant(x.clone());
    let out = g.softmax_rows(x)?;
    Ok(g.value(out).clone())
}

pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let mut g = Graph::new();
    let (x, gain, bias) = (
        g.constant(x.clone()),
        g.constant(gain.clone()),
        g.constant(bias.clone()),
    );
    let out = g.layer_norm(x, gain, bias, eps)?;
    Ok(g.value(out).clone())
}

/// Mean over the patch axis of a `[p×d]` grid.
pub fn global_average_pool(grid: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let x = g.constant(grid.clone());
    let out = g.mean_rows(x)?;
    Ok(g.value(out).clone())
}
