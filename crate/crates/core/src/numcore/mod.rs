//! Minimal reverse-mode differentiable numeric layer.

pub mod checkpoint;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{compare_gradients, grad_check, GradCheckOptions, GradCheckReport, Worst};
pub use graph::{gelu_scalar, Graph, Var};
pub use params::{Gradients, Init, ParamId, ParamStore};
pub use tensor::{top_k, Real, Tensor};

/// Affine map `x W + b` with `W` stored as `[in, out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn register<F: Real, R: rand::Rng>(
        store: &mut ParamStore<F>,
        name: &str,
        input: usize,
        output: usize,
        std: f64,
        rng: &mut R,
    ) -> crate::Result<Self> {
        let weight = store.register(&format!("{name}.weight"), &[input, output], Init::Normal { std }, rng)?;
        let bias = store.register(&format!("{name}.bias"), &[output], Init::Zeros, rng)?;
        Ok(Linear { weight, bias, input, output })
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<F>, store: &ParamStore<F>, x: Var) -> crate::Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul(x, w, false)?;
        g.add(y, b)
    }

    /// Make `self` compute the same map as `other`.
    pub fn tie_to<F: Real>(&self, other: &Linear, store: &mut ParamStore<F>) -> crate::Result<()> {
        store.copy_value(other.weight, self.weight)?;
        store.copy_value(other.bias, self.bias)
    }

    /// Set weights and bias to zero.
    pub fn zero<F: Real>(&self, store: &mut ParamStore<F>) -> crate::Result<()> {
        let w = vec![F::zero(); store.value(self.weight).len()];
        store.set(self.weight, &w)?;
        let b = vec![F::zero(); store.value(self.bias).len()];
        store.set(self.bias, &b)
    }
}
