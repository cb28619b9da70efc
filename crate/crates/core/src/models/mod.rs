//! Small trainable architectures and the synthetic fact-memorization task.

mod char_lm;
mod data;
mod mlp;
mod train;

pub use char_lm::{exact_match, CharLm, CharLmConfig, ExactMatch};
pub use data::{gen_facts, Fact, FactDataset};
pub use mlp::{Labeled, Mlp};
pub use train::{train, TrainReport};
pub(crate) use train::sgd_update;

use indexmap::IndexMap;

use crate::autodiff::{Bindings, Graph, Var};
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A differentiable model whose loss can be recorded on a [`Graph`].
pub trait Model<T: Scalar>: Clone + Send + Sync {
    type Sample: Sync;

    fn params(&self) -> &ParamSet<T>;

    fn params_mut(&mut self) -> &mut ParamSet<T>;

    /// Records the mean loss over `batch`, reading parameters through `bound`.
    fn record_loss(&self, graph: &mut Graph<T>, bound: &Bindings, batch: &[&Self::Sample]) -> Result<Var>;

    /// Inputs seen by each prunable weight matrix on `batch`, as `rows × fan_in`.
    fn layer_inputs(&self, batch: &[&Self::Sample]) -> Result<IndexMap<String, Tensor<T>>>;

    fn with_params(&self, params: ParamSet<T>) -> Result<Self> {
        if !params.same_layout(self.params()) {
            return Err(Error::Contract("parameter layout does not match the model".into()));
        }
        let mut m = self.clone();
        *m.params_mut() = params;
        Ok(m)
    }
}

fn check_batch<S>(batch: &[&S]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Contract("loss requested on an empty batch".into()));
    }
    Ok(())
}

/// Mean loss of `model` on `batch`.
pub fn loss<T: Scalar, M: Model<T>>(model: &M, batch: &[&M::Sample]) -> Result<T> {
    check_batch(batch)?;
    let mut g = Graph::new();
    let bound = g.bind(model.params());
    let l = model.record_loss(&mut g, &bound, batch)?;
    Ok(g.value(l).item())
}

/// Mean loss and its gradient with respect to every parameter.
pub fn loss_and_grad<T: Scalar, M: Model<T>>(model: &M, batch: &[&M::Sample]) -> Result<(T, ParamSet<T>)> {
    check_batch(batch)?;
    let mut g = Graph::new();
    let bound = g.bind(model.params());
    let l = model.record_loss(&mut g, &bound, batch)?;
    let grad = g.backward(l)?;
    Ok((g.value(l).item(), grad))
}

/// Dense layer `x · Wᵀ + b` with `W` stored as `out × in`.
pub(crate) fn linear<T: Scalar>(g: &mut Graph<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = g.matmul_t(x, w)?;
    g.add(xw, b)
}

/// He-scaled normal initialization for an `out × in` matrix.
pub(crate) fn he_init<T: Scalar>(rows: usize, cols: usize, rng: &mut crate::rng::Xorshift64Star) -> Result<Tensor<T>> {
    Tensor::randn_with(&[rows, cols], rng, (2.0 / cols as f64).sqrt())
}
