//! Forget-set saliency: the mean squared gradient of the loss per parameter,
//! i.e. the empirical diagonal Fisher information for cross-entropy models.

use indexmap::IndexMap;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::{loss_and_grad, Model};
use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Non-negative per-parameter scores, one tensor per parameter of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap<T> {
    layers: IndexMap<String, Tensor<T>>,
    samples: usize,
}

impl<T: Scalar> SaliencyMap<T> {
    pub fn new(layers: IndexMap<String, Tensor<T>>, samples: usize) -> Result<Self> {
        if layers.values().any(|t| t.data().iter().any(|&v| !(v >= T::zero()))) {
            return Err(Error::Contract("saliency entries must be non-negative".into()));
        }
        Ok(Self { layers, samples })
    }

    pub fn layer(&self, name: &str) -> Option<&Tensor<T>> {
        self.layers.get(name)
    }

    pub fn layers(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.layers.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Number of samples the map was averaged over.
    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.samples as u64).to_le_bytes());
        for (name, t) in &self.layers {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &v in t.data() {
                h.update(v.hash_bytes());
            }
        }
        h.finalize().into()
    }

    /// Largest absolute elementwise difference to `other` (∞ on layout mismatch).
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        if self.layers.len() != other.layers.len() {
            return f64::INFINITY;
        }
        let mut worst = 0.0f64;
        for ((ka, a), (kb, b)) in self.layers.iter().zip(&other.layers) {
            if ka != kb || a.shape() != b.shape() {
                return f64::INFINITY;
            }
            for (&x, &y) in a.data().iter().zip(b.data()) {
                worst = worst.max((x - y).abs().as_f64());
            }
        }
        worst
    }
}

/// Saliency from one pass over `forget_set` in consecutive batches of
/// `batch_size`: `S = Σ_b (|b| / N) · (∇ mean-loss_b)²`.
///
/// With `batch_size = 1` this is the per-sample mean of squared gradients.
/// Larger batches square the batch-mean gradient instead, which is cheaper
/// but generally smaller than the per-sample quantity.
pub fn compute_saliency<T: Scalar, M: Model<T>>(
    model: &M,
    forget_set: &[&M::Sample],
    batch_size: usize,
) -> Result<SaliencyMap<T>> {
    if forget_set.is_empty() {
        return Err(Error::Contract("saliency needs a non-empty forget set".into()));
    }
    if batch_size == 0 {
        return Err(Error::InvalidInput("batch size must be positive".into()));
    }
    let n = T::lit(forget_set.len() as f64);
    let mut acc = model.params().zeros_like();
    for batch in forget_set.chunks(batch_size) {
        let (_, grad) = loss_and_grad(model, batch)?;
        let weight = T::lit(batch.len() as f64) / n;
        for ((_, a), (_, g)) in acc.iter_mut().zip(grad.iter()) {
            for (s, &d) in a.tensor.data_mut().iter_mut().zip(g.tensor.data()) {
                *s += weight * d * d;
            }
        }
    }
    into_map(acc, forget_set.len())
}

/// Empirical diagonal Fisher: per-sample squared gradients of the negative
/// log-likelihood, summed and then divided by the sample count.
pub fn fisher_diag<T: Scalar, M: Model<T>>(model: &M, dataset: &[&M::Sample]) -> Result<SaliencyMap<T>> {
    if dataset.is_empty() {
        return Err(Error::Contract("Fisher estimate needs a non-empty dataset".into()));
    }
    let mut sum = model.params().zeros_like();
    for sample in dataset {
        let (_, grad) = loss_and_grad(model, std::slice::from_ref(sample))?;
        for ((_, a), (_, g)) in sum.iter_mut().zip(grad.iter()) {
            for (s, &d) in a.tensor.data_mut().iter_mut().zip(g.tensor.data()) {
                *s += d * d;
            }
        }
    }
    let n = T::lit(dataset.len() as f64);
    for (_, p) in sum.iter_mut() {
        for v in p.tensor.data_mut() {
            *v /= n;
        }
    }
    into_map(sum, dataset.len())
}

fn into_map<T: Scalar>(acc: ParamSet<T>, samples: usize) -> Result<SaliencyMap<T>> {
    let layers = acc.iter().map(|(n, p)| (n.to_string(), p.tensor.clone())).collect();
    SaliencyMap::new(layers, samples)
}
