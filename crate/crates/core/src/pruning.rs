//! Binary sparsity masks over prunable weight matrices.
//!
//! Sparsity is per layer: each matrix loses `floor(s · n)` weights with the
//! lowest score, ties pruned in ascending flat-index order.

use indexmap::IndexMap;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::Model;
use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SparsityMask {
    layers: IndexMap<String, Tensor<u8>>,
    target: f64,
}

fn check_sparsity(s: f64) -> Result<()> {
    if !(0.0..1.0).contains(&s) {
        return Err(Error::Contract(format!("sparsity {s} not in [0, 1)")));
    }
    Ok(())
}

impl SparsityMask {
    /// Every entry must be 0 or 1.
    pub fn new(layers: IndexMap<String, Tensor<u8>>, target: f64) -> Result<Self> {
        if layers.values().any(|t| t.data().iter().any(|&b| b > 1)) {
            return Err(Error::Contract("mask values must be 0 or 1".into()));
        }
        Ok(Self { layers, target })
    }

    /// All-ones mask over the prunable tensors of `params`.
    pub fn dense<T: Scalar>(params: &ParamSet<T>) -> Self {
        let layers = params
            .prunable()
            .map(|(n, t)| (n.to_string(), t.map(|_| 1u8)))
            .collect();
        Self { layers, target: 0.0 }
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    pub fn layers(&self) -> impl Iterator<Item = (&str, &Tensor<u8>)> {
        self.layers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn layer(&self, name: &str) -> Option<&Tensor<u8>> {
        self.layers.get(name)
    }

    pub fn survivors(&self) -> usize {
        self.layers.values().map(|t| t.data().iter().filter(|&&b| b == 1).count()).sum()
    }

    pub fn total(&self) -> usize {
        self.layers.values().map(Tensor::len).sum()
    }

    /// Checks the mask covers exactly the prunable tensors of `params`, with matching shapes.
    pub fn check_covers<T: Scalar>(&self, params: &ParamSet<T>) -> Result<()> {
        let prunable: Vec<(&str, &Tensor<T>)> = params.prunable().collect();
        if prunable.len() != self.layers.len() {
            return Err(Error::Contract(format!(
                "mask has {} layers, parameters have {} prunable tensors",
                self.layers.len(),
                prunable.len()
            )));
        }
        for (name, t) in prunable {
            let m = self
                .layers
                .get(name)
                .ok_or_else(|| Error::Contract(format!("mask lacks layer `{name}`")))?;
            if m.shape() != t.shape() {
                return Err(Error::Contract(format!(
                    "mask shape {:?} differs from `{name}` shape {:?}",
                    m.shape(),
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.target.to_le_bytes());
        for (name, t) in &self.layers {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            h.update(t.data());
        }
        h.finalize().into()
    }
}

/// Keeps all but the `floor(s · n)` lowest scores; equal scores are pruned
/// lower flat index first.
pub fn prune_by_scores<T: Scalar>(scores: &[T], s: f64) -> Vec<u8> {
    let n = scores.len();
    let n_prune = (s * n as f64).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    let mut mask = vec![1u8; n];
    for &i in &order[..n_prune.min(n)] {
        mask[i] = 0;
    }
    mask
}

pub fn magnitude_prune<T: Scalar>(params: &ParamSet<T>, s: f64) -> Result<SparsityMask> {
    check_sparsity(s)?;
    let mut layers = IndexMap::new();
    for (name, w) in params.prunable() {
        let scores: Vec<T> = w.data().iter().map(|v| v.abs()).collect();
        layers.insert(name.to_string(), Tensor::from_vec(w.shape().to_vec(), prune_by_scores(&scores, s))?);
    }
    Ok(SparsityMask { layers, target: s })
}

/// `|W[o, j]| · rms_j` for an `out × in` weight and per-input RMS activations.
pub fn activation_scores<T: Scalar>(weight: &Tensor<T>, input_rms: &[T]) -> Result<Vec<T>> {
    let (rows, cols) = weight.dims2()?;
    if input_rms.len() != cols {
        return Err(Error::InvalidShape(format!(
            "{} activation norms for a weight with {cols} inputs",
            input_rms.len()
        )));
    }
    let w = weight.data();
    Ok((0..rows * cols).map(|i| w[i].abs() * input_rms[i % cols]).collect())
}

/// Root mean square of each column of a `rows × cols` activation matrix.
pub fn column_rms<T: Scalar>(acts: &Tensor<T>) -> Result<Vec<T>> {
    let (rows, cols) = acts.dims2()?;
    let mut acc = vec![T::zero(); cols];
    for r in 0..rows {
        for (a, &x) in acc.iter_mut().zip(&acts.data()[r * cols..(r + 1) * cols]) {
            *a += x * x;
        }
    }
    let n = T::lit(rows as f64);
    Ok(acc.into_iter().map(|a| (a / n).sqrt()).collect())
}

/// Activation-aware pruning: each weight is scored by its magnitude times the
/// RMS of the input feature it multiplies, measured on a calibration batch.
pub fn activation_prune<T: Scalar, M: Model<T>>(model: &M, calibration: &[&M::Sample], s: f64) -> Result<SparsityMask> {
    check_sparsity(s)?;
    if calibration.is_empty() {
        return Err(Error::Contract("activation pruning needs a non-empty calibration batch".into()));
    }
    let inputs = model.layer_inputs(calibration)?;
    let mut layers = IndexMap::new();
    for (name, w) in model.params().prunable() {
        let acts = inputs
            .get(name)
            .ok_or_else(|| Error::Contract(format!("model reports no inputs for `{name}`")))?;
        let scores = activation_scores(w, &column_rms(acts)?)?;
        layers.insert(name.to_string(), Tensor::from_vec(w.shape().to_vec(), prune_by_scores(&scores, s))?);
    }
    Ok(SparsityMask { layers, target: s })
}

/// `θ ⊙ M` on prunable tensors; everything else is copied unchanged.
pub fn apply_mask<T: Scalar>(params: &ParamSet<T>, mask: &SparsityMask) -> Result<ParamSet<T>> {
    mask.check_covers(params)?;
    let mut out = params.clone();
    for (name, p) in out.iter_mut() {
        if !p.prunable {
            continue;
        }
        let m = &mask.layers[name];
        for (w, &b) in p.tensor.data_mut().iter_mut().zip(m.data()) {
            if b == 0 {
                *w = T::zero();
            }
        }
    }
    Ok(out)
}

/// Fraction of masked-out weights across all layers.
pub fn sparsity_of(mask: &SparsityMask) -> f64 {
    let total = mask.total();
    if total == 0 {
        return 0.0;
    }
    1.0 - mask.survivors() as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Labeled, Mlp};

    fn one_layer(shape: Vec<usize>, data: Vec<f64>) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::from_vec(shape, data).unwrap(), true).unwrap();
        p.insert("b", Tensor::ones(&[1]).unwrap(), false).unwrap();
        p
    }

    #[test]
    fn zero_sparsity_keeps_everything() {
        let p = one_layer(vec![2, 2], vec![0.0, 1.0, -3.0, 2.0]);
        let m = magnitude_prune(&p, 0.0).unwrap();
        assert_eq!(m.layer("w").unwrap().data(), &[1, 1, 1, 1]);
        assert_eq!(sparsity_of(&m), 0.0);
    }

    #[test]
    fn magnitude_example() {
        let p = one_layer(vec![1, 4], vec![1.0, -2.0, 3.0, -4.0]);
        let m = magnitude_prune(&p, 0.5).unwrap();
        assert_eq!(m.layer("w").unwrap().data(), &[0, 0, 1, 1]);
        let sparse = apply_mask(&p, &m).unwrap();
        assert_eq!(sparse.get("w").unwrap().data(), &[0.0, 0.0, 3.0, -4.0]);
        assert_eq!(sparse.get("b").unwrap().data(), &[1.0]);
    }

    #[test]
    fn ties_pruned_by_lower_index() {
        let p = one_layer(vec![1, 4], vec![1.0, 1.0, 1.0, 1.0]);
        let m = magnitude_prune(&p, 0.5).unwrap();
        assert_eq!(m.layer("w").unwrap().data(), &[0, 0, 1, 1]);
    }

    #[test]
    fn exact_survivor_count() {
        let p = one_layer(vec![64, 64], Tensor::<f64>::randn(&[4096], 3, 1.0).unwrap().into_data());
        let m = magnitude_prune(&p, 0.5).unwrap();
        assert_eq!(m.survivors(), 2048);
    }

    #[test]
    fn sparsity_out_of_range() {
        let p = one_layer(vec![1, 2], vec![1.0, 2.0]);
        assert!(magnitude_prune(&p, 1.0).is_err());
        assert!(magnitude_prune(&p, -0.1).is_err());
    }

    #[test]
    fn all_zero_layer_mask() {
        let p = one_layer(vec![1, 3], vec![1.0, 2.0, 3.0]);
        let mut layers = IndexMap::new();
        layers.insert("w".to_string(), Tensor::from_vec(vec![1, 3], vec![0u8, 0, 0]).unwrap());
        let m = SparsityMask::new(layers, 0.99).unwrap();
        assert_eq!(apply_mask(&p, &m).unwrap().get("w").unwrap().data(), &[0.0; 3]);
        assert_eq!(sparsity_of(&m), 1.0);
    }

    #[test]
    fn mask_layout_mismatch_rejected() {
        let p = one_layer(vec![1, 3], vec![1.0, 2.0, 3.0]);
        let mut layers = IndexMap::new();
        layers.insert("w".to_string(), Tensor::from_vec(vec![3, 1], vec![1u8, 0, 1]).unwrap());
        let m = SparsityMask::new(layers, 0.3).unwrap();
        assert!(matches!(apply_mask(&p, &m), Err(Error::Contract(_))));
    }

    #[test]
    fn activation_score_example() {
        let w = Tensor::from_vec(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let scores = activation_scores(&w, &[10.0, 0.1]).unwrap();
        assert_eq!(prune_by_scores(&scores, 0.5), vec![1, 0]);
    }

    #[test]
    fn equal_activations_reduce_to_magnitude() {
        let model = Mlp::<f64>::new(&[3, 4, 2], 8).unwrap();
        // Identical calibration samples with equal features make every first-layer input RMS equal.
        let s = Labeled {
            features: vec![0.7, 0.7, 0.7],
            label: 0,
        };
        let am = activation_prune(&model, &[&s, &s], 0.5).unwrap();
        let mm = magnitude_prune(model.params(), 0.5).unwrap();
        assert_eq!(am.layer("fc0.weight"), mm.layer("fc0.weight"));
        assert!(activation_prune(&model, &[], 0.5).is_err());
        let dense = activation_prune(&model, &[&s], 0.0).unwrap();
        assert_eq!(dense.survivors(), dense.total());
    }

    #[test]
    fn column_rms_values() {
        let a = Tensor::from_vec(vec![2, 2], vec![3.0, 0.0, 4.0, 2.0]).unwrap();
        let r = column_rms(&a).unwrap();
        assert!((r[0] - 12.5f64.sqrt()).abs() < 1e-12);
        assert!((r[1] - 2f64.sqrt()).abs() < 1e-12);
    }
}
