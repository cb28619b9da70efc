//! Sparsity-aware gradient transform.
//!
//! Per prunable layer, with saliency `S` and sparsity mask `M`:
//!
//! * gradient mask `G`: the `round(k · |survivors|)` most salient surviving
//!   weights (ties keep the lower flat index)
//! * pruned importance `I = Σ_{M=0} S`
//! * redistribution `W_i = 1 + α · (S_i / Σ_{M=1} S) · I` on survivors, 1 elsewhere
//! * transformed gradient `g ⊙ G ⊙ W`
//!
//! A plan is computed once from a saliency map and a mask and never refreshed.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::pruning::SparsityMask;
use crate::saliency::SaliencyMap;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SauConfig {
    /// Fraction of surviving weights per layer that receive updates, in (0, 1].
    pub topk_ratio: f64,
    /// Redistribution strength, ≥ 0.
    pub alpha: f64,
}

impl Default for SauConfig {
    fn default() -> Self {
        Self {
            topk_ratio: 0.3,
            alpha: 0.1,
        }
    }
}

impl SauConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.topk_ratio > 0.0 && self.topk_ratio <= 1.0) {
            return Err(Error::config("topk_ratio", format!("{} not in (0, 1]", self.topk_ratio)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("alpha", format!("{} must be finite and >= 0", self.alpha)));
        }
        Ok(())
    }
}

/// Top-k selection among the survivors of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGate<T> {
    pub gate: Vec<u8>,
    /// Smallest selected saliency; `None` when nothing was selected.
    pub threshold: Option<T>,
    pub kept: usize,
    pub survivors: usize,
}

/// Number of survivors a layer keeps: `round(k · n)`, halves rounded away from zero.
pub fn keep_count(k: f64, survivors: usize) -> usize {
    ((k * survivors as f64).round() as usize).min(survivors)
}

pub fn topk_gate<T: Scalar>(saliency: &[T], mask: &[u8], k: f64) -> LayerGate<T> {
    let mut surv: Vec<usize> = (0..mask.len()).filter(|&i| mask[i] == 1).collect();
    let kept = keep_count(k, surv.len());
    surv.sort_by(|&a, &b| {
        saliency[b]
            .partial_cmp(&saliency[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut gate = vec![0u8; mask.len()];
    for &i in &surv[..kept] {
        gate[i] = 1;
    }
    LayerGate {
        gate,
        threshold: kept.checked_sub(1).map(|last| saliency[surv[last]]),
        kept,
        survivors: surv.len(),
    }
}

/// `Σ_{i: M_i = 0} S_i`, summed in index order.
pub fn layer_pruned_importance<T: Scalar>(saliency: &[T], mask: &[u8]) -> T {
    saliency
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m == 0)
        .fold(T::zero(), |acc, (&s, _)| acc + s)
}

/// Redistribution weights for one layer. Falls back to all ones when the
/// surviving saliency sums to zero.
pub fn layer_redistribution<T: Scalar>(saliency: &[T], mask: &[u8], alpha: T) -> Vec<T> {
    let pruned = layer_pruned_importance(saliency, mask);
    let surviving = saliency
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m == 1)
        .fold(T::zero(), |acc, (&s, _)| acc + s);
    if surviving == T::zero() {
        return vec![T::one(); saliency.len()];
    }
    saliency
        .iter()
        .zip(mask)
        .map(|(&s, &m)| {
            if m == 1 {
                T::one() + alpha * (s / surviving) * pruned
            } else {
                T::one()
            }
        })
        .collect()
}

fn aligned<'a, T: Scalar>(saliency: &'a SaliencyMap<T>, name: &str, mask: &Tensor<u8>) -> Result<&'a Tensor<T>> {
    let s = saliency
        .layer(name)
        .ok_or_else(|| Error::Contract(format!("saliency map lacks layer `{name}`")))?;
    if s.shape() != mask.shape() {
        return Err(Error::Contract(format!(
            "saliency shape {:?} differs from mask shape {:?} for `{name}`",
            s.shape(),
            mask.shape()
        )));
    }
    Ok(s)
}

pub fn build_gradient_mask<T: Scalar>(
    saliency: &SaliencyMap<T>,
    mask: &SparsityMask,
    k: f64,
) -> Result<IndexMap<String, LayerGate<T>>> {
    if !(k > 0.0 && k <= 1.0) {
        return Err(Error::Contract(format!("top-k ratio {k} not in (0, 1]")));
    }
    mask.layers()
        .map(|(name, m)| {
            let s = aligned(saliency, name, m)?;
            Ok((name.to_string(), topk_gate(s.data(), m.data(), k)))
        })
        .collect()
}

pub fn pruned_importance<T: Scalar>(saliency: &SaliencyMap<T>, mask: &SparsityMask) -> Result<IndexMap<String, T>> {
    mask.layers()
        .map(|(name, m)| {
            let s = aligned(saliency, name, m)?;
            Ok((name.to_string(), layer_pruned_importance(s.data(), m.data())))
        })
        .collect()
}

pub fn build_redistribution<T: Scalar>(
    saliency: &SaliencyMap<T>,
    mask: &SparsityMask,
    alpha: f64,
) -> Result<IndexMap<String, Tensor<T>>> {
    if !(alpha >= 0.0) {
        return Err(Error::Contract(format!("alpha {alpha} must be >= 0")));
    }
    mask.layers()
        .map(|(name, m)| {
            let s = aligned(saliency, name, m)?;
            let w = layer_redistribution(s.data(), m.data(), T::lit(alpha));
            Ok((name.to_string(), Tensor::from_vec(m.shape().to_vec(), w)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerPlan<T> {
    pub gate: Tensor<u8>,
    pub redistribution: Tensor<T>,
    pub pruned_importance: T,
    pub threshold: Option<T>,
    /// Set when the layer had no surviving weights; its gate is all zeros.
    pub no_survivors: bool,
}

/// Immutable gradient transform for one (mask, saliency) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SauPlan<T> {
    pub config: SauConfig,
    pub layers: IndexMap<String, LayerPlan<T>>,
    pub mask_hash: [u8; 32],
    pub saliency_hash: [u8; 32],
}

impl<T: Scalar> SauPlan<T> {
    pub fn build(saliency: &SaliencyMap<T>, mask: &SparsityMask, config: SauConfig) -> Result<Self> {
        config.validate()?;
        let gates = build_gradient_mask(saliency, mask, config.topk_ratio)?;
        let weights = build_redistribution(saliency, mask, config.alpha)?;
        let importance = pruned_importance(saliency, mask)?;
        let mut layers = IndexMap::new();
        for (name, m) in mask.layers() {
            let g = &gates[name];
            layers.insert(
                name.to_string(),
                LayerPlan {
                    gate: Tensor::from_vec(m.shape().to_vec(), g.gate.clone())?,
                    redistribution: weights[name].clone(),
                    pruned_importance: importance[name],
                    threshold: g.threshold,
                    no_survivors: g.survivors == 0,
                },
            );
        }
        Ok(Self {
            config,
            layers,
            mask_hash: mask.content_hash(),
            saliency_hash: saliency.content_hash(),
        })
    }

    /// Layers flagged as having no surviving weights.
    pub fn empty_layers(&self) -> Vec<&str> {
        self.layers
            .iter()
            .filter(|(_, l)| l.no_survivors)
            .map(|(n, _)| n.as_str())
            .collect()
    }
}

fn check_prunable_names<T: Scalar>(grad: &ParamSet<T>, names: &[&str]) -> Result<()> {
    let prunable: Vec<&str> = grad.prunable().map(|(n, _)| n).collect();
    if prunable != names {
        return Err(Error::Contract(format!(
            "gradient prunable tensors {prunable:?} do not match {names:?}"
        )));
    }
    Ok(())
}

/// `g ⊙ G ⊙ W` on prunable tensors; other tensors pass through.
pub fn transform_gradient<T: Scalar>(grad: &ParamSet<T>, plan: &SauPlan<T>) -> Result<ParamSet<T>> {
    let names: Vec<&str> = plan.layers.keys().map(String::as_str).collect();
    check_prunable_names(grad, &names)?;
    let mut out = grad.clone();
    for (name, p) in out.iter_mut() {
        if !p.prunable {
            continue;
        }
        let lp = &plan.layers[name];
        if lp.gate.shape() != p.tensor.shape() {
            return Err(Error::Contract(format!("plan shape mismatch for `{name}`")));
        }
        for ((d, &g), &w) in p
            .tensor
            .data_mut()
            .iter_mut()
            .zip(lp.gate.data())
            .zip(lp.redistribution.data())
        {
            *d = *d * T::lit(g as f64) * w;
        }
    }
    Ok(out)
}

/// `g ⊙ M` on prunable tensors: the gradient restricted to surviving weights.
pub fn restrict_gradient<T: Scalar>(grad: &ParamSet<T>, mask: &SparsityMask) -> Result<ParamSet<T>> {
    let names: Vec<&str> = mask.layers().map(|(n, _)| n).collect();
    check_prunable_names(grad, &names)?;
    let mut out = grad.clone();
    for (name, p) in out.iter_mut() {
        if !p.prunable {
            continue;
        }
        let m = mask.layer(name).expect("checked above");
        if m.shape() != p.tensor.shape() {
            return Err(Error::Contract(format!("mask shape mismatch for `{name}`")));
        }
        for (d, &b) in p.tensor.data_mut().iter_mut().zip(m.data()) {
            *d = *d * T::lit(b as f64);
        }
    }
    Ok(out)
}
