//! Flat JSON experiment configuration. Every key is optional; missing keys
//! take the defaults below, unknown keys are rejected.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{Arm, Pruner, SweepSpec};
use crate::models::{gen_facts, CharLmConfig, FactDataset};
use crate::sau::SauConfig;
use crate::unlearn::{UnlearnConfig, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub vocab: usize,
    pub embed_dim: usize,
    pub hidden_width: usize,
    pub context_len: usize,
    pub model_seed: u64,

    pub n_facts: usize,
    pub key_len: usize,
    pub val_len: usize,
    pub forget_fraction: f64,
    pub data_seed: u64,

    pub train_lr: f64,
    pub train_epochs: usize,
    pub train_batch_size: usize,
    pub train_seed: u64,

    pub pruner: Pruner,
    pub sparsity: f64,

    pub topk_ratio: f64,
    pub alpha: f64,
    pub saliency_batch_size: usize,

    pub unlearn_lr: f64,
    pub retain_weight: f64,
    pub unlearn_epochs: usize,
    pub forget_batch_size: usize,
    pub retain_batch_size: usize,
    pub variant: Variant,
    pub seed: u64,
    pub record_timing: bool,

    pub sweep_sparsities: Vec<f64>,
    pub sweep_seeds: Vec<u64>,
    pub sweep_variants: Vec<Variant>,
    pub ablation_topk: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            vocab: 64,
            embed_dim: 32,
            hidden_width: 128,
            context_len: 7,
            model_seed: 42,
            n_facts: 200,
            key_len: 4,
            val_len: 3,
            forget_fraction: 0.1,
            data_seed: 42,
            train_lr: 0.1,
            train_epochs: 40,
            train_batch_size: 8,
            train_seed: 42,
            pruner: Pruner::Magnitude,
            sparsity: 0.5,
            topk_ratio: 0.3,
            alpha: 0.1,
            saliency_batch_size: 1,
            unlearn_lr: 1e-2,
            retain_weight: 5.0,
            unlearn_epochs: 50,
            forget_batch_size: 4,
            retain_batch_size: 4,
            variant: Variant::Sau,
            seed: 42,
            record_timing: false,
            sweep_sparsities: vec![0.0, 0.25, 0.5, 0.75],
            sweep_seeds: vec![1, 2, 3, 4, 5],
            sweep_variants: vec![Variant::Baseline, Variant::Sau],
            ablation_topk: vec![0.1, 0.3, 0.5],
        }
    }
}

fn positive(field: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::config(field, "must be positive"));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::config("<document>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every precondition up front; the error names the field.
    pub fn validate(&self) -> Result<()> {
        positive("vocab", self.vocab)?;
        positive("embed_dim", self.embed_dim)?;
        positive("hidden_width", self.hidden_width)?;
        positive("n_facts", self.n_facts)?;
        positive("key_len", self.key_len)?;
        positive("val_len", self.val_len)?;
        positive("train_batch_size", self.train_batch_size)?;
        positive("saliency_batch_size", self.saliency_batch_size)?;
        if self.context_len < self.key_len + self.val_len {
            return Err(Error::config(
                "context_len",
                format!("must be at least key_len + val_len = {}", self.key_len + self.val_len),
            ));
        }
        if (self.vocab as f64).powi(self.key_len as i32) < self.n_facts as f64 {
            return Err(Error::config("n_facts", "more facts than distinct keys"));
        }
        if !(0.0..=1.0).contains(&self.forget_fraction) {
            return Err(Error::config("forget_fraction", "must be in [0, 1]"));
        }
        if !(self.train_lr >= 0.0 && self.train_lr.is_finite()) {
            return Err(Error::config("train_lr", "must be finite and ≥ 0"));
        }
        if !(0.0..1.0).contains(&self.sparsity) {
            return Err(Error::config("sparsity", "must be in [0, 1)"));
        }
        self.sau().validate()?;
        self.unlearn().validate()?;
        if self.sweep_sparsities.is_empty() || self.sweep_sparsities.iter().any(|s| !(0.0..1.0).contains(s)) {
            return Err(Error::config("sweep_sparsities", "need a non-empty list in [0, 1)"));
        }
        if self.sweep_seeds.is_empty() {
            return Err(Error::config("sweep_seeds", "need at least one seed"));
        }
        if self.sweep_variants.is_empty() {
            return Err(Error::config("sweep_variants", "need at least one variant"));
        }
        if self.ablation_topk.is_empty() || self.ablation_topk.iter().any(|k| !(*k > 0.0 && *k <= 1.0)) {
            return Err(Error::config("ablation_topk", "need a non-empty list in (0, 1]"));
        }
        Ok(())
    }

    pub fn model(&self) -> CharLmConfig {
        CharLmConfig {
            vocab: self.vocab,
            embed_dim: self.embed_dim,
            hidden_width: self.hidden_width,
            context_len: self.context_len,
        }
    }

    pub fn dataset(&self) -> Result<FactDataset> {
        gen_facts(
            self.n_facts,
            self.vocab,
            self.key_len,
            self.val_len,
            self.forget_fraction,
            self.data_seed,
        )
    }

    pub fn sau(&self) -> SauConfig {
        SauConfig {
            topk_ratio: self.topk_ratio,
            alpha: self.alpha,
        }
    }

    pub fn unlearn(&self) -> UnlearnConfig {
        UnlearnConfig {
            lr: self.unlearn_lr,
            retain_weight: self.retain_weight,
            epochs: self.unlearn_epochs,
            forget_batch_size: self.forget_batch_size,
            retain_batch_size: self.retain_batch_size,
            seed: self.seed,
            variant: self.variant,
            record_timing: self.record_timing,
        }
    }

    pub fn arms(&self) -> Vec<Arm> {
        self.sweep_variants
            .iter()
            .map(|v| match v {
                Variant::Baseline => Arm::baseline(),
                Variant::Sau => Arm::sau(self.topk_ratio, self.alpha),
            })
            .collect()
    }

    pub fn sweep(&self) -> SweepSpec {
        SweepSpec {
            pruner: self.pruner,
            sparsities: self.sweep_sparsities.clone(),
            arms: self.arms(),
            seeds: self.sweep_seeds.clone(),
            unlearn: self.unlearn(),
            saliency_batch_size: self.saliency_batch_size,
        }
    }
}
