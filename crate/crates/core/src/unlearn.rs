//! GradDiff unlearning: gradient ascent on forget batches plus λ-weighted
//! descent on retain batches, with the gradient either SAU-transformed or
//! restricted to the sparsity mask.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::eval::ScoreCard;
use crate::models::{exact_match, loss, CharLm, Fact, FactDataset, Model};
use crate::params::ParamSet;
use crate::pruning::{sparsity_of, SparsityMask};
use crate::rng::Xorshift64Star;
use crate::sau::{restrict_gradient, transform_gradient, SauConfig, SauPlan};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Sau,
    Baseline,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Sau => "sau",
            Variant::Baseline => "baseline",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sau" => Ok(Variant::Sau),
            "baseline" => Ok(Variant::Baseline),
            other => Err(Error::config("variant", format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnlearnConfig {
    pub lr: f64,
    /// Weight λ of the retain loss.
    pub retain_weight: f64,
    pub epochs: usize,
    pub forget_batch_size: usize,
    pub retain_batch_size: usize,
    pub seed: u64,
    pub variant: Variant,
    /// Record wall-clock time in the manifest. Off by default so that
    /// outputs are byte-reproducible.
    #[serde(default)]
    pub record_timing: bool,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            retain_weight: 1.0,
            epochs: 50,
            forget_batch_size: 4,
            retain_batch_size: 4,
            seed: 42,
            variant: Variant::Sau,
            record_timing: false,
        }
    }
}

impl UnlearnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("unlearn_lr", format!("{} must be finite and > 0", self.lr)));
        }
        if !(self.retain_weight >= 0.0 && self.retain_weight.is_finite()) {
            return Err(Error::config("retain_weight", format!("{} must be finite and >= 0", self.retain_weight)));
        }
        if self.forget_batch_size == 0 {
            return Err(Error::config("forget_batch_size", "must be positive"));
        }
        if self.retain_batch_size == 0 {
            return Err(Error::config("retain_batch_size", "must be positive"));
        }
        Ok(())
    }
}

/// How the raw GradDiff gradient is turned into an update direction.
#[derive(Debug, Clone, Copy)]
pub enum GradientRule<'a, T> {
    Sau(&'a SauPlan<T>),
    Restricted(&'a SparsityMask),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub forget: f64,
    pub retain: f64,
}

/// The update direction for one GradDiff step, without applying it.
pub fn graddiff_gradient<T: Scalar, M: Model<T>>(
    model: &M,
    rule: GradientRule<'_, T>,
    forget_batch: &[&M::Sample],
    retain_batch: &[&M::Sample],
    retain_weight: f64,
) -> Result<(StepLosses, ParamSet<T>)> {
    if forget_batch.is_empty() {
        return Err(Error::Contract("empty forget batch".into()));
    }
    let mut g = Graph::new();
    let bound = g.bind(model.params());
    let lf = model.record_loss(&mut g, &bound, forget_batch)?;
    let mut total = g.neg(lf);
    let mut retain = 0.0;
    if !retain_batch.is_empty() {
        let lr = model.record_loss(&mut g, &bound, retain_batch)?;
        retain = g.value(lr).item().as_f64();
        let weighted = g.scale(lr, T::lit(retain_weight));
        total = g.add(total, weighted)?;
    }
    let losses = StepLosses {
        forget: g.value(lf).item().as_f64(),
        retain,
    };
    if !(losses.forget.is_finite() && losses.retain.is_finite()) {
        return Err(Error::Numerical(format!("non-finite GradDiff loss {losses:?}")));
    }
    let grad = g.backward(total)?;
    let grad = match rule {
        GradientRule::Sau(plan) => transform_gradient(&grad, plan)?,
        GradientRule::Restricted(mask) => restrict_gradient(&grad, mask)?,
    };
    Ok((losses, grad))
}

/// One SGD step on `-L(forget) + λ·L(retain)` with the transformed gradient.
/// Parameters must already be zero wherever the mask is zero; they stay zero.
pub fn graddiff_step<T: Scalar, M: Model<T>>(
    model: &mut M,
    rule: GradientRule<'_, T>,
    forget_batch: &[&M::Sample],
    retain_batch: &[&M::Sample],
    retain_weight: f64,
    lr: f64,
) -> Result<StepLosses> {
    let (losses, grad) = graddiff_gradient(model, rule, forget_batch, retain_batch, retain_weight)?;
    crate::models::sgd_update(model.params_mut(), &grad, T::lit(lr));
    Ok(losses)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub forget_loss: f64,
    pub retain_loss: f64,
    pub forget_em: f64,
    pub retain_em: f64,
    /// Largest |θ| over masked-out weights; zero whenever sparsity is intact.
    pub pruned_max_abs: f64,
    pub sparsity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: UnlearnConfig,
    pub sau: Option<SauConfig>,
    pub seed: u64,
    pub sparsity: f64,
    /// Entry 0 is the state before unlearning.
    pub metrics: Vec<EpochMetrics>,
    pub final_scores: ScoreCard,
    pub empty_plan_layers: Vec<String>,
    pub wall_ms: u64,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// `epoch,forget_loss,retain_loss,forget_em,retain_em` per row.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("epoch,forget_loss,retain_loss,forget_em,retain_em\n");
        for m in &self.metrics {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                m.epoch, m.forget_loss, m.retain_loss, m.forget_em, m.retain_em
            ));
        }
        out
    }
}

/// Largest |θ| at positions the mask removes.
pub fn pruned_max_abs<T: Scalar>(params: &ParamSet<T>, mask: &SparsityMask) -> f64 {
    let mut worst = 0.0f64;
    for (name, m) in mask.layers() {
        if let Some(t) = params.get(name) {
            for (&w, &b) in t.data().iter().zip(m.data()) {
                if b == 0 {
                    worst = worst.max(w.abs().as_f64());
                }
            }
        }
    }
    worst
}

fn measure<T: Scalar>(model: &CharLm<T>, forget: &[&Fact], retain: &[&Fact], mask: &SparsityMask, epoch: usize) -> Result<EpochMetrics> {
    let mean_loss = |facts: &[&Fact]| -> Result<f64> {
        if facts.is_empty() {
            Ok(0.0)
        } else {
            Ok(loss(model, facts)?.as_f64())
        }
    };
    Ok(EpochMetrics {
        epoch,
        forget_loss: mean_loss(forget)?,
        retain_loss: mean_loss(retain)?,
        forget_em: exact_match(model, forget)?.fraction,
        retain_em: exact_match(model, retain)?.fraction,
        pruned_max_abs: pruned_max_abs(model.params(), mask),
        sparsity: sparsity_of(mask),
    })
}

/// Runs `epochs` passes of GradDiff. Forget and retain orders are shuffled
/// once with the run seed; each epoch walks the forget set in batches while
/// retain batches are drawn from an independent cyclic stream.
pub fn run_unlearning<T: Scalar>(
    model: &mut CharLm<T>,
    mask: &SparsityMask,
    plan: Option<&SauPlan<T>>,
    dataset: &FactDataset,
    config: &UnlearnConfig,
) -> Result<RunManifest> {
    config.validate()?;
    mask.check_covers(model.params())?;
    if pruned_max_abs(model.params(), mask) != 0.0 {
        return Err(Error::Contract("parameters are non-zero at masked positions".into()));
    }
    let rule = match config.variant {
        Variant::Baseline => GradientRule::Restricted(mask),
        Variant::Sau => {
            let plan = plan.ok_or_else(|| Error::Contract("the sau variant needs a plan".into()))?;
            if plan.mask_hash != mask.content_hash() {
                return Err(Error::HashMismatch("plan was built for a different sparsity mask".into()));
            }
            GradientRule::Sau(plan)
        }
    };
    let forget = dataset.forget();
    let retain = dataset.retain();
    if forget.is_empty() {
        return Err(Error::Contract("forget set is empty".into()));
    }

    let start = Instant::now();
    let mut rng = Xorshift64Star::new(config.seed);
    let mut forget_order: Vec<usize> = (0..forget.len()).collect();
    let mut retain_order: Vec<usize> = (0..retain.len()).collect();
    rng.shuffle(&mut forget_order);
    rng.shuffle(&mut retain_order);
    let mut retain_cursor = 0;

    let mut metrics = vec![measure(model, &forget, &retain, mask, 0)?];
    for epoch in 0..config.epochs {
        for (batch, chunk) in forget_order.chunks(config.forget_batch_size).enumerate() {
            let fb: Vec<&Fact> = chunk.iter().map(|&i| forget[i]).collect();
            let rb: Vec<&Fact> = if retain.is_empty() {
                Vec::new()
            } else {
                (0..config.retain_batch_size)
                    .map(|j| retain[retain_order[(retain_cursor + j) % retain.len()]])
                    .collect()
            };
            if !retain.is_empty() {
                retain_cursor = (retain_cursor + config.retain_batch_size) % retain.len();
            }
            graddiff_step(model, rule, &fb, &rb, config.retain_weight, config.lr).map_err(|e| match e {
                Error::Numerical(_) => Error::Unlearning { epoch, batch },
                other => other,
            })?;
        }
        metrics.push(measure(model, &forget, &retain, mask, epoch + 1)?);
    }

    let last = metrics.last().expect("initial metrics present");
    let final_scores = ScoreCard::from_em(last.forget_em, last.retain_em);
    Ok(RunManifest {
        config: *config,
        sau: match rule {
            GradientRule::Sau(p) => Some(p.config),
            GradientRule::Restricted(_) => None,
        },
        seed: config.seed,
        sparsity: sparsity_of(mask),
        metrics,
        final_scores,
        empty_plan_layers: match rule {
            GradientRule::Sau(p) => p.empty_layers().into_iter().map(str::to_string).collect(),
            GradientRule::Restricted(_) => Vec::new(),
        },
        wall_ms: if config.record_timing {
            start.elapsed().as_millis() as u64
        } else {
            0
        },
    })
}
