//! Forgetting/utility scoring and the experiment designs built on it:
//! sparsity sweeps, the resurfacing experiment and the two ablations.

mod report;

pub use report::{read_sweep_csv, sweep_csv, sweep_svg, summary_csv};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{exact_match, CharLm, Fact, FactDataset, Model};
use crate::pruning::{activation_prune, apply_mask, magnitude_prune, SparsityMask};
use crate::rng::derive_seed;
use crate::saliency::compute_saliency;
use crate::sau::{SauConfig, SauPlan};
use crate::scalar::Scalar;
use crate::unlearn::{run_unlearning, RunManifest, UnlearnConfig, Variant};

/// Harmonic mean, defined as 0 when either argument is 0. Written as
/// `lo · 2hi / (lo + hi)` so that it is exactly symmetric and `H(x, x) = x`.
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        return 0.0;
    }
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    lo * (2.0 * hi / (lo + hi))
}

/// Desk-scale forgetting score: FQ = 1 − EM(forget), U = EM(retain),
/// aggregate = harmonic mean of the two.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreCard {
    pub forget_quality: f64,
    pub utility: f64,
    pub aggregate: f64,
    pub forget_em: f64,
    pub retain_em: f64,
}

impl ScoreCard {
    pub fn from_em(forget_em: f64, retain_em: f64) -> Self {
        let forget_quality = 1.0 - forget_em;
        Self {
            forget_quality,
            utility: retain_em,
            aggregate: harmonic_mean(forget_quality, retain_em),
            forget_em,
            retain_em,
        }
    }
}

pub fn score<T: Scalar>(model: &CharLm<T>, dataset: &FactDataset) -> Result<ScoreCard> {
    let f = exact_match(model, &dataset.forget())?;
    let r = exact_match(model, &dataset.retain())?;
    Ok(ScoreCard::from_em(f.fraction, r.fraction))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pruner {
    Magnitude,
    Activation,
}

impl Pruner {
    pub fn as_str(self) -> &'static str {
        match self {
            Pruner::Magnitude => "magnitude",
            Pruner::Activation => "activation",
        }
    }
}

impl std::str::FromStr for Pruner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "magnitude" => Ok(Pruner::Magnitude),
            "activation" => Ok(Pruner::Activation),
            other => Err(Error::config("pruner", format!("unknown pruner `{other}`"))),
        }
    }
}

/// Calibration facts for activation-aware pruning: the first 64 retain facts.
pub const CALIBRATION_FACTS: usize = 64;

pub fn prune_model<T: Scalar>(model: &CharLm<T>, dataset: &FactDataset, pruner: Pruner, s: f64) -> Result<SparsityMask> {
    match pruner {
        Pruner::Magnitude => magnitude_prune(model.params(), s),
        Pruner::Activation => {
            let retain = dataset.retain();
            let calib: Vec<&Fact> = retain.into_iter().take(CALIBRATION_FACTS).collect();
            activation_prune(model, &calib, s)
        }
    }
}

/// One unlearning method under comparison. The baseline is written with
/// `topk = 1, alpha = 0`, the SAU settings it is equivalent to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub variant: Variant,
    pub topk: f64,
    pub alpha: f64,
}

impl Arm {
    pub fn baseline() -> Self {
        Self {
            variant: Variant::Baseline,
            topk: 1.0,
            alpha: 0.0,
        }
    }

    pub fn sau(topk: f64, alpha: f64) -> Self {
        Self {
            variant: Variant::Sau,
            topk,
            alpha,
        }
    }

    pub fn label(&self) -> String {
        match self.variant {
            Variant::Baseline => "baseline".into(),
            Variant::Sau => format!("sau(k={},a={})", self.topk, self.alpha),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub pruner: Pruner,
    pub sparsity: f64,
    pub variant: Variant,
    pub topk: f64,
    pub alpha: f64,
    pub seed: u64,
    pub fq: f64,
    pub utility: f64,
    pub aggregate: f64,
    pub forget_em: f64,
    pub retain_em: f64,
    pub epochs: usize,
    pub wall_ms: u64,
}

impl SweepRow {
    pub fn arm(&self) -> Arm {
        Arm {
            variant: self.variant,
            topk: self.topk,
            alpha: self.alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub sparsity: f64,
    pub arm: Arm,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<CellFailure>,
    /// Full run manifests, parallel to `rows`.
    pub manifests: Vec<RunManifest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub pruner: Pruner,
    pub sparsity: f64,
    pub arm: Arm,
    pub runs: usize,
    pub aggregate_mean: f64,
    pub aggregate_std: f64,
    pub fq_mean: f64,
    pub utility_mean: f64,
}

/// Sample mean and (n − 1) standard deviation; the deviation is 0 for one value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl SweepTable {
    /// Mean ± stdev per (pruner, sparsity, arm), in first-appearance order.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut keys: Vec<(Pruner, f64, Arm)> = Vec::new();
        for r in &self.rows {
            let key = (r.pruner, r.sparsity, r.arm());
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        keys.into_iter()
            .map(|(pruner, sparsity, arm)| {
                let cell: Vec<&SweepRow> = self
                    .rows
                    .iter()
                    .filter(|r| r.pruner == pruner && r.sparsity == sparsity && r.arm() == arm)
                    .collect();
                let agg: Vec<f64> = cell.iter().map(|r| r.aggregate).collect();
                let (aggregate_mean, aggregate_std) = mean_std(&agg);
                let fq: Vec<f64> = cell.iter().map(|r| r.fq).collect();
                let u: Vec<f64> = cell.iter().map(|r| r.utility).collect();
                SummaryRow {
                    pruner,
                    sparsity,
                    arm,
                    runs: cell.len(),
                    aggregate_mean,
                    aggregate_std,
                    fq_mean: mean_std(&fq).0,
                    utility_mean: mean_std(&u).0,
                }
            })
            .collect()
    }

    /// Mean aggregate of one (sparsity, arm) cell.
    pub fn mean_aggregate(&self, sparsity: f64, arm: Arm) -> Option<f64> {
        self.summary()
            .into_iter()
            .find(|s| s.sparsity == sparsity && s.arm == arm)
            .map(|s| s.aggregate_mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub pruner: Pruner,
    pub sparsities: Vec<f64>,
    pub arms: Vec<Arm>,
    pub seeds: Vec<u64>,
    /// Template for every run; `seed` and `variant` are set per cell.
    pub unlearn: UnlearnConfig,
    pub saliency_batch_size: usize,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sparsities.is_empty() || self.sparsities.iter().any(|s| !(0.0..1.0).contains(s)) {
            return Err(Error::config("sweep_sparsities", "need a non-empty list in [0, 1)"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("sweep_seeds", "need at least one seed"));
        }
        if self.arms.is_empty() {
            return Err(Error::config("sweep_variants", "need at least one variant"));
        }
        for a in &self.arms {
            SauConfig {
                topk_ratio: a.topk,
                alpha: a.alpha,
            }
            .validate()?;
        }
        if self.saliency_batch_size == 0 {
            return Err(Error::config("saliency_batch_size", "must be positive"));
        }
        self.unlearn.validate()
    }
}

/// Seed of a sweep cell's run. The arm is deliberately not mixed in, so all
/// arms at one (sparsity, seed) see the same batch order.
pub fn cell_seed(seed: u64, sparsity: f64) -> u64 {
    derive_seed(&[seed, sparsity.to_bits()])
}

/// Prune → (saliency → plan) → unlearn → score, on a private copy of `base`.
pub fn run_cell<T: Scalar>(
    base: &CharLm<T>,
    dataset: &FactDataset,
    pruner: Pruner,
    sparsity: f64,
    arm: Arm,
    seed: u64,
    template: &UnlearnConfig,
    saliency_batch_size: usize,
) -> Result<(CharLm<T>, RunManifest)> {
    let mask = prune_model(base, dataset, pruner, sparsity)?;
    let mut model = base.with_params(apply_mask(base.params(), &mask)?)?;
    let plan = match arm.variant {
        Variant::Baseline => None,
        Variant::Sau => {
            let sal = compute_saliency(&model, &dataset.forget(), saliency_batch_size)?;
            Some(SauPlan::build(
                &sal,
                &mask,
                SauConfig {
                    topk_ratio: arm.topk,
                    alpha: arm.alpha,
                },
            )?)
        }
    };
    let config = UnlearnConfig {
        seed: cell_seed(seed, sparsity),
        variant: arm.variant,
        ..*template
    };
    let manifest = run_unlearning(&mut model, &mask, plan.as_ref(), dataset, &config)?;
    Ok((model, manifest))
}

pub fn sparsity_sweep<T: Scalar>(base: &CharLm<T>, dataset: &FactDataset, spec: &SweepSpec) -> Result<SweepTable> {
    spec.validate()?;
    let cells: Vec<(f64, Arm, u64)> = spec
        .sparsities
        .iter()
        .flat_map(|&s| spec.arms.iter().flat_map(move |&a| spec.seeds.iter().map(move |&seed| (s, a, seed))))
        .collect();
    let results: Vec<(f64, Arm, u64, Result<RunManifest>)> = cells
        .into_par_iter()
        .map(|(s, arm, seed)| {
            let r = run_cell(base, dataset, spec.pruner, s, arm, seed, &spec.unlearn, spec.saliency_batch_size)
                .map(|(_, m)| m);
            (s, arm, seed, r)
        })
        .collect();
    let mut table = SweepTable::default();
    for (sparsity, arm, seed, r) in results {
        match r {
            Ok(m) => {
                let sc = m.final_scores;
                table.rows.push(SweepRow {
                    pruner: spec.pruner,
                    sparsity,
                    variant: arm.variant,
                    topk: arm.topk,
                    alpha: arm.alpha,
                    seed,
                    fq: sc.forget_quality,
                    utility: sc.utility,
                    aggregate: sc.aggregate,
                    forget_em: sc.forget_em,
                    retain_em: sc.retain_em,
                    epochs: m.config.epochs,
                    wall_ms: m.wall_ms,
                });
                table.manifests.push(m);
            }
            Err(e) => table.failures.push(CellFailure {
                sparsity,
                arm,
                seed,
                error: e.to_string(),
            }),
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneArm {
    pub forget_em_before: f64,
    pub forget_em_after: f64,
    pub retain_em_before: f64,
    pub retain_em_after: f64,
    pub delta_forget_em: f64,
    pub delta_retain_em: f64,
}

impl PruneArm {
    fn new(before: ScoreCard, after: ScoreCard) -> Self {
        Self {
            forget_em_before: before.forget_em,
            forget_em_after: after.forget_em,
            retain_em_before: before.retain_em,
            retain_em_after: after.retain_em,
            delta_forget_em: after.forget_em - before.forget_em,
            delta_retain_em: after.retain_em - before.retain_em,
        }
    }
}

/// Dense unlearning followed by pruning, next to a control arm that prunes
/// the never-unlearned model. Deltas are reported, not judged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResurfaceReport {
    pub pruner: Pruner,
    pub sparsity: f64,
    pub unlearned: PruneArm,
    pub control: PruneArm,
    pub resurfaced: bool,
    pub note: String,
}

pub fn resurfacing_experiment<T: Scalar>(
    base: &CharLm<T>,
    dataset: &FactDataset,
    pruner: Pruner,
    sparsity: f64,
    unlearn: &UnlearnConfig,
) -> Result<ResurfaceReport> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::config("sparsity", format!("{sparsity} not in [0, 1)")));
    }
    let dense = SparsityMask::dense(base.params());
    let mut unlearned = base.clone();
    let config = UnlearnConfig {
        variant: Variant::Baseline,
        ..*unlearn
    };
    run_unlearning(&mut unlearned, &dense, None, dataset, &config)?;

    let prune_and_score = |m: &CharLm<T>| -> Result<(ScoreCard, ScoreCard)> {
        let before = score(m, dataset)?;
        let mask = prune_model(m, dataset, pruner, sparsity)?;
        let pruned = m.with_params(apply_mask(m.params(), &mask)?)?;
        Ok((before, score(&pruned, dataset)?))
    };
    let (ub, ua) = prune_and_score(&unlearned)?;
    let (cb, ca) = prune_and_score(base)?;
    let unlearned = PruneArm::new(ub, ua);
    Ok(ResurfaceReport {
        pruner,
        sparsity,
        resurfaced: unlearned.delta_forget_em > 0.0,
        unlearned,
        control: PruneArm::new(cb, ca),
        note: "observation only: exact-match scores of a synthetic fact task, not benchmark metrics".into(),
    })
}

/// SAU at each top-k ratio with redistribution strength `alpha`.
pub fn ablation_topk<T: Scalar>(
    base: &CharLm<T>,
    dataset: &FactDataset,
    pruner: Pruner,
    sparsity: f64,
    k_list: &[f64],
    alpha: f64,
    seeds: &[u64],
    unlearn: &UnlearnConfig,
    saliency_batch_size: usize,
) -> Result<SweepTable> {
    let spec = SweepSpec {
        pruner,
        sparsities: vec![sparsity],
        arms: k_list.iter().map(|&k| Arm::sau(k, alpha)).collect(),
        seeds: seeds.to_vec(),
        unlearn: *unlearn,
        saliency_batch_size,
    };
    sparsity_sweep(base, dataset, &spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedistributionDelta {
    pub seed: u64,
    pub aggregate_without: f64,
    pub aggregate_with: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RedistributionAblation {
    pub table: SweepTable,
    pub deltas: Vec<RedistributionDelta>,
}

/// Gradient mask alone (α = 0) against mask plus redistribution (α = `alpha`).
pub fn ablation_redistribution<T: Scalar>(
    base: &CharLm<T>,
    dataset: &FactDataset,
    pruner: Pruner,
    sparsity: f64,
    topk: f64,
    alpha: f64,
    seeds: &[u64],
    unlearn: &UnlearnConfig,
    saliency_batch_size: usize,
) -> Result<RedistributionAblation> {
    let off = Arm::sau(topk, 0.0);
    let on = Arm::sau(topk, alpha);
    let spec = SweepSpec {
        pruner,
        sparsities: vec![sparsity],
        arms: vec![off, on],
        seeds: seeds.to_vec(),
        unlearn: *unlearn,
        saliency_batch_size,
    };
    let table = sparsity_sweep(base, dataset, &spec)?;
    let find = |arm: Arm, seed: u64| table.rows.iter().find(|r| r.arm() == arm && r.seed == seed).map(|r| r.aggregate);
    let deltas = seeds
        .iter()
        .filter_map(|&seed| {
            let (a, b) = (find(off, seed)?, find(on, seed)?);
            Some(RedistributionDelta {
                seed,
                aggregate_without: a,
                aggregate_with: b,
                delta: b - a,
            })
        })
        .collect();
    Ok(RedistributionAblation { table, deltas })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_mean_properties() {
        assert_eq!(harmonic_mean(0.0, 0.7), 0.0);
        assert_eq!(harmonic_mean(0.4, 0.4), 0.4);
        assert_eq!(harmonic_mean(0.3, 0.9), harmonic_mean(0.9, 0.3));
        assert!((harmonic_mean(0.5, 1.0) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn score_cards() {
        let memorized = ScoreCard::from_em(1.0, 1.0);
        assert_eq!((memorized.forget_quality, memorized.utility, memorized.aggregate), (0.0, 1.0, 0.0));
        let ideal = ScoreCard::from_em(0.0, 1.0);
        assert_eq!(ideal.aggregate, 1.0);
        let half = ScoreCard::from_em(0.5, 1.0);
        assert!((half.aggregate - 0.6667).abs() < 1e-4);
        // The harmonic mean sits between min and max, and never above twice the min.
        assert!(half.aggregate >= half.forget_quality.min(half.utility));
        assert!(half.aggregate <= half.forget_quality.max(half.utility));
        assert!(half.aggregate <= 2.0 * half.forget_quality.min(half.utility));
    }

    #[test]
    fn mean_std_values() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn names_parse() {
        assert_eq!("magnitude".parse::<Pruner>().unwrap(), Pruner::Magnitude);
        assert!("sparsegpt".parse::<Pruner>().is_err());
        assert_eq!(Arm::baseline().label(), "baseline");
        assert_eq!(Arm::sau(0.3, 0.1).label(), "sau(k=0.3,a=0.1)");
    }
}
