mod common;

use common::{small, small_config};
use sau::error::Error;
use sau::eval::{
    ablation_redistribution, ablation_topk, prune_model, resurfacing_experiment, run_cell, score, sparsity_sweep, Arm,
    Pruner,
};
use sau::models::{train, CharLm, Model};
use sau::pruning::apply_mask;
use sau::saliency::compute_saliency;
use sau::sau::{SauConfig, SauPlan};
use sau::unlearn::{run_unlearning, Variant};

#[test]
fn sweep_rows_replay_exactly() {
    let (base, ds) = small();
    let cfg = small_config();
    let spec = cfg.sweep();
    let table = sparsity_sweep(base, ds, &spec).unwrap();
    assert!(table.failures.is_empty());
    assert_eq!(table.rows.len(), spec.sparsities.len() * spec.arms.len() * spec.seeds.len());
    for row in table.rows.iter().filter(|r| r.sparsity == 0.5) {
        let (model, manifest) =
            run_cell(base, ds, row.pruner, row.sparsity, row.arm(), row.seed, &spec.unlearn, spec.saliency_batch_size)
                .unwrap();
        let sc = score(&model, ds).unwrap();
        assert_eq!((sc.forget_em, sc.retain_em, sc.aggregate), (row.forget_em, row.retain_em, row.aggregate));
        assert_eq!(manifest.final_scores, sc);
    }
    // Same table on a second run.
    assert_eq!(sparsity_sweep(base, ds, &spec).unwrap().rows, table.rows);
}

#[test]
fn activation_pruning_keeps_sparsity() {
    let (base, ds) = small();
    let mut cfg = small_config();
    cfg.pruner = Pruner::Activation;
    cfg.sweep_sparsities = vec![0.5];
    let table = sparsity_sweep(base, ds, &cfg.sweep()).unwrap();
    for m in &table.manifests {
        assert!(m.metrics.iter().all(|e| e.pruned_max_abs == 0.0 && e.sparsity == m.metrics[0].sparsity));
    }
    let mask = prune_model(base, ds, Pruner::Activation, 0.5).unwrap();
    assert_eq!(mask, prune_model(base, ds, Pruner::Activation, 0.5).unwrap());
}

#[test]
fn plan_for_another_mask_is_refused() {
    let (base, ds) = small();
    let m1 = prune_model(base, ds, Pruner::Magnitude, 0.5).unwrap();
    let m2 = prune_model(base, ds, Pruner::Magnitude, 0.25).unwrap();
    let pruned = base.with_params(apply_mask(base.params(), &m2).unwrap()).unwrap();
    let sal = compute_saliency(&pruned, &ds.forget(), 1).unwrap();
    let plan = SauPlan::build(&sal, &m2, SauConfig::default()).unwrap();
    let mut model = base.with_params(apply_mask(base.params(), &m1).unwrap()).unwrap();
    let cfg = small_config().unlearn();
    let err = run_unlearning(&mut model, &m1, Some(&plan), ds, &cfg).unwrap_err();
    assert!(matches!(err, Error::HashMismatch(_)), "{err:?}");
}

#[test]
fn unmasked_model_is_refused() {
    let (base, ds) = small();
    let mask = prune_model(base, ds, Pruner::Magnitude, 0.5).unwrap();
    let mut model = base.clone();
    let cfg = sau::unlearn::UnlearnConfig { variant: Variant::Baseline, ..small_config().unlearn() };
    assert!(matches!(run_unlearning(&mut model, &mask, None, ds, &cfg), Err(Error::Contract(_))));
}

#[test]
fn resurfacing_without_pruning_changes_nothing() {
    let (base, ds) = small();
    let r = resurfacing_experiment(base, ds, Pruner::Magnitude, 0.0, &small_config().unlearn()).unwrap();
    assert_eq!(r.unlearned.delta_forget_em, 0.0);
    assert_eq!(r.control.delta_forget_em, 0.0);
    assert!(resurfacing_experiment(base, ds, Pruner::Magnitude, 1.0, &small_config().unlearn()).is_err());
}

#[test]
fn ablations_cover_their_grids() {
    let (base, ds) = small();
    let cfg = small_config();
    let t = ablation_topk(base, ds, Pruner::Magnitude, 0.5, &cfg.ablation_topk, cfg.alpha, &cfg.sweep_seeds, &cfg.unlearn(), 1)
        .unwrap();
    assert_eq!(t.rows.len(), cfg.ablation_topk.len() * cfg.sweep_seeds.len());
    let r = ablation_redistribution(base, ds, Pruner::Magnitude, 0.5, cfg.topk_ratio, cfg.alpha, &cfg.sweep_seeds, &cfg.unlearn(), 1)
        .unwrap();
    assert_eq!(r.deltas.len(), cfg.sweep_seeds.len());
    for d in &r.deltas {
        assert_eq!(d.delta, d.aggregate_with - d.aggregate_without);
    }
}

#[test]
fn single_precision_pipeline_runs() {
    let cfg = small_config();
    let ds = cfg.dataset().unwrap();
    let mut model = CharLm::<f32>::new(cfg.model(), cfg.model_seed).unwrap();
    train(&mut model, &ds.all(), cfg.train_lr, cfg.train_epochs, cfg.train_batch_size, cfg.train_seed).unwrap();
    let (out, manifest) =
        run_cell(&model, &ds, Pruner::Magnitude, 0.5, Arm::sau(0.3, 0.1), 1, &cfg.unlearn(), 1).unwrap();
    assert!(manifest.metrics.iter().all(|e| e.pruned_max_abs == 0.0));
    assert!(out.params().iter().all(|(_, p)| p.tensor.all_finite()));
}
