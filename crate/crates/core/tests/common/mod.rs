#![allow(dead_code)]

use std::sync::OnceLock;

use sau::autodiff::{finite_diff_grad, relative_error, Bindings, Graph, Var};
use sau::config::ExperimentConfig;
use sau::models::{loss, loss_and_grad, train, CharLm, CharLmConfig, Fact, FactDataset, Labeled, Mlp, Model};
use sau::params::ParamSet;
use sau::rng::{derive_seed, Xorshift64Star};
use sau::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

/// Default config, trained once per test binary.
pub fn bundled() -> &'static (CharLm<f64>, FactDataset) {
    static CELL: OnceLock<(CharLm<f64>, FactDataset)> = OnceLock::new();
    CELL.get_or_init(|| train_for(&ExperimentConfig::default()))
}

pub fn train_for(cfg: &ExperimentConfig) -> (CharLm<f64>, FactDataset) {
    let ds = cfg.dataset().unwrap();
    let mut m = CharLm::new(cfg.model(), cfg.model_seed).unwrap();
    train(&mut m, &ds.all(), cfg.train_lr, cfg.train_epochs, cfg.train_batch_size, cfg.train_seed).unwrap();
    (m, ds)
}

/// A quick configuration for pipeline and CLI tests.
pub fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        vocab: 16,
        embed_dim: 8,
        hidden_width: 24,
        context_len: 5,
        n_facts: 40,
        key_len: 3,
        val_len: 2,
        forget_fraction: 0.1,
        train_epochs: 30,
        unlearn_epochs: 4,
        sweep_sparsities: vec![0.0, 0.5],
        sweep_seeds: vec![1, 2],
        ablation_topk: vec![0.3, 1.0],
        ..ExperimentConfig::default()
    }
}

pub fn small() -> &'static (CharLm<f64>, FactDataset) {
    static CELL: OnceLock<(CharLm<f64>, FactDataset)> = OnceLock::new();
    CELL.get_or_init(|| train_for(&small_config()))
}

fn randn(rng: &mut Xorshift64Star, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
}

/// Bounded away from zero so that ReLU is differentiable within ±h.
fn away_from_zero(rng: &mut Xorshift64Star, shape: &[usize]) -> Tensor<f64> {
    randn(rng, shape).map(|v| v.signum() * (0.1 + v.abs()))
}

fn dim(rng: &mut Xorshift64Star) -> usize {
    1 + rng.below(4)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    MatMul,
    MatMulT,
    Add,
    AddRow,
    Mul,
    Scale,
    Sub,
    Sum,
    Relu,
    Embed,
    SoftmaxCe,
}

pub const ALL_OPS: [OpKind; 11] = [
    OpKind::MatMul,
    OpKind::MatMulT,
    OpKind::Add,
    OpKind::AddRow,
    OpKind::Mul,
    OpKind::Scale,
    OpKind::Sub,
    OpKind::Sum,
    OpKind::Relu,
    OpKind::Embed,
    OpKind::SoftmaxCe,
];

type Recorder = Box<dyn Fn(&mut Graph<f64>, &Bindings) -> sau::Result<Var>>;

/// One randomly sized instance of `kind`, reduced to a scalar through a
/// random linear read-out so every output entry matters.
pub fn op_instance(kind: OpKind, seed: u64) -> (ParamSet<f64>, Recorder) {
    let mut rng = Xorshift64Star::new(derive_seed(&[seed, kind as u64]));
    let (m, k, n) = (dim(&mut rng), dim(&mut rng), dim(&mut rng));
    let mut p = ParamSet::new();
    let mut leaf = |name: &str, t: Tensor<f64>| p.insert(name, t, false).unwrap();
    let (out_shape, rec): (Vec<usize>, Box<dyn Fn(&mut Graph<f64>, &Bindings) -> sau::Result<Var>>) = match kind {
        OpKind::MatMul => {
            leaf("a", randn(&mut rng, &[m, k]));
            leaf("b", randn(&mut rng, &[k, n]));
            (vec![m, n], Box::new(|g, b| g.matmul(b.get("a")?, b.get("b")?)))
        }
        OpKind::MatMulT => {
            leaf("a", randn(&mut rng, &[m, k]));
            leaf("b", randn(&mut rng, &[n, k]));
            (vec![m, n], Box::new(|g, b| g.matmul_t(b.get("a")?, b.get("b")?)))
        }
        OpKind::Add => {
            leaf("a", randn(&mut rng, &[m, n]));
            leaf("b", randn(&mut rng, &[m, n]));
            (vec![m, n], Box::new(|g, b| g.add(b.get("a")?, b.get("b")?)))
        }
        OpKind::AddRow => {
            leaf("a", randn(&mut rng, &[m, n]));
            leaf("b", randn(&mut rng, &[n]));
            (vec![m, n], Box::new(|g, b| g.add(b.get("a")?, b.get("b")?)))
        }
        OpKind::Mul => {
            leaf("a", randn(&mut rng, &[m, n]));
            leaf("b", randn(&mut rng, &[m, n]));
            (vec![m, n], Box::new(|g, b| g.mul(b.get("a")?, b.get("b")?)))
        }
        OpKind::Scale => {
            leaf("a", randn(&mut rng, &[m, n]));
            let c = rng.normal();
            (vec![m, n], Box::new(move |g, b| Ok(g.scale(b.get("a")?, c))))
        }
        OpKind::Sub => {
            leaf("a", randn(&mut rng, &[m, n]));
            leaf("b", randn(&mut rng, &[m, n]));
            (vec![m, n], Box::new(|g, b| g.sub(b.get("a")?, b.get("b")?)))
        }
        OpKind::Sum => {
            leaf("a", randn(&mut rng, &[m, n]));
            (vec![], Box::new(|g, b| Ok(g.sum(b.get("a")?))))
        }
        OpKind::Relu => {
            leaf("a", away_from_zero(&mut rng, &[m, n]));
            (vec![m, n], Box::new(|g, b| Ok(g.relu(b.get("a")?))))
        }
        OpKind::Embed => {
            let vocab = 1 + dim(&mut rng);
            leaf("table", randn(&mut rng, &[vocab, k]));
            let per_row = dim(&mut rng);
            let idx: Vec<Option<usize>> = (0..m * per_row)
                .map(|_| (rng.next_f64() < 0.8).then(|| rng.below(vocab)))
                .collect();
            (
                vec![m, per_row * k],
                Box::new(move |g, b| g.embed(b.get("table")?, &idx, m)),
            )
        }
        OpKind::SoftmaxCe => {
            let classes = 1 + dim(&mut rng);
            leaf("logits", randn(&mut rng, &[m, classes]));
            let targets: Vec<usize> = (0..m).map(|_| rng.below(classes)).collect();
            (vec![], Box::new(move |g, b| g.softmax_cross_entropy(b.get("logits")?, &targets)))
        }
    };
    if out_shape.is_empty() {
        return (p, rec);
    }
    let readout = randn(&mut rng, &out_shape);
    let wrapped: Recorder = Box::new(move |g, b| {
        let y = rec(g, b)?;
        let r = g.constant(readout.clone());
        let yr = g.mul(y, r)?;
        Ok(g.sum(yr))
    });
    (p, wrapped)
}

/// Relative error between the tape gradient and central differences.
pub fn check_recorder(params: &ParamSet<f64>, rec: &Recorder) -> f64 {
    let mut g = Graph::new();
    let b = g.bind(params);
    let l = rec(&mut g, &b).unwrap();
    let analytic = g.backward(l).unwrap();
    let numeric = finite_diff_grad(
        |p| {
            let mut g = Graph::new();
            let b = g.bind(p);
            let l = rec(&mut g, &b)?;
            Ok(g.value(l).item())
        },
        params,
        FD_STEP,
    )
    .unwrap();
    relative_error(&analytic, &numeric)
}

fn randomize<M: Model<f64>>(model: &M, rng: &mut Xorshift64Star, scale: f64) -> M {
    let mut p = model.params().clone();
    for (_, param) in p.iter_mut() {
        for v in param.tensor.data_mut() {
            *v = scale * rng.normal();
        }
    }
    model.with_params(p).unwrap()
}

pub fn check_model<M: Model<f64>>(model: &M, batch: &[&M::Sample]) -> f64 {
    let (_, analytic) = loss_and_grad(model, batch).unwrap();
    let numeric = finite_diff_grad(|p| loss(&model.with_params(p.clone())?, batch), model.params(), FD_STEP).unwrap();
    relative_error(&analytic, &numeric)
}

/// A random MLP with one or two hidden layers and a random labelled batch.
pub fn mlp_instance(seed: u64) -> f64 {
    let mut rng = Xorshift64Star::new(derive_seed(&[seed, 0x4d4c50]));
    let mut widths = vec![1 + dim(&mut rng)];
    for _ in 0..1 + rng.below(2) {
        widths.push(2 + dim(&mut rng));
    }
    widths.push(2 + rng.below(3));
    let model = randomize(&Mlp::new(&widths, seed).unwrap(), &mut rng, 0.7);
    let samples: Vec<Labeled<f64>> = (0..1 + rng.below(4))
        .map(|_| Labeled {
            features: (0..widths[0]).map(|_| rng.normal()).collect(),
            label: rng.below(*widths.last().unwrap()),
        })
        .collect();
    let refs: Vec<&Labeled<f64>> = samples.iter().collect();
    check_model(&model, &refs)
}

/// A small random character model and a random batch of facts.
pub fn char_lm_instance(seed: u64) -> f64 {
    let mut rng = Xorshift64Star::new(derive_seed(&[seed, 0x434c4d]));
    let config = CharLmConfig {
        vocab: 4 + rng.below(5),
        embed_dim: 1 + rng.below(3),
        hidden_width: 2 + rng.below(4),
        context_len: 4,
    };
    let model = randomize(&CharLm::new(config, seed).unwrap(), &mut rng, 0.5);
    let facts: Vec<Fact> = (0..1 + rng.below(3))
        .map(|_| Fact {
            prompt: (0..2).map(|_| rng.below(config.vocab)).collect(),
            answer: (0..2).map(|_| rng.below(config.vocab)).collect(),
        })
        .collect();
    let refs: Vec<&Fact> = facts.iter().collect();
    check_model(&model, &refs)
}
