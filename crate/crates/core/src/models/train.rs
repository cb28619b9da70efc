use super::{loss_and_grad, Model};
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::rng::Xorshift64Star;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Sample-weighted mean batch loss per epoch.
    pub loss_trace: Vec<f64>,
}

/// `θ ← θ − lr · g`, in place.
pub(crate) fn sgd_update<T: Scalar>(params: &mut ParamSet<T>, grad: &ParamSet<T>, lr: T) {
    for ((_, p), (_, g)) in params.iter_mut().zip(grad.iter()) {
        for (w, &d) in p.tensor.data_mut().iter_mut().zip(g.tensor.data()) {
            *w -= lr * d;
        }
    }
}

/// Plain minibatch SGD. Each epoch visits the samples in an order drawn by a
/// seeded Fisher–Yates shuffle.
pub fn train<T: Scalar, M: Model<T>>(
    model: &mut M,
    samples: &[&M::Sample],
    lr: f64,
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> Result<TrainReport> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::InvalidInput(format!("learning rate {lr} must be finite and non-negative")));
    }
    if batch_size == 0 {
        return Err(Error::InvalidInput("batch size must be positive".into()));
    }
    if epochs > 0 && samples.is_empty() {
        return Err(Error::Contract("cannot train on an empty dataset".into()));
    }
    let lr = T::lit(lr);
    let mut rng = Xorshift64Star::new(seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut trace = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(batch_size) {
            let batch: Vec<&M::Sample> = chunk.iter().map(|&i| samples[i]).collect();
            let (l, grad) = loss_and_grad(model, &batch)?;
            let l = l.as_f64();
            if !l.is_finite() {
                return Err(Error::Training { epoch, loss: l });
            }
            total += l * batch.len() as f64;
            sgd_update(model.params_mut(), &grad, lr);
        }
        trace.push(total / samples.len() as f64);
    }
    Ok(TrainReport { loss_trace: trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{gen_facts, CharLm, CharLmConfig};

    fn setup() -> (CharLm<f64>, crate::models::FactDataset) {
        let cfg = CharLmConfig {
            vocab: 12,
            embed_dim: 4,
            hidden_width: 16,
            context_len: 4,
        };
        (CharLm::new(cfg, 3).unwrap(), gen_facts(20, 12, 2, 2, 0.2, 3).unwrap())
    }

    #[test]
    fn zero_epochs_is_identity() {
        let (mut m, ds) = setup();
        let before = m.params().clone();
        let r = train(&mut m, &ds.all(), 0.1, 0, 4, 1).unwrap();
        assert!(r.loss_trace.is_empty());
        assert!(m.params().bitwise_eq(&before));
    }

    #[test]
    fn zero_lr_is_identity() {
        let (mut m, ds) = setup();
        let before = m.params().clone();
        train(&mut m, &ds.all(), 0.0, 3, 4, 1).unwrap();
        assert!(m.params().bitwise_eq(&before));
    }

    #[test]
    fn loss_decreases_and_is_deterministic() {
        let (m0, ds) = setup();
        let mut a = m0.clone();
        let mut b = m0.clone();
        let ra = train(&mut a, &ds.all(), 0.1, 30, 4, 9).unwrap();
        let rb = train(&mut b, &ds.all(), 0.1, 30, 4, 9).unwrap();
        assert!(a.params().bitwise_eq(b.params()));
        assert_eq!(ra, rb);
        assert!(ra.loss_trace.iter().all(|l| l.is_finite()));
        assert!(ra.loss_trace.last().unwrap() < &ra.loss_trace[0]);
    }

    #[test]
    fn divergence_names_epoch() {
        let (mut m, ds) = setup();
        m.params_mut().get_mut("head.bias").unwrap().data_mut()[0] = f64::NAN;
        match train(&mut m, &ds.all(), 0.1, 2, 4, 1) {
            Err(Error::Training { epoch, .. }) => assert_eq!(epoch, 0),
            other => panic!("expected training error, got {other:?}"),
        }
    }
}
