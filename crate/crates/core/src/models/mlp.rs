use indexmap::IndexMap;

use super::{he_init, linear, Model};
use crate::autodiff::{Bindings, Graph, Var};
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::rng::Xorshift64Star;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A feature vector with a class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Labeled<T> {
    pub features: Vec<T>,
    pub label: usize,
}

/// Fully connected ReLU classifier. `widths = [inputs, hidden.., classes]`;
/// with two widths it is a linear softmax model.
#[derive(Debug, Clone)]
pub struct Mlp<T> {
    widths: Vec<usize>,
    params: ParamSet<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new(widths: &[usize], seed: u64) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidInput(format!("bad MLP widths {widths:?}")));
        }
        let mut rng = Xorshift64Star::new(seed);
        let mut params = ParamSet::new();
        for (i, pair) in widths.windows(2).enumerate() {
            params.insert(&format!("fc{i}.weight"), he_init(pair[1], pair[0], &mut rng)?, true)?;
            params.insert(&format!("fc{i}.bias"), Tensor::zeros(&[pair[1]])?, false)?;
        }
        Ok(Self {
            widths: widths.to_vec(),
            params,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    fn inputs(&self, batch: &[&Labeled<T>]) -> Result<Tensor<T>> {
        let d = self.widths[0];
        let mut data = Vec::with_capacity(batch.len() * d);
        for s in batch {
            if s.features.len() != d {
                return Err(Error::InvalidInput(format!(
                    "sample has {} features, model expects {d}",
                    s.features.len()
                )));
            }
            if s.label >= *self.widths.last().unwrap() {
                return Err(Error::Index(format!("label {} out of range", s.label)));
            }
            data.extend_from_slice(&s.features);
        }
        Tensor::from_vec(vec![batch.len(), d], data)
    }

    fn forward(&self, g: &mut Graph<T>, bound: &Bindings, x: Var) -> Result<(Var, Vec<Var>)> {
        let layers = self.widths.len() - 1;
        let mut h = x;
        let mut seen = Vec::with_capacity(layers);
        for i in 0..layers {
            seen.push(h);
            let w = bound.get(&format!("fc{i}.weight"))?;
            let b = bound.get(&format!("fc{i}.bias"))?;
            h = linear(g, h, w, b)?;
            if i + 1 < layers {
                h = g.relu(h);
            }
        }
        Ok((h, seen))
    }

    pub fn logits(&self, batch: &[&Labeled<T>]) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let bound = g.bind(&self.params);
        let x = g.constant(self.inputs(batch)?);
        let (out, _) = self.forward(&mut g, &bound, x)?;
        Ok(g.value(out).clone())
    }
}

impl<T: Scalar> Model<T> for Mlp<T> {
    type Sample = Labeled<T>;

    fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn record_loss(&self, g: &mut Graph<T>, bound: &Bindings, batch: &[&Labeled<T>]) -> Result<Var> {
        let x = g.constant(self.inputs(batch)?);
        let (logits, _) = self.forward(g, bound, x)?;
        let targets: Vec<usize> = batch.iter().map(|s| s.label).collect();
        g.softmax_cross_entropy(logits, &targets)
    }

    fn layer_inputs(&self, batch: &[&Labeled<T>]) -> Result<IndexMap<String, Tensor<T>>> {
        let mut g = Graph::new();
        let bound = g.bind(&self.params);
        let x = g.constant(self.inputs(batch)?);
        let (_, seen) = self.forward(&mut g, &bound, x)?;
        Ok(seen
            .into_iter()
            .enumerate()
            .map(|(i, v)| (format!("fc{i}.weight"), g.value(v).clone()))
            .collect())
    }
}
