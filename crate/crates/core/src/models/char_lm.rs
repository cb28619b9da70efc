use indexmap::IndexMap;

use super::{he_init, linear, Fact, Model};
use crate::autodiff::{Bindings, Graph, Var};
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::rng::Xorshift64Star;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CharLmConfig {
    pub vocab: usize,
    pub embed_dim: usize,
    pub hidden_width: usize,
    /// Token slots in the input window; must cover prompt plus answer.
    pub context_len: usize,
}

impl Default for CharLmConfig {
    fn default() -> Self {
        Self {
            vocab: 64,
            embed_dim: 32,
            hidden_width: 128,
            context_len: 7,
        }
    }
}

/// Feed-forward next-token model over a fixed window of preceding tokens:
/// embedding → concatenate window → two dense+ReLU blocks → output head.
///
/// The window is right-aligned (last slot = previous token); unused slots on
/// the left contribute zero vectors.
#[derive(Debug, Clone)]
pub struct CharLm<T> {
    config: CharLmConfig,
    params: ParamSet<T>,
}

impl<T: Scalar> CharLm<T> {
    /// Random embeddings and hidden weights; the output head starts at zero,
    /// so the untrained model predicts the uniform distribution.
    pub fn new(config: CharLmConfig, seed: u64) -> Result<Self> {
        let CharLmConfig {
            vocab,
            embed_dim,
            hidden_width,
            context_len,
        } = config;
        if vocab == 0 || embed_dim == 0 || hidden_width == 0 || context_len == 0 {
            return Err(Error::InvalidInput(format!("bad char_lm config {config:?}")));
        }
        let mut rng = Xorshift64Star::new(seed);
        let mut p = ParamSet::new();
        p.insert("embed", Tensor::randn_with(&[vocab, embed_dim], &mut rng, 1.0)?, false)?;
        p.insert("fc1.weight", he_init(hidden_width, context_len * embed_dim, &mut rng)?, true)?;
        p.insert("fc1.bias", Tensor::zeros(&[hidden_width])?, false)?;
        p.insert("fc2.weight", he_init(hidden_width, hidden_width, &mut rng)?, true)?;
        p.insert("fc2.bias", Tensor::zeros(&[hidden_width])?, false)?;
        p.insert("head.weight", Tensor::zeros(&[vocab, hidden_width])?, true)?;
        p.insert("head.bias", Tensor::zeros(&[vocab])?, false)?;
        Ok(Self { config, params: p })
    }

    pub fn from_params(config: CharLmConfig, params: ParamSet<T>) -> Result<Self> {
        let reference = Self::new(config, 0)?;
        reference.with_params(params)
    }

    pub fn config(&self) -> CharLmConfig {
        self.config
    }

    fn check_fact(&self, f: &Fact) -> Result<()> {
        let v = self.config.vocab;
        if let Some(t) = f.prompt.iter().chain(&f.answer).find(|&&t| t >= v) {
            return Err(Error::InvalidInput(format!("token {t} outside vocabulary {v}")));
        }
        if f.prompt.len() + f.answer.len() > self.config.context_len {
            return Err(Error::InvalidInput(format!(
                "sequence of length {} exceeds context length {}",
                f.prompt.len() + f.answer.len(),
                self.config.context_len
            )));
        }
        Ok(())
    }

    fn window(&self, prefix: &[usize], out: &mut Vec<Option<usize>>) {
        let ctx = self.config.context_len;
        let take = prefix.len().min(ctx);
        out.extend(std::iter::repeat_n(None, ctx - take));
        out.extend(prefix[prefix.len() - take..].iter().map(|&t| Some(t)));
    }

    /// The (window, target) pairs a fact contributes: one per answer token.
    pub fn positions(&self, fact: &Fact) -> Vec<(Vec<Option<usize>>, usize)> {
        let mut prefix = fact.prompt.clone();
        let mut out = Vec::with_capacity(fact.answer.len());
        for &target in &fact.answer {
            let mut w = Vec::with_capacity(self.config.context_len);
            self.window(&prefix, &mut w);
            out.push((w, target));
            prefix.push(target);
        }
        out
    }

    /// Returns (logits, input of fc1, hidden 1, hidden 2).
    fn forward(&self, g: &mut Graph<T>, bound: &Bindings, windows: &[Option<usize>], rows: usize) -> Result<[Var; 4]> {
        let x = g.embed(bound.get("embed")?, windows, rows)?;
        let h1 = linear(g, x, bound.get("fc1.weight")?, bound.get("fc1.bias")?)?;
        let h1 = g.relu(h1);
        let h2 = linear(g, h1, bound.get("fc2.weight")?, bound.get("fc2.bias")?)?;
        let h2 = g.relu(h2);
        let logits = linear(g, h2, bound.get("head.weight")?, bound.get("head.bias")?)?;
        Ok([logits, x, h1, h2])
    }

    fn batch_windows(&self, batch: &[&Fact]) -> Result<(Vec<Option<usize>>, Vec<usize>)> {
        let mut windows = Vec::new();
        let mut targets = Vec::new();
        for f in batch {
            self.check_fact(f)?;
            for (w, t) in self.positions(f) {
                windows.extend(w);
                targets.push(t);
            }
        }
        if targets.is_empty() {
            return Err(Error::Contract("batch has no answer tokens".into()));
        }
        Ok((windows, targets))
    }

    /// Next-token logits for each prefix, as a `prefixes × vocab` tensor.
    pub fn next_token_logits(&self, prefixes: &[Vec<usize>]) -> Result<Tensor<T>> {
        if prefixes.is_empty() {
            return Err(Error::Contract("no prefixes given".into()));
        }
        let mut windows = Vec::with_capacity(prefixes.len() * self.config.context_len);
        for p in prefixes {
            self.window(p, &mut windows);
        }
        let mut g = Graph::new();
        let bound = g.bind(&self.params);
        let [logits, ..] = self.forward(&mut g, &bound, &windows, prefixes.len())?;
        Ok(g.value(logits).clone())
    }

    /// Greedy (argmax, ties to the lowest id) decoding of each fact's answer.
    pub fn greedy_answers(&self, facts: &[&Fact]) -> Result<Vec<Vec<usize>>> {
        for f in facts {
            self.check_fact(f)?;
        }
        let mut prefixes: Vec<Vec<usize>> = facts.iter().map(|f| f.prompt.clone()).collect();
        let mut answers: Vec<Vec<usize>> = vec![Vec::new(); facts.len()];
        let longest = facts.iter().map(|f| f.answer.len()).max().unwrap_or(0);
        for step in 0..longest {
            let active: Vec<usize> = (0..facts.len()).filter(|&i| facts[i].answer.len() > step).collect();
            let batch: Vec<Vec<usize>> = active.iter().map(|&i| prefixes[i].clone()).collect();
            let logits = self.next_token_logits(&batch)?;
            let v = self.config.vocab;
            for (row, &i) in active.iter().enumerate() {
                let tok = argmax(&logits.data()[row * v..(row + 1) * v]);
                answers[i].push(tok);
                prefixes[i].push(tok);
            }
        }
        Ok(answers)
    }
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl<T: Scalar> Model<T> for CharLm<T> {
    type Sample = Fact;

    fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// Mean token-level cross-entropy over answer positions only.
    fn record_loss(&self, g: &mut Graph<T>, bound: &Bindings, batch: &[&Fact]) -> Result<Var> {
        let (windows, targets) = self.batch_windows(batch)?;
        let [logits, ..] = self.forward(g, bound, &windows, targets.len())?;
        g.softmax_cross_entropy(logits, &targets)
    }

    fn layer_inputs(&self, batch: &[&Fact]) -> Result<IndexMap<String, Tensor<T>>> {
        let (windows, targets) = self.batch_windows(batch)?;
        let mut g = Graph::new();
        let bound = g.bind(&self.params);
        let [_, x, h1, h2] = self.forward(&mut g, &bound, &windows, targets.len())?;
        Ok(IndexMap::from([
            ("fc1.weight".to_string(), g.value(x).clone()),
            ("fc2.weight".to_string(), g.value(h1).clone()),
            ("head.weight".to_string(), g.value(h2).clone()),
        ]))
    }
}

/// Fraction of facts whose whole answer is reproduced by greedy decoding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactMatch {
    pub fraction: f64,
    /// Set when the subset was empty; the fraction is then defined as 1.0.
    pub vacuous: bool,
}

pub fn exact_match<T: Scalar>(model: &CharLm<T>, facts: &[&Fact]) -> Result<ExactMatch> {
    if facts.is_empty() {
        return Ok(ExactMatch {
            fraction: 1.0,
            vacuous: true,
        });
    }
    let decoded = model.greedy_answers(facts)?;
    let hits = decoded.iter().zip(facts).filter(|(d, f)| **d == f.answer).count();
    Ok(ExactMatch {
        fraction: hits as f64 / facts.len() as f64,
        vacuous: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{gen_facts, loss};

    fn tiny() -> CharLmConfig {
        CharLmConfig {
            vocab: 8,
            embed_dim: 3,
            hidden_width: 5,
            context_len: 4,
        }
    }

    #[test]
    fn untrained_loss_is_log_vocab() {
        let m = CharLm::<f64>::new(CharLmConfig::default(), 1).unwrap();
        let ds = gen_facts(20, 64, 4, 3, 0.1, 3).unwrap();
        let l = loss(&m, &ds.all()).unwrap();
        assert!((l - 64f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_rejected() {
        let m = CharLm::<f64>::new(tiny(), 1).unwrap();
        assert!(matches!(loss(&m, &[]), Err(Error::Contract(_))));
    }

    #[test]
    fn sequence_longer_than_context_rejected() {
        let m = CharLm::<f64>::new(tiny(), 1).unwrap();
        let f = Fact {
            prompt: vec![1, 2, 3],
            answer: vec![4, 5],
        };
        assert!(matches!(loss(&m, &[&f]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn targets_come_only_from_the_answer() {
        let m = CharLm::<f64>::new(tiny(), 1).unwrap();
        let f = Fact {
            prompt: vec![1, 2],
            answer: vec![6, 7],
        };
        let pos = m.positions(&f);
        assert_eq!(pos.len(), 2);
        assert_eq!(pos.iter().map(|p| p.1).collect::<Vec<_>>(), [6, 7]);
        assert_eq!(pos[0].0, [None, None, Some(1), Some(2)]);
        assert_eq!(pos[1].0, [None, Some(1), Some(2), Some(6)]);
    }

    #[test]
    fn model_emitting_zero_never_matches() {
        let mut m = CharLm::<f64>::new(tiny(), 1).unwrap();
        m.params_mut().get_mut("head.bias").unwrap().data_mut()[0] = 100.0;
        let facts = [
            Fact {
                prompt: vec![1],
                answer: vec![0, 3],
            },
            Fact {
                prompt: vec![2],
                answer: vec![5, 0],
            },
        ];
        let refs: Vec<&Fact> = facts.iter().collect();
        assert_eq!(m.greedy_answers(&refs).unwrap(), vec![vec![0, 0], vec![0, 0]]);
        assert_eq!(exact_match(&m, &refs).unwrap().fraction, 0.0);
    }

    #[test]
    fn ties_go_to_lowest_id() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0f64; 4]), 0);
    }

    #[test]
    fn empty_subset_is_vacuously_one() {
        let m = CharLm::<f64>::new(tiny(), 1).unwrap();
        let em = exact_match(&m, &[]).unwrap();
        assert_eq!(em.fraction, 1.0);
        assert!(em.vacuous);
    }

    #[test]
    fn exact_match_ignores_order() {
        let m = CharLm::<f64>::new(tiny(), 2).unwrap();
        let ds = gen_facts(30, 8, 2, 2, 0.2, 1).unwrap();
        let mut refs = ds.all();
        let a = exact_match(&m, &refs).unwrap();
        refs.reverse();
        assert_eq!(a, exact_match(&m, &refs).unwrap());
    }
}
