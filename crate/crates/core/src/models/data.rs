//! Synthetic "fictitious facts": random key sequences mapped to random answers,
//! split into a forget set and a retain set.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::rng::Xorshift64Star;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fact {
    pub prompt: Vec<usize>,
    pub answer: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactDataset {
    pub vocab: usize,
    pub facts: Vec<Fact>,
    /// Sorted indices into `facts`.
    pub forget_ids: Vec<usize>,
    /// Sorted indices into `facts`; disjoint from `forget_ids`.
    pub retain_ids: Vec<usize>,
}

/// Generates `n_facts` facts with unique `key_len`-token prompts and random
/// `val_len`-token answers. `round(forget_fraction · n_facts)` facts, chosen
/// by a seeded shuffle, form the forget split.
pub fn gen_facts(
    n_facts: usize,
    vocab: usize,
    key_len: usize,
    val_len: usize,
    forget_fraction: f64,
    seed: u64,
) -> Result<FactDataset> {
    if n_facts < 2 {
        return Err(Error::InvalidInput("need at least two facts".into()));
    }
    if !(forget_fraction > 0.0 && forget_fraction < 1.0) {
        return Err(Error::InvalidInput(format!("forget fraction {forget_fraction} not in (0, 1)")));
    }
    if vocab == 0 || key_len == 0 || val_len == 0 {
        return Err(Error::InvalidInput("vocab, key_len and val_len must be positive".into()));
    }
    let key_space = (0..key_len).try_fold(1usize, |acc, _| acc.checked_mul(vocab));
    if key_space.is_some_and(|space| space < n_facts) {
        return Err(Error::Generation(format!(
            "{vocab}^{key_len} possible keys cannot hold {n_facts} unique facts"
        )));
    }

    let mut rng = Xorshift64Star::new(seed);
    let mut seen = std::collections::HashSet::with_capacity(n_facts);
    let mut facts = Vec::with_capacity(n_facts);
    let max_draws = n_facts.saturating_mul(1000);
    let mut draws = 0;
    while facts.len() < n_facts {
        draws += 1;
        if draws > max_draws {
            return Err(Error::Generation(format!("gave up after {max_draws} key draws")));
        }
        let prompt: Vec<usize> = (0..key_len).map(|_| rng.below(vocab)).collect();
        if !seen.insert(prompt.clone()) {
            continue;
        }
        let answer = (0..val_len).map(|_| rng.below(vocab)).collect();
        facts.push(Fact { prompt, answer });
    }

    let n_forget = (forget_fraction * n_facts as f64).round() as usize;
    let mut order: Vec<usize> = (0..n_facts).collect();
    rng.shuffle(&mut order);
    let mut forget_ids = order[..n_forget].to_vec();
    let mut retain_ids = order[n_forget..].to_vec();
    forget_ids.sort_unstable();
    retain_ids.sort_unstable();
    Ok(FactDataset {
        vocab,
        facts,
        forget_ids,
        retain_ids,
    })
}

impl FactDataset {
    pub fn forget(&self) -> Vec<&Fact> {
        self.forget_ids.iter().map(|&i| &self.facts[i]).collect()
    }

    pub fn retain(&self) -> Vec<&Fact> {
        self.retain_ids.iter().map(|&i| &self.facts[i]).collect()
    }

    pub fn all(&self) -> Vec<&Fact> {
        self.facts.iter().collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut owner = vec![0u8; self.facts.len()];
        for &i in self.forget_ids.iter().chain(&self.retain_ids) {
            let slot = owner
                .get_mut(i)
                .ok_or_else(|| Error::Format(format!("split index {i} out of range")))?;
            *slot += 1;
        }
        if owner.iter().any(|&c| c != 1) {
            return Err(Error::Format("forget and retain splits must partition the facts".into()));
        }
        for f in &self.facts {
            if f.prompt.iter().chain(&f.answer).any(|&t| t >= self.vocab) {
                return Err(Error::Format(format!("token out of vocabulary {}", self.vocab)));
            }
            if f.answer.is_empty() {
                return Err(Error::Format("fact with an empty answer".into()));
            }
        }
        Ok(())
    }

    /// Line-oriented text form:
    ///
    /// ```text
    /// SAUFACTS vocab=64 forget=3,17 retain=0,1,2,...
    /// 12 5 33 7 | 4 18 9
    /// ```
    pub fn to_text(&self) -> String {
        let join = |ids: &[usize]| ids.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut out = format!(
            "SAUFACTS vocab={} forget={} retain={}\n",
            self.vocab,
            join(&self.forget_ids),
            join(&self.retain_ids)
        );
        for f in &self.facts {
            let toks = |t: &[usize]| t.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
            let _ = writeln!(out, "{} | {}", toks(&f.prompt), toks(&f.answer));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty dataset file".into()))?;
        let mut fields = header.split(' ');
        if fields.next() != Some("SAUFACTS") {
            return Err(Error::Format("missing SAUFACTS header".into()));
        }
        let (mut vocab, mut forget_ids, mut retain_ids) = (None, None, None);
        for field in fields {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad header field `{field}`")))?;
            let ids = || -> Result<Vec<usize>> {
                value
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse().map_err(|_| Error::Format(format!("bad index `{s}`"))))
                    .collect()
            };
            match key {
                "vocab" => vocab = Some(value.parse().map_err(|_| Error::Format(format!("bad vocab `{value}`")))?),
                "forget" => forget_ids = Some(ids()?),
                "retain" => retain_ids = Some(ids()?),
                _ => return Err(Error::Format(format!("unknown header field `{key}`"))),
            }
        }
        let parse_tokens = |s: &str| -> Result<Vec<usize>> {
            s.split_whitespace()
                .map(|t| t.parse().map_err(|_| Error::Format(format!("bad token `{t}`"))))
                .collect()
        };
        let mut facts = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let (p, a) = line
                .split_once('|')
                .ok_or_else(|| Error::Format(format!("fact line without `|`: {line}")))?;
            facts.push(Fact {
                prompt: parse_tokens(p)?,
                answer: parse_tokens(a)?,
            });
        }
        let ds = FactDataset {
            vocab: vocab.ok_or_else(|| Error::Format("header lacks vocab".into()))?,
            facts,
            forget_ids: forget_ids.ok_or_else(|| Error::Format("header lacks forget".into()))?,
            retain_ids: retain_ids.ok_or_else(|| Error::Format("header lacks retain".into()))?,
        };
        ds.validate()?;
        Ok(ds)
    }
}
