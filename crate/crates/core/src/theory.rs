//! Numerical checks of the diagonal-Fisher KL approximation, capacity loss
//! and saliency-weighted compensation, on toys small enough to enumerate.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::autodiff::{log_softmax_nll, Bindings, Graph, Var};
use crate::error::{Error, Result};
use crate::models::{loss_and_grad, Model};
use crate::params::ParamSet;
use crate::pruning::SparsityMask;
use crate::rng::{derive_seed, Xorshift64Star};
use crate::saliency::SaliencyMap;
use crate::sau::build_redistribution;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Softmax classifier over a finite input set with one parameter per input:
/// `logits(x) = θ_x · v_x + b_x`. Each θ_x only touches the distribution of
/// input x, so the Fisher information is exactly diagonal.
#[derive(Debug, Clone)]
pub struct SoftmaxToy<T> {
    directions: Vec<Vec<T>>,
    offsets: Vec<Vec<T>>,
    params: ParamSet<T>,
}

/// An (input, class) observation.
pub type ToySample = (usize, usize);

impl<T: Scalar> SoftmaxToy<T> {
    /// `directions[x]` is v_x, `offsets[x]` is b_x, `theta[x]` is θ_x.
    pub fn new(directions: Vec<Vec<T>>, offsets: Vec<Vec<T>>, theta: Vec<T>) -> Result<Self> {
        let inputs = directions.len();
        let classes = directions.first().map_or(0, Vec::len);
        if inputs == 0 || classes < 2 {
            return Err(Error::InvalidInput("toy needs at least one input and two classes".into()));
        }
        if offsets.len() != inputs
            || theta.len() != inputs
            || directions.iter().chain(&offsets).any(|r| r.len() != classes)
        {
            return Err(Error::InvalidShape("toy tables disagree in shape".into()));
        }
        let mut params = ParamSet::new();
        params.insert("theta", Tensor::from_vec(vec![inputs, 1], theta)?, true)?;
        Ok(Self {
            directions,
            offsets,
            params,
        })
    }

    /// All tables drawn from N(0, 1).
    pub fn seeded(inputs: usize, classes: usize, seed: u64) -> Result<Self> {
        let mut rng = Xorshift64Star::new(seed);
        let mut table = |rows: usize, cols: usize| -> Vec<Vec<T>> {
            (0..rows)
                .map(|_| (0..cols).map(|_| T::lit(rng.normal())).collect())
                .collect()
        };
        let directions = table(inputs, classes);
        let offsets = table(inputs, classes);
        let theta = table(1, inputs).remove(0);
        Self::new(directions, offsets, theta)
    }

    /// One input, two classes, `v = (−1, 1)`, at θ = 0: the KL is even in Δθ.
    pub fn symmetric() -> Self {
        Self::new(
            vec![vec![-T::one(), T::one()]],
            vec![vec![T::zero(), T::zero()]],
            vec![T::zero()],
        )
        .expect("valid toy")
    }

    pub fn inputs(&self) -> usize {
        self.directions.len()
    }

    pub fn classes(&self) -> usize {
        self.directions[0].len()
    }

    pub fn theta(&self) -> &[T] {
        self.params.get("theta").expect("theta present").data()
    }

    pub fn with_theta(&self, theta: &[T]) -> Result<Self> {
        if theta.len() != self.inputs() {
            return Err(Error::InvalidShape(format!("expected {} parameters", self.inputs())));
        }
        let mut out = self.clone();
        out.params.get_mut("theta").unwrap().data_mut().copy_from_slice(theta);
        Ok(out)
    }

    fn logits_row(&self, x: usize, theta: T) -> Vec<T> {
        self.directions[x]
            .iter()
            .zip(&self.offsets[x])
            .map(|(&v, &b)| theta * v + b)
            .collect()
    }

    /// p(· | x) at the current parameters.
    pub fn probs(&self, x: usize) -> Vec<f64> {
        let row: Vec<f64> = self.logits_row(x, self.theta()[x]).iter().map(|v| v.as_f64()).collect();
        log_softmax_nll(&row, 0).1
    }

    /// Every (x, y) pair once, in input-major order.
    pub fn all_pairs(&self) -> Vec<ToySample> {
        (0..self.inputs()).flat_map(|x| (0..self.classes()).map(move |y| (x, y))).collect()
    }
}

impl<T: Scalar> Model<T> for SoftmaxToy<T> {
    type Sample = ToySample;

    fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn record_loss(&self, g: &mut Graph<T>, bound: &Bindings, batch: &[&ToySample]) -> Result<Var> {
        let (inputs, classes) = (self.inputs(), self.classes());
        let mut idx = Vec::with_capacity(batch.len());
        let mut dirs = Vec::with_capacity(batch.len() * classes);
        let mut offs = Vec::with_capacity(batch.len() * classes);
        let mut targets = Vec::with_capacity(batch.len());
        for &&(x, y) in batch {
            if x >= inputs || y >= classes {
                return Err(Error::Index(format!("sample ({x}, {y}) outside a {inputs}×{classes} toy")));
            }
            idx.push(Some(x));
            dirs.extend_from_slice(&self.directions[x]);
            offs.extend_from_slice(&self.offsets[x]);
            targets.push(y);
        }
        let b = batch.len();
        let theta = g.embed(bound.get("theta")?, &idx, b)?;
        let spread = g.constant(Tensor::ones(&[1, classes])?);
        let theta = g.matmul(theta, spread)?;
        let dirs = g.constant(Tensor::from_vec(vec![b, classes], dirs)?);
        let offs = g.constant(Tensor::from_vec(vec![b, classes], offs)?);
        let scaled = g.mul(theta, dirs)?;
        let logits = g.add(scaled, offs)?;
        g.softmax_cross_entropy(logits, &targets)
    }

    /// θ acts like an `inputs × 1` weight fed by a constant 1.
    fn layer_inputs(&self, batch: &[&ToySample]) -> Result<IndexMap<String, Tensor<T>>> {
        let mut out = IndexMap::new();
        out.insert("theta".to_string(), Tensor::ones(&[batch.len().max(1), 1])?);
        Ok(out)
    }
}

/// Mean over inputs of KL(p_a(·|x) ‖ p_b(·|x)), by enumeration.
pub fn exact_kl<T: Scalar>(a: &SoftmaxToy<T>, b: &SoftmaxToy<T>) -> Result<f64> {
    if a.inputs() != b.inputs() || a.classes() != b.classes() {
        return Err(Error::Contract("toys differ in structure".into()));
    }
    let mut total = 0.0;
    for x in 0..a.inputs() {
        let (p, q) = (a.probs(x), b.probs(x));
        for (&pi, &qi) in p.iter().zip(&q) {
            if pi == 0.0 {
                continue;
            }
            if qi == 0.0 {
                return Err(Error::Numerical(format!("zero probability under the second model at input {x}")));
            }
            total += pi * (pi / qi).ln();
        }
    }
    Ok(total / a.inputs() as f64)
}

/// `½ Σ F_i Δθ_i²`.
pub fn quadratic_kl(fisher: &[f64], delta: &[f64]) -> Result<f64> {
    if fisher.len() != delta.len() {
        return Err(Error::InvalidShape(format!("{} Fisher entries vs {} deltas", fisher.len(), delta.len())));
    }
    Ok(0.5 * fisher.iter().zip(delta).map(|(f, d)| f * d * d).sum::<f64>())
}

/// Expected Fisher through the autodiff engine:
/// `F = (1/X) Σ_x Σ_y p(y|x) (∂ℓ(x, y)/∂θ)²`.
pub fn expected_fisher<T: Scalar>(toy: &SoftmaxToy<T>) -> Result<Vec<f64>> {
    let mut f = vec![0.0; toy.inputs()];
    for x in 0..toy.inputs() {
        let p = toy.probs(x);
        for (y, &py) in p.iter().enumerate() {
            let (_, grad) = loss_and_grad(toy, &[&(x, y)])?;
            for (fi, g) in f.iter_mut().zip(grad.get("theta").unwrap().data()) {
                *fi += py * g.as_f64().powi(2);
            }
        }
    }
    let n = toy.inputs() as f64;
    Ok(f.into_iter().map(|v| v / n).collect())
}

/// Closed form of the expected Fisher: `F_x = Var_{y~p(·|x)}(v_{x,y}) / X`.
pub fn expected_fisher_closed_form<T: Scalar>(toy: &SoftmaxToy<T>) -> Vec<f64> {
    (0..toy.inputs())
        .map(|x| {
            let p = toy.probs(x);
            let v: Vec<f64> = toy.directions[x].iter().map(|d| d.as_f64()).collect();
            let mean: f64 = p.iter().zip(&v).map(|(a, b)| a * b).sum();
            let var: f64 = p.iter().zip(&v).map(|(a, b)| a * (b - mean).powi(2)).sum();
            var / toy.inputs() as f64
        })
        .collect()
}

/// Closed form of the empirical Fisher on labelled samples:
/// `F_x = (1/N) Σ_{(x, y)} (E_p[v_x] − v_{x,y})²`.
pub fn empirical_fisher_closed_form<T: Scalar>(toy: &SoftmaxToy<T>, samples: &[ToySample]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Contract("empirical Fisher needs samples".into()));
    }
    let mut f = vec![0.0; toy.inputs()];
    for &(x, y) in samples {
        if x >= toy.inputs() || y >= toy.classes() {
            return Err(Error::Index(format!("sample ({x}, {y}) out of range")));
        }
        let p = toy.probs(x);
        let mean: f64 = p.iter().zip(&toy.directions[x]).map(|(a, b)| a * b.as_f64()).sum();
        f[x] += (mean - toy.directions[x][y].as_f64()).powi(2);
    }
    Ok(f.into_iter().map(|v| v / samples.len() as f64).collect())
}

pub const EPSILONS: [f64; 4] = [1e-1, 5e-2, 2.5e-2, 1.25e-2];
pub const THEOREM_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonRow {
    pub epsilon: f64,
    pub exact_kl: f64,
    pub quadratic_kl: f64,
    /// `None` when the exact KL is zero and the ratio is undefined.
    pub rel_err: Option<f64>,
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub rows: Vec<EpsilonRow>,
    pub monotone: bool,
    pub tolerance: f64,
    pub final_rel_err: Option<f64>,
    pub within_tolerance: bool,
    pub passed: bool,
}

/// Compares the exact KL with its quadratic Fisher approximation along
/// `θ + ε·d` for each ε (strictly decreasing, positive).
pub fn verify_theorem<T: Scalar>(toy: &SoftmaxToy<T>, direction: &[f64], epsilons: &[f64]) -> Result<TheoremReport> {
    if direction.len() != toy.inputs() {
        return Err(Error::InvalidShape("direction length differs from parameter count".into()));
    }
    if epsilons.is_empty() || epsilons.iter().any(|&e| !(e > 0.0)) || epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Contract("epsilons must be positive and strictly decreasing".into()));
    }
    let fisher = expected_fisher(toy)?;
    let base: Vec<f64> = toy.theta().iter().map(|t| t.as_f64()).collect();
    let mut rows = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let delta: Vec<f64> = direction.iter().map(|d| eps * d).collect();
        let moved: Vec<T> = base.iter().zip(&delta).map(|(b, d)| T::lit(b + d)).collect();
        let kl = exact_kl(toy, &toy.with_theta(&moved)?)?;
        let quad = quadratic_kl(&fisher, &delta)?;
        let rel_err = (kl != 0.0).then(|| (kl - quad).abs() / kl);
        rows.push(EpsilonRow {
            epsilon: eps,
            exact_kl: kl,
            quadratic_kl: quad,
            rel_err,
            skipped: rel_err.is_none(),
        });
    }
    let errs: Vec<f64> = rows.iter().filter_map(|r| r.rel_err).collect();
    let monotone = errs.windows(2).all(|w| w[1] < w[0]);
    let final_rel_err = rows.last().and_then(|r| r.rel_err);
    let within_tolerance = final_rel_err.is_some_and(|e| e < THEOREM_TOLERANCE);
    Ok(TheoremReport {
        rows,
        monotone,
        tolerance: THEOREM_TOLERANCE,
        final_rel_err,
        within_tolerance,
        passed: monotone && within_tolerance,
    })
}

/// `Σ_{pruned} F_i / Σ_i F_i`.
pub fn capacity_loss_slice(fisher: &[f64], mask: &[u8]) -> Result<f64> {
    if fisher.len() != mask.len() {
        return Err(Error::InvalidShape("Fisher and mask lengths differ".into()));
    }
    let total: f64 = fisher.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Contract("Fisher information sums to zero".into()));
    }
    let pruned: f64 = fisher.iter().zip(mask).filter(|(_, &m)| m == 0).map(|(f, _)| f).sum();
    Ok(pruned / total)
}

/// Capacity loss over every masked layer of a Fisher map.
pub fn capacity_loss<T: Scalar>(fisher: &SaliencyMap<T>, mask: &SparsityMask) -> Result<f64> {
    let (mut f, mut m) = (Vec::new(), Vec::new());
    for (name, layer) in mask.layers() {
        let s = fisher
            .layer(name)
            .filter(|s| s.shape() == layer.shape())
            .ok_or_else(|| Error::Contract(format!("Fisher map does not align with mask layer `{name}`")))?;
        f.extend(s.data().iter().map(|v| v.as_f64()));
        m.extend_from_slice(layer.data());
    }
    capacity_loss_slice(&f, &m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompensationReport {
    /// `Σ_{survivors} W_i F_i` from the redistribution weights.
    pub lhs: f64,
    /// `Σ F + α·I·Σ F_i² / Σ F_j` over survivors.
    pub exact_rhs: f64,
    /// `Σ F + α·I·F̄`, the form that holds when survivor Fisher is uniform.
    pub uniform_rhs: f64,
    pub pruned_importance: f64,
    pub uniform: bool,
    pub exact_error: f64,
    pub uniform_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub const COMPENSATION_TOLERANCE: f64 = 1e-10;

/// Redistribution weights built from `fisher` as the saliency, checked
/// against the exact expansion (and, for uniform survivors, the mean form).
pub fn verify_compensation(fisher: &[f64], mask: &[u8], alpha: f64) -> Result<CompensationReport> {
    if fisher.len() != mask.len() {
        return Err(Error::InvalidShape("Fisher and mask lengths differ".into()));
    }
    let n = fisher.len();
    let mut m = IndexMap::new();
    m.insert("w".to_string(), Tensor::from_vec(vec![1, n], mask.to_vec())?);
    let mask_map = SparsityMask::new(m, 0.0)?;
    let mut s = IndexMap::new();
    s.insert("w".to_string(), Tensor::from_vec(vec![1, n], fisher.to_vec())?);
    let saliency = SaliencyMap::new(s, 1)?;
    let w = build_redistribution(&saliency, &mask_map, alpha)?;
    let w = w["w"].data();

    let surv: Vec<usize> = (0..n).filter(|&i| mask[i] == 1).collect();
    if surv.is_empty() {
        return Err(Error::Contract("mask has no survivors".into()));
    }
    let sum_f: f64 = surv.iter().map(|&i| fisher[i]).sum();
    let sum_f2: f64 = surv.iter().map(|&i| fisher[i] * fisher[i]).sum();
    let pruned: f64 = (0..n).filter(|&i| mask[i] == 0).map(|i| fisher[i]).sum();
    let lhs: f64 = surv.iter().map(|&i| w[i] * fisher[i]).sum();
    let exact_rhs = if sum_f > 0.0 { sum_f + alpha * pruned * sum_f2 / sum_f } else { sum_f };
    let mean = sum_f / surv.len() as f64;
    let uniform_rhs = sum_f + alpha * pruned * mean;
    let uniform = surv.iter().all(|&i| fisher[i] == fisher[surv[0]]) && sum_f > 0.0;
    let exact_error = (lhs - exact_rhs).abs();
    let uniform_error = (lhs - uniform_rhs).abs();
    let passed = exact_error <= COMPENSATION_TOLERANCE && (!uniform || uniform_error <= COMPENSATION_TOLERANCE);
    Ok(CompensationReport {
        lhs,
        exact_rhs,
        uniform_rhs,
        pruned_importance: pruned,
        uniform,
        exact_error,
        uniform_error,
        tolerance: COMPENSATION_TOLERANCE,
        passed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyCase {
    pub seed: u64,
    pub theorem: TheoremReport,
    pub fisher_closed_form_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheorySuite {
    pub seed: u64,
    pub epsilons: Vec<f64>,
    pub toys: Vec<ToyCase>,
    pub symmetric: TheoremReport,
    pub capacity_uniform_error: f64,
    pub compensation_cases: usize,
    pub compensation_max_exact_error: f64,
    pub compensation_max_uniform_error: f64,
    pub all_passed: bool,
}

pub const SUITE_TOYS: usize = 10;
const SUITE_COMPENSATION_CASES: usize = 200;

/// Every theory check, seeded: ten 3-class toys, the symmetric toy, the
/// uniform capacity-loss case and random compensation instances.
pub fn run_theory_suite(seed: u64) -> Result<TheorySuite> {
    let mut toys = Vec::with_capacity(SUITE_TOYS);
    for i in 0..SUITE_TOYS as u64 {
        let toy_seed = derive_seed(&[seed, i]);
        let toy = SoftmaxToy::<f64>::seeded(4, 3, toy_seed)?;
        let mut rng = Xorshift64Star::new(derive_seed(&[toy_seed, 1]));
        let dir = unit_direction(&mut rng, toy.inputs());
        let theorem = verify_theorem(&toy, &dir, &EPSILONS)?;
        let auto = expected_fisher(&toy)?;
        let closed = expected_fisher_closed_form(&toy);
        let err = auto.iter().zip(&closed).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        toys.push(ToyCase {
            seed: toy_seed,
            theorem,
            fisher_closed_form_error: err,
        });
    }
    let symmetric = verify_theorem(&SoftmaxToy::<f64>::symmetric(), &[1.0], &EPSILONS)?;

    let mut rng = Xorshift64Star::new(derive_seed(&[seed, 99]));
    let n = 64;
    let mut mask = vec![1u8; n];
    for slot in mask.iter_mut().take(n / 4) {
        *slot = 0;
    }
    let capacity_uniform_error = (capacity_loss_slice(&vec![0.75; n], &mask)? - 0.25).abs();

    let (mut max_exact, mut max_uniform) = (0.0f64, 0.0f64);
    for _ in 0..SUITE_COMPENSATION_CASES {
        let (fisher, mask, alpha) = random_compensation_case(&mut rng, false);
        max_exact = max_exact.max(verify_compensation(&fisher, &mask, alpha)?.exact_error);
        let (fisher, mask, alpha) = random_compensation_case(&mut rng, true);
        max_uniform = max_uniform.max(verify_compensation(&fisher, &mask, alpha)?.uniform_error);
    }

    let all_passed = toys.iter().all(|t| t.theorem.passed && t.fisher_closed_form_error < 1e-8)
        && symmetric.passed
        && capacity_uniform_error == 0.0
        && max_exact <= COMPENSATION_TOLERANCE
        && max_uniform <= COMPENSATION_TOLERANCE;
    Ok(TheorySuite {
        seed,
        epsilons: EPSILONS.to_vec(),
        toys,
        symmetric,
        capacity_uniform_error,
        compensation_cases: 2 * SUITE_COMPENSATION_CASES,
        compensation_max_exact_error: max_exact,
        compensation_max_uniform_error: max_uniform,
        all_passed,
    })
}

/// A standard-normal direction scaled to unit length.
pub fn unit_direction(rng: &mut Xorshift64Star, n: usize) -> Vec<f64> {
    let d: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    d.into_iter().map(|v| v / norm).collect()
}

/// Random Fisher vector, mask with at least one survivor, and α ∈ [0, 1).
/// With `uniform`, every survivor gets the same Fisher value.
pub fn random_compensation_case(rng: &mut Xorshift64Star, uniform: bool) -> (Vec<f64>, Vec<u8>, f64) {
    let n = 1 + rng.below(256);
    let mut mask: Vec<u8> = (0..n).map(|_| u8::from(rng.next_f64() < 0.5)).collect();
    let keep = rng.below(n);
    mask[keep] = 1;
    let level = rng.next_f64() + 0.01;
    let fisher = (0..n)
        .map(|i| {
            if uniform && mask[i] == 1 {
                level
            } else {
                rng.next_f64()
            }
        })
        .collect();
    (fisher, mask, rng.next_f64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::saliency::{compute_saliency, fisher_diag};

    fn two_class(p: f64) -> SoftmaxToy<f64> {
        // logits (0, ln(p1/p0)) gives probabilities (p0, p1).
        SoftmaxToy::new(vec![vec![0.0, 1.0]], vec![vec![0.0, 0.0]], vec![((1.0 - p) / p).ln()]).unwrap()
    }

    #[test]
    fn kl_by_hand() {
        let p = two_class(0.5);
        let q = two_class(0.9);
        assert!((exact_kl(&p, &q).unwrap() - 0.51083).abs() < 1e-5);
        assert_eq!(exact_kl(&q, &q).unwrap(), 0.0);
        assert!(exact_kl(&q, &p).unwrap() >= 0.0);
    }

    #[test]
    fn quadratic_kl_arithmetic() {
        assert!((quadratic_kl(&[1.0, 2.0], &[0.1, 0.1]).unwrap() - 0.015).abs() < 1e-15);
        assert_eq!(quadratic_kl(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 0.0);
        let q1 = quadratic_kl(&[0.3, 1.7], &[0.2, -0.5]).unwrap();
        let q3 = quadratic_kl(&[0.3, 1.7], &[0.6, -1.5]).unwrap();
        assert!((q3 - 9.0 * q1).abs() < 1e-12);
        assert!(quadratic_kl(&[1.0], &[]).is_err());
    }

    #[test]
    fn probabilities_normalised() {
        let toy = SoftmaxToy::<f64>::seeded(5, 3, 3).unwrap();
        for x in 0..5 {
            assert!((toy.probs(x).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_toy_has_cosh_kl() {
        let toy = SoftmaxToy::<f64>::symmetric();
        let r = verify_theorem(&toy, &[1.0], &EPSILONS).unwrap();
        for row in &r.rows {
            let e = row.epsilon;
            assert!((row.exact_kl - e.cosh().ln()).abs() < 1e-15);
            assert!((row.rel_err.unwrap() - e * e / 6.0).abs() < e.powi(4));
        }
        assert!(r.passed);
    }

    #[test]
    fn zero_kl_is_skipped() {
        // v_x constant across classes: θ has no effect on p.
        let toy = SoftmaxToy::<f64>::new(vec![vec![1.0, 1.0]], vec![vec![0.0, 0.5]], vec![0.0]).unwrap();
        let r = verify_theorem(&toy, &[1.0], &EPSILONS).unwrap();
        assert!(r.rows.iter().all(|row| row.skipped));
        assert!(!r.passed);
    }

    #[test]
    fn fisher_routes_agree() {
        let toy = SoftmaxToy::<f64>::seeded(4, 3, 11).unwrap();
        let auto = expected_fisher(&toy).unwrap();
        let closed = expected_fisher_closed_form(&toy);
        for (a, b) in auto.iter().zip(&closed) {
            assert!((a - b).abs() < 1e-12);
        }
        let samples = vec![(0, 1), (2, 0), (2, 2), (3, 1), (0, 1), (1, 0)];
        let refs: Vec<&ToySample> = samples.iter().collect();
        let emp = fisher_diag(&toy, &refs).unwrap();
        let closed = empirical_fisher_closed_form(&toy, &samples).unwrap();
        for (a, b) in emp.layer("theta").unwrap().data().iter().zip(&closed) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn one_parameter_logistic_saliency() {
        // p = sigmoid(0) = 0.5, gradient of −log p₁ is p − 1 = −0.5, squared 0.25.
        let toy = SoftmaxToy::<f64>::new(vec![vec![0.0, 1.0]], vec![vec![0.0, 0.0]], vec![0.0]).unwrap();
        let s = compute_saliency(&toy, &[&(0, 1)], 1).unwrap();
        assert_eq!(s.layer("theta").unwrap().data(), &[0.25]);
    }

    #[test]
    fn capacity_loss_examples() {
        let f = [4.0, 3.0, 2.0, 1.0, 5.0, 6.0];
        assert!((capacity_loss_slice(&f, &[1, 1, 0, 1, 1, 0]).unwrap() - 8.0 / 21.0).abs() < 1e-15);
        assert_eq!(capacity_loss_slice(&f, &[1; 6]).unwrap(), 0.0);
        assert!(matches!(capacity_loss_slice(&[0.0; 3], &[1, 0, 1]), Err(Error::Contract(_))));
        let mut mask = vec![1u8; 8];
        mask[..2].fill(0);
        assert_eq!(capacity_loss_slice(&[0.5; 8], &mask).unwrap(), 0.25);
    }

    #[test]
    fn compensation_examples() {
        let r = verify_compensation(&[4.0, 3.0, 2.0, 1.0, 5.0, 6.0], &[1, 1, 0, 1, 1, 0], 0.1).unwrap();
        assert!((r.lhs - (13.0 + 0.8 * 51.0 / 13.0)).abs() < 1e-12);
        assert!((r.lhs - 16.1385).abs() < 1e-4);
        assert!(r.passed && !r.uniform);

        // Four survivors at F = 2, pruned importance 8.
        let r = verify_compensation(&[2.0, 2.0, 4.0, 2.0, 4.0, 2.0], &[1, 1, 0, 1, 0, 1], 0.1).unwrap();
        assert!((r.lhs - 9.6).abs() < 1e-12);
        assert!(r.uniform && r.passed);

        let r = verify_compensation(&[4.0, 3.0, 2.0], &[1, 1, 0], 0.0).unwrap();
        assert_eq!(r.lhs, 7.0);
        assert!(verify_compensation(&[1.0], &[0], 0.1).is_err());
    }

    #[test]
    fn suite_passes() {
        let s = run_theory_suite(7).unwrap();
        assert!(s.all_passed, "{s:#?}");
        assert_eq!(s, run_theory_suite(7).unwrap());
    }
}
