//! Entropy, cross-entropy and KL on exact distributions; the smoothed n-gram
//! estimator `F_n`; and model cross-entropy over encoded datasets.
//!
//! Everything reported is in bits.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::corpus::TokenStream;
use crate::engine::{EncodedInstance, TaskFamily};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::scalar::Scalar;

const NORMALIZATION_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteDistribution<T> {
    probs: Vec<T>,
}

impl<T: Scalar> DiscreteDistribution<T> {
    pub fn new(probs: Vec<T>) -> Result<Self> {
        check_probabilities(&probs)?;
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(vec![T::one() / T::of(n as f64); n])
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

fn check_probabilities<T: Scalar>(probs: &[T]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::InvalidDistribution("no outcomes".into()));
    }
    if let Some(i) = probs.iter().position(|p| !p.is_finite() || *p < T::zero()) {
        return Err(Error::InvalidDistribution(format!("component {i} is {}", probs[i])));
    }
    let total: T = probs.iter().copied().sum();
    if (total.as_f64() - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(Error::InvalidDistribution(format!("sums to {total}")));
    }
    Ok(())
}

fn plogp_bits<T: Scalar>(p: T) -> T {
    if p > T::zero() {
        p * p.log2()
    } else {
        T::zero()
    }
}

/// `-sum p log2 p`, with `0 log 0 = 0`.
pub fn shannon_entropy<T: Scalar>(d: &DiscreteDistribution<T>) -> T {
    -d.probs.iter().map(|&p| plogp_bits(p)).sum::<T>()
}

fn check_same_support<T: Scalar>(p: &DiscreteDistribution<T>, q: &DiscreteDistribution<T>) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::dims("divergence", format!("{} outcomes", p.len()), q.len()));
    }
    if let Some(index) = p
        .probs
        .iter()
        .zip(&q.probs)
        .position(|(&a, &b)| a > T::zero() && b <= T::zero())
    {
        return Err(Error::InfiniteDivergence { index });
    }
    Ok(())
}

/// `H(P, Q) = -sum p log2 q`.
pub fn cross_entropy<T: Scalar>(p: &DiscreteDistribution<T>, q: &DiscreteDistribution<T>) -> Result<T> {
    check_same_support(p, q)?;
    Ok(-p
        .probs
        .iter()
        .zip(&q.probs)
        .filter(|(&a, _)| a > T::zero())
        .map(|(&a, &b)| a * b.log2())
        .sum::<T>())
}

/// `D_KL(P || Q) = sum p log2 (p / q)`.
pub fn kl_divergence<T: Scalar>(p: &DiscreteDistribution<T>, q: &DiscreteDistribution<T>) -> Result<T> {
    check_same_support(p, q)?;
    Ok(p.probs
        .iter()
        .zip(&q.probs)
        .filter(|(&a, _)| a > T::zero())
        .map(|(&a, &b)| a * (a / b).log2())
        .sum::<T>())
}

/// Joint distribution over `(x, y)`; rows index `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct JointTable<T> {
    rows: usize,
    cols: usize,
    probs: Vec<T>,
}

impl<T: Scalar> JointTable<T> {
    pub fn new(rows: usize, cols: usize, probs: Vec<T>) -> Result<Self> {
        if rows * cols != probs.len() {
            return Err(Error::dims("JointTable", rows * cols, probs.len()));
        }
        check_probabilities(&probs)?;
        Ok(Self { rows, cols, probs })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidDistribution("ragged joint table".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn get(&self, x: usize, y: usize) -> T {
        self.probs[x * self.cols + y]
    }

    pub fn marginal_x(&self) -> Vec<T> {
        (0..self.rows)
            .map(|x| self.probs[x * self.cols..(x + 1) * self.cols].iter().copied().sum())
            .collect()
    }

    pub fn marginal_y(&self) -> Vec<T> {
        (0..self.cols)
            .map(|y| (0..self.rows).map(|x| self.get(x, y)).sum())
            .collect()
    }

    pub fn joint_entropy(&self) -> T {
        -self.probs.iter().map(|&p| plogp_bits(p)).sum::<T>()
    }
}

/// `H(Y|X) = H(X, Y) - H(X)`.
pub fn conditional_entropy<T: Scalar>(j: &JointTable<T>) -> T {
    let hx = -j.marginal_x().into_iter().map(plogp_bits).sum::<T>();
    let h = j.joint_entropy() - hx;
    // exact zero can come out as -1e-17
    h.max(T::zero())
}

/// Additively smoothed order-`n` Markov model: `p(y | ctx) = (c + a) / (N + a V)`.
#[derive(Clone, Debug)]
pub struct NgramModel {
    order: usize,
    alpha: f64,
    vocab_size: usize,
    contexts: HashMap<Vec<usize>, ContextCounts>,
}

#[derive(Clone, Debug, Default)]
struct ContextCounts {
    next: HashMap<usize, u64>,
    total: u64,
}

impl NgramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn prob(&self, context: &[usize], symbol: usize) -> f64 {
        let v = self.vocab_size as f64;
        match self.contexts.get(context) {
            Some(c) => {
                let count = c.next.get(&symbol).copied().unwrap_or(0) as f64;
                (count + self.alpha) / (c.total as f64 + self.alpha * v)
            }
            None => 1.0 / v,
        }
    }

    /// Full conditional distribution for a context.
    pub fn conditional(&self, context: &[usize]) -> Vec<f64> {
        (0..self.vocab_size).map(|y| self.prob(context, y)).collect()
    }
}

/// Counts every (length-`n` context, next symbol) pair in `corpus`.
pub fn fit_ngram(corpus: &TokenStream, order: usize, alpha: f64, vocab_size: usize) -> Result<NgramModel> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("smoothing constant must be positive, got {alpha}")));
    }
    if vocab_size == 0 {
        return Err(Error::Config("n-gram vocabulary is empty".into()));
    }
    corpus.validate(vocab_size)?;
    let mut contexts: HashMap<Vec<usize>, ContextCounts> = HashMap::new();
    for t in order..corpus.len() {
        let c = contexts.entry(corpus.tokens[t - order..t].to_vec()).or_default();
        *c.next.entry(corpus.tokens[t]).or_default() += 1;
        c.total += 1;
    }
    Ok(NgramModel {
        order,
        alpha,
        vocab_size,
        contexts,
    })
}

/// `F_n`: bits/symbol of the model on held-out data. The first `n` positions
/// lack a full context and are charged `log2 V` (uniform back-off).
pub fn ngram_cross_entropy(model: &NgramModel, heldout: &TokenStream) -> Result<f64> {
    if heldout.is_empty() {
        return Err(Error::Empty("held-out stream"));
    }
    heldout.validate(model.vocab_size)?;
    let n = model.order;
    let mut bits = 0.0;
    for (t, &y) in heldout.tokens.iter().enumerate() {
        let p = if t < n {
            1.0 / model.vocab_size as f64
        } else {
            model.prob(&heldout.tokens[t - n..t], y)
        };
        bits -= p.log2();
    }
    Ok(bits / heldout.len() as f64)
}

/// Bits of one instance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InstanceEntropy {
    pub symbols: usize,
    pub bits: f64,
}

/// Provenance carried by every report row.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ReportMeta {
    pub task: String,
    pub dataset: String,
    pub config_hash: String,
    pub seed: u64,
    pub clip_threshold: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntropyReport {
    pub meta: ReportMeta,
    pub family: TaskFamily,
    pub symbols: usize,
    pub total_bits: f64,
    pub bits_per_symbol: f64,
    pub per_instance: Vec<InstanceEntropy>,
}

/// Micro-averaged cross-entropy: total bits over all masked positions divided
/// by their count. Instances are scored in parallel and summed in order.
pub fn model_cross_entropy<T: Scalar>(
    model: &Model<T>,
    dataset: &[EncodedInstance],
    meta: ReportMeta,
) -> Result<EntropyReport> {
    model.validate()?;
    let per_instance = dataset
        .par_iter()
        .map(|inst| {
            Ok(InstanceEntropy {
                symbols: inst.masked_count(),
                bits: model.instance_bits(inst)?.as_f64(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let symbols: usize = per_instance.iter().map(|e| e.symbols).sum();
    if symbols == 0 {
        return Err(Error::Empty("evaluation dataset"));
    }
    let total_bits: f64 = per_instance.iter().map(|e| e.bits).sum();
    Ok(EntropyReport {
        meta,
        family: model.head.family,
        symbols,
        total_bits,
        bits_per_symbol: total_bits / symbols as f64,
        per_instance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{HigherOrderSource, MarkovSource};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const H_09: f64 = 0.4689955935892812;

    fn d(p: &[f64]) -> DiscreteDistribution<f64> {
        DiscreteDistribution::new(p.to_vec()).unwrap()
    }

    #[test]
    fn entropy_examples() {
        assert_abs_diff_eq!(shannon_entropy(&d(&[0.25; 4])), 2.0, epsilon = 1e-15);
        assert_eq!(shannon_entropy(&d(&[0.0, 1.0, 0.0])), 0.0);
        assert_abs_diff_eq!(shannon_entropy(&d(&[0.9, 0.1])), H_09, epsilon = 1e-15);
    }

    #[test]
    fn distribution_validation() {
        assert!(DiscreteDistribution::new(vec![0.5, 0.4]).is_err());
        assert!(DiscreteDistribution::new(vec![1.5, -0.5]).is_err());
        assert!(DiscreteDistribution::<f64>::new(vec![]).is_err());
        assert!(DiscreteDistribution::new(vec![f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence(&d(&[0.3, 0.7]), &d(&[0.3, 0.7])).unwrap(), 0.0);
        assert_abs_diff_eq!(kl_divergence(&d(&[1.0, 0.0]), &d(&[0.5, 0.5])).unwrap(), 1.0, epsilon = 1e-15);
        assert!(matches!(
            kl_divergence(&d(&[0.5, 0.5]), &d(&[1.0, 0.0])),
            Err(Error::InfiniteDivergence { index: 1 })
        ));
        assert!(kl_divergence(&d(&[1.0]), &d(&[0.5, 0.5])).is_err());
    }

    #[test]
    fn conditional_entropy_examples() {
        let indep = JointTable::from_rows(&[vec![0.12, 0.28], vec![0.18, 0.42]]).unwrap();
        let hy = shannon_entropy(&d(&indep.marginal_y()));
        assert_abs_diff_eq!(conditional_entropy(&indep), hy, epsilon = 1e-12);
        let functional = JointTable::from_rows(&[vec![0.5, 0.0], vec![0.0, 0.3], vec![0.2, 0.0]]).unwrap();
        assert_abs_diff_eq!(conditional_entropy(&functional), 0.0, epsilon = 1e-15);
        let j = JointTable::from_rows(&[vec![0.4, 0.1], vec![0.1, 0.4]]).unwrap();
        assert_abs_diff_eq!(conditional_entropy(&j), 0.7219280948873621, epsilon = 1e-12);
        assert!(JointTable::from_rows(&[vec![0.4, 0.1], vec![0.1]]).is_err());
        assert!(JointTable::<f64>::new(2, 2, vec![0.5; 4]).is_err());
    }

    #[test]
    fn unigram_counts() {
        // "a a b a" with a = 0, b = 1
        let s = TokenStream::new(vec![0, 0, 1, 0], "t");
        for alpha in [0.5, 1.0, 3.0] {
            let m = fit_ngram(&s, 0, alpha, 2).unwrap();
            assert_abs_diff_eq!(m.prob(&[], 0), (3.0 + alpha) / (4.0 + 2.0 * alpha), epsilon = 1e-15);
        }
    }

    #[test]
    fn unseen_context_is_uniform_and_large_alpha_flattens() {
        let s = TokenStream::new(vec![0, 1, 0, 1, 0, 1], "t");
        let m = fit_ngram(&s, 1, 1.0, 3).unwrap();
        assert_eq!(m.prob(&[2], 1), 1.0 / 3.0);
        let m = fit_ngram(&s, 1, 1e9, 3).unwrap();
        for p in m.conditional(&[0]) {
            assert_abs_diff_eq!(p, 1.0 / 3.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn ngram_rejects_bad_arguments() {
        let s = TokenStream::new(vec![0, 1], "t");
        assert!(fit_ngram(&s, 1, 0.0, 2).is_err());
        assert!(fit_ngram(&s, 1, 1.0, 1).is_err());
        let m = fit_ngram(&s, 1, 1.0, 2).unwrap();
        assert!(ngram_cross_entropy(&m, &TokenStream::default()).is_err());
    }

    #[test]
    fn f_n_on_iid_uniform_is_log_k() {
        let s = MarkovSource::uniform(4, 11).unwrap().generate(100_000).unwrap();
        let (train, test) = s.tokens.split_at(50_000);
        let train = TokenStream::new(train.to_vec(), "train");
        let test = TokenStream::new(test.to_vec(), "test");
        for n in 0..3 {
            let m = fit_ngram(&train, n, 1.0, 4).unwrap();
            let f = ngram_cross_entropy(&m, &test).unwrap();
            assert!((f - 2.0).abs() < 0.05, "F_{n} = {f}");
        }
    }

    #[test]
    fn f_1_on_two_state_chain() {
        let s = MarkovSource::new(vec![vec![0.9, 0.1], vec![0.1, 0.9]], 12).unwrap().generate(100_000).unwrap();
        let (train, test) = s.tokens.split_at(50_000);
        let m = fit_ngram(&TokenStream::new(train.to_vec(), ""), 1, 1.0, 2).unwrap();
        let f1 = ngram_cross_entropy(&m, &TokenStream::new(test.to_vec(), "")).unwrap();
        assert!((f1 - H_09).abs() < 0.05, "{f1}");
    }

    #[test]
    fn f_n_chain_on_second_order_source() {
        let src = HigherOrderSource::random(2, 4, 4.0, 13).unwrap();
        let s = src.generate(100_000).unwrap();
        let (train, test) = s.tokens.split_at(50_000);
        let train = TokenStream::new(train.to_vec(), "");
        let test = TokenStream::new(test.to_vec(), "");
        let f: Vec<f64> = (1..=3)
            .map(|n| ngram_cross_entropy(&fit_ngram(&train, n, 1.0, 4).unwrap(), &test).unwrap())
            .collect();
        assert!(f[0] >= f[1] - 0.02, "{f:?}");
        assert!(f[1] >= f[2] - 0.02, "{f:?}");
        assert!(f[1] >= src.entropy_rate() - 0.05);
    }

    fn normalized(raw: &[f64]) -> Vec<f64> {
        let t: f64 = raw.iter().sum();
        raw.iter().map(|x| x / t).collect()
    }

    proptest! {
        #[test]
        fn cross_entropy_identity(a in prop::collection::vec(0.01f64..1.0, 2..8), b in prop::collection::vec(0.01f64..1.0, 8)) {
            let p = DiscreteDistribution::new(normalized(&a)).unwrap();
            let q = DiscreteDistribution::new(normalized(&b[..a.len()])).unwrap();
            let lhs = cross_entropy(&p, &q).unwrap();
            let rhs = shannon_entropy(&p) + kl_divergence(&p, &q).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10);
            prop_assert!(kl_divergence(&p, &q).unwrap() >= -1e-15);
        }

        #[test]
        fn conditioning_reduces_entropy(raw in prop::collection::vec(0.0f64..1.0, 12), rows in 1usize..4) {
            let cols = 12 / rows.max(1);
            let cells = &raw[..rows * cols];
            prop_assume!(cells.iter().sum::<f64>() > 1e-6);
            let j = JointTable::new(rows, cols, normalized(cells)).unwrap();
            let hy = shannon_entropy(&DiscreteDistribution::new(normalized(&j.marginal_y())).unwrap());
            let h = conditional_entropy(&j);
            prop_assert!(h <= hy + 1e-10);
            prop_assert!(h >= 0.0);
        }
    }
}
