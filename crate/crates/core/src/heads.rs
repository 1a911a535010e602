//! Conditional output distributions over a task's output symbols.
//!
//! Every head scores masked position `p` from the LSTM state after position
//! `p - 1` (the zero state when `p = 0`), with the softmax restricted to the
//! head's output id range:
//!
//! * next-token, sequence-label and single-label heads use the logit
//!   `e_{p-1} . e_y` for each candidate `y`;
//! * the aligned head uses `U . act(W [e_{p-1}; e_y; e_x])` where `e_x` is the
//!   embedding of the aligned input token.

use std::ops::Range;

use crate::engine::{EncodedInstance, TaskFamily};
use crate::error::{Error, Result};
use crate::lstm::{Gradients, LstmParameters, LstmState};
use crate::numerics::{self, Matrix, Vector};
use crate::scalar::Scalar;

/// Nonlinearity between the aligned head's projection and readout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    /// `U . (W c)`: the candidate-independent blocks of `c` cancel in the
    /// softmax, so the distribution ignores both state and aligned input.
    Identity,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }

    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activated value.
    fn derivative<T: Scalar>(self, activated: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Tanh => T::one() - activated * activated,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "identity" | "linear" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

/// `W` (`L x 3K`) and `U` (`L`) of the aligned head.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedProjection<T> {
    pub w: Matrix<T>,
    pub u: Vector<T>,
    pub activation: Activation,
}

impl<T: Scalar> AlignedProjection<T> {
    pub fn zeros(rows: usize, dim: usize, activation: Activation) -> Self {
        Self {
            w: Matrix::zeros(rows, 3 * dim),
            u: Vector::zeros(rows),
            activation,
        }
    }

    pub fn rows(&self) -> usize {
        self.w.rows()
    }

    /// The shared state/embedding dimension `K`.
    pub fn dim(&self) -> usize {
        self.w.cols() / 3
    }

    pub fn validate(&self) -> Result<()> {
        if !self.w.cols().is_multiple_of(3) || self.w.cols() == 0 {
            return Err(Error::dims("aligned head", "W with 3K columns", self.w.cols()));
        }
        if self.u.len() != self.w.rows() {
            return Err(Error::dims("aligned head", format!("U of length {}", self.w.rows()), self.u.len()));
        }
        Ok(())
    }

    /// Projection of the candidate-independent blocks: `W_h h + W_x e_x`.
    fn base(&self, h: &[T], e_x: &[T]) -> Vec<T> {
        let k = self.dim();
        (0..self.rows())
            .map(|r| {
                let row = self.w.row(r);
                numerics::dot_slices(&row[..k], h) + numerics::dot_slices(&row[2 * k..], e_x)
            })
            .collect()
    }

    /// Activated hidden layer for one candidate embedding.
    fn hidden(&self, base: &[T], e_y: &[T]) -> Vec<T> {
        let k = self.dim();
        (0..self.rows())
            .map(|r| {
                let row = self.w.row(r);
                self.activation.apply(base[r] + numerics::dot_slices(&row[k..2 * k], e_y))
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParameters<T> {
    pub family: TaskFamily,
    /// Output symbol ids the softmax ranges over.
    pub outputs: Range<usize>,
    /// Present exactly for aligned labeling.
    pub projection: Option<AlignedProjection<T>>,
}

impl<T: Scalar> HeadParameters<T> {
    pub fn dot(family: TaskFamily, outputs: Range<usize>) -> Self {
        Self {
            family,
            outputs,
            projection: None,
        }
    }

    pub fn aligned(outputs: Range<usize>, projection: AlignedProjection<T>) -> Self {
        Self {
            family: TaskFamily::AlignedLabeling,
            outputs,
            projection: Some(projection),
        }
    }

    /// Checks the head against the embedding table it reads from.
    pub fn validate(&self, embeddings: &Matrix<T>) -> Result<()> {
        check_outputs(&self.outputs, embeddings.rows())?;
        match (&self.projection, self.family) {
            (Some(proj), TaskFamily::AlignedLabeling) => {
                proj.validate()?;
                if proj.dim() != embeddings.cols() {
                    return Err(Error::dims(
                        "aligned head",
                        format!("W with 3x{} columns", embeddings.cols()),
                        proj.w.cols(),
                    ));
                }
                Ok(())
            }
            (None, TaskFamily::AlignedLabeling) => Err(Error::Config("aligned head needs W and U".into())),
            (Some(_), family) => Err(Error::Config(format!("{family} head takes no projection"))),
            (None, _) => Ok(()),
        }
    }

    pub fn projection_shape(&self) -> Option<(usize, usize)> {
        self.projection.as_ref().map(|p| p.w.shape())
    }
}

fn check_outputs(outputs: &Range<usize>, vocab: usize) -> Result<()> {
    if outputs.is_empty() {
        return Err(Error::Empty("output symbol set"));
    }
    if outputs.end > vocab {
        return Err(Error::OutOfRange {
            what: "vocabulary",
            id: outputs.end - 1,
            start: 0,
            end: vocab,
        });
    }
    Ok(())
}

/// Distribution over the output range at one scored position.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDistribution<T> {
    pub outputs: Range<usize>,
    pub probs: Vector<T>,
    pub log_probs: Vector<T>,
}

impl<T: Scalar> StepDistribution<T> {
    pub fn from_logits(outputs: Range<usize>, logits: Vec<T>) -> Result<Self> {
        let logits = Vector::new(logits);
        let log_probs = numerics::log_softmax(&logits)?;
        let probs = Vector::new(log_probs.iter().map(|&l| l.exp()).collect());
        Ok(Self {
            outputs,
            probs,
            log_probs,
        })
    }

    fn offset(&self, id: usize) -> Result<usize> {
        if !self.outputs.contains(&id) {
            return Err(Error::OutOfRange {
                what: "output",
                id,
                start: self.outputs.start,
                end: self.outputs.end,
            });
        }
        Ok(id - self.outputs.start)
    }

    pub fn prob(&self, id: usize) -> Result<T> {
        Ok(self.probs[self.offset(id)?])
    }

    /// Natural-log probability of `id`.
    pub fn log_prob(&self, id: usize) -> Result<T> {
        Ok(self.log_probs[self.offset(id)?])
    }
}

fn dot_logits<T: Scalar>(e_prev: &[T], embeddings: &Matrix<T>, outputs: &Range<usize>) -> Vec<T> {
    outputs
        .clone()
        .map(|y| numerics::dot_slices(e_prev, embeddings.row(y)))
        .collect()
}

fn check_state_dim<T: Scalar>(op: &'static str, state: &Vector<T>, embeddings: &Matrix<T>) -> Result<()> {
    if state.len() != embeddings.cols() {
        return Err(Error::dims(op, format!("state of dimension {}", embeddings.cols()), state.len()));
    }
    Ok(())
}

/// `p(y | .) = exp(e_prev . e_y) / sum_y' exp(e_prev . e_y')` over `outputs`.
pub fn predict_next_prob<T: Scalar>(
    e_prev: &Vector<T>,
    embeddings: &Matrix<T>,
    outputs: Range<usize>,
) -> Result<StepDistribution<T>> {
    check_state_dim("predict_next_prob", e_prev, embeddings)?;
    check_outputs(&outputs, embeddings.rows())?;
    let logits = dot_logits(e_prev.as_slice(), embeddings, &outputs);
    StepDistribution::from_logits(outputs, logits)
}

/// Label distribution from the state after the whole input (and separator).
pub fn single_label_prob<T: Scalar>(
    e_n: &Vector<T>,
    embeddings: &Matrix<T>,
    labels: Range<usize>,
) -> Result<StepDistribution<T>> {
    if labels.is_empty() {
        return Err(Error::Empty("label set"));
    }
    predict_next_prob(e_n, embeddings, labels)
}

/// Aligned-head distribution: each candidate `y` gets the logit
/// `U . act(W [e_prev; e_y; e_x])`.
pub fn aligned_prob<T: Scalar>(
    e_prev: &Vector<T>,
    embeddings: &Matrix<T>,
    e_x: &Vector<T>,
    head: &HeadParameters<T>,
) -> Result<StepDistribution<T>> {
    let proj = head
        .projection
        .as_ref()
        .ok_or_else(|| Error::Config("aligned_prob needs an aligned head".into()))?;
    proj.validate()?;
    let k = proj.dim();
    if e_prev.len() != k || e_x.len() != k || embeddings.cols() != k {
        return Err(Error::dims(
            "aligned_prob concatenation",
            format!("three blocks of {k}"),
            format!("[{}, {}, {}]", e_prev.len(), embeddings.cols(), e_x.len()),
        ));
    }
    check_outputs(&head.outputs, embeddings.rows())?;
    let base = proj.base(e_prev.as_slice(), e_x.as_slice());
    let logits = head
        .outputs
        .clone()
        .map(|y| numerics::dot_slices(proj.u.as_slice(), &proj.hidden(&base, embeddings.row(y))))
        .collect();
    StepDistribution::from_logits(head.outputs.clone(), logits)
}

fn previous_state<T: Scalar>(states: &[LstmState<T>], position: usize, dim: usize) -> Vector<T> {
    match position {
        0 => Vector::zeros(dim),
        p => states[p - 1].e.clone(),
    }
}

fn check_alignment<T>(states: &[LstmState<T>], inst: &EncodedInstance) -> Result<()> {
    if states.len() != inst.len() || inst.predict_mask.len() != inst.len() {
        return Err(Error::dims(
            "head",
            format!("{} states and mask entries", inst.len()),
            format!("{} states, {} mask entries", states.len(), inst.predict_mask.len()),
        ));
    }
    Ok(())
}

/// One distribution per masked position, each conditioned on the state before it.
pub fn sequence_label_prob<T: Scalar>(
    states: &[LstmState<T>],
    inst: &EncodedInstance,
    embeddings: &Matrix<T>,
    outputs: Range<usize>,
) -> Result<Vec<StepDistribution<T>>> {
    check_alignment(states, inst)?;
    inst.masked_positions()
        .map(|p| predict_next_prob(&previous_state(states, p, embeddings.cols()), embeddings, outputs.clone()))
        .collect()
}

/// Distributions at every masked position of `inst`, dispatched on the head's family.
pub fn distributions<T: Scalar>(
    states: &[LstmState<T>],
    inst: &EncodedInstance,
    lstm: &LstmParameters<T>,
    head: &HeadParameters<T>,
) -> Result<Vec<StepDistribution<T>>> {
    if inst.family != head.family {
        return Err(Error::FamilyMismatch {
            expected: head.family.to_string(),
            found: inst.family.to_string(),
            index: 0,
        });
    }
    check_alignment(states, inst)?;
    let emb = &lstm.embeddings;
    let k = emb.cols();
    match head.family {
        TaskFamily::Prediction | TaskFamily::UnalignedSequenceLabel => {
            sequence_label_prob(states, inst, emb, head.outputs.clone())
        }
        TaskFamily::UnalignedSingleLabel => inst
            .masked_positions()
            .map(|p| single_label_prob(&previous_state(states, p, k), emb, head.outputs.clone()))
            .collect(),
        TaskFamily::AlignedLabeling => {
            let alignment = inst
                .alignment
                .as_ref()
                .ok_or_else(|| Error::InvalidInstance("aligned instance without alignment".into()))?;
            inst.masked_positions()
                .zip(alignment)
                .map(|(p, &a)| {
                    let e_x = Vector::new(lstm.embedding(inst.sequence[a]).to_vec());
                    aligned_prob(&previous_state(states, p, k), emb, &e_x, head)
                })
                .collect()
        }
    }
}

/// Total negative log-likelihood in bits, and per-position `dNLL/dlogits`
/// (`softmax - onehot`, natural-log units).
pub fn nll_and_gradient_seed<T: Scalar>(
    dists: &[StepDistribution<T>],
    realized: &[usize],
) -> Result<(T, Vec<Vector<T>>)> {
    if dists.len() != realized.len() {
        return Err(Error::dims("nll_and_gradient_seed", format!("{} realized ids", dists.len()), realized.len()));
    }
    let mut nats = T::zero();
    let mut seeds = Vec::with_capacity(dists.len());
    for (d, &y) in dists.iter().zip(realized) {
        nats -= d.log_prob(y)?;
        let mut seed = d.probs.clone();
        seed[y - d.outputs.start] -= T::one();
        seeds.push(seed);
    }
    Ok((nats / T::LN_2(), seeds))
}

/// Pushes logit seeds back through the head. Returns `dL/de_t` for every
/// sequence position plus the head's own and the output/aligned embedding
/// gradients.
pub fn head_backward<T: Scalar>(
    states: &[LstmState<T>],
    inst: &EncodedInstance,
    lstm: &LstmParameters<T>,
    head: &HeadParameters<T>,
    seeds: &[Vector<T>],
) -> Result<(Vec<Vector<T>>, Gradients<T>)> {
    check_alignment(states, inst)?;
    let (k, h) = (lstm.embed(), lstm.hidden());
    let emb = &lstm.embeddings;
    let mut state_grads = vec![Vector::zeros(h); inst.len()];
    let mut grads = Gradients::zeros(k, h, head.projection_shape());
    let positions: Vec<usize> = inst.masked_positions().collect();
    if positions.len() != seeds.len() {
        return Err(Error::dims("head backward", format!("{} seeds", positions.len()), seeds.len()));
    }

    match &head.projection {
        None => {
            for (&p, seed) in positions.iter().zip(seeds) {
                if p == 0 {
                    // zero initial state: logits are constant, nothing upstream
                    continue;
                }
                let prev = states[p - 1].e.as_slice();
                let dh = state_grads[p - 1].as_mut_slice();
                for (y, &g) in head.outputs.clone().zip(seed.iter()) {
                    numerics::axpy(g, emb.row(y), dh);
                }
                for (y, &g) in head.outputs.clone().zip(seed.iter()) {
                    numerics::axpy(g, prev, grads.embedding_row_mut(y, k));
                }
            }
        }
        Some(proj) => {
            let alignment = inst
                .alignment
                .as_ref()
                .ok_or_else(|| Error::InvalidInstance("aligned instance without alignment".into()))?;
            let rows = proj.rows();
            let zeros = vec![T::zero(); k];
            for ((&p, seed), &a) in positions.iter().zip(seeds).zip(alignment) {
                let prev: &[T] = if p == 0 { &zeros } else { states[p - 1].e.as_slice() };
                let x_id = inst.sequence[a];
                let e_x = emb.row(x_id);
                let base = proj.base(prev, e_x);
                let mut da_total = vec![T::zero(); rows];
                for (y, &g) in head.outputs.clone().zip(seed.iter()) {
                    let e_y = emb.row(y);
                    let s = proj.hidden(&base, e_y);
                    numerics::axpy(g, &s, grads.head_readout.as_mut().unwrap().as_mut_slice());
                    let da: Vec<T> = (0..rows)
                        .map(|r| g * proj.u[r] * proj.activation.derivative(s[r]))
                        .collect();
                    let dw = grads.head_projection.as_mut().unwrap();
                    let mut de_y = vec![T::zero(); k];
                    for r in 0..rows {
                        if da[r] == T::zero() {
                            continue;
                        }
                        numerics::axpy(da[r], e_y, &mut dw.row_mut(r)[k..2 * k]);
                        numerics::axpy(da[r], &proj.w.row(r)[k..2 * k], &mut de_y);
                        da_total[r] += da[r];
                    }
                    numerics::axpy(T::one(), &de_y, grads.embedding_row_mut(y, k));
                }
                let dw = grads.head_projection.as_mut().unwrap();
                let mut dh = vec![T::zero(); k];
                let mut dx = vec![T::zero(); k];
                for (r, &d) in da_total.iter().enumerate() {
                    if d == T::zero() {
                        continue;
                    }
                    numerics::axpy(d, prev, &mut dw.row_mut(r)[..k]);
                    numerics::axpy(d, e_x, &mut dw.row_mut(r)[2 * k..]);
                    numerics::axpy(d, &proj.w.row(r)[..k], &mut dh);
                    numerics::axpy(d, &proj.w.row(r)[2 * k..], &mut dx);
                }
                if p > 0 {
                    numerics::axpy(T::one(), &dh, state_grads[p - 1].as_mut_slice());
                }
                numerics::axpy(T::one(), &dx, grads.embedding_row_mut(x_id, k));
            }
        }
    }
    Ok((state_grads, grads))
}
