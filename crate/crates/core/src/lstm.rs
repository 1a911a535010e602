//! Single-layer LSTM without bias terms, with exact backpropagation through time.
//!
//! ```text
//! i_t = sigmoid(W_i x_t + V_i e_{t-1})
//! f_t = sigmoid(W_f x_t + V_f e_{t-1})
//! o_t = sigmoid(W_o x_t + V_o e_{t-1})
//! l_t = tanh(W_l x_t + V_l e_{t-1})
//! m_t = f_t * m_{t-1} + i_t * l_t
//! e_t = o_t * m_t
//! ```
//!
//! `x_t` is the embedding row of the token at `t`; products in the last two
//! lines are elementwise. The initial state is all zeros.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::{self, sigmoid, Matrix, Vector};
use crate::scalar::Scalar;

/// Index of a gate's weights in [`LstmParameters`], in appendix order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Output = 2,
    Candidate = 3,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Output, Gate::Candidate];
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParameters<T> {
    /// `W_i, W_f, W_o, W_l`, each `hidden x embed`.
    pub input_weights: [Matrix<T>; 4],
    /// `V_i, V_f, V_o, V_l`, each `hidden x hidden`.
    pub recurrent_weights: [Matrix<T>; 4],
    /// One `embed`-dimensional row per vocabulary id.
    pub embeddings: Matrix<T>,
}

impl<T: Scalar> LstmParameters<T> {
    pub fn zeros(vocab_size: usize, embed: usize, hidden: usize) -> Self {
        Self {
            input_weights: std::array::from_fn(|_| Matrix::zeros(hidden, embed)),
            recurrent_weights: std::array::from_fn(|_| Matrix::zeros(hidden, hidden)),
            embeddings: Matrix::zeros(vocab_size, embed),
        }
    }

    pub fn hidden(&self) -> usize {
        self.recurrent_weights[0].rows()
    }

    pub fn embed(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn w(&self, gate: Gate) -> &Matrix<T> {
        &self.input_weights[gate as usize]
    }

    pub fn v(&self, gate: Gate) -> &Matrix<T> {
        &self.recurrent_weights[gate as usize]
    }

    pub fn embedding(&self, id: usize) -> &[T] {
        self.embeddings.row(id)
    }

    pub fn validate(&self) -> Result<()> {
        let (h, k) = (self.hidden(), self.embed());
        for (g, w) in self.input_weights.iter().enumerate() {
            if w.shape() != (h, k) {
                return Err(Error::dims("LstmParameters", format!("W[{g}] {h}x{k}"), format!("{:?}", w.shape())));
            }
        }
        for (g, v) in self.recurrent_weights.iter().enumerate() {
            if v.shape() != (h, h) {
                return Err(Error::dims("LstmParameters", format!("V[{g}] {h}x{h}"), format!("{:?}", v.shape())));
            }
        }
        Ok(())
    }

    pub fn check_token(&self, id: usize) -> Result<()> {
        if id >= self.vocab_size() {
            return Err(Error::OutOfRange {
                what: "embedding table",
                id,
                start: 0,
                end: self.vocab_size(),
            });
        }
        Ok(())
    }

    /// Every tensor in checkpoint order: embeddings, then `W_g, V_g` per gate.
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out = vec![self.embeddings.as_slice()];
        for g in Gate::ALL {
            out.push(self.w(g).as_slice());
            out.push(self.v(g).as_slice());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = vec![self.embeddings.as_mut_slice()];
        for (w, v) in self.input_weights.iter_mut().zip(self.recurrent_weights.iter_mut()) {
            out.push(w.as_mut_slice());
            out.push(v.as_mut_slice());
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState<T> {
    /// Output representation `e_t`.
    pub e: Vector<T>,
    /// Memory `m_t`.
    pub m: Vector<T>,
}

impl<T: Scalar> LstmState<T> {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            e: Vector::zeros(hidden),
            m: Vector::zeros(hidden),
        }
    }
}

/// Gate activations at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct GateActivations<T> {
    pub input: Vec<T>,
    pub forget: Vec<T>,
    pub output: Vec<T>,
    pub candidate: Vec<T>,
}

/// Everything the backward pass needs from a forward run.
#[derive(Clone, Debug)]
pub struct Trace<T> {
    pub states: Vec<LstmState<T>>,
    pub gates: Vec<GateActivations<T>>,
}

impl<T> Trace<T> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Advances the recurrence by one token.
pub fn lstm_step<T: Scalar>(p: &LstmParameters<T>, token: usize, prev: &LstmState<T>) -> Result<LstmState<T>> {
    p.check_token(token)?;
    let h = p.hidden();
    if prev.e.len() != h || prev.m.len() != h {
        return Err(Error::dims(
            "lstm_step",
            format!("state of dimension {h}"),
            format!("e: {}, m: {}", prev.e.len(), prev.m.len()),
        ));
    }
    Ok(step(p, token, prev).0)
}

fn step<T: Scalar>(p: &LstmParameters<T>, token: usize, prev: &LstmState<T>) -> (LstmState<T>, GateActivations<T>) {
    let h = p.hidden();
    let x = p.embedding(token);
    let pre = |g: Gate| {
        let mut z = vec![T::zero(); h];
        numerics::gemv_acc(p.w(g), x, &mut z);
        numerics::gemv_acc(p.v(g), prev.e.as_slice(), &mut z);
        z
    };
    let input: Vec<T> = pre(Gate::Input).into_iter().map(sigmoid).collect();
    let forget: Vec<T> = pre(Gate::Forget).into_iter().map(sigmoid).collect();
    let output: Vec<T> = pre(Gate::Output).into_iter().map(sigmoid).collect();
    let candidate: Vec<T> = pre(Gate::Candidate).into_iter().map(|z| z.tanh()).collect();

    let m: Vec<T> = (0..h)
        .map(|j| forget[j] * prev.m[j] + input[j] * candidate[j])
        .collect();
    let e: Vec<T> = (0..h).map(|j| output[j] * m[j]).collect();
    (
        LstmState {
            e: Vector::new(e),
            m: Vector::new(m),
        },
        GateActivations {
            input,
            forget,
            output,
            candidate,
        },
    )
}

/// Runs the recurrence over `sequence` from the zero state; `states[t]` is the
/// state after consuming `sequence[t]`.
pub fn forward<T: Scalar>(p: &LstmParameters<T>, sequence: &[usize]) -> Result<Trace<T>> {
    p.validate()?;
    if let Some(&bad) = sequence.iter().find(|&&id| id >= p.vocab_size()) {
        p.check_token(bad)?;
    }
    let mut states = Vec::with_capacity(sequence.len());
    let mut gates = Vec::with_capacity(sequence.len());
    let zero = LstmState::zeros(p.hidden());
    for &token in sequence {
        let prev = states.last().unwrap_or(&zero);
        let (s, g) = step(p, token, prev);
        states.push(s);
        gates.push(g);
    }
    Ok(Trace { states, gates })
}

/// Gradient accumulators mirroring [`LstmParameters`] plus the aligned head's
/// projection. Embedding gradients are kept sparsely, keyed by id; rows never
/// touched are implicitly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub input_weights: [Matrix<T>; 4],
    pub recurrent_weights: [Matrix<T>; 4],
    pub embeddings: BTreeMap<usize, Vector<T>>,
    pub head_projection: Option<Matrix<T>>,
    pub head_readout: Option<Vector<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Zero gradients for an LSTM of the given dimensions; `head` is the
    /// `(rows, cols)` shape of the aligned projection when one exists.
    pub fn zeros(embed: usize, hidden: usize, head: Option<(usize, usize)>) -> Self {
        Self {
            input_weights: std::array::from_fn(|_| Matrix::zeros(hidden, embed)),
            recurrent_weights: std::array::from_fn(|_| Matrix::zeros(hidden, hidden)),
            embeddings: BTreeMap::new(),
            head_projection: head.map(|(r, c)| Matrix::zeros(r, c)),
            head_readout: head.map(|(r, _)| Vector::zeros(r)),
        }
    }

    pub fn embedding_row_mut(&mut self, id: usize, embed: usize) -> &mut [T] {
        self.embeddings
            .entry(id)
            .or_insert_with(|| Vector::zeros(embed))
            .as_mut_slice()
    }

    pub fn accumulate(&mut self, other: &Gradients<T>) -> Result<()> {
        for (a, b) in self.input_weights.iter_mut().zip(&other.input_weights) {
            a.add_assign(b)?;
        }
        for (a, b) in self.recurrent_weights.iter_mut().zip(&other.recurrent_weights) {
            a.add_assign(b)?;
        }
        for (&id, row) in &other.embeddings {
            match self.embeddings.get_mut(&id) {
                Some(mine) => mine.add_assign(row)?,
                None => {
                    self.embeddings.insert(id, row.clone());
                }
            }
        }
        match (&mut self.head_projection, &other.head_projection) {
            (Some(a), Some(b)) => a.add_assign(b)?,
            (None, None) => {}
            _ => return Err(Error::dims("Gradients::accumulate", "matching head shapes", "mismatched")),
        }
        match (&mut self.head_readout, &other.head_readout) {
            (Some(a), Some(b)) => a.add_assign(b)?,
            (None, None) => {}
            _ => return Err(Error::dims("Gradients::accumulate", "matching head shapes", "mismatched")),
        }
        Ok(())
    }

    /// Every accumulator as a flat slice, in a fixed order.
    pub fn slices(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for (w, v) in self.input_weights.iter().zip(&self.recurrent_weights) {
            out.push(w.as_slice());
            out.push(v.as_slice());
        }
        out.extend(self.embeddings.values().map(Vector::as_slice));
        out.extend(self.head_projection.iter().map(Matrix::as_slice));
        out.extend(self.head_readout.iter().map(Vector::as_slice));
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for (w, v) in self.input_weights.iter_mut().zip(self.recurrent_weights.iter_mut()) {
            out.push(w.as_mut_slice());
            out.push(v.as_mut_slice());
        }
        out.extend(self.embeddings.values_mut().map(Vector::as_mut_slice));
        out.extend(self.head_projection.iter_mut().map(Matrix::as_mut_slice));
        out.extend(self.head_readout.iter_mut().map(Vector::as_mut_slice));
        out
    }

    /// Global L2 norm over every tensor.
    pub fn global_norm(&self) -> T {
        let mut acc = T::zero();
        for s in self.slices() {
            acc += numerics::sum_squares(s);
        }
        acc.sqrt()
    }

    pub fn scale(&mut self, factor: T) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|&x| x == T::zero()))
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }
}

/// Backpropagation through time. `state_grads[t]` is `dL/de_t` contributed
/// directly by the loss (zero where nothing reads `e_t`). Returns gradients for
/// the recurrent weights and for the embeddings of consumed tokens; head
/// accumulators are left empty.
pub fn backward<T: Scalar>(
    p: &LstmParameters<T>,
    sequence: &[usize],
    trace: &Trace<T>,
    state_grads: &[Vector<T>],
) -> Result<Gradients<T>> {
    let (h, k) = (p.hidden(), p.embed());
    if trace.len() != sequence.len() || state_grads.len() != sequence.len() {
        return Err(Error::dims(
            "lstm backward",
            format!("{} positions", sequence.len()),
            format!("trace {}, state gradients {}", trace.len(), state_grads.len()),
        ));
    }
    if let Some(bad) = state_grads.iter().find(|g| g.len() != h) {
        return Err(Error::dims("lstm backward", format!("gradient of dimension {h}"), bad.len()));
    }

    let mut grads = Gradients::zeros(k, h, None);
    let zeros = vec![T::zero(); h];
    let mut de_next = vec![T::zero(); h];
    let mut dm_next = vec![T::zero(); h];
    let mut dz: [Vec<T>; 4] = std::array::from_fn(|_| vec![T::zero(); h]);
    let mut dx = vec![T::zero(); k];
    let one = T::one();

    for t in (0..sequence.len()).rev() {
        let g = &trace.gates[t];
        let m = trace.states[t].m.as_slice();
        let (e_prev, m_prev) = if t > 0 {
            (trace.states[t - 1].e.as_slice(), trace.states[t - 1].m.as_slice())
        } else {
            (zeros.as_slice(), zeros.as_slice())
        };
        let seed = state_grads[t].as_slice();

        for j in 0..h {
            let de = seed[j] + de_next[j];
            let d_output = de * m[j];
            let dm = de * g.output[j] + dm_next[j];
            let d_forget = dm * m_prev[j];
            let d_input = dm * g.candidate[j];
            let d_candidate = dm * g.input[j];
            dm_next[j] = dm * g.forget[j];

            dz[Gate::Input as usize][j] = d_input * g.input[j] * (one - g.input[j]);
            dz[Gate::Forget as usize][j] = d_forget * g.forget[j] * (one - g.forget[j]);
            dz[Gate::Output as usize][j] = d_output * g.output[j] * (one - g.output[j]);
            dz[Gate::Candidate as usize][j] = d_candidate * (one - g.candidate[j] * g.candidate[j]);
        }

        let x = p.embedding(sequence[t]);
        dx.iter_mut().for_each(|v| *v = T::zero());
        de_next.iter_mut().for_each(|v| *v = T::zero());
        for gate in Gate::ALL {
            let gi = gate as usize;
            numerics::outer_acc(&mut grads.input_weights[gi], &dz[gi], x);
            if t > 0 {
                numerics::outer_acc(&mut grads.recurrent_weights[gi], &dz[gi], e_prev);
            }
            numerics::gemv_t_acc(p.w(gate), &dz[gi], &mut dx);
            numerics::gemv_t_acc(p.v(gate), &dz[gi], &mut de_next);
        }
        numerics::axpy(one, &dx, grads.embedding_row_mut(sequence[t], k));
    }
    Ok(grads)
}
