//! An LSTM with one attached head: the unit that is trained and evaluated.

use crate::engine::EncodedInstance;
use crate::error::{Error, Result};
use crate::heads::{self, HeadParameters, StepDistribution};
use crate::lstm::{self, Gradients, LstmParameters};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub lstm: LstmParameters<T>,
    pub head: HeadParameters<T>,
}

/// Loss of one instance in both units, with its gradient (of the nats loss).
#[derive(Clone, Debug)]
pub struct InstanceLoss<T> {
    pub bits: T,
    pub nats: T,
    pub scored: usize,
}

impl<T: Scalar> Model<T> {
    pub fn new(lstm: LstmParameters<T>, head: HeadParameters<T>) -> Result<Self> {
        let model = Self { lstm, head };
        model.validate()?;
        Ok(model)
    }

    /// Dot-product heads compare states with embeddings, so the hidden and
    /// embedding dimensions must agree.
    pub fn validate(&self) -> Result<()> {
        self.lstm.validate()?;
        if self.lstm.hidden() != self.lstm.embed() {
            return Err(Error::dims(
                "model",
                format!("hidden dimension equal to embedding dimension {}", self.lstm.embed()),
                self.lstm.hidden(),
            ));
        }
        self.head.validate(&self.lstm.embeddings)
    }

    pub fn distributions(&self, inst: &EncodedInstance) -> Result<Vec<StepDistribution<T>>> {
        let trace = lstm::forward(&self.lstm, &inst.sequence)?;
        heads::distributions(&trace.states, inst, &self.lstm, &self.head)
    }

    /// Bits over the instance's masked positions.
    pub fn instance_bits(&self, inst: &EncodedInstance) -> Result<T> {
        let dists = self.distributions(inst)?;
        let realized = inst.outputs();
        let (bits, _) = heads::nll_and_gradient_seed(&dists, &realized)?;
        Ok(bits)
    }

    /// Exact gradient of the instance's natural-log NLL.
    pub fn loss_and_gradients(&self, inst: &EncodedInstance) -> Result<(InstanceLoss<T>, Gradients<T>)> {
        let trace = lstm::forward(&self.lstm, &inst.sequence)?;
        let dists = heads::distributions(&trace.states, inst, &self.lstm, &self.head)?;
        let realized = inst.outputs();
        let (bits, seeds) = heads::nll_and_gradient_seed(&dists, &realized)?;
        let (state_grads, mut grads) = heads::head_backward(&trace.states, inst, &self.lstm, &self.head, &seeds)?;
        let recurrent = lstm::backward(&self.lstm, &inst.sequence, &trace, &state_grads)?;
        for (a, b) in grads.input_weights.iter_mut().zip(&recurrent.input_weights) {
            a.add_assign(b)?;
        }
        for (a, b) in grads.recurrent_weights.iter_mut().zip(&recurrent.recurrent_weights) {
            a.add_assign(b)?;
        }
        for (id, row) in recurrent.embeddings {
            match grads.embeddings.get_mut(&id) {
                Some(mine) => mine.add_assign(&row)?,
                None => {
                    grads.embeddings.insert(id, row);
                }
            }
        }
        Ok((
            InstanceLoss {
                bits,
                nats: bits * T::LN_2(),
                scored: realized.len(),
            },
            grads,
        ))
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        Gradients::zeros(self.lstm.embed(), self.lstm.hidden(), self.head.projection_shape())
    }

    /// `theta <- theta - lr * g`.
    pub fn apply_gradients(&mut self, grads: &Gradients<T>, lr: T) -> Result<()> {
        let step = -lr;
        for (p, g) in self.lstm.input_weights.iter_mut().zip(&grads.input_weights) {
            crate::numerics::axpy(step, g.as_slice(), p.as_mut_slice());
        }
        for (p, g) in self.lstm.recurrent_weights.iter_mut().zip(&grads.recurrent_weights) {
            crate::numerics::axpy(step, g.as_slice(), p.as_mut_slice());
        }
        for (&id, g) in &grads.embeddings {
            self.lstm.check_token(id)?;
            crate::numerics::axpy(step, g.as_slice(), self.lstm.embeddings.row_mut(id));
        }
        match (&mut self.head.projection, &grads.head_projection, &grads.head_readout) {
            (Some(proj), Some(gw), Some(gu)) => {
                crate::numerics::axpy(step, gw.as_slice(), proj.w.as_mut_slice());
                crate::numerics::axpy(step, gu.as_slice(), proj.u.as_mut_slice());
            }
            (None, None, None) => {}
            _ => return Err(Error::dims("apply_gradients", "head gradients matching the head", "mismatch")),
        }
        Ok(())
    }

    /// Every parameter tensor in checkpoint order: LSTM tensors, then `W`, `U`.
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out = self.lstm.tensors();
        if let Some(p) = &self.head.projection {
            out.push(p.w.as_slice());
            out.push(p.u.as_slice());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.lstm.tensors_mut();
        if let Some(p) = &mut self.head.projection {
            out.push(p.w.as_mut_slice());
            out.push(p.u.as_mut_slice());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

/// Flattens gradients into the same tensor order as [`Model::tensors`], with
/// untouched embedding rows as zeros.
pub fn dense_gradients<T: Scalar>(model: &Model<T>, grads: &Gradients<T>) -> Vec<Vec<T>> {
    let k = model.lstm.embed();
    let mut emb = vec![T::zero(); model.lstm.vocab_size() * k];
    for (&id, row) in &grads.embeddings {
        emb[id * k..(id + 1) * k].copy_from_slice(row.as_slice());
    }
    let mut out = vec![emb];
    for (w, v) in grads.input_weights.iter().zip(&grads.recurrent_weights) {
        out.push(w.as_slice().to_vec());
        out.push(v.as_slice().to_vec());
    }
    if let Some(w) = &grads.head_projection {
        out.push(w.as_slice().to_vec());
    }
    if let Some(u) = &grads.head_readout {
        out.push(u.as_slice().to_vec());
    }
    out
}
