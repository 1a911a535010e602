//! Seeded initialization and minibatch SGD with global-norm clipping.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::Vocabulary;
use crate::engine::{EncodedInstance, TaskFamily};
use crate::error::{Error, Result};
use crate::heads::{Activation, AlignedProjection, HeadParameters};
use crate::lstm::{Gradients, LstmParameters};
use crate::model::Model;
use crate::scalar::Scalar;

/// Random stream used for shuffling; initialization uses stream 0.
const SHUFFLE_STREAM: u64 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub hidden: usize,
    pub embed: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Global gradient norm threshold.
    pub clip: f64,
    /// Parameters start uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
    pub seed: u64,
    /// Rows of the aligned head's `W`; `0` means the hidden dimension.
    pub head_rows: usize,
    pub activation: Activation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            embed: 64,
            epochs: 4,
            learning_rate: 0.5,
            batch_size: 32,
            clip: 5.0,
            init_scale: 0.1,
            seed: 0,
            head_rows: 0,
            activation: Activation::Tanh,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.hidden == 0 || self.embed == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.hidden != self.embed {
            return bad(format!(
                "hidden dimension {} must equal embedding dimension {}",
                self.hidden, self.embed
            ));
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.clip > 0.0 && self.clip.is_finite()) {
            return bad(format!("clip threshold must be positive, got {}", self.clip));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return bad(format!("init scale must be non-negative, got {}", self.init_scale));
        }
        Ok(())
    }

    pub fn head_rows(&self) -> usize {
        if self.head_rows == 0 {
            self.hidden
        } else {
            self.head_rows
        }
    }
}

/// Learning rate for 0-based epoch `e`: `lr * (1 - e / epochs)`.
pub fn lr_schedule(base: f64, epoch: usize, epochs: usize) -> f64 {
    base * (1.0 - epoch as f64 / epochs as f64)
}

/// Fresh model with every parameter drawn uniformly from a seeded generator,
/// in the order: embeddings, `W_i, V_i, W_f, V_f, W_o, V_o, W_l, V_l`, head `W`, `U`.
pub fn init_parameters<T: Scalar>(
    vocab_size: usize,
    family: TaskFamily,
    outputs: Range<usize>,
    cfg: &TrainConfig,
) -> Result<Model<T>> {
    cfg.validate()?;
    let lstm = LstmParameters::zeros(vocab_size, cfg.embed, cfg.hidden);
    let head = match family {
        TaskFamily::AlignedLabeling => HeadParameters::aligned(
            outputs,
            AlignedProjection::zeros(cfg.head_rows(), cfg.embed, cfg.activation),
        ),
        _ => HeadParameters::dot(family, outputs),
    };
    let mut model = Model::new(lstm, head)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let a = cfg.init_scale;
    for tensor in model.tensors_mut() {
        for x in tensor {
            *x = T::of(if a > 0.0 { rng.gen_range(-a..=a) } else { 0.0 });
        }
    }
    Ok(model)
}

/// Reads `symbol v1 v2 ...` lines. Symbols absent from `vocab` are skipped;
/// returns how many rows were overwritten.
pub fn load_pretrained_embeddings<T: Scalar>(model: &mut Model<T>, vocab: &Vocabulary, path: &Path) -> Result<usize> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let k = model.lstm.embed();
    let mut seen = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let mut fields = line.split_whitespace();
        let Some(symbol) = fields.next() else { continue };
        let parse_err = |message: String| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message,
        };
        let values = fields
            .map(|f| f.parse::<f64>().map_err(|e| parse_err(format!("{f:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != k {
            return Err(parse_err(format!("expected {k} values, found {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(parse_err("non-finite value".into()));
        }
        if vocab.contains(symbol) && !vocab.is_reserved(vocab.id(symbol)) {
            seen.insert(vocab.id(symbol), values);
        }
    }
    if vocab.len() != model.lstm.vocab_size() {
        return Err(Error::dims("pretrained embeddings", model.lstm.vocab_size(), vocab.len()));
    }
    for (&id, values) in &seen {
        for (dst, &v) in model.lstm.embeddings.row_mut(id).iter_mut().zip(values) {
            *dst = T::of(v);
        }
    }
    Ok(seen.len())
}

/// Rescales `grads` so its global norm is at most `threshold`. Returns the
/// norm before clipping.
pub fn clip_gradients<T: Scalar>(grads: &mut Gradients<T>, threshold: T) -> T {
    let norm = grads.global_norm();
    if threshold > T::zero() && norm > threshold {
        grads.scale(threshold / norm);
    }
    norm
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_bits_per_symbol: f64,
    pub heldout_bits_per_symbol: Option<f64>,
    pub mean_grad_norm: f64,
    pub clipped_batches: usize,
    pub batches: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn final_heldout(&self) -> Option<f64> {
        self.epochs.last().and_then(|r| r.heldout_bits_per_symbol)
    }

    /// One row per epoch. Wall-clock time is included only on request, so that
    /// reruns with the same seed produce identical files.
    pub fn to_csv(&self, with_timing: bool) -> String {
        let mut out = String::from(
            "epoch,learning_rate,train_bits_per_symbol,heldout_bits_per_symbol,mean_grad_norm,clipped_batches,batches",
        );
        if with_timing {
            out.push_str(",seconds");
        }
        out.push('\n');
        for r in &self.epochs {
            let heldout = r.heldout_bits_per_symbol.map(|h| format!("{h:.6}")).unwrap_or_default();
            let _ = write!(
                out,
                "{},{:.6},{:.6},{},{:.6},{},{}",
                r.epoch, r.learning_rate, r.train_bits_per_symbol, heldout, r.mean_grad_norm, r.clipped_batches, r.batches
            );
            if with_timing {
                let _ = write!(out, ",{:.3}", r.seconds);
            }
            out.push('\n');
        }
        out
    }
}

/// Bits per scored symbol of `model` on `data`, summed in order.
pub fn mean_bits<T: Scalar>(model: &Model<T>, data: &[EncodedInstance]) -> Result<f64> {
    let per = data
        .par_iter()
        .map(|inst| Ok((model.instance_bits(inst)?.as_f64(), inst.masked_count())))
        .collect::<Result<Vec<_>>>()?;
    let symbols: usize = per.iter().map(|p| p.1).sum();
    if symbols == 0 {
        return Err(Error::Empty("evaluation dataset"));
    }
    Ok(per.iter().map(|p| p.0).sum::<f64>() / symbols as f64)
}

/// Trains in place. Each minibatch gradient is the sum of per-instance
/// gradients, computed in parallel and added in a fixed order so results do
/// not depend on thread scheduling.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    train_set: &[EncodedInstance],
    heldout: Option<&[EncodedInstance]>,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    model.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    for (index, inst) in train_set.iter().enumerate() {
        if inst.family != model.head.family {
            return Err(Error::FamilyMismatch {
                expected: model.head.family.to_string(),
                found: inst.family.to_string(),
                index,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = TrainLog::default();
    let clip = T::of(cfg.clip);

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let lr = lr_schedule(cfg.learning_rate, epoch, cfg.epochs);
        order.shuffle(&mut rng);
        let (mut bits, mut scored, mut norms, mut clipped, mut batches) = (0.0, 0usize, 0.0, 0usize, 0usize);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let parts = batch
                .par_iter()
                .map(|&i| model.loss_and_gradients(&train_set[i]))
                .collect::<Result<Vec<_>>>()?;
            let mut grads = model.zero_gradients();
            for (loss, g) in &parts {
                bits += loss.bits.as_f64();
                scored += loss.scored;
                grads.accumulate(g)?;
            }
            let norm = clip_gradients(&mut grads, clip);
            if !norm.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence { epoch, batch: b });
            }
            if norm > clip {
                clipped += 1;
            }
            norms += norm.as_f64();
            batches += 1;
            model.apply_gradients(&grads, T::of(lr))?;
            if !model.is_finite() {
                return Err(Error::Divergence { epoch, batch: b });
            }
        }
        let heldout_bits = match heldout {
            Some(h) if !h.is_empty() => Some(mean_bits(model, h)?),
            _ => None,
        };
        log.epochs.push(EpochRecord {
            epoch,
            learning_rate: lr,
            train_bits_per_symbol: if scored > 0 { bits / scored as f64 } else { 0.0 },
            heldout_bits_per_symbol: heldout_bits,
            mean_grad_norm: norms / batches as f64,
            clipped_batches: clipped,
            batches,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::encode_instance;
    use approx::assert_abs_diff_eq;

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            hidden: 4,
            embed: 4,
            epochs: 2,
            batch_size: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn schedule_decays_linearly() {
        let lrs: Vec<f64> = (0..4).map(|e| lr_schedule(0.5, e, 4)).collect();
        assert_eq!(lrs, vec![0.5, 0.375, 0.25, 0.125]);
    }

    #[test]
    fn clip_examples() {
        let mut g: Gradients<f64> = Gradients::zeros(1, 1, None);
        g.input_weights[0].as_mut_slice()[0] = 3.0;
        g.input_weights[1].as_mut_slice()[0] = 4.0;
        let before = clip_gradients(&mut g, 1.0);
        assert_abs_diff_eq!(before, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g.global_norm(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g.input_weights[0].as_slice()[0], 0.6, epsilon = 1e-12);

        let mut small: Gradients<f64> = Gradients::zeros(1, 1, None);
        small.input_weights[0].as_mut_slice()[0] = 0.3;
        let copy = small.clone();
        clip_gradients(&mut small, 5.0);
        assert_eq!(small, copy);

        let mut zero: Gradients<f64> = Gradients::zeros(2, 2, None);
        assert_eq!(clip_gradients(&mut zero, 5.0), 0.0);
        assert!(zero.is_zero());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = small_cfg();
        let a: Model<f64> = init_parameters(6, TaskFamily::AlignedLabeling, 2..4, &cfg).unwrap();
        let b: Model<f64> = init_parameters(6, TaskFamily::AlignedLabeling, 2..4, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.tensors().iter().all(|t| t.iter().all(|x| x.abs() <= 0.1)));
        let c: Model<f64> = init_parameters(6, TaskFamily::AlignedLabeling, 2..4, &TrainConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn config_validation() {
        for bad in [
            TrainConfig { hidden: 3, ..TrainConfig::default() },
            TrainConfig { epochs: 0, ..TrainConfig::default() },
            TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
            TrainConfig { clip: -1.0, ..TrainConfig::default() },
            TrainConfig { clip: 0.0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
        }
    }

    fn copy_data(n: usize) -> Vec<EncodedInstance> {
        // inputs and outputs share ids 0..3; sep = 5
        (0..n)
            .map(|i| {
                let x = vec![i % 4, (i / 4) % 4];
                encode_instance(TaskFamily::UnalignedSequenceLabel, &x, &x, true, 5).unwrap()
            })
            .collect()
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let data = copy_data(32);
        let cfg = small_cfg();
        let run = || {
            let mut m: Model<f64> = init_parameters(6, TaskFamily::UnalignedSequenceLabel, 0..5, &cfg).unwrap();
            let before = mean_bits(&m, &data).unwrap();
            let log = train(&mut m, &data, Some(&data), &cfg).unwrap();
            (m, log, before)
        };
        let (m1, log1, before) = run();
        let (m2, log2, _) = run();
        assert_eq!(m1, m2);
        assert_eq!(log1.to_csv(false), log2.to_csv(false));
        assert!(log1.final_heldout().unwrap() < before);
    }

    #[test]
    fn divergence_is_reported() {
        let data = copy_data(4);
        let cfg = TrainConfig { learning_rate: 1e308, ..small_cfg() };
        let mut m: Model<f64> = init_parameters(6, TaskFamily::UnalignedSequenceLabel, 0..5, &cfg).unwrap();
        assert!(matches!(train(&mut m, &data, None, &cfg), Err(Error::Divergence { .. })));
    }

    #[test]
    fn family_mismatch_is_rejected() {
        let data = copy_data(2);
        let cfg = small_cfg();
        let mut m: Model<f64> = init_parameters(6, TaskFamily::Prediction, 0..5, &cfg).unwrap();
        assert!(matches!(train(&mut m, &data, None, &cfg), Err(Error::FamilyMismatch { .. })));
    }

    #[test]
    fn pretrained_rows_override_init() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vec.txt");
        std::fs::write(&path, "b 1 2 3 4\nzz 9 9 9 9\n\n<unk> 5 5 5 5\n").unwrap();
        let vocab = Vocabulary::from_content(vec!["a".into(), "b".into()]).unwrap();
        let cfg = small_cfg();
        let mut m: Model<f64> = init_parameters(vocab.len(), TaskFamily::Prediction, 0..3, &cfg).unwrap();
        let before = m.clone();
        assert_eq!(load_pretrained_embeddings(&mut m, &vocab, &path).unwrap(), 1);
        assert_eq!(m.lstm.embedding(1), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.lstm.embedding(0), before.lstm.embedding(0));
        assert_eq!(m.lstm.embedding(vocab.unk_id()), before.lstm.embedding(vocab.unk_id()));

        std::fs::write(&path, "a 1 2\n").unwrap();
        assert!(matches!(load_pretrained_embeddings(&mut m, &vocab, &path), Err(Error::Parse { line: 1, .. })));
    }
}
