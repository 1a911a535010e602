//! Synthetic tasks with known entropy, used as calibration points.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{write_atomic, HigherOrderSource, MarkovSource, TokenStream, TsvRecord};
use crate::engine::TaskFamily;
use crate::error::{Error, Result};

/// Share of a Markov stream's chunks used for training; the rest is held out.
pub const TRAIN_SHARE: f64 = 0.8;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTask {
    pub name: String,
    pub family: TaskFamily,
    pub train: Vec<TsvRecord>,
    pub heldout: Vec<TsvRecord>,
    /// True `H(Y | X)` per output symbol.
    pub conditional_bits: f64,
    /// True per-symbol entropy of the outputs alone.
    pub marginal_bits: f64,
}

impl SyntheticTask {
    /// The same outputs with inputs dropped, as a prediction task.
    pub fn unconditional(&self) -> SyntheticTask {
        let strip = |rs: &[TsvRecord]| {
            rs.iter()
                .map(|r| TsvRecord {
                    line: r.line,
                    input: Vec::new(),
                    output: r.output.clone(),
                })
                .collect()
        };
        SyntheticTask {
            name: format!("{}-unconditional", self.name),
            family: TaskFamily::Prediction,
            train: strip(&self.train),
            heldout: strip(&self.heldout),
            conditional_bits: self.marginal_bits,
            marginal_bits: self.marginal_bits,
        }
    }

    pub fn train_path(prefix: &Path) -> PathBuf {
        with_suffix(prefix, ".train.tsv")
    }

    pub fn heldout_path(prefix: &Path) -> PathBuf {
        with_suffix(prefix, ".heldout.tsv")
    }

    pub fn entropy_path(prefix: &Path) -> PathBuf {
        with_suffix(prefix, ".entropy")
    }

    /// Writes `<prefix>.train.tsv`, `<prefix>.heldout.tsv` and the
    /// `<prefix>.entropy` sidecar.
    pub fn write(&self, prefix: &Path) -> Result<()> {
        write_atomic(&Self::train_path(prefix), tsv(&self.train, self.family).as_bytes())?;
        write_atomic(&Self::heldout_path(prefix), tsv(&self.heldout, self.family).as_bytes())?;
        let sidecar = format!(
            "task={}\nfamily={}\nconditional_bits_per_symbol={:.12}\nmarginal_bits_per_symbol={:.12}\n",
            self.name, self.family, self.conditional_bits, self.marginal_bits
        );
        write_atomic(&Self::entropy_path(prefix), sidecar.as_bytes())
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn tsv(records: &[TsvRecord], family: TaskFamily) -> String {
    let mut out = String::new();
    for r in records {
        if family.has_input() {
            let _ = writeln!(out, "{}\t{}", r.input.join(" "), r.output.join(" "));
        } else {
            let _ = writeln!(out, "{}", r.output.join(" "));
        }
    }
    out
}

fn symbols(prefix: &str, ids: &[usize]) -> Vec<String> {
    ids.iter().map(|i| format!("{prefix}{i}")).collect()
}

/// Splits a stream into prediction records of `chunk` symbols, the first
/// [`TRAIN_SHARE`] of them for training.
fn chunked(stream: &TokenStream, chunk: usize) -> Result<(Vec<TsvRecord>, Vec<TsvRecord>)> {
    if chunk == 0 {
        return Err(Error::Config("chunk length must be positive".into()));
    }
    let records: Vec<TsvRecord> = stream
        .tokens
        .chunks(chunk)
        .enumerate()
        .map(|(i, c)| TsvRecord {
            line: i + 1,
            input: Vec::new(),
            output: symbols("s", c),
        })
        .collect();
    let cut = ((records.len() as f64) * TRAIN_SHARE).round() as usize;
    if cut == 0 || cut == records.len() {
        return Err(Error::Config(format!(
            "stream of {} symbols is too short to split into chunks of {chunk}",
            stream.len()
        )));
    }
    let mut train = records;
    let heldout = renumber(train.split_off(cut));
    Ok((train, heldout))
}

/// Prediction task over a first-order chain.
pub fn markov_task(source: &MarkovSource, length: usize, chunk: usize) -> Result<SyntheticTask> {
    let (train, heldout) = chunked(&source.generate(length)?, chunk)?;
    let h = source.entropy_rate();
    Ok(SyntheticTask {
        name: format!("markov-k{}", source.states()),
        family: TaskFamily::Prediction,
        train,
        heldout,
        conditional_bits: h,
        marginal_bits: h,
    })
}

/// Prediction task over an order-`n` chain.
pub fn higher_order_task(source: &HigherOrderSource, length: usize, chunk: usize) -> Result<SyntheticTask> {
    let (train, heldout) = chunked(&source.generate(length)?, chunk)?;
    let h = source.entropy_rate();
    Ok(SyntheticTask {
        name: format!("order{}-k{}", source.order(), source.symbols()),
        family: TaskFamily::Prediction,
        train,
        heldout,
        conditional_bits: h,
        marginal_bits: h,
    })
}

/// Shape of a transduction task: `instances` training and `heldout`
/// evaluation pairs, each input of `length` iid uniform symbols from `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairShape {
    pub k: usize,
    pub length: usize,
    pub instances: usize,
    pub heldout: usize,
    pub seed: u64,
}

impl PairShape {
    fn check(&self) -> Result<()> {
        if self.k < 2 || self.length == 0 || self.instances == 0 || self.heldout == 0 {
            return Err(Error::Config(format!("degenerate task shape {self:?}")));
        }
        Ok(())
    }
}

fn pairs<F>(shape: &PairShape, mut map: F) -> (Vec<TsvRecord>, Vec<TsvRecord>)
where
    F: FnMut(&[usize], &mut ChaCha8Rng) -> (Vec<String>, Vec<String>),
{
    let mut rng = ChaCha8Rng::seed_from_u64(shape.seed);
    let mut all: Vec<TsvRecord> = (0..shape.instances + shape.heldout)
        .map(|i| {
            let x: Vec<usize> = (0..shape.length).map(|_| rng.gen_range(0..shape.k)).collect();
            let (input, output) = map(&x, &mut rng);
            TsvRecord {
                line: i + 1,
                input,
                output,
            }
        })
        .collect();
    let heldout = renumber(all.split_off(shape.instances));
    (all, heldout)
}

/// Line numbers as they will appear in the written file.
fn renumber(mut records: Vec<TsvRecord>) -> Vec<TsvRecord> {
    for (i, r) in records.iter_mut().enumerate() {
        r.line = i + 1;
    }
    records
}

/// `Y = X`, scored as unaligned generation.
pub fn copy_task(shape: &PairShape) -> Result<SyntheticTask> {
    shape.check()?;
    let (train, heldout) = pairs(shape, |x, _| (symbols("s", x), symbols("s", x)));
    Ok(SyntheticTask {
        name: format!("copy-k{}", shape.k),
        family: TaskFamily::UnalignedSequenceLabel,
        train,
        heldout,
        conditional_bits: 0.0,
        marginal_bits: (shape.k as f64).log2(),
    })
}

/// Aligned tagging: `y_t = t_(x_t mod tags)`.
pub fn tagging_task(shape: &PairShape, tags: usize) -> Result<SyntheticTask> {
    shape.check()?;
    if tags == 0 || tags > shape.k || !shape.k.is_multiple_of(tags) {
        return Err(Error::Config(format!("{tags} tags must evenly divide {} input symbols", shape.k)));
    }
    let (train, heldout) = pairs(shape, |x, _| {
        let y: Vec<usize> = x.iter().map(|&v| v % tags).collect();
        (symbols("w", x), symbols("t", &y))
    });
    Ok(SyntheticTask {
        name: format!("tag-k{}-t{tags}", shape.k),
        family: TaskFamily::AlignedLabeling,
        train,
        heldout,
        conditional_bits: 0.0,
        marginal_bits: (tags as f64).log2(),
    })
}

/// Stochastic non-copy mapping: `y_t = (x_t + b_t) mod K` with fair coin `b_t`,
/// written with a separate output alphabet. `H(Y | X)` is one bit per symbol.
pub fn noisy_shift_task(shape: &PairShape) -> Result<SyntheticTask> {
    shape.check()?;
    let k = shape.k;
    let (train, heldout) = pairs(shape, |x, rng| {
        let y: Vec<usize> = x.iter().map(|&v| (v + usize::from(rng.gen_bool(0.5))) % k).collect();
        (symbols("x", x), symbols("y", &y))
    });
    Ok(SyntheticTask {
        name: format!("noisy-shift-k{k}"),
        family: TaskFamily::UnalignedSequenceLabel,
        train,
        heldout,
        conditional_bits: 1.0,
        marginal_bits: (k as f64).log2(),
    })
}
