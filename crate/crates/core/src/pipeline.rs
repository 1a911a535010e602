//! End-to-end steps shared by the command line and the calibration suite:
//! fit a model to records, score records, and compute n-gram baselines.

use std::path::Path;

use crate::config::RunConfig;
use crate::corpus::{HigherOrderSource, MarkovSource, TokenStream, TsvRecord, Vocabulary};
use crate::dataset::TaskSpace;
use crate::engine::{EncodedInstance, TaskFamily};
use crate::entropy::{fit_ngram, model_cross_entropy, ngram_cross_entropy, EntropyReport, ReportMeta};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::report::ReportRow;
use crate::scalar::Scalar;
use crate::synth::{self, PairShape, SyntheticTask};
use crate::trainer::{init_parameters, load_pretrained_embeddings, train, TrainLog};

pub struct Fitted<T> {
    pub model: Model<T>,
    pub space: TaskSpace,
    pub log: TrainLog,
}

/// Builds the task space from `train_records`, initializes (optionally
/// overriding embedding rows from a pretrained file) and trains. Held-out
/// records, when given, are scored after every epoch.
pub fn fit<T: Scalar>(
    family: TaskFamily,
    train_records: &[TsvRecord],
    heldout_records: Option<&[TsvRecord]>,
    cfg: &RunConfig,
    pretrained: Option<&Path>,
) -> Result<Fitted<T>> {
    let space = TaskSpace::from_records(family, train_records, cfg.max_vocab, cfg.reverse_input)?;
    let train_set = space.encode(train_records)?;
    let heldout: Option<Vec<EncodedInstance>> = heldout_records.map(|r| space.encode(r)).transpose()?;
    let mut model = init_parameters(space.vocab.len(), family, space.outputs.clone(), &cfg.train)?;
    if let Some(path) = pretrained {
        load_pretrained_embeddings(&mut model, &space.vocab, path)?;
    }
    let log = train(&mut model, &train_set, heldout.as_deref(), &cfg.train)?;
    Ok(Fitted { model, space, log })
}

pub fn evaluate<T: Scalar>(model: &Model<T>, space: &TaskSpace, records: &[TsvRecord], meta: ReportMeta) -> Result<EntropyReport> {
    let data = space.encode(records)?;
    model_cross_entropy(model, &data, meta)
}

/// `F_n` of the output side: training outputs are concatenated into one
/// stream, held-out outputs into another. Held-out symbols never seen in
/// training share one extra id.
pub fn ngram_baseline(train_records: &[TsvRecord], heldout_records: &[TsvRecord], order: usize, alpha: f64) -> Result<f64> {
    let vocab = Vocabulary::build(train_records.iter().flat_map(|r| r.output.iter()), usize::MAX);
    let content = vocab.len() - 2;
    if content == 0 {
        return Err(Error::Empty("training outputs"));
    }
    let stream = |records: &[TsvRecord]| {
        let tokens: Vec<usize> = records.iter().flat_map(|r| r.output.iter()).map(|s| vocab.id(s)).collect();
        TokenStream::new(tokens, "")
    };
    let train_stream = stream(train_records);
    let heldout_stream = stream(heldout_records);
    // <unk> directly follows the content ids
    let size = if heldout_stream.tokens.contains(&vocab.unk_id()) {
        content + 1
    } else {
        content
    };
    let model = fit_ngram(&train_stream, order, alpha, size)?;
    ngram_cross_entropy(&model, &heldout_stream)
}

/// Sizes of the calibration suite.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SuiteScale {
    pub stream_length: usize,
    pub chunk: usize,
    pub instances: usize,
    pub heldout: usize,
    pub length: usize,
}

impl SuiteScale {
    pub const FULL: SuiteScale = SuiteScale {
        stream_length: 100_000,
        chunk: 50,
        instances: 5000,
        heldout: 1000,
        length: 8,
    };

    pub const SMOKE: SuiteScale = SuiteScale {
        stream_length: 2000,
        chunk: 20,
        instances: 100,
        heldout: 20,
        length: 4,
    };
}

/// Synthetic tasks with known entropies: a two-state chain, a second-order
/// source, copying, aligned tagging and a noisy shift, plus unconditional
/// versions of the two transduction tasks.
pub fn calibration_suite(scale: SuiteScale, seed: u64) -> Result<Vec<SyntheticTask>> {
    let chain = MarkovSource::new(vec![vec![0.9, 0.1], vec![0.1, 0.9]], seed)?;
    let second = HigherOrderSource::random(2, 4, 4.0, seed.wrapping_add(1))?;
    let shape = |offset: u64| PairShape {
        k: 8,
        length: scale.length,
        instances: scale.instances,
        heldout: scale.heldout,
        seed: seed.wrapping_add(offset),
    };
    let copy = synth::copy_task(&shape(2))?;
    let shift = synth::noisy_shift_task(&shape(4))?;
    Ok(vec![
        synth::markov_task(&chain, scale.stream_length, scale.chunk)?,
        synth::higher_order_task(&second, scale.stream_length, scale.chunk)?,
        copy.unconditional(),
        copy,
        synth::tagging_task(&shape(3), 4)?,
        shift.unconditional(),
        shift,
    ])
}

/// Report rows for the n-gram baselines `F_1 .. F_max_order` of a task.
pub fn baseline_rows(task: &SyntheticTask, max_order: usize, cfg: &RunConfig) -> Result<Vec<ReportRow>> {
    let symbols: usize = task.heldout.iter().map(|r| r.output.len()).sum();
    (1..=max_order)
        .map(|n| {
            Ok(ReportRow {
                task: task.name.clone(),
                family: format!("ngram-{n}"),
                dataset: "heldout".into(),
                symbols,
                bits_per_symbol: ngram_baseline(&task.train, &task.heldout, n, cfg.alpha)?,
                config_hash: cfg.hash(),
                seed: cfg.train.seed,
                clip_threshold: 0.0,
            })
        })
        .collect()
}
