//! Turning raw records into a joint vocabulary and encoded instances.

use std::ops::Range;

use crate::corpus::{ranked_symbols, TsvRecord, Vocabulary};
use crate::engine::{encode_instance, EncodedInstance, TaskFamily};
use crate::error::{Error, Result};

/// Vocabulary and encoding settings fixed by a training set.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpace {
    pub family: TaskFamily,
    pub vocab: Vocabulary,
    pub outputs: Range<usize>,
    pub reverse_input: bool,
}

impl TaskSpace {
    /// Builds the joint vocabulary from training records. Input and output
    /// symbols are each capped at `max_symbols` by frequency. Open-vocabulary
    /// families also score `<unk>`.
    pub fn from_records(
        family: TaskFamily,
        records: &[TsvRecord],
        max_symbols: usize,
        reverse_input: Option<bool>,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Empty("training records"));
        }
        let inputs = ranked_symbols(records.iter().flat_map(|r| r.input.iter()), max_symbols);
        let outputs = ranked_symbols(records.iter().flat_map(|r| r.output.iter()), max_symbols);
        Self::from_symbols(family, &inputs, &outputs, reverse_input)
    }

    pub fn from_symbols(
        family: TaskFamily,
        inputs: &[String],
        outputs: &[String],
        reverse_input: Option<bool>,
    ) -> Result<Self> {
        if outputs.is_empty() {
            return Err(Error::Empty("output symbol set"));
        }
        let (vocab, mut range) = Vocabulary::joint(inputs, outputs)?;
        if family.open_output_vocabulary() {
            debug_assert_eq!(range.end, vocab.unk_id());
            range.end += 1;
        }
        Ok(Self {
            family,
            vocab,
            outputs: range,
            reverse_input: reverse_input.unwrap_or(family.default_reverse_input()),
        })
    }

    /// Rebuilds the space from a saved vocabulary and output range.
    pub fn from_parts(family: TaskFamily, vocab: Vocabulary, outputs: Range<usize>, reverse_input: bool) -> Result<Self> {
        if outputs.is_empty() || outputs.end > vocab.len() {
            return Err(Error::OutOfRange {
                what: "output range",
                id: outputs.end,
                start: 0,
                end: vocab.len(),
            });
        }
        Ok(Self {
            family,
            vocab,
            outputs,
            reverse_input,
        })
    }

    /// Encodes records. Output symbols outside the scored range become
    /// `<unk>` for open families and are an error for closed ones.
    pub fn encode(&self, records: &[TsvRecord]) -> Result<Vec<EncodedInstance>> {
        records
            .iter()
            .map(|r| {
                let x: Vec<usize> = r.input.iter().map(|s| self.vocab.id(s)).collect();
                let mut y = Vec::with_capacity(r.output.len());
                for s in &r.output {
                    let id = self.vocab.id(s);
                    if !self.outputs.contains(&id) {
                        if self.family.open_output_vocabulary() && self.outputs.contains(&self.vocab.unk_id()) {
                            y.push(self.vocab.unk_id());
                            continue;
                        }
                        return Err(Error::InvalidInstance(format!(
                            "line {}: output symbol {s:?} is not in the label set",
                            r.line
                        )));
                    }
                    y.push(id);
                }
                encode_instance(self.family, &x, &y, self.reverse_input, self.vocab.sep_id())
                    .map_err(|e| Error::InvalidInstance(format!("line {}: {e}", r.line)))
            })
            .collect()
    }
}
