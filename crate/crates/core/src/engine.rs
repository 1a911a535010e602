//! Task families and the single-stream encoding every task is reduced to.
//!
//! An instance `(x, y)` becomes `x <sep> y` (or just `y` for prediction), and a
//! predict-mask marks the `y` positions. Only masked positions are scored.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskFamily {
    /// Model `P(Y)`: a bare output stream.
    Prediction,
    /// One output per input token, `|X| = |Y|`.
    AlignedLabeling,
    /// A single label for the whole input.
    UnalignedSingleLabel,
    /// Free-length output sequence (translation, parsing, ...).
    UnalignedSequenceLabel,
}

impl TaskFamily {
    pub const ALL: [TaskFamily; 4] = [
        TaskFamily::Prediction,
        TaskFamily::AlignedLabeling,
        TaskFamily::UnalignedSingleLabel,
        TaskFamily::UnalignedSequenceLabel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskFamily::Prediction => "prediction",
            TaskFamily::AlignedLabeling => "aligned",
            TaskFamily::UnalignedSingleLabel => "single-label",
            TaskFamily::UnalignedSequenceLabel => "sequence-label",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            TaskFamily::Prediction => 0,
            TaskFamily::AlignedLabeling => 1,
            TaskFamily::UnalignedSingleLabel => 2,
            TaskFamily::UnalignedSequenceLabel => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.code() == code)
    }

    /// Input reversal is on by default only for unaligned sequence outputs.
    pub fn default_reverse_input(self) -> bool {
        self == TaskFamily::UnalignedSequenceLabel
    }

    /// Open-vocabulary outputs also admit `<unk>` as a predictable symbol.
    pub fn open_output_vocabulary(self) -> bool {
        matches!(
            self,
            TaskFamily::Prediction | TaskFamily::UnalignedSequenceLabel
        )
    }

    pub fn has_input(self) -> bool {
        self != TaskFamily::Prediction
    }
}

impl fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "prediction" | "predict" => Ok(TaskFamily::Prediction),
            "aligned" | "aligned-labeling" | "tagging" => Ok(TaskFamily::AlignedLabeling),
            "single-label" | "single" | "classification" => Ok(TaskFamily::UnalignedSingleLabel),
            "sequence-label" | "sequence" | "generation" => {
                Ok(TaskFamily::UnalignedSequenceLabel)
            }
            other => Err(Error::Config(format!("unknown task family {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedInstance {
    pub sequence: Vec<usize>,
    pub predict_mask: Vec<bool>,
    /// For aligned labeling: the sequence position of the input token aligned
    /// with each output, in output order.
    pub alignment: Option<Vec<usize>>,
    pub family: TaskFamily,
}

impl EncodedInstance {
    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }

    /// Sequence positions that are scored, ascending.
    pub fn masked_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.predict_mask
            .iter()
            .enumerate()
            .filter(|&(_, &m)| m)
            .map(|(p, _)| p)
    }

    pub fn masked_count(&self) -> usize {
        self.predict_mask.iter().filter(|&&m| m).count()
    }

    /// Output symbol ids in order.
    pub fn outputs(&self) -> Vec<usize> {
        self.masked_positions().map(|p| self.sequence[p]).collect()
    }

    /// Re-checks the structural invariants, e.g. after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.predict_mask.len() != self.sequence.len() {
            return Err(Error::InvalidInstance(format!(
                "mask length {} != sequence length {}",
                self.predict_mask.len(),
                self.sequence.len()
            )));
        }
        let masked = self.masked_count();
        match self.family {
            TaskFamily::Prediction if masked != self.len() => {
                return Err(Error::InvalidInstance(
                    "prediction instances mask every position".into(),
                ))
            }
            TaskFamily::UnalignedSingleLabel
                if masked != 1 || self.predict_mask.last() != Some(&true) =>
            {
                return Err(Error::InvalidInstance(
                    "single-label instances mask exactly the last position".into(),
                ))
            }
            _ => {}
        }
        match (&self.alignment, self.family) {
            (Some(a), TaskFamily::AlignedLabeling) => {
                if a.len() != masked {
                    return Err(Error::InvalidInstance(format!(
                        "alignment has {} entries for {masked} outputs",
                        a.len()
                    )));
                }
                let first_output = self.masked_positions().next().unwrap_or(0);
                if let Some(&bad) = a.iter().find(|&&p| p >= first_output.saturating_sub(1)) {
                    return Err(Error::InvalidInstance(format!(
                        "alignment position {bad} is not an input position"
                    )));
                }
            }
            (None, TaskFamily::AlignedLabeling) => {
                return Err(Error::InvalidInstance("aligned instance without alignment".into()))
            }
            (Some(_), family) => {
                return Err(Error::InvalidInstance(format!(
                    "alignment given for {family} instance"
                )))
            }
            (None, _) => {}
        }
        Ok(())
    }
}

/// Encodes one instance as `x' <sep> y` where `x'` is `x`, reversed when
/// `reverse_input` is set. Prediction instances are `y` alone and require an
/// empty `x`; the reversal flag is ignored for them.
pub fn encode_instance(
    family: TaskFamily,
    x: &[usize],
    y: &[usize],
    reverse_input: bool,
    sep_id: usize,
) -> Result<EncodedInstance> {
    match family {
        TaskFamily::Prediction => {
            if !x.is_empty() {
                return Err(Error::InvalidInstance(
                    "prediction instances take no input".into(),
                ));
            }
            return Ok(EncodedInstance {
                sequence: y.to_vec(),
                predict_mask: vec![true; y.len()],
                alignment: None,
                family,
            });
        }
        TaskFamily::AlignedLabeling if x.len() != y.len() => {
            return Err(Error::InvalidInstance(format!(
                "aligned labeling needs |X| = |Y|, got {} and {}",
                x.len(),
                y.len()
            )));
        }
        TaskFamily::UnalignedSingleLabel if y.len() != 1 => {
            return Err(Error::InvalidInstance(format!(
                "single-label instances need exactly one output, got {}",
                y.len()
            )));
        }
        _ => {}
    }

    let n = x.len();
    let mut sequence = Vec::with_capacity(n + 1 + y.len());
    if reverse_input {
        sequence.extend(x.iter().rev());
    } else {
        sequence.extend_from_slice(x);
    }
    sequence.push(sep_id);
    sequence.extend_from_slice(y);

    let mut predict_mask = vec![false; n + 1];
    predict_mask.resize(sequence.len(), true);

    let alignment = (family == TaskFamily::AlignedLabeling).then(|| {
        (0..n)
            .map(|t| if reverse_input { n - 1 - t } else { t })
            .collect()
    });

    Ok(EncodedInstance {
        sequence,
        predict_mask,
        alignment,
        family,
    })
}

/// Raw output symbols of an instance, in order.
pub fn decode_outputs(inst: &EncodedInstance, vocab: &crate::corpus::Vocabulary) -> Vec<String> {
    vocab.decode(&inst.outputs())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DatasetReport {
    pub instances: usize,
    pub symbols: usize,
    pub masked: usize,
}

pub fn validate_dataset(instances: &[EncodedInstance], family: TaskFamily) -> Result<DatasetReport> {
    let mut report = DatasetReport::default();
    for (index, inst) in instances.iter().enumerate() {
        if inst.family != family {
            return Err(Error::FamilyMismatch {
                expected: family.to_string(),
                found: inst.family.to_string(),
                index,
            });
        }
        inst.validate()?;
        report.instances += 1;
        report.symbols += inst.len();
        report.masked += inst.masked_count();
    }
    Ok(report)
}
