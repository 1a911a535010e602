//! CSV rows for entropy measurements and comparisons between runs.

use std::path::Path;

use crate::corpus::write_atomic;
use crate::entropy::EntropyReport;
use crate::error::{Error, Result};

pub const HEADER: [&str; 8] = [
    "task",
    "family",
    "dataset",
    "symbols",
    "bits_per_symbol",
    "config_hash",
    "seed",
    "clip_threshold",
];

/// One measurement. `family` is a task family name or `ngram-<n>`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub task: String,
    pub family: String,
    pub dataset: String,
    pub symbols: usize,
    pub bits_per_symbol: f64,
    pub config_hash: String,
    pub seed: u64,
    pub clip_threshold: f64,
}

impl From<&EntropyReport> for ReportRow {
    fn from(r: &EntropyReport) -> Self {
        Self {
            task: r.meta.task.clone(),
            family: r.family.to_string(),
            dataset: r.meta.dataset.clone(),
            symbols: r.symbols,
            bits_per_symbol: r.bits_per_symbol,
            config_hash: r.meta.config_hash.clone(),
            seed: r.meta.seed,
            clip_threshold: r.meta.clip_threshold,
        }
    }
}

impl ReportRow {
    fn fields(&self) -> [String; 8] {
        [
            self.task.clone(),
            self.family.clone(),
            self.dataset.clone(),
            self.symbols.to_string(),
            format!("{:.6}", self.bits_per_symbol),
            self.config_hash.clone(),
            self.seed.to_string(),
            format!("{:.6}", self.clip_threshold),
        ]
    }
}

pub fn to_csv(rows: &[ReportRow]) -> String {
    // writes go to memory and cannot fail
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER).expect("in-memory write");
    for r in rows {
        w.write_record(r.fields()).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

pub fn write_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    write_atomic(path, to_csv(rows).as_bytes())
}

pub fn read_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rd = csv::Reader::from_reader(file);
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.display().to_string(),
        line,
        message,
    };
    let header = rd.headers().map_err(|e| parse_err(1, e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(parse_err(1, format!("expected header {}", HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        let num = |idx: usize| -> Result<f64> {
            rec[idx]
                .parse()
                .map_err(|_| parse_err(line, format!("{}: not a number: {:?}", HEADER[idx], &rec[idx])))
        };
        rows.push(ReportRow {
            task: rec[0].to_owned(),
            family: rec[1].to_owned(),
            dataset: rec[2].to_owned(),
            symbols: rec[3]
                .parse()
                .map_err(|_| parse_err(line, format!("symbols: not a count: {:?}", &rec[3])))?,
            bits_per_symbol: num(4)?,
            config_hash: rec[5].to_owned(),
            seed: rec[6]
                .parse()
                .map_err(|_| parse_err(line, format!("seed: not an integer: {:?}", &rec[6])))?,
            clip_threshold: num(7)?,
        });
    }
    Ok(rows)
}

/// A row present in both runs, keyed by task, family and dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub task: String,
    pub family: String,
    pub dataset: String,
    pub before: f64,
    pub after: f64,
}

impl Comparison {
    pub fn delta(&self) -> f64 {
        self.after - self.before
    }
}

/// Pairs rows of two reports in the order of `before`. Rows without a
/// partner are skipped.
pub fn compare(before: &[ReportRow], after: &[ReportRow]) -> Vec<Comparison> {
    before
        .iter()
        .filter_map(|b| {
            after
                .iter()
                .find(|a| a.task == b.task && a.family == b.family && a.dataset == b.dataset)
                .map(|a| Comparison {
                    task: b.task.clone(),
                    family: b.family.clone(),
                    dataset: b.dataset.clone(),
                    before: b.bits_per_symbol,
                    after: a.bits_per_symbol,
                })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(task: &str, bits: f64) -> ReportRow {
        ReportRow {
            task: task.into(),
            family: "prediction".into(),
            dataset: "heldout".into(),
            symbols: 10,
            bits_per_symbol: bits,
            config_hash: "00ff00ff00ff00ff".into(),
            seed: 3,
            clip_threshold: 5.0,
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let rows = vec![row("a", 1.25), row("b,with comma", 0.5)];
        write_csv(&path, &rows).unwrap();
        assert_eq!(read_csv(&path).unwrap(), rows);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("task,family,dataset,symbols,bits_per_symbol,config_hash,seed,clip_threshold\n"));
        assert!(text.contains("1.250000"));
    }

    #[test]
    fn malformed_csv_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        std::fs::write(&path, format!("{}\na,b,c,x,1,h,1,5\n", HEADER.join(","))).unwrap();
        assert!(matches!(read_csv(&path), Err(Error::Parse { line: 2, .. })));
        std::fs::write(&path, "nope\n").unwrap();
        assert!(matches!(read_csv(&path), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn compare_matches_keys() {
        let c = compare(&[row("a", 2.0), row("b", 1.0)], &[row("b", 0.75)]);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].task, "b");
        assert_eq!(c[0].delta(), -0.25);
    }
}
