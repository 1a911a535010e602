//! Tokenization, vocabularies, TSV ingestion and synthetic Markov sources.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const SEP: &str = "<sep>";

const ROW_SUM_TOLERANCE: f64 = 1e-10;

/// Whitespace tokenization.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_owned).collect()
}

/// Bidirectional symbol/id map. Content symbols occupy the low ids; the
/// reserved `<unk>` and `<sep>` symbols are always present.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
    unk_id: usize,
    sep_id: usize,
}

impl Vocabulary {
    /// Keeps the `max_size` most frequent tokens, ties broken lexicographically,
    /// then appends `<unk>` and `<sep>`.
    pub fn build<I, S>(tokens: I, max_size: usize) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self::from_content(ranked_symbols(tokens, max_size))
            .expect("ranked symbols are distinct and non-reserved")
    }

    /// Content symbols in id order, followed by the reserved symbols.
    pub fn from_content(content: Vec<String>) -> Result<Self> {
        let mut symbols = content;
        symbols.push(UNK.to_owned());
        symbols.push(SEP.to_owned());
        Self::from_symbols(symbols)
    }

    /// Full symbol list in id order; must contain both reserved symbols once.
    pub fn from_symbols(symbols: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(symbols.len());
        for (id, s) in symbols.iter().enumerate() {
            if s.is_empty() || s.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!(
                    "vocabulary symbol {id} is empty or contains whitespace"
                )));
            }
            if index.insert(s.clone(), id).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary symbol {s:?}")));
            }
        }
        let unk_id = *index
            .get(UNK)
            .ok_or_else(|| Error::Config(format!("vocabulary lacks {UNK}")))?;
        let sep_id = *index
            .get(SEP)
            .ok_or_else(|| Error::Config(format!("vocabulary lacks {SEP}")))?;
        Ok(Self {
            symbols,
            index,
            unk_id,
            sep_id,
        })
    }

    /// Joint vocabulary for a transduction task, laid out as
    /// `[input-only symbols][output symbols][<unk>][<sep>]`. Symbols present in
    /// both sets keep a single id inside the output block. Returns the output
    /// id range (which is immediately followed by `<unk>`).
    pub fn joint(inputs: &[String], outputs: &[String]) -> Result<(Self, Range<usize>)> {
        let output_set: std::collections::HashSet<&str> =
            outputs.iter().map(String::as_str).collect();
        let mut content: Vec<String> = inputs
            .iter()
            .filter(|s| !output_set.contains(s.as_str()))
            .cloned()
            .collect();
        let start = content.len();
        content.extend(outputs.iter().cloned());
        let end = content.len();
        Ok((Self::from_content(content)?, start..end))
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn unk_id(&self) -> usize {
        self.unk_id
    }

    pub fn sep_id(&self) -> usize {
        self.sep_id
    }

    pub fn is_reserved(&self, id: usize) -> bool {
        id == self.unk_id || id == self.sep_id
    }

    /// Id of a symbol, or `<unk>` when absent.
    pub fn id(&self, symbol: &str) -> usize {
        self.index.get(symbol).copied().unwrap_or(self.unk_id)
    }

    pub fn contains(&self, symbol: &str) -> bool {
        self.index.contains_key(symbol)
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    /// Non-reserved symbols in id order.
    pub fn content_symbols(&self) -> Vec<String> {
        self.symbols
            .iter()
            .enumerate()
            .filter(|&(id, _)| !self.is_reserved(id))
            .map(|(_, s)| s.clone())
            .collect()
    }

    pub fn encode<S: AsRef<str>>(&self, raw: &[S]) -> TokenStream {
        TokenStream::new(raw.iter().map(|s| self.id(s.as_ref())).collect(), "")
    }

    pub fn decode(&self, tokens: &[usize]) -> Vec<String> {
        tokens
            .iter()
            .map(|&id| self.symbol(id).unwrap_or(UNK).to_owned())
            .collect()
    }

    /// One symbol per line, line number = id.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = String::new();
        for s in &self.symbols {
            text.push_str(s);
            text.push('\n');
        }
        write_atomic(path, text.as_bytes())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let symbols: Vec<String> = text.lines().map(|l| l.trim_end_matches('\r').to_owned()).collect();
        Self::from_symbols(symbols).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })
    }
}

/// Tokens ranked by descending count then lexicographically, truncated to
/// `max_size`. Reserved literals are never ranked.
pub fn ranked_symbols<I, S>(tokens: I, max_size: usize) -> Vec<String>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts: HashMap<String, usize> = HashMap::new();
    for t in tokens {
        let t = t.as_ref();
        if t == UNK || t == SEP {
            continue;
        }
        *counts.entry(t.to_owned()).or_default() += 1;
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size);
    ranked.into_iter().map(|(s, _)| s).collect()
}

/// Writes through a temporary sibling and renames, so a failed write never
/// leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".to_owned(),
    });
    let result = fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        })
        .and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct TokenStream {
    pub tokens: Vec<usize>,
    pub source: String,
}

impl TokenStream {
    pub fn new(tokens: Vec<usize>, source: impl Into<String>) -> Self {
        Self {
            tokens,
            source: source.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Checks that every id indexes into a vocabulary of `size` symbols.
    pub fn validate(&self, size: usize) -> Result<()> {
        match self.tokens.iter().find(|&&id| id >= size) {
            Some(&id) => Err(Error::OutOfRange {
                what: "vocabulary",
                id,
                start: 0,
                end: size,
            }),
            None => Ok(()),
        }
    }
}

/// First-order Markov chain over `K` states with a precomputed stationary
/// distribution.
#[derive(Clone, Debug)]
pub struct MarkovSource {
    transition: Vec<Vec<f64>>,
    stationary: Vec<f64>,
    seed: u64,
}

impl MarkovSource {
    pub fn new(transition: Vec<Vec<f64>>, seed: u64) -> Result<Self> {
        validate_stochastic(&transition)?;
        let stationary = stationary_distribution(&transition);
        Ok(Self {
            transition,
            stationary,
            seed,
        })
    }

    /// iid uniform source over `k` symbols.
    pub fn uniform(k: usize, seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidStochasticMatrix("zero states".into()));
        }
        Self::new(vec![vec![1.0 / k as f64; k]; k], seed)
    }

    pub fn states(&self) -> usize {
        self.transition.len()
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Samples a stream: initial state from the stationary distribution, then
    /// transitions. Bit-reproducible for a fixed seed.
    pub fn generate(&self, length: usize) -> Result<TokenStream> {
        if length == 0 {
            return Err(Error::Empty("generate_markov"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut state = sample(&self.stationary, &mut rng);
        let mut tokens = Vec::with_capacity(length);
        tokens.push(state);
        for _ in 1..length {
            state = sample(&self.transition[state], &mut rng);
            tokens.push(state);
        }
        Ok(TokenStream::new(
            tokens,
            format!("markov:k={}:seed={}", self.states(), self.seed),
        ))
    }

    /// `-sum_i pi_i sum_j P_ij log2 P_ij`, with `0 log 0 = 0`.
    pub fn entropy_rate(&self) -> f64 {
        let mut h = 0.0;
        for (pi, row) in self.stationary.iter().zip(&self.transition) {
            let mut row_h = 0.0;
            for &p in row {
                if p > 0.0 {
                    row_h -= p * p.log2();
                }
            }
            h += pi * row_h;
        }
        h
    }
}

/// Order-`n` Markov source over `K` symbols. Context `(c_1..c_n)` is encoded
/// base-`K` with `c_1` most significant; `table[context][next]` is a
/// conditional distribution.
#[derive(Clone, Debug)]
pub struct HigherOrderSource {
    order: usize,
    symbols: usize,
    table: Vec<Vec<f64>>,
    lifted: MarkovSource,
}

impl HigherOrderSource {
    pub fn new(order: usize, symbols: usize, table: Vec<Vec<f64>>, seed: u64) -> Result<Self> {
        if order == 0 || symbols == 0 {
            return Err(Error::InvalidStochasticMatrix(
                "order and symbol count must be positive".into(),
            ));
        }
        let contexts = symbols.pow(order as u32);
        if table.len() != contexts {
            return Err(Error::InvalidStochasticMatrix(format!(
                "expected {contexts} context rows, got {}",
                table.len()
            )));
        }
        validate_rows(&table, symbols)?;
        let mut lifted = vec![vec![0.0; contexts]; contexts];
        for (ctx, row) in table.iter().enumerate() {
            for (next, &p) in row.iter().enumerate() {
                lifted[ctx][(ctx * symbols) % contexts + next] += p;
            }
        }
        Ok(Self {
            order,
            symbols,
            table,
            lifted: MarkovSource::new(lifted, seed)?,
        })
    }

    /// Random table with peaked rows: weights `u^sharpness`, `u ~ U(0,1)`.
    pub fn random(order: usize, symbols: usize, sharpness: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_7ab1e);
        let contexts = symbols.pow(order as u32);
        let table = (0..contexts)
            .map(|_| {
                let w: Vec<f64> = (0..symbols)
                    .map(|_| rng.gen::<f64>().powf(sharpness) + 1e-3)
                    .collect();
                let total: f64 = w.iter().sum();
                w.into_iter().map(|x| x / total).collect()
            })
            .collect();
        Self::new(order, symbols, table, seed)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    pub fn table(&self) -> &[Vec<f64>] {
        &self.table
    }

    pub fn entropy_rate(&self) -> f64 {
        self.lifted.entropy_rate()
    }

    pub fn generate(&self, length: usize) -> Result<TokenStream> {
        if length == 0 {
            return Err(Error::Empty("generate_markov"));
        }
        let contexts = self.lifted.generate(length.saturating_sub(self.order) + 1)?;
        let mut tokens = Vec::with_capacity(length);
        let first = contexts.tokens[0];
        for pos in (0..self.order).rev() {
            tokens.push((first / self.symbols.pow(pos as u32)) % self.symbols);
        }
        tokens.extend(contexts.tokens[1..].iter().map(|c| c % self.symbols));
        tokens.truncate(length);
        Ok(TokenStream::new(
            tokens,
            format!(
                "markov:order={}:k={}:seed={}",
                self.order,
                self.symbols,
                self.lifted.seed()
            ),
        ))
    }
}

fn validate_stochastic(p: &[Vec<f64>]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidStochasticMatrix("zero states".into()));
    }
    validate_rows(p, p.len())
}

fn validate_rows(p: &[Vec<f64>], width: usize) -> Result<()> {
    for (i, row) in p.iter().enumerate() {
        if row.len() != width {
            return Err(Error::InvalidStochasticMatrix(format!(
                "row {i} has {} entries, expected {width}",
                row.len()
            )));
        }
        if let Some(j) = row.iter().position(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidStochasticMatrix(format!(
                "entry ({i},{j}) = {} is not a probability",
                row[j]
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::InvalidStochasticMatrix(format!(
                "row {i} sums to {sum}"
            )));
        }
    }
    Ok(())
}

/// Power iteration on the lazy chain `(P + I) / 2`, which shares the
/// stationary distributions of `P` but is aperiodic. Starts from uniform.
fn stationary_distribution(p: &[Vec<f64>]) -> Vec<f64> {
    let k = p.len();
    let mut pi = vec![1.0 / k as f64; k];
    let mut next = vec![0.0; k];
    for _ in 0..1_000_000 {
        next.iter_mut().zip(&pi).for_each(|(n, &x)| *n = 0.5 * x);
        for (i, row) in p.iter().enumerate() {
            let w = 0.5 * pi[i];
            for (n, &pij) in next.iter_mut().zip(row) {
                *n += w * pij;
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        let delta = pi
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut pi, &mut next);
        if delta < 1e-15 {
            break;
        }
    }
    pi
}

fn sample(weights: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // rounding left u beyond the cumulative sum; fall back to the last positive entry
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Field layout of a corpus TSV file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TsvSchema {
    /// One field per line: the output stream of a prediction task.
    Single,
    /// `input<TAB>output`.
    Pair,
}

impl TsvSchema {
    pub fn fields(self) -> usize {
        match self {
            TsvSchema::Single => 1,
            TsvSchema::Pair => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TsvRecord {
    /// 1-based line number in the source file.
    pub line: usize,
    pub input: Vec<String>,
    pub output: Vec<String>,
}

/// Reads a corpus file. Blank lines are skipped; any other line must have
/// exactly the schema's number of tab-separated fields.
pub fn load_tsv(path: impl AsRef<Path>, schema: TsvSchema) -> Result<Vec<TsvRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        records.push(parse_tsv_line(line, schema).map_err(|message| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message,
        })?);
        records.last_mut().unwrap().line = i + 1;
    }
    Ok(records)
}

fn parse_tsv_line(line: &str, schema: TsvSchema) -> std::result::Result<TsvRecord, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != schema.fields() {
        return Err(format!(
            "expected {} tab-separated field(s), found {}",
            schema.fields(),
            fields.len()
        ));
    }
    let (input, output) = match schema {
        TsvSchema::Single => (Vec::new(), tokenize(fields[0])),
        TsvSchema::Pair => (tokenize(fields[0]), tokenize(fields[1])),
    };
    Ok(TsvRecord {
        line: 0,
        input,
        output,
    })
}
