//! Corpus ingestion and preprocessing.
//!
//! Raw (text, code) pairs are read from line-delimited JSON, filtered to
//! pure-ASCII pairs, and tokenized with an identifier-aware splitter. The
//! DGMS variant re-splits a corpus using docstrings extracted from the code
//! as queries.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" | "dev" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::data(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Code,
}

/// A linked (text, code) pair as read from disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPair {
    pub id: String,
    pub text: String,
    pub code: String,
    pub split: Split,
}

/// A pair after preprocessing. Tokens are non-empty and `[A-Za-z0-9]+`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedPair {
    pub id: String,
    pub split: Split,
    pub text_tokens: Vec<String>,
    pub code_tokens: Vec<String>,
}

impl TokenizedPair {
    pub fn tokens(&self, modality: Modality) -> &[String] {
        match modality {
            Modality::Text => &self.text_tokens,
            Modality::Code => &self.code_tokens,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetSplits {
    pub train: Vec<TokenizedPair>,
    pub valid: Vec<TokenizedPair>,
    pub test: Vec<TokenizedPair>,
}

impl DatasetSplits {
    /// Distributes pairs by their `split` field, keeping input order.
    pub fn from_pairs(pairs: impl IntoIterator<Item = TokenizedPair>) -> Self {
        let mut splits = DatasetSplits::default();
        for pair in pairs {
            splits.get_mut(pair.split).push(pair);
        }
        splits
    }

    pub fn get(&self, split: Split) -> &[TokenizedPair] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn get_mut(&mut self, split: Split) -> &mut Vec<TokenizedPair> {
        match split {
            Split::Train => &mut self.train,
            Split::Valid => &mut self.valid,
            Split::Test => &mut self.test,
        }
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.valid.len(), self.test.len()]
    }

    pub fn iter(&self) -> impl Iterator<Item = &TokenizedPair> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }

    /// Checks that ids are unique across all three splits.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for pair in self.iter() {
            if !seen.insert(pair.id.as_str()) {
                return Err(Error::data(format!("duplicate pair id {:?}", pair.id)));
            }
        }
        Ok(())
    }
}

/// Token frequency statistics per modality.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusStats {
    pub text_counts: HashMap<String, u64>,
    pub code_counts: HashMap<String, u64>,
    pub pair_count: usize,
}

impl CorpusStats {
    pub fn compute<'a>(pairs: impl IntoIterator<Item = &'a TokenizedPair>) -> Self {
        let mut stats = CorpusStats::default();
        for pair in pairs {
            stats.pair_count += 1;
            for tok in &pair.text_tokens {
                *stats.text_counts.entry(tok.clone()).or_insert(0) += 1;
            }
            for tok in &pair.code_tokens {
                *stats.code_counts.entry(tok.clone()).or_insert(0) += 1;
            }
        }
        stats
    }

    pub fn counts(&self, modality: Modality) -> &HashMap<String, u64> {
        match modality {
            Modality::Text => &self.text_counts,
            Modality::Code => &self.code_counts,
        }
    }

    pub fn vocab_size(&self, modality: Modality) -> usize {
        self.counts(modality).len()
    }
}

// ---------------------------------------------------------------------------
// Loading

/// Maps JSON object keys onto pair fields.
///
/// When a configured key is missing from a line, the built-in aliases for
/// the public corpus layout are tried before the line is rejected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldMap {
    pub text: String,
    pub code: String,
    pub id: String,
    pub split: String,
}

impl Default for FieldMap {
    fn default() -> Self {
        FieldMap { text: "text".into(), code: "code".into(), id: "id".into(), split: "split".into() }
    }
}

const TEXT_ALIASES: &[&str] = &["docstring"];
const CODE_ALIASES: &[&str] = &["code"];
const ID_ALIASES: &[&str] = &["url", "func_name"];
const SPLIT_ALIASES: &[&str] = &["partition"];

impl FieldMap {
    /// Field names used by the CodeSearchNet and AdvTest releases.
    pub fn codesearchnet() -> Self {
        FieldMap { text: "docstring".into(), code: "code".into(), id: "url".into(), split: "partition".into() }
    }
}

fn lookup_str<'a>(obj: &'a serde_json::Map<String, Value>, key: &str, aliases: &[&str]) -> Option<&'a str> {
    std::iter::once(key).chain(aliases.iter().copied()).find_map(|k| obj.get(k).and_then(Value::as_str))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub lines: usize,
    pub loaded: usize,
    pub skipped: usize,
    /// 1-based line numbers of the first skipped lines (capped).
    pub skipped_lines: Vec<usize>,
}

const MAX_RECORDED_SKIPS: usize = 32;

impl LoadReport {
    fn record_skip(&mut self, line_no: usize) {
        self.skipped += 1;
        if self.skipped_lines.len() < MAX_RECORDED_SKIPS {
            self.skipped_lines.push(line_no);
        }
    }

    pub fn merge(&mut self, other: &LoadReport) {
        self.lines += other.lines;
        self.loaded += other.loaded;
        self.skipped += other.skipped;
        for &l in &other.skipped_lines {
            if self.skipped_lines.len() < MAX_RECORDED_SKIPS {
                self.skipped_lines.push(l);
            }
        }
    }
}

/// Streaming reader yielding one [`RawPair`] per well-formed line.
///
/// Malformed lines are skipped and counted in [`PairReader::report`]; read
/// errors from the underlying source end the stream with an error item.
pub struct PairReader<R> {
    lines: std::io::Lines<R>,
    fields: FieldMap,
    default_split: Split,
    label: String,
    line_no: usize,
    report: LoadReport,
}

impl<R: BufRead> PairReader<R> {
    pub fn new(reader: R, fields: FieldMap, default_split: Split, label: impl Into<String>) -> Self {
        PairReader {
            lines: reader.lines(),
            fields,
            default_split,
            label: label.into(),
            line_no: 0,
            report: LoadReport::default(),
        }
    }

    pub fn report(&self) -> &LoadReport {
        &self.report
    }

    fn parse(&self, line: &str) -> Option<RawPair> {
        let value: Value = serde_json::from_str(line).ok()?;
        let obj = value.as_object()?;
        let text = lookup_str(obj, &self.fields.text, TEXT_ALIASES)?;
        let code = lookup_str(obj, &self.fields.code, CODE_ALIASES)?;
        let id = lookup_str(obj, &self.fields.id, ID_ALIASES)
            .map(str::to_owned)
            .unwrap_or_else(|| format!("{}:{}", self.label, self.line_no));
        let split = match lookup_str(obj, &self.fields.split, SPLIT_ALIASES) {
            Some(s) => s.parse().ok()?,
            None => self.default_split,
        };
        Some(RawPair { id, text: text.to_owned(), code: code.to_owned(), split })
    }
}

impl<R: BufRead> Iterator for PairReader<R> {
    type Item = Result<RawPair>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            self.report.lines += 1;
            match self.parse(&line) {
                Some(pair) => {
                    self.report.loaded += 1;
                    return Some(Ok(pair));
                }
                None => {
                    log::debug!("{}:{}: skipping malformed line", self.label, self.line_no);
                    self.report.record_skip(self.line_no);
                }
            }
        }
    }
}

/// Reads every pair in a JSONL file.
pub fn load_pairs(path: &Path, fields: &FieldMap, default_split: Split) -> Result<(Vec<RawPair>, LoadReport)> {
    let file =
        File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let label = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let mut reader = PairReader::new(BufReader::new(file), fields.clone(), default_split, label);
    let pairs = reader.by_ref().collect::<Result<Vec<_>>>()?;
    Ok((pairs, reader.report().clone()))
}

/// Writes preprocessed pairs as JSONL (`id`, `split`, `text_tokens`, `code_tokens`).
pub fn write_tokenized(path: &Path, pairs: &[TokenizedPair]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for pair in pairs {
        serde_json::to_writer(&mut out, pair)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_tokenized(path: &Path) -> Result<Vec<TokenizedPair>> {
    let file =
        File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let mut pairs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: TokenizedPair =
            serde_json::from_str(&line).map_err(|e| Error::data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        pairs.push(pair);
    }
    Ok(pairs)
}

// ---------------------------------------------------------------------------
// Preprocessing

/// True when both sides of the pair are pure 7-bit ASCII.
pub fn ascii_filter(pair: &RawPair) -> bool {
    pair.text.is_ascii() && pair.code.is_ascii()
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum CharClass {
    Upper,
    Lower,
    Digit,
    Other,
}

fn classify(c: char) -> CharClass {
    if c.is_ascii_uppercase() {
        CharClass::Upper
    } else if c.is_ascii_lowercase() {
        CharClass::Lower
    } else if c.is_ascii_digit() {
        CharClass::Digit
    } else {
        CharClass::Other
    }
}

/// Splits an identifier into its component words.
///
/// Breaks on underscores, lower→upper transitions, letter↔digit transitions,
/// and before the last capital of an uppercase run that is followed by a
/// lowercase letter (`HTTPServer` → `HTTP`, `Server`). Case is preserved.
pub fn split_identifier(token: &str) -> Vec<String> {
    let chars: Vec<char> = token.chars().collect();
    let mut parts = Vec::new();
    let mut current = String::new();

    for (i, &c) in chars.iter().enumerate() {
        let cls = classify(c);
        if c == '_' || cls == CharClass::Other {
            if !current.is_empty() {
                parts.push(std::mem::take(&mut current));
            }
            continue;
        }
        if let Some(&prev) = current.chars().last().as_ref() {
            let prev_cls = classify(prev);
            let next_cls = chars.get(i + 1).copied().map(classify);
            let boundary = match (prev_cls, cls) {
                (CharClass::Lower, CharClass::Upper) => true,
                (CharClass::Upper | CharClass::Lower, CharClass::Digit) => true,
                (CharClass::Digit, CharClass::Upper | CharClass::Lower) => true,
                (CharClass::Upper, CharClass::Upper) => next_cls == Some(CharClass::Lower),
                _ => false,
            };
            if boundary {
                parts.push(std::mem::take(&mut current));
            }
        }
        current.push(c);
    }
    if !current.is_empty() {
        parts.push(current);
    }
    parts
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessOptions {
    /// Lowercase every token after splitting. Off by default.
    pub lowercase: bool,
}

/// Tokenizes a raw string: symbols become spaces, identifiers are split.
pub fn preprocess(raw: &str) -> Vec<String> {
    preprocess_with(raw, PreprocessOptions::default())
}

pub fn preprocess_with(raw: &str, opts: PreprocessOptions) -> Vec<String> {
    let cleaned: String = raw.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { ' ' }).collect();
    cleaned
        .split_whitespace()
        .flat_map(split_identifier)
        .filter(|t| !t.is_empty())
        .map(|t| if opts.lowercase { t.to_ascii_lowercase() } else { t })
        .collect()
}

pub fn tokenize_pair(pair: &RawPair, opts: PreprocessOptions) -> TokenizedPair {
    TokenizedPair {
        id: pair.id.clone(),
        split: pair.split,
        text_tokens: preprocess_with(&pair.text, opts),
        code_tokens: preprocess_with(&pair.code, opts),
    }
}

/// Applies the ASCII filter and tokenizes the survivors, preserving order.
/// Returns the kept pairs and the number dropped.
pub fn preprocess_pairs(pairs: &[RawPair], opts: PreprocessOptions) -> (Vec<TokenizedPair>, usize) {
    let mut kept = Vec::with_capacity(pairs.len());
    let mut dropped = 0;
    for pair in pairs {
        if ascii_filter(pair) {
            kept.push(tokenize_pair(pair, opts));
        } else {
            dropped += 1;
        }
    }
    (kept, dropped)
}

// ---------------------------------------------------------------------------
// DGMS variant

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractedDocstring {
    pub docstring: String,
    /// The code with the docstring literal removed.
    pub code: String,
}

/// Finds the first triple-quoted literal after the first line ending in `:`.
///
/// When the literal sits alone on its line the whole line is removed from the
/// returned code; otherwise only the literal is cut out. An unterminated
/// literal counts as no docstring.
pub fn dgms_extract_docstring(code: &str) -> Option<ExtractedDocstring> {
    let mut offset = 0;
    let mut body_start = None;
    for line in code.split_inclusive('\n') {
        offset += line.len();
        if line.trim_end().ends_with(':') {
            body_start = Some(offset);
            break;
        }
    }
    let body_start = body_start?;
    let rest = &code[body_start..];

    let (open_rel, delim) =
        ["\"\"\"", "'''"].iter().filter_map(|d| rest.find(d).map(|p| (p, *d))).min_by_key(|&(p, _)| p)?;
    let open = body_start + open_rel;
    let content_start = open + 3;
    let close = content_start + code[content_start..].find(delim)?;
    let literal_end = close + 3;
    let docstring = code[content_start..close].to_owned();

    let line_start = code[..open].rfind('\n').map_or(0, |p| p + 1);
    let line_end = code[literal_end..].find('\n').map_or(code.len(), |p| literal_end + p);
    let alone = code[line_start..open].trim().is_empty() && code[literal_end..line_end].trim().is_empty();

    let stripped = if alone {
        if line_end < code.len() {
            format!("{}{}", &code[..line_start], &code[line_end + 1..])
        } else {
            // last line: drop the preceding newline instead
            let cut = line_start.saturating_sub(1);
            code[..cut].to_owned()
        }
    } else {
        format!("{}{}", &code[..open], &code[literal_end..])
    };
    Some(ExtractedDocstring { docstring, code: stripped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgmsOptions {
    pub test_size: usize,
    pub train_fraction: f64,
    pub min_doc_words: usize,
    pub min_code_lines: usize,
    /// Remove the extracted docstring from the code side.
    pub excise_docstring: bool,
    pub preprocess: PreprocessOptions,
}

impl Default for DgmsOptions {
    fn default() -> Self {
        DgmsOptions {
            test_size: 1000,
            train_fraction: 0.8,
            min_doc_words: 3,
            min_code_lines: 3,
            excise_docstring: true,
            preprocess: PreprocessOptions::default(),
        }
    }
}

/// Builds the DGMS variant from pairs pooled across all original splits.
///
/// Survivors are shuffled with `seed`; the first `test_size` become the test
/// split, `train_fraction` of the remainder the training split, and the rest
/// validation.
pub fn dgms_build(pairs: &[RawPair], seed: u64, opts: &DgmsOptions) -> Result<DatasetSplits> {
    let mut survivors: Vec<RawPair> = pairs
        .iter()
        .filter(|p| ascii_filter(p))
        .filter_map(|p| {
            let extracted = dgms_extract_docstring(&p.code)?;
            if extracted.docstring.split_whitespace().count() < opts.min_doc_words {
                return None;
            }
            let code = if opts.excise_docstring { extracted.code } else { p.code.clone() };
            if code.lines().filter(|l| !l.trim().is_empty()).count() < opts.min_code_lines {
                return None;
            }
            Some(RawPair { id: p.id.clone(), text: extracted.docstring, code, split: p.split })
        })
        .collect();

    if survivors.len() <= opts.test_size {
        return Err(Error::config(format!(
            "DGMS construction needs more than {} surviving pairs, found {}",
            opts.test_size,
            survivors.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    survivors.shuffle(&mut rng);

    let remaining = survivors.len() - opts.test_size;
    let train_len = (remaining as f64 * opts.train_fraction).floor() as usize;
    for (i, pair) in survivors.iter_mut().enumerate() {
        pair.split = if i < opts.test_size {
            Split::Test
        } else if i < opts.test_size + train_len {
            Split::Train
        } else {
            Split::Valid
        };
    }
    let splits = DatasetSplits::from_pairs(survivors.iter().map(|p| tokenize_pair(p, opts.preprocess)));
    splits.validate()?;
    Ok(splits)
}

/// Top-`k` tokens by count, descending, ties broken lexicographically.
pub fn frequent_words(corpus: &[TokenizedPair], modality: Modality, k: usize) -> Vec<(String, u64)> {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for pair in corpus {
        for tok in pair.tokens(modality) {
            *counts.entry(tok.as_str()).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(String, u64)> = counts.into_iter().map(|(t, c)| (t.to_owned(), c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
    ranked
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Cursor;

    fn raw(text: &str, code: &str) -> RawPair {
        RawPair { id: "x".into(), text: text.into(), code: code.into(), split: Split::Train }
    }

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn reads_codesearchnet_fields() {
        let input = r#"{"docstring": "adds two ints", "code": "def add(a,b): return a+b"}"#;
        let mut reader = PairReader::new(Cursor::new(input), FieldMap::codesearchnet(), Split::Train, "f.jsonl");
        let pair = reader.next().unwrap().unwrap();
        assert_eq!(pair.text, "adds two ints");
        assert_eq!(pair.code, "def add(a,b): return a+b");
        assert_eq!(pair.id, "f.jsonl:1");
    }

    #[test]
    fn reads_default_fields_and_aliases() {
        let input = "{\"text\": \"x\", \"code\": \"y\"}\n{\"docstring\": \"d\", \"code\": \"c\", \"url\": \"u\"}\n";
        let reader = PairReader::new(Cursor::new(input), FieldMap::default(), Split::Test, "f");
        let pairs: Vec<_> = reader.map(|p| p.unwrap()).collect();
        assert_eq!((pairs[0].text.as_str(), pairs[0].code.as_str()), ("x", "y"));
        assert_eq!(pairs[1].id, "u");
        assert_eq!(pairs[1].split, Split::Test);
    }

    #[test]
    fn malformed_lines_are_counted() {
        let input = "{\"text\":\"a\",\"code\":\"b\"}\n{not json\n{\"text\":\"c\",\"code\":\"d\"}\n\n{\"text\":\"e\",\"code\":\"f\"}\n";
        let mut reader = PairReader::new(Cursor::new(input), FieldMap::default(), Split::Train, "f");
        let pairs: Vec<_> = reader.by_ref().map(|p| p.unwrap()).collect();
        assert_eq!(pairs.len(), 3);
        assert_eq!(reader.report().skipped, 1);
        assert_eq!(reader.report().skipped_lines, vec![2]);
        assert_eq!(pairs[2].id, "f:5");
    }

    #[test]
    fn ascii_filter_cases() {
        assert!(ascii_filter(&raw("hello", "print(1)")));
        assert!(!ascii_filter(&raw("héllo", "print(1)")));
        assert!(!ascii_filter(&raw("ok", "s = \"naïve\"")));
    }

    #[test]
    fn split_identifier_cases() {
        assert_eq!(split_identifier("tmp_file"), strings(&["tmp", "file"]));
        assert_eq!(split_identifier("TaskInstance"), strings(&["Task", "Instance"]));
        assert_eq!(split_identifier("HTTPServer2"), strings(&["HTTP", "Server", "2"]));
        assert_eq!(split_identifier("abc"), strings(&["abc"]));
        assert_eq!(split_identifier("__init__"), strings(&["init"]));
        assert_eq!(split_identifier("getX2Y"), strings(&["get", "X", "2", "Y"]));
    }

    #[test]
    fn preprocess_cases() {
        assert_eq!(
            preprocess("def has_task(self, task_instance):"),
            strings(&["def", "has", "task", "self", "task", "instance"])
        );
        assert!(preprocess("").is_empty());
        assert_eq!(preprocess("COPY {table} FROM STDIN"), strings(&["COPY", "table", "FROM", "STDIN"]));
        let lower = preprocess_with("HTTPServer", PreprocessOptions { lowercase: true });
        assert_eq!(lower, strings(&["http", "server"]));
    }

    #[test]
    fn docstring_extraction() {
        let got = dgms_extract_docstring("def f():\n  \"\"\"adds numbers\"\"\"\n  return 1").unwrap();
        assert_eq!(got.docstring, "adds numbers");
        assert_eq!(got.code, "def f():\n  return 1");

        assert_eq!(dgms_extract_docstring("def f():\n  return 1"), None);

        let got = dgms_extract_docstring("def f():\n  '''multi\n  line'''\n  pass").unwrap();
        assert_eq!(got.docstring, "multi\n  line");
        assert_eq!(got.code, "def f():\n  pass");

        assert_eq!(dgms_extract_docstring("def f():\n  \"\"\"never closed\n  pass"), None);
    }

    fn dgms_pair(i: usize, doc: &str) -> RawPair {
        RawPair {
            id: format!("p{i}"),
            text: String::new(),
            code: format!("def f{i}(a):\n    \"\"\"{doc}\"\"\"\n    b = a\n    c = b\n    return c"),
            split: Split::ALL[i % 3],
        }
    }

    #[test]
    fn dgms_split_sizes() {
        let pairs: Vec<_> = (0..5000).map(|i| dgms_pair(i, "returns the value")).collect();
        let splits = dgms_build(&pairs, 7, &DgmsOptions::default()).unwrap();
        assert_eq!(splits.sizes(), [3200, 800, 1000]);
        assert_eq!(splits.test[0].text_tokens, strings(&["returns", "the", "value"]));
    }

    #[test]
    fn dgms_filters_short_docstrings() {
        let mut pairs: Vec<_> = (0..1001).map(|i| dgms_pair(i, "returns the value")).collect();
        pairs.push(dgms_pair(9999, "two words"));
        let splits = dgms_build(&pairs, 1, &DgmsOptions::default()).unwrap();
        assert!(splits.iter().all(|p| p.id != "p9999"));
        assert_eq!(splits.iter().count(), 1001);
    }

    #[test]
    fn dgms_too_few_survivors() {
        let pairs: Vec<_> = (0..1000).map(|i| dgms_pair(i, "returns the value")).collect();
        assert!(matches!(dgms_build(&pairs, 1, &DgmsOptions::default()), Err(Error::Config(_))));
    }

    #[test]
    fn dgms_seed_determinism() {
        let pairs: Vec<_> = (0..1500).map(|i| dgms_pair(i, "returns the value")).collect();
        let a = dgms_build(&pairs, 3, &DgmsOptions::default()).unwrap();
        let b = dgms_build(&pairs, 3, &DgmsOptions::default()).unwrap();
        let c = dgms_build(&pairs, 4, &DgmsOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.sizes(), c.sizes());
        assert_ne!(a.test, c.test);
    }

    #[test]
    fn frequent_words_ranks_and_breaks_ties() {
        let pair = TokenizedPair {
            id: "a".into(),
            split: Split::Train,
            text_tokens: strings(&["the", "the", "to"]),
            code_tokens: strings(&["b", "a"]),
        };
        assert_eq!(
            frequent_words(std::slice::from_ref(&pair), Modality::Text, 2),
            vec![("the".to_string(), 2), ("to".to_string(), 1)]
        );
        assert_eq!(frequent_words(&[pair], Modality::Code, 5), vec![("a".to_string(), 1), ("b".to_string(), 1)]);
    }

    fn arb_pair() -> impl Strategy<Value = TokenizedPair> {
        (prop::collection::vec("[a-e]{1,2}", 0..8), prop::collection::vec("[a-e]{1,2}", 0..8))
            .prop_map(|(t, c)| TokenizedPair { id: String::new(), split: Split::Train, text_tokens: t, code_tokens: c })
    }

    proptest! {
        #[test]
        fn preprocess_emits_alnum_tokens(raw in "\\PC{0,60}") {
            for tok in preprocess(&raw) {
                prop_assert!(!tok.is_empty());
                prop_assert!(tok.chars().all(|c| c.is_ascii_alphanumeric()));
            }
        }

        #[test]
        fn split_identifier_is_idempotent(tok in "[A-Za-z0-9_]{1,24}") {
            for frag in split_identifier(&tok) {
                prop_assert_eq!(split_identifier(&frag), vec![frag.clone()]);
            }
        }

        #[test]
        fn frequent_words_matches_recount(corpus in prop::collection::vec(arb_pair(), 1..10)) {
            let top = frequent_words(&corpus, Modality::Code, usize::MAX);
            for (tok, count) in &top {
                let brute = corpus.iter().flat_map(|p| &p.code_tokens).filter(|t| *t == tok).count() as u64;
                prop_assert_eq!(*count, brute);
            }
            let distinct: HashSet<_> = corpus.iter().flat_map(|p| &p.code_tokens).collect();
            prop_assert_eq!(top.len(), distinct.len());
        }
    }
}
