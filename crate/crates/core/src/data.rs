//! Corpus and code-registry types, the on-disk formats, and frequency strata.
//!
//! A corpus is a line-delimited JSON stream, one clinical note per line:
//!
//! ```text
//! {"doc_id": "n1", "text": "...", "codes": ["I21.4"], "version": "V10", "split": "train"}
//! ```
//!
//! Code descriptions live in an adjacent tab-separated registry,
//! `version<TAB>code_id<TAB>description`, one code per line.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::tokenize;

/// Default occurrence count separating frequent from rare codes.
pub const DEFAULT_RARE_THRESHOLD: usize = 10;

/// Code-system version tag. `V9`/`V10` map to ICD-9/ICD-10; any other tag is
/// carried through untouched so registries of unseen versions still load.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Version {
    V9,
    V10,
    Other(String),
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Version::V9 => f.write_str("V9"),
            Version::V10 => f.write_str("V10"),
            Version::Other(s) => f.write_str(s),
        }
    }
}

impl FromStr for Version {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "" => Err("empty version tag".to_string()),
            "V9" | "v9" | "9" => Ok(Version::V9),
            "V10" | "v10" | "10" => Ok(Version::V10),
            other if other.contains(char::is_whitespace) => {
                Err(format!("version tag {other:?} contains whitespace"))
            }
            other => Ok(Version::Other(other.to_string())),
        }
    }
}

impl From<Version> for String {
    fn from(v: Version) -> Self {
        v.to_string()
    }
}

impl TryFrom<String> for Version {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "dev" | "valid" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// A code identified across the whole registry: code ids are only unique per version.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CodeKey {
    pub version: Version,
    pub code_id: String,
}

impl CodeKey {
    pub fn new(version: Version, code_id: impl Into<String>) -> Self {
        Self {
            version,
            code_id: code_id.into(),
        }
    }
}

impl fmt::Display for CodeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.version, self.code_id)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeEntry {
    pub code_id: String,
    pub version: Version,
    pub description: String,
    /// Tokenized description, before any length truncation.
    pub description_tokens: Vec<String>,
}

impl CodeEntry {
    pub fn new(version: Version, code_id: impl Into<String>, description: impl Into<String>) -> Self {
        let description = description.into();
        let description_tokens = tokenize(&description);
        Self {
            code_id: code_id.into(),
            version,
            description,
            description_tokens,
        }
    }

    pub fn key(&self) -> CodeKey {
        CodeKey::new(self.version.clone(), self.code_id.clone())
    }
}

/// One clinical note. Gold codes all belong to `version`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub tokens: Vec<String>,
    pub codes: BTreeSet<String>,
    pub version: Version,
    pub split: Split,
}

impl Document {
    pub fn gold_keys(&self) -> impl Iterator<Item = CodeKey> + '_ {
        self.codes
            .iter()
            .map(move |c| CodeKey::new(self.version.clone(), c.clone()))
    }
}

/// Registry of code descriptions, ordered by `(version, code_id)`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CodeRegistry {
    entries: Vec<CodeEntry>,
    index: BTreeMap<CodeKey, usize>,
}

impl CodeRegistry {
    /// Builds a registry, rejecting duplicate `(version, code_id)` pairs and empty descriptions.
    pub fn new(mut entries: Vec<CodeEntry>) -> Result<Self> {
        entries.sort_by(|a, b| (&a.version, &a.code_id).cmp(&(&b.version, &b.code_id)));
        let mut index = BTreeMap::new();
        for (i, e) in entries.iter().enumerate() {
            if e.description_tokens.is_empty() {
                return Err(Error::Config(format!(
                    "code {} has an empty description",
                    e.key()
                )));
            }
            if index.insert(e.key(), i).is_some() {
                return Err(Error::Config(format!("duplicate registry entry {}", e.key())));
            }
        }
        Ok(Self { entries, index })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[CodeEntry] {
        &self.entries
    }

    pub fn get(&self, key: &CodeKey) -> Option<&CodeEntry> {
        self.index.get(key).map(|&i| &self.entries[i])
    }

    pub fn contains(&self, key: &CodeKey) -> bool {
        self.index.contains_key(key)
    }

    /// All codes of one version, in registry order.
    pub fn codes_of(&self, version: &Version) -> Vec<CodeKey> {
        self.entries
            .iter()
            .filter(|e| &e.version == version)
            .map(CodeEntry::key)
            .collect()
    }

    pub fn versions(&self) -> BTreeSet<Version> {
        self.entries.iter().map(|e| e.version.clone()).collect()
    }

    /// Errors with every referenced code that has no description.
    pub fn check_covers(&self, documents: &[Document]) -> Result<()> {
        let missing: BTreeSet<String> = documents
            .iter()
            .flat_map(Document::gold_keys)
            .filter(|k| !self.contains(k))
            .map(|k| k.to_string())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::MissingDescriptions(missing.into_iter().collect()))
        }
    }
}

/// Field names of the corpus records, so exports with other naming can be read directly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSchema {
    pub doc_id: String,
    pub text: String,
    pub codes: String,
    pub version: String,
    pub split: String,
}

impl Default for DatasetSchema {
    fn default() -> Self {
        Self {
            doc_id: "doc_id".into(),
            text: "text".into(),
            codes: "codes".into(),
            version: "version".into(),
            split: "split".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub documents: Vec<Document>,
    pub registry: CodeRegistry,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&Document> {
        self.documents.iter().filter(|d| d.split == split).collect()
    }
}

fn malformed(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn str_field<'a>(
    obj: &'a serde_json::Map<String, serde_json::Value>,
    name: &str,
    path: &Path,
    line: usize,
) -> Result<&'a str> {
    obj.get(name)
        .and_then(|v| v.as_str())
        .ok_or_else(|| malformed(path, line, format!("missing string field {name:?}")))
}

/// Reads a corpus stream. Documents come back sorted by `doc_id`.
pub fn read_corpus(path: &Path, schema: &DatasetSchema) -> Result<Vec<Document>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| malformed(path, lineno, e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| malformed(path, lineno, "record is not an object"))?;
        let doc_id = str_field(obj, &schema.doc_id, path, lineno)?.to_string();
        let text = str_field(obj, &schema.text, path, lineno)?;
        let version: Version = str_field(obj, &schema.version, path, lineno)?
            .parse()
            .map_err(|e: String| malformed(path, lineno, e))?;
        let split: Split = str_field(obj, &schema.split, path, lineno)?
            .parse()
            .map_err(|e: String| malformed(path, lineno, e))?;
        let codes = obj
            .get(&schema.codes)
            .and_then(|v| v.as_array())
            .ok_or_else(|| malformed(path, lineno, format!("missing array field {:?}", schema.codes)))?
            .iter()
            .map(|c| {
                c.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| malformed(path, lineno, "code ids must be strings"))
            })
            .collect::<Result<BTreeSet<_>>>()?;
        if split == Split::Train && codes.is_empty() {
            return Err(malformed(path, lineno, "training document without gold codes"));
        }
        if !seen.insert(doc_id.clone()) {
            return Err(malformed(path, lineno, format!("duplicate doc_id {doc_id:?}")));
        }
        docs.push(Document {
            doc_id,
            tokens: tokenize(text),
            codes,
            version,
            split,
        });
    }
    docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    Ok(docs)
}

/// Reads a `version<TAB>code_id<TAB>description` registry.
pub fn read_registry(path: &Path) -> Result<CodeRegistry> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, '\t');
        let (Some(version), Some(code_id), Some(description)) =
            (parts.next(), parts.next(), parts.next())
        else {
            return Err(malformed(path, lineno, "expected version<TAB>code_id<TAB>description"));
        };
        let version: Version = version.parse().map_err(|e: String| malformed(path, lineno, e))?;
        let entry = CodeEntry::new(version, code_id.trim(), description.trim());
        if entry.description_tokens.is_empty() {
            return Err(malformed(path, lineno, format!("code {} has an empty description", entry.key())));
        }
        entries.push(entry);
    }
    CodeRegistry::new(entries).map_err(|e| match e {
        Error::Config(msg) => malformed(path, 0, msg),
        other => other,
    })
}

/// Loads a corpus and its registry, failing if any gold code lacks a description.
pub fn load_dataset(corpus: &Path, registry: &Path, schema: &DatasetSchema) -> Result<Dataset> {
    let documents = read_corpus(corpus, schema)?;
    let registry = read_registry(registry)?;
    registry.check_covers(&documents)?;
    Ok(Dataset {
        documents,
        registry,
    })
}

/// Loads several corpora that share one registry (mixed-version training).
pub fn load_sources(corpora: &[&Path], registry: &Path, schema: &DatasetSchema) -> Result<Dataset> {
    let registry = read_registry(registry)?;
    let mut documents = Vec::new();
    for path in corpora {
        documents.extend(read_corpus(path, schema)?);
    }
    documents.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    if let Some(w) = documents.windows(2).find(|w| w[0].doc_id == w[1].doc_id) {
        return Err(Error::Config(format!(
            "doc_id {:?} appears in more than one source",
            w[0].doc_id
        )));
    }
    registry.check_covers(&documents)?;
    Ok(Dataset {
        documents,
        registry,
    })
}

pub fn write_corpus(path: &Path, documents: &[Document]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for d in documents {
        let record = serde_json::json!({
            "doc_id": d.doc_id,
            "text": d.tokens.join(" "),
            "codes": d.codes,
            "version": d.version,
            "split": d.split,
        });
        writeln!(out, "{record}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_registry(path: &Path, registry: &CodeRegistry) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for e in registry.entries() {
        let description = e.description.replace(['\t', '\n'], " ");
        writeln!(out, "{}\t{}\t{}", e.version, e.code_id, description)
            .map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Frequent/rare partition of the codes seen in one database.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeStratum {
    pub threshold: usize,
    pub frequent: BTreeSet<String>,
    pub rare: BTreeSet<String>,
}

impl CodeStratum {
    pub fn full(&self) -> BTreeSet<String> {
        self.frequent.union(&self.rare).cloned().collect()
    }

    pub fn select(&self, which: StratumKind) -> BTreeSet<String> {
        match which {
            StratumKind::Frequent => self.frequent.clone(),
            StratumKind::Rare => self.rare.clone(),
            StratumKind::Full => self.full(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StratumKind {
    Frequent,
    Rare,
    Full,
}

impl FromStr for StratumKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "frequent" => Ok(StratumKind::Frequent),
            "rare" => Ok(StratumKind::Rare),
            "full" => Ok(StratumKind::Full),
            other => Err(format!("unknown stratum {other:?} (expected frequent, rare or full)")),
        }
    }
}

impl fmt::Display for StratumKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StratumKind::Frequent => "frequent",
            StratumKind::Rare => "rare",
            StratumKind::Full => "full",
        })
    }
}

/// Counts each code over every split and partitions at `threshold` (count ≥ threshold is frequent).
pub fn compute_strata<'a, I>(documents: I, threshold: usize) -> Result<CodeStratum>
where
    I: IntoIterator<Item = &'a Document>,
{
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut version: Option<&Version> = None;
    let mut any = false;
    for d in documents {
        any = true;
        match version {
            None => version = Some(&d.version),
            Some(v) if v != &d.version => {
                return Err(Error::Config(format!(
                    "strata must be computed per version, found {v} and {}",
                    d.version
                )))
            }
            _ => {}
        }
        for c in &d.codes {
            *counts.entry(c.as_str()).or_default() += 1;
        }
    }
    if !any {
        return Err(Error::Empty("cannot compute strata of an empty corpus".into()));
    }
    let mut stratum = CodeStratum {
        threshold,
        ..Default::default()
    };
    for (code, n) in counts {
        if n >= threshold {
            stratum.frequent.insert(code.to_string());
        } else {
            stratum.rare.insert(code.to_string());
        }
    }
    Ok(stratum)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratumStats {
    /// Notes with at least one code of the stratum.
    pub notes: usize,
    pub unique_codes: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub mean: f64,
    pub std: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Codes-per-note statistics after restricting each gold set to `codes`.
/// Notes left with no code are not counted.
pub fn stratum_stats<'a, I>(documents: I, codes: &BTreeSet<String>) -> Result<StratumStats>
where
    I: IntoIterator<Item = &'a Document>,
{
    let mut used = BTreeSet::new();
    let mut per_note: Vec<f64> = Vec::new();
    for d in documents {
        let n = d.codes.iter().filter(|c| codes.contains(*c)).inspect(|c| {
            used.insert((*c).clone());
        }).count();
        if n > 0 {
            per_note.push(n as f64);
        }
    }
    if per_note.is_empty() {
        return Err(Error::Empty("no note has a code in this stratum".into()));
    }
    per_note.sort_by(f64::total_cmp);
    let n = per_note.len() as f64;
    let mean = per_note.iter().sum::<f64>() / n;
    let var = per_note.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok(StratumStats {
        notes: per_note.len(),
        unique_codes: used.len(),
        median: quantile(&per_note, 0.5),
        q1: quantile(&per_note, 0.25),
        q3: quantile(&per_note, 0.75),
        mean,
        std: var.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, codes: &[&str], version: Version, split: Split) -> Document {
        Document {
            doc_id: id.into(),
            tokens: vec!["chest".into(), "pain".into()],
            codes: codes.iter().map(|c| c.to_string()).collect(),
            version,
            split,
        }
    }

    #[test]
    fn loads_minimal_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus.jsonl");
        let codes = dir.path().join("codes.tsv");
        std::fs::write(
            &corpus,
            concat!(
                r#"{"doc_id":"c","text":"Acute MI, type 2","codes":["I21.4"],"version":"V10","split":"test"}"#, "\n",
                r#"{"doc_id":"a","text":"chest pain","codes":["I21.4","R07.9"],"version":"V10","split":"train"}"#, "\n",
                r#"{"doc_id":"b","text":"pain","codes":["R07.9"],"version":"V10","split":"val"}"#, "\n",
            ),
        )
        .unwrap();
        std::fs::write(
            &codes,
            "V10\tI21.4\tNon-ST elevation myocardial infarction\nV10\tR07.9\tChest pain, unspecified\n",
        )
        .unwrap();
        let ds = load_dataset(&corpus, &codes, &DatasetSchema::default()).unwrap();
        assert_eq!(ds.documents.len(), 3);
        assert_eq!(ds.registry.len(), 2);
        let ids: Vec<_> = ds.documents.iter().map(|d| d.doc_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(ds.documents[2].tokens, ["acute", "mi", "type", "2"]);
        assert_eq!(ds.documents[1].split, Split::Val);
    }

    #[test]
    fn missing_description_names_the_code() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus.jsonl");
        let codes = dir.path().join("codes.tsv");
        std::fs::write(
            &corpus,
            r#"{"doc_id":"a","text":"x","codes":["A1","Z9"],"version":"V9","split":"train"}"#,
        )
        .unwrap();
        std::fs::write(&codes, "V9\tA1\tsomething\n").unwrap();
        let err = load_dataset(&corpus, &codes, &DatasetSchema::default()).unwrap_err();
        match err {
            Error::MissingDescriptions(list) => assert_eq!(list, ["V9:Z9"]),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_record_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus.jsonl");
        std::fs::write(
            &corpus,
            "{\"doc_id\":\"a\",\"text\":\"x\",\"codes\":[\"A\"],\"version\":\"V9\",\"split\":\"train\"}\n{not json\n",
        )
        .unwrap();
        let err = read_corpus(&corpus, &DatasetSchema::default()).unwrap_err();
        assert!(matches!(err, Error::Malformed { line: 2, .. }), "{err}");
    }

    #[test]
    fn custom_schema_field_names() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("c.jsonl");
        std::fs::write(
            &corpus,
            r#"{"note_id":"a","body":"x y","target":["A"],"icd_version":"10","fold":"train"}"#,
        )
        .unwrap();
        let schema = DatasetSchema {
            doc_id: "note_id".into(),
            text: "body".into(),
            codes: "target".into(),
            version: "icd_version".into(),
            split: "fold".into(),
        };
        let docs = read_corpus(&corpus, &schema).unwrap();
        assert_eq!(docs[0].version, Version::V10);
    }

    #[test]
    fn threshold_boundary_is_frequent() {
        let mut docs: Vec<_> = (0..10)
            .map(|i| doc(&format!("d{i}"), &["A"], Version::V10, Split::Train))
            .collect();
        docs.extend((0..9).map(|i| doc(&format!("e{i}"), &["B"], Version::V10, Split::Test)));
        let s = compute_strata(&docs, DEFAULT_RARE_THRESHOLD).unwrap();
        assert!(s.frequent.contains("A"));
        assert!(s.rare.contains("B"));
        assert_eq!(s.full().len(), 2);
    }

    #[test]
    fn strata_reject_empty_and_mixed() {
        assert!(matches!(compute_strata(&[], 10), Err(Error::Empty(_))));
        let docs = [
            doc("a", &["A"], Version::V9, Split::Train),
            doc("b", &["A"], Version::V10, Split::Train),
        ];
        assert!(compute_strata(&docs, 10).is_err());
    }

    #[test]
    fn single_note_stats() {
        let d = doc("a", &["A", "B", "C", "D", "E"], Version::V10, Split::Train);
        let all: BTreeSet<String> = d.codes.clone();
        let s = stratum_stats([&d], &all).unwrap();
        assert_eq!((s.median, s.mean, s.std, s.notes), (5.0, 5.0, 0.0, 1));
    }

    #[test]
    fn registry_rejects_duplicates() {
        let e = CodeEntry::new(Version::V9, "A", "desc");
        assert!(CodeRegistry::new(vec![e.clone(), e]).is_err());
    }

    #[test]
    fn version_tags_parse() {
        assert_eq!("V9".parse::<Version>().unwrap(), Version::V9);
        assert_eq!("V3".parse::<Version>().unwrap(), Version::Other("V3".into()));
        assert!("".parse::<Version>().is_err());
    }
}
