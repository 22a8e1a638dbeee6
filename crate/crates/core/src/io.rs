//! Corpus and checkpoint persistence: line-delimited trajectory records, a
//! vocabulary sidecar, metrics CSV export, and hash-verified run manifests.
//!
//! Corpus files hold one JSON record per line with the fixed field order
//! `{id, context, teacher_id, tokens, step_logprobs, corpus_step, meta}`;
//! tokens are integer indices into the sidecar vocabulary. Writes go to a
//! temp file and are atomically renamed, so readers never see partial files.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::core::Token;
use crate::error::{Error, Result};

/// One distillation instance: a teacher reasoning trajectory for a context.
///
/// The `meta` map absorbs free-form fields (e.g. teacher model name, label
/// list, report text for CXR-MAX-shaped records) without schema loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub id: String,
    pub context: Vec<Token>,
    pub teacher_id: String,
    pub tokens: Vec<Token>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_logprobs: Option<Vec<f64>>,
    #[serde(default)]
    pub corpus_step: i64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl TrajectoryRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.tokens.is_empty() {
            return Err("tokens must be non-empty".into());
        }
        if self.context.is_empty() {
            return Err("context must be non-empty".into());
        }
        if let Some(lp) = &self.step_logprobs {
            if lp.len() != self.tokens.len() {
                return Err(format!(
                    "step_logprobs length {} != tokens length {}",
                    lp.len(),
                    self.tokens.len()
                ));
            }
            if let Some(bad) = lp.iter().find(|x| !x.is_finite() || **x > 0.0) {
                return Err(format!("step_logprob {bad} is positive or non-finite"));
            }
        }
        Ok(())
    }
}

/// Read a line-delimited corpus, preserving file order and unknown meta
/// fields verbatim.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<TrajectoryRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TrajectoryRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
        record.validate().map_err(|message| Error::Schema {
            path: path.display().to_string(),
            line: i + 1,
            message,
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Write a corpus with deterministic field order and newline-terminated
/// lines. Round-trips byte-identically through `read_corpus`.
pub fn write_corpus(records: &[TrajectoryRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    for record in records {
        serde_json::to_writer(&mut buf, record)?;
        buf.push(b'\n');
    }
    atomic_write(path.as_ref(), &buf)
}

/// One flat metrics row: string keys to scalar values.
pub type MetricRow = BTreeMap<String, MetricValue>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricValue {
    Int(i64),
    Float(f64),
    Text(String),
    Bool(bool),
}

impl std::fmt::Display for MetricValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MetricValue::Int(v) => write!(f, "{v}"),
            MetricValue::Float(v) => write!(f, "{v}"),
            MetricValue::Text(v) => write!(f, "{v}"),
            MetricValue::Bool(v) => write!(f, "{v}"),
        }
    }
}

impl From<f64> for MetricValue {
    fn from(v: f64) -> Self {
        MetricValue::Float(v)
    }
}
impl From<i64> for MetricValue {
    fn from(v: i64) -> Self {
        MetricValue::Int(v)
    }
}
impl From<&str> for MetricValue {
    fn from(v: &str) -> Self {
        MetricValue::Text(v.to_string())
    }
}
impl From<String> for MetricValue {
    fn from(v: String) -> Self {
        MetricValue::Text(v)
    }
}
impl From<bool> for MetricValue {
    fn from(v: bool) -> Self {
        MetricValue::Bool(v)
    }
}

/// Render metric rows as CSV bytes with a lexicographically sorted header.
/// All rows must share one key set.
pub fn render_metrics(rows: &[MetricRow]) -> Result<Vec<u8>> {
    let keys: Vec<String> = match rows.first() {
        Some(row) => row.keys().cloned().collect(),
        None => Vec::new(),
    };
    for (i, row) in rows.iter().enumerate() {
        let actual: Vec<String> = row.keys().cloned().collect();
        if actual != keys {
            return Err(Error::HeterogeneousRows {
                row: i,
                expected: keys,
                actual,
            });
        }
    }
    if keys.is_empty() {
        return Ok(b"\n".to_vec());
    }
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(&keys)?;
    for row in rows {
        // BTreeMap iteration follows the sorted header order.
        writer.write_record(row.values().map(|v| v.to_string()))?;
    }
    writer
        .into_inner()
        .map_err(|e| Error::io("<memory>", std::io::Error::other(e)))
}

/// Export metric rows as a CSV file; see `render_metrics`.
pub fn export_metrics(rows: &[MetricRow], path: impl AsRef<Path>) -> Result<()> {
    let buf = render_metrics(rows)?;
    atomic_write(path.as_ref(), &buf)
}

/// Provenance for one run: seed, config snapshot, and content hashes for
/// every stage artifact. Hashes are re-verified on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub config: serde_json::Value,
    pub artifacts: BTreeMap<String, ArtifactRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub path: String,
    pub sha256: String,
}

impl RunManifest {
    pub fn new(seed: u64, config: serde_json::Value) -> Self {
        RunManifest {
            seed,
            config,
            artifacts: BTreeMap::new(),
        }
    }

    /// Hash a file and record it under `name`.
    pub fn record_artifact(&mut self, name: &str, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        self.artifacts.insert(
            name.to_string(),
            ArtifactRef {
                path: path.display().to_string(),
                sha256: hex::encode(Sha256::digest(&bytes)),
            },
        );
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = serde_json::to_vec_pretty(self)?;
        buf.push(b'\n');
        atomic_write(path.as_ref(), &buf)
    }

    /// Load a manifest and verify every referenced artifact's hash.
    pub fn load_verified(path: impl AsRef<Path>) -> Result<RunManifest> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let manifest: RunManifest = serde_json::from_slice(&bytes)?;
        for (name, artifact) in &manifest.artifacts {
            let data = fs::read(&artifact.path)
                .map_err(|e| Error::io(artifact.path.clone(), e))?;
            let actual = hex::encode(Sha256::digest(&data));
            if actual != artifact.sha256 {
                return Err(Error::HashMismatch {
                    name: name.clone(),
                    path: artifact.path.clone(),
                    expected: artifact.sha256.clone(),
                    actual,
                });
            }
        }
        Ok(manifest)
    }
}

/// Write via temp file + atomic rename in the destination directory.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact")
    ));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(tmp.display().to_string(), e))?;
        f.write_all(bytes)
            .map_err(|e| Error::io(tmp.display().to_string(), e))?;
        f.sync_all().ok();
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = serde_json::to_vec_pretty(value)?;
    buf.push(b'\n');
    atomic_write(path.as_ref(), &buf)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn record(id: &str) -> TrajectoryRecord {
        TrajectoryRecord {
            id: id.into(),
            context: vec![3],
            teacher_id: "0".into(),
            tokens: vec![0, 1, 2],
            step_logprobs: Some(vec![-0.1, -0.5, -1.0]),
            corpus_step: 4,
            meta: BTreeMap::new(),
        }
    }

    #[test]
    fn empty_file_reads_as_empty_corpus() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        fs::write(&path, "").unwrap();
        assert!(read_corpus(&path).unwrap().is_empty());
    }

    #[test]
    fn corpus_round_trips_structurally_and_bytewise() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let records = vec![record("a"), record("b")];
        write_corpus(&records, &path).unwrap();
        let back = read_corpus(&path).unwrap();
        assert_eq!(back, records);
        let first = fs::read(&path).unwrap();
        let path2 = dir.path().join("corpus2.jsonl");
        write_corpus(&back, &path2).unwrap();
        assert_eq!(first, fs::read(&path2).unwrap());
    }

    #[test]
    fn logprob_length_mismatch_is_a_schema_error_with_line() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let mut bad = record("x");
        bad.step_logprobs = Some(vec![-0.1]);
        let good = serde_json::to_string(&record("ok")).unwrap();
        let badline = serde_json::to_string(&bad).unwrap();
        fs::write(&path, format!("{good}\n{badline}\n")).unwrap();
        match read_corpus(&path).unwrap_err() {
            Error::Schema { line, .. } => assert_eq!(line, 2),
            other => panic!("expected schema error, got {other}"),
        }
    }

    #[test]
    fn malformed_json_is_a_parse_error_with_line() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        fs::write(&path, "{not json\n").unwrap();
        match read_corpus(&path).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn unknown_meta_fields_survive_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let mut rec = record("cxr");
        rec.meta.insert("teacher_model".into(), "gpt-5".into());
        rec.meta.insert(
            "report".into(),
            "Findings: unchanged moderate atelectasis, \"quoted\", line\nbreak".into(),
        );
        rec.meta.insert("labels".into(), "Atelectasis;Pleural Effusion".into());
        write_corpus(&[rec.clone()], &path).unwrap();
        assert_eq!(read_corpus(&path).unwrap(), vec![rec]);
    }

    #[test]
    fn export_metrics_header_only_and_sorted_keys() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.csv");
        export_metrics(&[], &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "\n");

        let mut row = MetricRow::new();
        row.insert("zeta".into(), 1.5.into());
        row.insert("alpha".into(), "x,y".into());
        row.insert("mid".into(), 3i64.into());
        export_metrics(&[row], &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "alpha,mid,zeta\n\"x,y\",3,1.5\n");
    }

    #[test]
    fn export_metrics_rejects_heterogeneous_rows() {
        let mut a = MetricRow::new();
        a.insert("k".into(), 1i64.into());
        let mut b = MetricRow::new();
        b.insert("other".into(), 2i64.into());
        let dir = tempdir().unwrap();
        let err = export_metrics(&[a, b], dir.path().join("m.csv")).unwrap_err();
        assert!(matches!(err, Error::HeterogeneousRows { row: 1, .. }));
    }

    #[test]
    fn metrics_round_trip_through_generic_csv_reader() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let mut row = MetricRow::new();
        row.insert("name".into(), "has \"quotes\" and, commas".into());
        row.insert("value".into(), 0.25.into());
        export_metrics(&[row], &path).unwrap();
        let mut reader = csv::Reader::from_path(&path).unwrap();
        let rec = reader.records().next().unwrap().unwrap();
        assert_eq!(&rec[0], "has \"quotes\" and, commas");
        assert_eq!(&rec[1], "0.25");
    }

    #[test]
    fn manifest_detects_single_byte_corruption() {
        let dir = tempdir().unwrap();
        let artifact = dir.path().join("blob.bin");
        fs::write(&artifact, b"payload-bytes").unwrap();
        let mut manifest = RunManifest::new(1, serde_json::json!({}));
        manifest.record_artifact("blob", &artifact).unwrap();
        let mpath = dir.path().join("manifest.json");
        manifest.save(&mpath).unwrap();
        assert!(RunManifest::load_verified(&mpath).is_ok());

        let mut bytes = fs::read(&artifact).unwrap();
        bytes[4] ^= 0x01;
        fs::write(&artifact, &bytes).unwrap();
        assert!(matches!(
            RunManifest::load_verified(&mpath).unwrap_err(),
            Error::HashMismatch { .. }
        ));
    }
}
