//! Answer traces, feature sets and their file formats.
//!
//! Both files are UTF-8 JSON written in canonical form: keys in declaration
//! order, no insignificant whitespace, floats as shortest round-trip
//! decimals. Loading validates every invariant and rejects rather than
//! repairs; schema errors name the offending record and field.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u64 = 1;

/// Dense per-question index of a canonical answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnswerId(pub u32);

impl AnswerId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for AnswerId {
    fn from(v: usize) -> Self {
        AnswerId(v as u32)
    }
}

/// Decoding hyperparameters the traces were recorded under. Metadata only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub top_k: u32,
    pub top_p: f64,
    pub temperature: f64,
    pub model_name: String,
    pub seed: i64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            top_k: 20,
            top_p: 0.95,
            temperature: 0.6,
            model_name: "synthetic".to_string(),
            seed: 0,
        }
    }
}

/// One question's recorded draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionTrace {
    pub question_id: String,
    /// `None` when the gold answer was never sampled.
    pub gold: Option<AnswerId>,
    pub draws: Vec<AnswerId>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub confidences: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub difficulty: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub answer_labels: Option<BTreeMap<u32, String>>,
}

impl QuestionTrace {
    /// Builds a trace with only the required columns and validates it.
    pub fn new(question_id: impl Into<String>, gold: Option<AnswerId>, draws: Vec<AnswerId>) -> Result<Self> {
        let t = QuestionTrace {
            question_id: question_id.into(),
            gold,
            draws,
            confidences: None,
            difficulty: None,
            answer_labels: None,
        };
        t.validate()?;
        Ok(t)
    }

    /// Convenience constructor from raw indices.
    pub fn from_indices(question_id: impl Into<String>, gold: Option<usize>, draws: &[usize]) -> Result<Self> {
        Self::new(
            question_id,
            gold.map(AnswerId::from),
            draws.iter().map(|&d| AnswerId::from(d)).collect(),
        )
    }

    pub fn n_max(&self) -> usize {
        self.draws.len()
    }

    /// Number of distinct answers (ids are dense in `[0, m)`).
    pub fn num_answers(&self) -> usize {
        self.draws.iter().map(|a| a.index() + 1).max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let rec = || format!("trace `{}`", self.question_id);
        if self.draws.is_empty() {
            return Err(Error::schema(rec(), "draws", "must contain at least one draw"));
        }
        let m = self.num_answers();
        let mut seen = vec![false; m];
        for a in &self.draws {
            seen[a.index()] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::schema(
                rec(),
                "draws",
                format!("answer ids must be dense in [0, {m}); id {missing} never occurs"),
            ));
        }
        if let Some(g) = self.gold {
            if g.index() >= m {
                return Err(Error::schema(
                    rec(),
                    "gold",
                    format!("gold id {} is not among the sampled answers; use null", g.0),
                ));
            }
        }
        if let Some(c) = &self.confidences {
            if c.len() != self.draws.len() {
                return Err(Error::schema(
                    rec(),
                    "confidences",
                    format!("length {} differs from draws length {}", c.len(), self.draws.len()),
                ));
            }
            if let Some(bad) = c.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::schema(rec(), "confidences", format!("value {bad} outside [0, 1]")));
            }
        }
        if let Some(d) = self.difficulty {
            if !d.is_finite() {
                return Err(Error::schema(rec(), "difficulty", "must be finite"));
            }
        }
        if let Some(labels) = &self.answer_labels {
            if let Some(k) = labels.keys().find(|&&k| k as usize >= m) {
                return Err(Error::schema(rec(), "answer_labels", format!("key {k} is not an answer id")));
            }
        }
        Ok(())
    }
}

/// Per-answer draw counts; `c[j]` is the number of draws equal to `j`.
pub fn answer_counts(trace: &QuestionTrace) -> Vec<usize> {
    let mut counts = vec![0usize; trace.num_answers()];
    for a in &trace.draws {
        counts[a.index()] += 1;
    }
    counts
}

/// A set of traces sharing one `n_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceDataset {
    pub format_version: u64,
    pub n_max: usize,
    pub sampling_config: SamplingConfig,
    pub traces: Vec<QuestionTrace>,
}

impl TraceDataset {
    pub fn new(n_max: usize, sampling_config: SamplingConfig, traces: Vec<QuestionTrace>) -> Result<Self> {
        let ds = TraceDataset {
            format_version: FORMAT_VERSION,
            n_max,
            sampling_config,
            traces,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::schema(
                "envelope",
                "format_version",
                format!("unsupported version {}", self.format_version),
            ));
        }
        if self.n_max == 0 {
            return Err(Error::schema("envelope", "n_max", "must be positive"));
        }
        validate_sampling_config(&self.sampling_config)?;
        let mut ids = HashSet::with_capacity(self.traces.len());
        for t in &self.traces {
            if t.draws.len() != self.n_max {
                return Err(Error::schema(
                    format!("trace `{}`", t.question_id),
                    "draws",
                    format!("has {} draws but n_max is {}", t.draws.len(), self.n_max),
                ));
            }
            t.validate()?;
            if !ids.insert(t.question_id.as_str()) {
                return Err(Error::schema(
                    format!("trace `{}`", t.question_id),
                    "question_id",
                    "duplicate question id",
                ));
            }
        }
        Ok(())
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("trace dataset serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let root: Value = serde_json::from_str(text)
            .map_err(|e| Error::schema("file", "<json>", e.to_string()))?;
        let obj = as_object(&root, "envelope", "<root>")?;
        check_keys(obj, "envelope", &["format_version", "n_max", "sampling_config", "traces"], &[])?;
        let format_version = get_u64(obj, "envelope", "format_version")?;
        let n_max = get_u64(obj, "envelope", "n_max")? as usize;
        let sampling_config = parse_sampling_config(obj)?;
        let records = obj
            .get("traces")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::schema("envelope", "traces", "expected an array"))?;
        let traces = records
            .iter()
            .enumerate()
            .map(|(i, v)| parse_trace(i, v))
            .collect::<Result<Vec<_>>>()?;
        let ds = TraceDataset {
            format_version,
            n_max,
            sampling_config,
            traces,
        };
        ds.validate()?;
        Ok(ds)
    }
}

fn validate_sampling_config(c: &SamplingConfig) -> Result<()> {
    let rec = "sampling_config";
    if c.top_k == 0 {
        return Err(Error::schema(rec, "top_k", "must be positive"));
    }
    if !(c.top_p > 0.0 && c.top_p <= 1.0) {
        return Err(Error::schema(rec, "top_p", "must lie in (0, 1]"));
    }
    if !(c.temperature > 0.0 && c.temperature.is_finite()) {
        return Err(Error::schema(rec, "temperature", "must be positive"));
    }
    Ok(())
}

fn as_object<'a>(v: &'a Value, record: &str, field: &str) -> Result<&'a Map<String, Value>> {
    v.as_object()
        .ok_or_else(|| Error::schema(record, field, "expected an object"))
}

fn check_keys(obj: &Map<String, Value>, record: &str, required: &[&str], optional: &[&str]) -> Result<()> {
    for key in required {
        if !obj.contains_key(*key) {
            return Err(Error::schema(record, *key, "missing"));
        }
    }
    for key in obj.keys() {
        if !required.contains(&key.as_str()) && !optional.contains(&key.as_str()) {
            return Err(Error::schema(record, key.as_str(), "unknown field"));
        }
    }
    Ok(())
}

fn get_u64(obj: &Map<String, Value>, record: &str, field: &str) -> Result<u64> {
    obj.get(field)
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::schema(record, field, "expected a non-negative integer"))
}

fn get_f64(v: &Value, record: &str, field: &str) -> Result<f64> {
    v.as_f64()
        .ok_or_else(|| Error::schema(record, field, "expected a number"))
}

fn parse_sampling_config(obj: &Map<String, Value>) -> Result<SamplingConfig> {
    let v = obj
        .get("sampling_config")
        .ok_or_else(|| Error::schema("envelope", "sampling_config", "missing"))?;
    SamplingConfig::deserialize(v).map_err(|e| Error::schema("envelope", "sampling_config", e.to_string()))
}

fn parse_trace(index: usize, v: &Value) -> Result<QuestionTrace> {
    let fallback = format!("trace #{index}");
    let obj = as_object(v, &fallback, "<record>")?;
    let question_id = obj
        .get("question_id")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::schema(fallback.clone(), "question_id", "expected a string"))?
        .to_string();
    let rec = format!("trace `{question_id}`");
    check_keys(
        obj,
        &rec,
        &["question_id", "gold", "draws"],
        &["confidences", "difficulty", "answer_labels"],
    )?;
    let gold = match &obj["gold"] {
        Value::Null => None,
        g => Some(AnswerId(
            g.as_u64()
                .filter(|&x| x <= u32::MAX as u64)
                .ok_or_else(|| Error::schema(rec.clone(), "gold", "expected a non-negative integer or null"))?
                as u32,
        )),
    };
    let draws = obj["draws"]
        .as_array()
        .ok_or_else(|| Error::schema(rec.clone(), "draws", "expected an array"))?
        .iter()
        .map(|d| {
            d.as_u64()
                .filter(|&x| x <= u32::MAX as u64)
                .map(|x| AnswerId(x as u32))
                .ok_or_else(|| Error::schema(rec.clone(), "draws", "expected non-negative integers"))
        })
        .collect::<Result<Vec<_>>>()?;
    let confidences = match obj.get("confidences") {
        None => None,
        Some(c) => Some(
            c.as_array()
                .ok_or_else(|| Error::schema(rec.clone(), "confidences", "expected an array"))?
                .iter()
                .map(|x| get_f64(x, &rec, "confidences"))
                .collect::<Result<Vec<_>>>()?,
        ),
    };
    let difficulty = match obj.get("difficulty") {
        None => None,
        Some(d) => Some(get_f64(d, &rec, "difficulty")?),
    };
    let answer_labels = match obj.get("answer_labels") {
        None => None,
        Some(l) => {
            let map = as_object(l, &rec, "answer_labels")?;
            let mut out = BTreeMap::new();
            for (k, v) in map {
                let key: u32 = k
                    .parse()
                    .map_err(|_| Error::schema(rec.clone(), "answer_labels", format!("key `{k}` is not an id")))?;
                let label = v
                    .as_str()
                    .ok_or_else(|| Error::schema(rec.clone(), "answer_labels", "expected string values"))?;
                out.insert(key, label.to_string());
            }
            Some(out)
        }
    };
    Ok(QuestionTrace {
        question_id,
        gold,
        draws,
        confidences,
        difficulty,
        answer_labels,
    })
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_traces(path: impl AsRef<Path>) -> Result<TraceDataset> {
    TraceDataset::from_json_str(&read_file(path.as_ref())?)
}

pub fn save_traces(dataset: &TraceDataset, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &dataset.to_canonical_json())
}

/// Last-token hidden states of one question, one vector per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFeatureSet {
    pub question_id: String,
    #[serde(rename = "vectors")]
    pub layer_vectors: Vec<Vec<f64>>,
    /// Normalized optimal budget `N*/N_max` when known.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub label: Option<f64>,
}

impl LayerFeatureSet {
    pub fn layers(&self) -> usize {
        self.layer_vectors.len()
    }

    pub fn dim(&self) -> usize {
        self.layer_vectors.first().map_or(0, Vec::len)
    }
}

/// Feature file: the trace envelope plus `layers`/`dim` and feature records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureDataset {
    pub format_version: u64,
    pub n_max: usize,
    pub sampling_config: SamplingConfig,
    pub layers: usize,
    pub dim: usize,
    pub records: Vec<LayerFeatureSet>,
}

impl FeatureDataset {
    pub fn new(n_max: usize, layers: usize, dim: usize, records: Vec<LayerFeatureSet>) -> Result<Self> {
        let ds = FeatureDataset {
            format_version: FORMAT_VERSION,
            n_max,
            sampling_config: SamplingConfig::default(),
            layers,
            dim,
            records,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::schema("envelope", "format_version", "unsupported version"));
        }
        if self.n_max == 0 {
            return Err(Error::schema("envelope", "n_max", "must be positive"));
        }
        if self.layers == 0 || self.dim == 0 {
            return Err(Error::schema("envelope", "layers", "layers and dim must be positive"));
        }
        validate_sampling_config(&self.sampling_config)?;
        let mut ids = HashSet::new();
        for r in &self.records {
            let rec = format!("features `{}`", r.question_id);
            if !ids.insert(r.question_id.as_str()) {
                return Err(Error::schema(rec, "question_id", "duplicate question id"));
            }
            if r.layer_vectors.len() != self.layers {
                return Err(Error::schema(
                    rec,
                    "vectors",
                    format!("has {} layers, expected {}", r.layer_vectors.len(), self.layers),
                ));
            }
            if let Some(v) = r.layer_vectors.iter().find(|v| v.len() != self.dim) {
                return Err(Error::schema(
                    rec,
                    "vectors",
                    format!("vector of dimension {}, expected {}", v.len(), self.dim),
                ));
            }
            if r.layer_vectors.iter().flatten().any(|x| !x.is_finite()) {
                return Err(Error::schema(rec, "vectors", "non-finite value"));
            }
            if let Some(l) = r.label {
                if !(0.0..=1.0).contains(&l) {
                    return Err(Error::schema(rec, "label", format!("label {l} outside [0, 1]")));
                }
            }
        }
        Ok(())
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("feature dataset serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let ds: FeatureDataset =
            serde_json::from_str(text).map_err(|e| Error::schema("feature file", "<json>", e.to_string()))?;
        ds.validate()?;
        Ok(ds)
    }
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureDataset> {
    FeatureDataset::from_json_str(&read_file(path.as_ref())?)
}

pub fn save_features(dataset: &FeatureDataset, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &dataset.to_canonical_json())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_trace_json() -> &'static str {
        r#"{"format_version":1,"n_max":4,"sampling_config":{"top_k":20,"top_p":0.95,"temperature":0.6,"model_name":"m","seed":3},"traces":[{"question_id":"a","gold":0,"draws":[0,0,1,0]},{"question_id":"b","gold":null,"draws":[0,1,2,1],"confidences":[0.5,0.25,1.0,0.0],"difficulty":0.3,"answer_labels":{"0":"42","1":"7","2":"x"}}]}"#
    }

    #[test]
    fn loads_two_traces() {
        let ds = TraceDataset::from_json_str(two_trace_json()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.n_max, 4);
        assert_eq!(ds.traces[1].gold, None);
        assert_eq!(ds.to_canonical_json(), two_trace_json());
    }

    #[test]
    fn rejects_short_trace_naming_it() {
        let text = two_trace_json().replace(r#""draws":[0,0,1,0]"#, r#""draws":[0,0,1]"#);
        let err = TraceDataset::from_json_str(&text).unwrap_err();
        assert!(err.is_schema());
        let msg = err.to_string();
        assert!(msg.contains("`a`") && msg.contains("draws"), "{msg}");
    }

    #[test]
    fn rejects_unknown_and_mistyped_fields() {
        let text = two_trace_json().replace(r#""difficulty":0.3"#, r#""difficulty":"hard""#);
        let msg = TraceDataset::from_json_str(&text).unwrap_err().to_string();
        assert!(msg.contains("`b`") && msg.contains("difficulty"), "{msg}");

        let text = two_trace_json().replace(r#""gold":0,"#, r#""gold":0,"extra":1,"#);
        let msg = TraceDataset::from_json_str(&text).unwrap_err().to_string();
        assert!(msg.contains("extra"), "{msg}");
    }

    #[test]
    fn rejects_sparse_ids_and_bad_confidences() {
        assert!(QuestionTrace::from_indices("q", Some(0), &[0, 2]).is_err());
        assert!(QuestionTrace::from_indices("q", Some(3), &[0, 1]).is_err());
        let mut t = QuestionTrace::from_indices("q", Some(0), &[0, 1]).unwrap();
        t.confidences = Some(vec![0.5]);
        assert!(t.validate().is_err());
    }

    #[test]
    fn rejects_duplicate_ids() {
        let text = two_trace_json().replace(r#""question_id":"b""#, r#""question_id":"a""#);
        let msg = TraceDataset::from_json_str(&text).unwrap_err().to_string();
        assert!(msg.contains("duplicate"), "{msg}");
    }

    #[test]
    fn empty_dataset_round_trips() {
        let ds = TraceDataset::new(1, SamplingConfig::default(), vec![]).unwrap();
        let text = ds.to_canonical_json();
        assert!(text.ends_with(r#""traces":[]}"#));
        assert_eq!(TraceDataset::from_json_str(&text).unwrap(), ds);
    }

    #[test]
    fn counts() {
        let t = QuestionTrace::from_indices("q", Some(0), &[0, 0, 1]).unwrap();
        assert_eq!(answer_counts(&t), vec![2, 1]);
        let t = QuestionTrace::from_indices("q", Some(0), &[0; 128]).unwrap();
        assert_eq!(answer_counts(&t), vec![128]);
    }

    #[test]
    fn feature_file_validates_dimensions() {
        let rec = LayerFeatureSet {
            question_id: "q".into(),
            layer_vectors: vec![vec![0.5, 1.0], vec![0.1]],
            label: Some(0.25),
        };
        assert!(FeatureDataset::new(8, 2, 2, vec![rec.clone()]).is_err());
        let ok = LayerFeatureSet {
            layer_vectors: vec![vec![0.5, 1.0], vec![0.1, -2.0]],
            ..rec
        };
        let ds = FeatureDataset::new(8, 2, 2, vec![ok]).unwrap();
        let back = FeatureDataset::from_json_str(&ds.to_canonical_json()).unwrap();
        assert_eq!(back, ds);
    }
}
