//! Feature schema, typed records, delimited-text datasets, splitting, and
//! stage-based feature selection.
//!
//! Schema files are JSON documents of the form
//!
//! ```json
//! {
//!   "label_name": "isRigidity",
//!   "features": [
//!     { "name": "AGE", "kind": "continuous", "stage": 1 },
//!     { "name": "APRDRG_Severity", "kind": "categorical", "cardinality": 4, "stage": 2 },
//!     { "name": "MT", "kind": "binary", "stage": 2 }
//!   ]
//! }
//! ```
//!
//! `kind` is one of `binary`, `categorical`, `continuous`; `cardinality` is
//! required for (and only allowed on) categorical features; `stage` is 1..=4.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Point along the hospitalization timeline at which a feature becomes
/// available. Incremental model `k` uses every feature with stage `<= k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Admission = 1,
    HospitalAssessment = 2,
    HospitalCodes = 3,
    Discharge = 4,
}

impl Stage {
    pub fn from_index(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Stage::Admission),
            2 => Ok(Stage::HospitalAssessment),
            3 => Ok(Stage::HospitalCodes),
            4 => Ok(Stage::Discharge),
            other => Err(Error::Validation(format!("stage must be in 1..=4, got {other}"))),
        }
    }

    pub fn index(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Binary,
    Categorical { cardinality: u32 },
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawFeatureSpec", into = "RawFeatureSpec")]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    pub stage: Stage,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFeatureSpec {
    name: String,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cardinality: Option<u32>,
    stage: u8,
}

impl TryFrom<RawFeatureSpec> for FeatureSpec {
    type Error = Error;

    fn try_from(raw: RawFeatureSpec) -> Result<Self> {
        let kind = match (raw.kind.as_str(), raw.cardinality) {
            ("binary", None) => FeatureKind::Binary,
            ("continuous", None) => FeatureKind::Continuous,
            ("categorical", Some(c)) => FeatureKind::Categorical { cardinality: c },
            ("categorical", None) => {
                return Err(Error::Validation(format!(
                    "categorical feature `{}` needs a cardinality",
                    raw.name
                )))
            }
            ("binary" | "continuous", Some(_)) => {
                return Err(Error::Validation(format!(
                    "feature `{}`: cardinality is only valid for categorical features",
                    raw.name
                )))
            }
            (other, _) => {
                return Err(Error::Validation(format!(
                    "feature `{}`: unknown kind `{other}`",
                    raw.name
                )))
            }
        };
        FeatureSpec::new(raw.name, kind, Stage::from_index(raw.stage)?)
    }
}

impl From<FeatureSpec> for RawFeatureSpec {
    fn from(f: FeatureSpec) -> Self {
        let (kind, cardinality) = match f.kind {
            FeatureKind::Binary => ("binary", None),
            FeatureKind::Continuous => ("continuous", None),
            FeatureKind::Categorical { cardinality } => ("categorical", Some(cardinality)),
        };
        RawFeatureSpec {
            name: f.name,
            kind: kind.to_string(),
            cardinality,
            stage: f.stage.index(),
        }
    }
}

impl FeatureSpec {
    pub fn new(name: impl Into<String>, kind: FeatureKind, stage: Stage) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::Validation("feature name must not be empty".into()));
        }
        if let FeatureKind::Categorical { cardinality } = kind {
            if cardinality < 2 {
                return Err(Error::Validation(format!(
                    "categorical feature `{name}` has cardinality {cardinality} (< 2)"
                )));
            }
        }
        Ok(FeatureSpec { name, kind, stage })
    }

    pub fn binary(name: &str, stage: Stage) -> Self {
        FeatureSpec::new(name, FeatureKind::Binary, stage).expect("valid binary feature")
    }

    pub fn continuous(name: &str, stage: Stage) -> Self {
        FeatureSpec::new(name, FeatureKind::Continuous, stage).expect("valid continuous feature")
    }

    pub fn categorical(name: &str, cardinality: u32, stage: Stage) -> Result<Self> {
        FeatureSpec::new(name, FeatureKind::Categorical { cardinality }, stage)
    }

    /// Checks a raw value against this feature's kind.
    pub fn validate(&self, v: f64) -> std::result::Result<(), String> {
        if !v.is_finite() {
            return Err(format!("non-finite value {v}"));
        }
        match self.kind {
            FeatureKind::Binary if v != 0.0 && v != 1.0 => {
                Err(format!("binary value must be 0 or 1, got {v}"))
            }
            FeatureKind::Categorical { cardinality }
                if v.fract() != 0.0 || v < 0.0 || v >= f64::from(cardinality) =>
            {
                Err(format!(
                    "categorical value must be an integer in [0, {cardinality}), got {v}"
                ))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema")]
pub struct FeatureSchema {
    pub label_name: String,
    pub features: Vec<FeatureSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchema {
    label_name: String,
    features: Vec<FeatureSpec>,
}

impl TryFrom<RawSchema> for FeatureSchema {
    type Error = Error;

    fn try_from(raw: RawSchema) -> Result<Self> {
        FeatureSchema::new(raw.features, raw.label_name)
    }
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureSpec>, label_name: impl Into<String>) -> Result<Self> {
        let label_name = label_name.into();
        let mut seen = HashSet::new();
        for f in &features {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Validation(format!("duplicate feature name `{}`", f.name)));
            }
            if f.name == label_name {
                return Err(Error::Validation(format!(
                    "label name `{label_name}` collides with a feature"
                )));
            }
        }
        Ok(FeatureSchema {
            label_name,
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.features.iter().map(|f| f.name.as_str()).collect()
    }

    /// Hex SHA-256 of the canonical JSON encoding; used to bind checkpoints
    /// to the schema they were trained on.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("schema serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("schema file {}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("schema serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate_record(&self, r: &Record) -> Result<()> {
        if r.values.len() != self.len() {
            return Err(Error::SchemaMismatch(format!(
                "record has {} values, schema has {} features",
                r.values.len(),
                self.len()
            )));
        }
        if r.label > 1 {
            return Err(Error::Validation(format!("label must be 0 or 1, got {}", r.label)));
        }
        for (f, &v) in self.features.iter().zip(&r.values) {
            f.validate(v)
                .map_err(|m| Error::Validation(format!("feature `{}`: {m}", f.name)))?;
        }
        Ok(())
    }
}

/// One row: values in schema order. Binary and categorical values are stored
/// as integral `f64`s.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub values: Vec<f64>,
    pub label: u8,
}

impl Record {
    pub fn new(values: Vec<f64>, label: u8) -> Self {
        Record { values, label }
    }
}

/// Mean and standard deviation per continuous feature, keyed by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct NormalizationStats {
    pub entries: BTreeMap<String, ColumnStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
}

impl NormalizationStats {
    pub fn fit(schema: &FeatureSchema, records: &[Record]) -> Self {
        let mut entries = BTreeMap::new();
        for (j, f) in schema.features.iter().enumerate() {
            if f.kind != FeatureKind::Continuous {
                continue;
            }
            let n = records.len().max(1) as f64;
            let mean = records.iter().map(|r| r.values[j]).sum::<f64>() / n;
            let var = records.iter().map(|r| (r.values[j] - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            let std = if std > 0.0 && std.is_finite() { std } else { 1.0 };
            entries.insert(f.name.clone(), ColumnStats { mean, std });
        }
        NormalizationStats { entries }
    }

    /// Z-scores `v` for continuous feature `name`; identity when the feature
    /// has no entry.
    pub fn normalize(&self, name: &str, v: f64) -> f64 {
        match self.entries.get(name) {
            Some(s) => (v - s.mean) / s.std,
            None => v,
        }
    }

    pub fn restrict(&self, schema: &FeatureSchema) -> Self {
        let entries = schema
            .features
            .iter()
            .filter_map(|f| self.entries.get(&f.name).map(|s| (f.name.clone(), *s)))
            .collect();
        NormalizationStats { entries }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: FeatureSchema,
    pub records: Vec<Record>,
    pub normalization: Option<NormalizationStats>,
}

impl Dataset {
    pub fn new(schema: FeatureSchema, records: Vec<Record>) -> Result<Self> {
        for r in &records {
            schema.validate_record(r)?;
        }
        Ok(Dataset {
            schema,
            records,
            normalization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn positives(&self) -> usize {
        self.records.iter().filter(|r| r.label == 1).count()
    }

    pub fn positive_rate(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.positives() as f64 / self.records.len() as f64
    }

    /// Stats to use when encoding: the stored train-split stats, or stats
    /// fitted on this dataset when none were attached.
    pub fn stats_or_fit(&self) -> NormalizationStats {
        self.normalization
            .clone()
            .unwrap_or_else(|| NormalizationStats::fit(&self.schema, &self.records))
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            normalization: self.normalization.clone(),
        }
    }
}

fn parse_cell(
    raw: &str,
    row: usize,
    column: &str,
) -> Result<f64> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(Error::Parse {
            row,
            column: column.to_string(),
            message: "missing value".into(),
        });
    }
    trimmed.parse::<f64>().map_err(|e| Error::Parse {
        row,
        column: column.to_string(),
        message: format!("cannot parse `{trimmed}`: {e}"),
    })
}

/// Reads a comma-separated dataset whose header names every schema feature
/// plus the label column, in any order. `row` in errors is the 0-based data
/// row index (header excluded).
pub fn load_dataset(path: &Path, schema: &FeatureSchema) -> Result<Dataset> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file, schema)
}

pub fn read_dataset<R: std::io::Read>(reader: R, schema: &FeatureSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Format(format!("cannot read header: {e}")))?
        .clone();

    let mut position: HashMap<&str, usize> = HashMap::new();
    for (i, h) in header.iter().enumerate() {
        let h = h.trim();
        let known = h == schema.label_name || schema.index_of(h).is_some();
        if !known {
            return Err(Error::SchemaMismatch(format!("unexpected column `{h}`")));
        }
        if position.insert(h, i).is_some() {
            return Err(Error::SchemaMismatch(format!("duplicate column `{h}`")));
        }
    }
    let columns: Vec<usize> = schema
        .features
        .iter()
        .map(|f| {
            position
                .get(f.name.as_str())
                .copied()
                .ok_or_else(|| Error::SchemaMismatch(format!("missing column `{}`", f.name)))
        })
        .collect::<Result<_>>()?;
    let label_col = *position.get(schema.label_name.as_str()).ok_or_else(|| {
        Error::SchemaMismatch(format!("missing column `{}`", schema.label_name))
    })?;

    let mut records = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(format!("row {row}: {e}")))?;
        let mut values = Vec::with_capacity(columns.len());
        for (f, &c) in schema.features.iter().zip(&columns) {
            let v = parse_cell(rec.get(c).unwrap_or(""), row, &f.name)?;
            f.validate(v)
                .map_err(|m| Error::Validation(format!("row {row}, column `{}`: {m}", f.name)))?;
            values.push(v);
        }
        let label = parse_cell(rec.get(label_col).unwrap_or(""), row, &schema.label_name)?;
        let label = if label == 0.0 {
            0
        } else if label == 1.0 {
            1
        } else {
            return Err(Error::Validation(format!(
                "row {row}, column `{}`: label must be 0 or 1, got {label}",
                schema.label_name
            )));
        };
        records.push(Record { values, label });
    }
    Ok(Dataset {
        schema: schema.clone(),
        records,
        normalization: None,
    })
}

/// Writes raw (un-normalized) values in schema order, label last.
pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset_to(&mut buf, ds)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn write_dataset_to<W: std::io::Write>(writer: W, ds: &Dataset) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = ds.schema.names();
    header.push(&ds.schema.label_name);
    let fmt_err = |e: csv::Error| Error::Format(format!("csv write: {e}"));
    wtr.write_record(&header).map_err(fmt_err)?;
    for r in &ds.records {
        let mut row: Vec<String> = r.values.iter().map(|v| format_value(*v)).collect();
        row.push(r.label.to_string());
        wtr.write_record(&row).map_err(fmt_err)?;
    }
    wtr.flush()
        .map_err(|e| Error::Format(format!("csv flush: {e}")))
}

// Shortest round-trip representation.
fn format_value(v: f64) -> String {
    format!("{v}")
}

/// Row indices of a train/validation/test partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified partition. The test slice is `round(n * test_fraction)` rows,
/// the validation slice `round((n - test) * val_fraction_of_train)` rows,
/// and each slice receives positives in proportion to the full positive
/// rate. Indices within each slice are ascending.
pub fn split_indices(
    labels: &[u8],
    test_fraction: f64,
    val_fraction_of_train: f64,
    seed: u64,
) -> Result<SplitIndices> {
    let n = labels.len();
    if n < 3 {
        return Err(Error::arg(format!("need at least 3 records to split, got {n}")));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::arg(format!("test_fraction must be in (0,1), got {test_fraction}")));
    }
    if !(0.0..1.0).contains(&val_fraction_of_train) {
        return Err(Error::arg(format!(
            "val_fraction_of_train must be in [0,1), got {val_fraction_of_train}"
        )));
    }
    let n_test = (n as f64 * test_fraction).round() as usize;
    let n_val = ((n - n_test.min(n)) as f64 * val_fraction_of_train).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::arg(format!("test split of {n} records would be empty or total")));
    }
    let n_train = n - n_test - n_val.min(n - n_test);
    if n_train == 0 {
        return Err(Error::arg("training split would be empty"));
    }
    if val_fraction_of_train > 0.0 && n_val == 0 {
        return Err(Error::arg("validation split would be empty"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<usize> = (0..n).filter(|&i| labels[i] == 1).collect();
    let mut neg: Vec<usize> = (0..n).filter(|&i| labels[i] != 1).collect();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let rate = pos.len() as f64 / n as f64;

    // Positive quota for a slice of `size`, clamped so both classes can fill it.
    let quota = |size: usize, pos_left: usize, neg_left: usize| -> usize {
        let want = (size as f64 * rate).round() as usize;
        want.min(pos_left).max(size.saturating_sub(neg_left))
    };
    let take = |size: usize, pos: &mut Vec<usize>, neg: &mut Vec<usize>| -> Vec<usize> {
        let p = quota(size, pos.len(), neg.len());
        let mut out: Vec<usize> = pos.drain(pos.len() - p..).collect();
        out.extend(neg.drain(neg.len() - (size - p)..));
        out.sort_unstable();
        out
    };
    let test = take(n_test, &mut pos, &mut neg);
    let val = take(n_val, &mut pos, &mut neg);
    let mut train: Vec<usize> = pos.into_iter().chain(neg).collect();
    train.sort_unstable();
    Ok(SplitIndices { train, val, test })
}

/// Splits `ds` into train/validation/test. Normalization statistics are fitted
/// on the training slice and attached to all three.
pub fn split_dataset(
    ds: &Dataset,
    test_fraction: f64,
    val_fraction_of_train: f64,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let idx = split_indices(&ds.labels(), test_fraction, val_fraction_of_train, seed)?;
    let mut train = ds.subset(&idx.train);
    let stats = NormalizationStats::fit(&train.schema, &train.records);
    train.normalization = Some(stats.clone());
    let mut val = ds.subset(&idx.val);
    val.normalization = Some(stats.clone());
    let mut test = ds.subset(&idx.test);
    test.normalization = Some(stats);
    Ok((train, val, test))
}

/// Keeps the features available to incremental model `model_id` (stage
/// `<= model_id`), preserving order.
pub fn select_stage_features(ds: &Dataset, model_id: u8) -> Result<Dataset> {
    if !(1..=4).contains(&model_id) {
        return Err(Error::arg(format!("model_id must be in 1..=4, got {model_id}")));
    }
    let keep: Vec<usize> = ds
        .schema
        .features
        .iter()
        .enumerate()
        .filter(|(_, f)| f.stage.index() <= model_id)
        .map(|(i, _)| i)
        .collect();
    let schema = FeatureSchema {
        label_name: ds.schema.label_name.clone(),
        features: keep.iter().map(|&i| ds.schema.features[i].clone()).collect(),
    };
    let records = ds
        .records
        .iter()
        .map(|r| Record {
            values: keep.iter().map(|&i| r.values[i]).collect(),
            label: r.label,
        })
        .collect();
    let normalization = ds.normalization.as_ref().map(|s| s.restrict(&schema));
    Ok(Dataset {
        schema,
        records,
        normalization,
    })
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Admission => "admission",
            Stage::HospitalAssessment => "hospital_assessment",
            Stage::HospitalCodes => "hospital_codes",
            Stage::Discharge => "discharge",
        };
        f.write_str(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nihss_schema() -> FeatureSchema {
        FeatureSchema::new(
            vec![
                FeatureSpec::continuous("NIHSS", Stage::HospitalAssessment),
                FeatureSpec::binary("MT", Stage::HospitalAssessment),
            ],
            "isRigidity",
        )
        .unwrap()
    }

    fn staged_schema(stages: &[u8]) -> FeatureSchema {
        let features = stages
            .iter()
            .enumerate()
            .map(|(i, &s)| FeatureSpec::binary(&format!("f{i}"), Stage::from_index(s).unwrap()))
            .collect();
        FeatureSchema::new(features, "y").unwrap()
    }

    #[test]
    fn loads_single_row() {
        let ds = read_dataset("NIHSS,MT,isRigidity\n19,1,1\n".as_bytes(), &nihss_schema()).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.records[0].values, vec![19.0, 1.0]);
        assert_eq!(ds.records[0].label, 1);
    }

    #[test]
    fn loads_columns_in_any_order() {
        let ds = read_dataset("isRigidity,MT,NIHSS\n0,0,4.5\n".as_bytes(), &nihss_schema()).unwrap();
        assert_eq!(ds.records[0].values, vec![4.5, 0.0]);
        assert_eq!(ds.records[0].label, 0);
    }

    #[test]
    fn header_only_gives_empty_dataset() {
        let ds = read_dataset("NIHSS,MT,isRigidity\n".as_bytes(), &nihss_schema()).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn missing_and_extra_columns_are_named() {
        let err = read_dataset("NIHSS,isRigidity\n3,1\n".as_bytes(), &nihss_schema()).unwrap_err();
        assert!(err.to_string().contains("`MT`"), "{err}");
        let err = read_dataset("NIHSS,MT,AGE,isRigidity\n3,1,70,1\n".as_bytes(), &nihss_schema())
            .unwrap_err();
        assert!(err.to_string().contains("`AGE`"), "{err}");
    }

    #[test]
    fn unparseable_cell_reports_row_and_column() {
        let err = read_dataset("NIHSS,MT,isRigidity\n1,0,0\nabc,1,1\n".as_bytes(), &nihss_schema())
            .unwrap_err();
        match err {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 1);
                assert_eq!(column, "NIHSS");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_value_rejected() {
        let err =
            read_dataset("NIHSS,MT,isRigidity\n,0,0\n".as_bytes(), &nihss_schema()).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn categorical_at_cardinality_rejected() {
        let schema = FeatureSchema::new(
            vec![FeatureSpec::categorical("SEV", 4, Stage::HospitalAssessment).unwrap()],
            "y",
        )
        .unwrap();
        assert!(read_dataset("SEV,y\n3,0\n".as_bytes(), &schema).is_ok());
        let err = read_dataset("SEV,y\n4,0\n".as_bytes(), &schema).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn binary_out_of_range_rejected() {
        let err =
            read_dataset("NIHSS,MT,isRigidity\n1,2,0\n".as_bytes(), &nihss_schema()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn schema_rejects_duplicates_and_label_collision() {
        let dup = FeatureSchema::new(
            vec![FeatureSpec::binary("a", Stage::Admission), FeatureSpec::binary("a", Stage::Admission)],
            "y",
        );
        assert!(dup.is_err());
        let clash = FeatureSchema::new(vec![FeatureSpec::binary("y", Stage::Admission)], "y");
        assert!(clash.is_err());
        assert!(FeatureSpec::categorical("c", 1, Stage::Admission).is_err());
    }

    #[test]
    fn schema_file_keys_round_trip() {
        let schema = FeatureSchema::new(
            vec![
                FeatureSpec::continuous("AGE", Stage::Admission),
                FeatureSpec::categorical("APRDRG_Severity", 4, Stage::HospitalAssessment).unwrap(),
                FeatureSpec::binary("MT", Stage::HospitalAssessment),
            ],
            "isRigidity",
        )
        .unwrap();
        let json = serde_json::to_string(&schema).unwrap();
        assert_eq!(
            json,
            r#"{"label_name":"isRigidity","features":[{"name":"AGE","kind":"continuous","stage":1},{"name":"APRDRG_Severity","kind":"categorical","cardinality":4,"stage":2},{"name":"MT","kind":"binary","stage":2}]}"#
        );
        let back: FeatureSchema = serde_json::from_str(&json).unwrap();
        assert_eq!(back, schema);
        let bad = r#"{"label_name":"y","features":[{"name":"a","kind":"binary","stage":5}]}"#;
        assert!(serde_json::from_str::<FeatureSchema>(bad).is_err());
    }

    #[test]
    fn split_sizes_match_fractions() {
        let labels: Vec<u8> = (0..1000).map(|i| u8::from(i % 5 < 2)).collect();
        let s = split_indices(&labels, 0.2, 0.125, 7).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (700, 100, 200));
        let again = split_indices(&labels, 0.2, 0.125, 7).unwrap();
        assert_eq!(s, again);
        let other = split_indices(&labels, 0.2, 0.125, 8).unwrap();
        assert_ne!(s.test, other.test);
    }

    #[test]
    fn split_is_stratified() {
        // 4345 positives of 10000
        let labels: Vec<u8> = (0..10000).map(|i| u8::from(i < 4345)).collect();
        let s = split_indices(&labels, 0.2, 0.125, 3).unwrap();
        for part in [&s.train, &s.val, &s.test] {
            let rate = part.iter().filter(|&&i| labels[i] == 1).count() as f64 / part.len() as f64;
            assert!((0.4145..=0.4545).contains(&rate), "rate {rate}");
        }
    }

    #[test]
    fn split_argument_errors() {
        let labels = vec![0u8, 1, 0, 1];
        assert!(split_indices(&labels, 0.0, 0.1, 0).is_err());
        assert!(split_indices(&labels, 1.0, 0.1, 0).is_err());
        assert!(split_indices(&labels, 0.2, 1.0, 0).is_err());
        assert!(split_indices(&labels[..2], 0.5, 0.0, 0).is_err());
        // 4 records, 10% test rounds to zero rows
        assert!(split_indices(&labels, 0.1, 0.0, 0).is_err());
    }

    #[test]
    fn split_attaches_train_stats() {
        let schema = FeatureSchema::new(
            vec![FeatureSpec::continuous("x", Stage::Admission)],
            "y",
        )
        .unwrap();
        let records = (0..20).map(|i| Record::new(vec![i as f64], (i % 2) as u8)).collect();
        let ds = Dataset::new(schema, records).unwrap();
        let (train, val, test) = split_dataset(&ds, 0.25, 0.2, 1).unwrap();
        let stats = train.normalization.clone().unwrap();
        assert_eq!(val.normalization.as_ref(), Some(&stats));
        assert_eq!(test.normalization.as_ref(), Some(&stats));
        let expected = NormalizationStats::fit(&train.schema, &train.records);
        assert_eq!(stats, expected);
        // stored raw values untouched
        for r in &test.records {
            assert_eq!(r.values[0].fract(), 0.0);
        }
    }

    #[test]
    fn constant_column_std_is_one() {
        let schema = FeatureSchema::new(vec![FeatureSpec::continuous("x", Stage::Admission)], "y")
            .unwrap();
        let records: Vec<Record> = (0..5).map(|_| Record::new(vec![3.0], 0)).collect();
        let stats = NormalizationStats::fit(&schema, &records);
        assert_eq!(stats.entries["x"].std, 1.0);
        assert_eq!(stats.normalize("x", 4.0), 1.0);
    }

    #[test]
    fn stage_selection() {
        let schema = staged_schema(&[1, 1, 2, 3, 4]);
        let ds = Dataset::new(schema, vec![Record::new(vec![0.0, 1.0, 0.0, 1.0, 1.0], 1)]).unwrap();
        let m1 = select_stage_features(&ds, 1).unwrap();
        assert_eq!(m1.schema.names(), vec!["f0", "f1"]);
        assert_eq!(m1.records[0].values, vec![0.0, 1.0]);
        assert_eq!(m1.records[0].label, 1);
        let m4 = select_stage_features(&ds, 4).unwrap();
        assert_eq!(m4.schema, ds.schema);
        assert!(select_stage_features(&ds, 0).is_err());
        assert!(select_stage_features(&ds, 5).is_err());
    }
}
