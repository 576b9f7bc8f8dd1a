//! Raw tests, their numeric encoding, and per-round standardization.
//!
//! A pool file is a CSV with a `test_id` column followed by one column per
//! feature. Integer features are written bare; categorical features are
//! written as quoted tokens whose codes come from the schema sidecar.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Columns whose population std falls below this are treated as constant.
pub const CONSTANT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeatureType {
    Integer,
    Categorical { codes: BTreeMap<String, u32> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub features: Vec<FeatureDef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawValue {
    Int(i64),
    Token(String),
}

/// One generated test, with values in schema order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTest {
    pub test_id: u64,
    pub values: Vec<RawValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestVector {
    pub test_id: u64,
    pub values: Vec<f64>,
}

impl TestVector {
    pub fn new(test_id: u64, values: Vec<f64>) -> Self {
        TestVector { test_id, values }
    }

    pub fn width(&self) -> usize {
        self.values.len()
    }
}

impl AsRef<[f64]> for TestVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

impl Schema {
    pub fn new(features: Vec<FeatureDef>) -> Result<Self> {
        let schema = Schema { features };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for f in &self.features {
            if !seen.insert(f.name.as_str()) || f.name == "test_id" {
                return Err(Error::InvalidConfig(format!(
                    "duplicate or reserved feature name `{}`",
                    f.name
                )));
            }
            if let FeatureType::Categorical { codes } = &f.kind {
                let mut values: Vec<u32> = codes.values().copied().collect();
                values.sort_unstable();
                if values.iter().enumerate().any(|(i, &c)| i as u32 != c) {
                    return Err(Error::InvalidConfig(format!(
                        "categorical codes of `{}` must be exactly 0..{}",
                        f.name,
                        codes.len()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.features.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    /// Builds a `RawTest` from named fields; every schema feature must be present once.
    pub fn raw_test(&self, test_id: u64, fields: &[(&str, RawValue)]) -> Result<RawTest> {
        let mut values: Vec<Option<RawValue>> = vec![None; self.width()];
        for (name, v) in fields {
            let i = self
                .index_of(name)
                .ok_or_else(|| Error::UnknownFeature(name.to_string()))?;
            values[i] = Some(v.clone());
        }
        let values = values
            .into_iter()
            .zip(&self.features)
            .map(|(v, f)| {
                v.ok_or_else(|| Error::SchemaMismatch {
                    test_id,
                    reason: format!("missing feature `{}`", f.name),
                })
            })
            .collect::<Result<_>>()?;
        Ok(RawTest { test_id, values })
    }

    /// Integers pass through; categorical tokens map to their schema code.
    pub fn encode(&self, raw: &RawTest) -> Result<TestVector> {
        if raw.values.len() != self.width() {
            return Err(Error::SchemaMismatch {
                test_id: raw.test_id,
                reason: format!("expected {} values, got {}", self.width(), raw.values.len()),
            });
        }
        let values = raw
            .values
            .iter()
            .zip(&self.features)
            .map(|(v, f)| self.encode_value(raw.test_id, f, v))
            .collect::<Result<_>>()?;
        Ok(TestVector::new(raw.test_id, values))
    }

    fn encode_value(&self, test_id: u64, f: &FeatureDef, v: &RawValue) -> Result<f64> {
        match (&f.kind, v) {
            (FeatureType::Integer, RawValue::Int(x)) => Ok(*x as f64),
            (FeatureType::Categorical { codes }, RawValue::Token(t)) => {
                codes.get(t).map(|&c| c as f64).ok_or_else(|| Error::UnknownToken {
                    feature: f.name.clone(),
                    token: t.clone(),
                })
            }
            (FeatureType::Integer, RawValue::Token(t)) => Err(Error::SchemaMismatch {
                test_id,
                reason: format!("feature `{}` is an integer, got token `{t}`", f.name),
            }),
            (FeatureType::Categorical { .. }, RawValue::Int(x)) => Err(Error::SchemaMismatch {
                test_id,
                reason: format!("feature `{}` is categorical, got integer {x}", f.name),
            }),
        }
    }

    pub fn encode_all(&self, raws: &[RawTest]) -> Result<Vec<TestVector>> {
        raws.iter().map(|r| self.encode(r)).collect()
    }

    /// Tokens of a categorical feature, indexed by code.
    pub fn tokens(&self, feature: usize) -> Option<Vec<&str>> {
        match &self.features.get(feature)?.kind {
            FeatureType::Integer => None,
            FeatureType::Categorical { codes } => {
                let mut tokens = vec![""; codes.len()];
                for (t, &c) in codes {
                    tokens[c as usize] = t.as_str();
                }
                Some(tokens)
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: Schema = serde_json::from_str(&s)?;
        schema.validate()?;
        Ok(schema)
    }
}

/// Writes the pool CSV: bare header, integers unquoted, tokens quoted.
pub fn write_pool(path: &Path, schema: &Schema, tests: &[RawTest]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let header: Vec<&str> = std::iter::once("test_id")
        .chain(schema.features.iter().map(|f| f.name.as_str()))
        .collect();
    writeln!(out, "{}", header.join(",")).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::NonNumeric)
        .from_writer(out);
    let mut row: Vec<String> = Vec::with_capacity(schema.width() + 1);
    for t in tests {
        row.clear();
        row.push(t.test_id.to_string());
        for v in &t.values {
            row.push(match v {
                RawValue::Int(x) => x.to_string(),
                RawValue::Token(s) => s.clone(),
            });
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_pool(path: &Path, schema: &Schema) -> Result<Vec<RawTest>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.get(0) != Some("test_id") {
        return Err(Error::InvalidConfig(format!(
            "{}: first column must be `test_id`",
            path.display()
        )));
    }
    let names: Vec<&str> = headers.iter().skip(1).collect();
    for name in &names {
        if schema.index_of(name).is_none() {
            return Err(Error::UnknownFeature(name.to_string()));
        }
    }
    if names.len() != schema.width() || names.iter().zip(&schema.features).any(|(n, f)| *n != f.name) {
        return Err(Error::InvalidConfig(format!(
            "{}: columns do not follow the schema order",
            path.display()
        )));
    }
    let mut tests = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let test_id: u64 = rec[0]
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad test_id `{}`", &rec[0])))?;
        let values = rec
            .iter()
            .skip(1)
            .zip(&schema.features)
            .map(|(field, f)| match f.kind {
                FeatureType::Integer => field.parse().map(RawValue::Int).map_err(|_| Error::SchemaMismatch {
                    test_id,
                    reason: format!("feature `{}`: `{field}` is not an integer", f.name),
                }),
                FeatureType::Categorical { .. } => Ok(RawValue::Token(field.to_string())),
            })
            .collect::<Result<_>>()?;
        tests.push(RawTest { test_id, values });
    }
    Ok(tests)
}

/// Per-column affine map to zero mean and unit population variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub constant_mask: Vec<bool>,
}

impl Standardizer {
    pub fn fit<R: AsRef<[f64]>>(training: &[R], tolerance: f64) -> Result<Self> {
        let first = training.first().ok_or(Error::Empty("standardizer training set"))?;
        let width = first.as_ref().len();
        // Welford running moments
        let mut means = vec![0.0; width];
        let mut m2 = vec![0.0; width];
        for (n, row) in training.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != width {
                return Err(Error::dims("standardizer row", width, row.len()));
            }
            let n = (n + 1) as f64;
            for ((mean, m2), &x) in means.iter_mut().zip(&mut m2).zip(row) {
                let delta = x - *mean;
                *mean += delta / n;
                *m2 += delta * (x - *mean);
            }
        }
        let count = training.len() as f64;
        let stds: Vec<f64> = m2.iter().map(|m| (m / count).max(0.0).sqrt()).collect();
        let constant_mask = stds.iter().map(|&s| s < tolerance).collect();
        Ok(Standardizer {
            means,
            stds,
            constant_mask,
        })
    }

    pub fn width(&self) -> usize {
        self.means.len()
    }

    pub fn transform_values(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.width() {
            return Err(Error::dims("standardize", self.width(), values.len()));
        }
        Ok(values
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                if self.constant_mask[i] {
                    0.0
                } else {
                    (x - self.means[i]) / self.stds[i]
                }
            })
            .collect())
    }

    pub fn standardize(&self, v: &TestVector) -> Result<TestVector> {
        Ok(TestVector::new(v.test_id, self.transform_values(&v.values)?))
    }

    /// Standardizes a set of vectors into a row matrix.
    pub fn transform_matrix<R: AsRef<[f64]>>(&self, rows: &[R]) -> Result<Array2<f64>> {
        let mut m = Array2::zeros((rows.len(), self.width()));
        for (i, r) in rows.iter().enumerate() {
            let t = self.transform_values(r.as_ref())?;
            m.row_mut(i).assign(&ndarray::aview1(&t));
        }
        Ok(m)
    }
}
