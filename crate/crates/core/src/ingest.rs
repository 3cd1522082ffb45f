//! Cohort loading, imputation and numeric encoding.
//!
//! Raw values are held as `Option<f64>`: continuous features store their
//! measured value, categorical features store their integer code. A slot is
//! `None` when the cell was blank or held one of the feature's missing codes.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Header of the label column when none is configured.
pub const DEFAULT_LABEL: &str = "RISK";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("MissingColumn({0:?})")]
    MissingColumn(String),
    #[error("NonBinaryLabel(row {row}: {value:?})")]
    NonBinaryLabel { row: usize, value: String },
    #[error("InvalidCode(feature {feature}, row {row}, code {code:?})")]
    InvalidCode {
        feature: String,
        row: usize,
        code: String,
    },
    #[error("InvalidNumber(feature {feature}, row {row}, value {value:?})")]
    InvalidNumber {
        feature: String,
        row: usize,
        value: String,
    },
    #[error("EmptyCohort")]
    EmptyCohort,
    #[error("AllMissingColumn({0:?})")]
    AllMissingColumn(String),
    #[error("MissingValues({feature:?}: {count} missing slots)")]
    MissingValues { feature: String, count: usize },
    #[error("UnknownLevel(feature {feature}, code {code})")]
    UnknownLevel { feature: String, code: f64 },
    #[error("record has {got} values, expected {expected}")]
    RecordLength { expected: usize, got: usize },
}

pub type Result<T, E = IngestError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FeatureKind {
    Continuous,
    Categorical { valid_codes: Vec<i64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
    pub missing_codes: Vec<i64>,
}

impl FeatureSpec {
    pub fn continuous(name: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: FeatureKind::Continuous,
            missing_codes: Vec::new(),
        }
    }

    pub fn categorical(name: &str, valid_codes: &[i64], missing_codes: &[i64]) -> Self {
        let mut valid_codes = valid_codes.to_vec();
        valid_codes.sort_unstable();
        valid_codes.dedup();
        Self {
            name: name.to_string(),
            kind: FeatureKind::Categorical { valid_codes },
            missing_codes: missing_codes.to_vec(),
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, FeatureKind::Categorical { .. })
    }

    fn is_missing_code(&self, value: f64) -> bool {
        self.missing_codes.iter().any(|&c| c as f64 == value)
    }
}

/// Ordered feature list plus the name of the binary label column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    features: Vec<FeatureSpec>,
    label_name: String,
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureSpec>, label_name: impl Into<String>) -> Result<Self> {
        let label_name = label_name.into();
        if features.is_empty() {
            return Err(IngestError::InvalidSchema("no features".into()));
        }
        let mut seen = HashSet::new();
        for f in &features {
            if !seen.insert(f.name.as_str()) {
                return Err(IngestError::InvalidSchema(format!(
                    "duplicate feature name {:?}",
                    f.name
                )));
            }
            if let FeatureKind::Categorical { valid_codes } = &f.kind {
                if valid_codes.is_empty() {
                    return Err(IngestError::InvalidSchema(format!(
                        "categorical feature {:?} has no valid codes",
                        f.name
                    )));
                }
                if valid_codes.iter().any(|c| f.missing_codes.contains(c)) {
                    return Err(IngestError::InvalidSchema(format!(
                        "feature {:?} lists a code as both valid and missing",
                        f.name
                    )));
                }
            }
        }
        if seen.contains(label_name.as_str()) {
            return Err(IngestError::InvalidSchema(format!(
                "label {label_name:?} is also a feature name"
            )));
        }
        Ok(Self {
            features,
            label_name,
        })
    }

    /// The five survey variables: age, income-to-poverty ratio,
    /// race/ethnicity, gender and medical condition history.
    pub fn survey() -> Self {
        Self::survey_with_label(DEFAULT_LABEL)
    }

    pub fn survey_with_label(label_name: &str) -> Self {
        Self::new(
            vec![
                FeatureSpec::continuous("RIDAGEYR"),
                FeatureSpec::continuous("INDFMPIR"),
                FeatureSpec::categorical("RIDRETH1", &[1, 2, 3, 4, 5], &[]),
                FeatureSpec::categorical("RIAGENDR", &[1, 2], &[]),
                // 9 = "don't know"
                FeatureSpec::categorical("MCQ010", &[1, 2], &[9]),
            ],
            label_name,
        )
        .expect("survey schema is valid")
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn label_name(&self) -> &str {
        &self.label_name
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }
}

impl Default for FeatureSchema {
    fn default() -> Self {
        Self::survey()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    schema: FeatureSchema,
    records: Vec<Vec<Option<f64>>>,
    labels: Vec<u8>,
    missing_counts: Vec<usize>,
    fill_values: Vec<Option<f64>>,
}

impl Cohort {
    /// Builds a cohort from raw values, mapping missing codes to `None` and
    /// validating categorical codes. Row numbers in errors are 0-based.
    pub fn from_raw(
        schema: FeatureSchema,
        raw: Vec<Vec<Option<f64>>>,
        labels: Vec<u8>,
    ) -> Result<Self> {
        if raw.is_empty() {
            return Err(IngestError::EmptyCohort);
        }
        if raw.len() != labels.len() {
            return Err(IngestError::RecordLength {
                expected: raw.len(),
                got: labels.len(),
            });
        }
        let m = schema.len();
        let mut records = Vec::with_capacity(raw.len());
        for (row, (values, &label)) in raw.into_iter().zip(&labels).enumerate() {
            if values.len() != m {
                return Err(IngestError::RecordLength {
                    expected: m,
                    got: values.len(),
                });
            }
            if label > 1 {
                return Err(IngestError::NonBinaryLabel {
                    row,
                    value: label.to_string(),
                });
            }
            let mut record = Vec::with_capacity(m);
            for (spec, value) in schema.features().iter().zip(values) {
                record.push(check_value(spec, row, value)?);
            }
            records.push(record);
        }
        let missing_counts = count_missing(&records, m);
        Ok(Self {
            schema,
            records,
            labels,
            missing_counts,
            fill_values: vec![None; m],
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn records(&self) -> &[Vec<Option<f64>>] {
        &self.records
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn missing_counts(&self) -> &[usize] {
        &self.missing_counts
    }

    /// Values used to fill each column by [`impute_missing`]; `None` when the
    /// column had nothing to fill.
    pub fn fill_values(&self) -> &[Option<f64>] {
        &self.fill_values
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn total_missing(&self) -> usize {
        self.missing_counts.iter().sum()
    }

    /// Records with every slot filled, or the first column that still has gaps.
    pub fn complete_records(&self) -> Result<Vec<Vec<f64>>> {
        if let Some(i) = self.missing_counts.iter().position(|&c| c > 0) {
            return Err(IngestError::MissingValues {
                feature: self.schema.features()[i].name.clone(),
                count: self.missing_counts[i],
            });
        }
        Ok(self
            .records
            .iter()
            .map(|r| r.iter().map(|v| v.expect("no missing slots")).collect())
            .collect())
    }

    /// Writes the cohort in the CSV layout [`read_cohort`] accepts; missing
    /// slots become blank cells.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = self.schema.feature_names();
        header.push(self.schema.label_name().to_string());
        w.write_record(&header)?;
        for (record, label) in self.records.iter().zip(&self.labels) {
            let mut cells: Vec<String> = record
                .iter()
                .map(|v| v.map(|x| x.to_string()).unwrap_or_default())
                .collect();
            cells.push(label.to_string());
            w.write_record(&cells)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_value(spec: &FeatureSpec, row: usize, value: Option<f64>) -> Result<Option<f64>> {
    let Some(v) = value else { return Ok(None) };
    if spec.is_missing_code(v) {
        return Ok(None);
    }
    match &spec.kind {
        FeatureKind::Continuous => {
            if v.is_finite() {
                Ok(Some(v))
            } else {
                Err(IngestError::InvalidNumber {
                    feature: spec.name.clone(),
                    row,
                    value: v.to_string(),
                })
            }
        }
        FeatureKind::Categorical { valid_codes } => {
            if valid_codes.iter().any(|&c| c as f64 == v) {
                Ok(Some(v))
            } else {
                Err(IngestError::InvalidCode {
                    feature: spec.name.clone(),
                    row,
                    code: v.to_string(),
                })
            }
        }
    }
}

fn count_missing(records: &[Vec<Option<f64>>], m: usize) -> Vec<usize> {
    let mut counts = vec![0; m];
    for r in records {
        for (c, v) in counts.iter_mut().zip(r) {
            if v.is_none() {
                *c += 1;
            }
        }
    }
    counts
}

pub fn load_cohort(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Cohort> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => IngestError::FileNotFound(path.display().to_string()),
        _ => IngestError::Io(e),
    })?;
    read_cohort(file, schema)
}

/// Reads a comma-delimited table with a header row. Columns are matched to
/// the schema by name; extra columns are ignored.
pub fn read_cohort<R: Read>(reader: R, schema: &FeatureSchema) -> Result<Cohort> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let position: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let mut columns = Vec::with_capacity(schema.len());
    for f in schema.features() {
        match position.get(f.name.as_str()) {
            Some(&i) => columns.push(i),
            None => return Err(IngestError::MissingColumn(f.name.clone())),
        }
    }
    let label_col = *position
        .get(schema.label_name())
        .ok_or_else(|| IngestError::MissingColumn(schema.label_name().to_string()))?;

    let mut raw = Vec::new();
    let mut labels = Vec::new();
    for (row, result) in rdr.records().enumerate() {
        let rec = result?;
        let mut values = Vec::with_capacity(columns.len());
        for (spec, &col) in schema.features().iter().zip(&columns) {
            let cell = rec.get(col).unwrap_or("");
            values.push(parse_cell(spec, row, cell)?);
        }
        let cell = rec.get(label_col).unwrap_or("");
        labels.push(parse_label(row, cell)?);
        raw.push(values);
    }
    Cohort::from_raw(schema.clone(), raw, labels)
}

fn parse_cell(spec: &FeatureSpec, row: usize, cell: &str) -> Result<Option<f64>> {
    if cell.is_empty() {
        return Ok(None);
    }
    let parsed = cell.parse::<f64>().ok().filter(|v| v.is_finite());
    match (&spec.kind, parsed) {
        (_, Some(v)) => Ok(Some(v)),
        (FeatureKind::Continuous, None) => Err(IngestError::InvalidNumber {
            feature: spec.name.clone(),
            row,
            value: cell.to_string(),
        }),
        (FeatureKind::Categorical { .. }, None) => Err(IngestError::InvalidCode {
            feature: spec.name.clone(),
            row,
            code: cell.to_string(),
        }),
    }
}

fn parse_label(row: usize, cell: &str) -> Result<u8> {
    match cell.to_ascii_lowercase().as_str() {
        "1" | "1.0" | "true" => Ok(1),
        "0" | "0.0" | "false" => Ok(0),
        _ => Err(IngestError::NonBinaryLabel {
            row,
            value: cell.to_string(),
        }),
    }
}

/// Fills gaps with the column median (continuous) or modal code
/// (categorical, ties to the lowest code). Fill values are kept on the
/// returned cohort.
pub fn impute_missing(cohort: &Cohort) -> Result<Cohort> {
    if cohort.is_empty() {
        return Err(IngestError::EmptyCohort);
    }
    let mut out = cohort.clone();
    for (j, spec) in cohort.schema.features().iter().enumerate() {
        if cohort.missing_counts[j] == 0 {
            continue;
        }
        let observed: Vec<f64> = cohort.records.iter().filter_map(|r| r[j]).collect();
        if observed.is_empty() {
            return Err(IngestError::AllMissingColumn(spec.name.clone()));
        }
        let fill = if spec.is_categorical() {
            mode(&observed)
        } else {
            median(observed)
        };
        for r in &mut out.records {
            if r[j].is_none() {
                r[j] = Some(fill);
            }
        }
        out.missing_counts[j] = 0;
        out.fill_values[j] = Some(fill);
    }
    Ok(out)
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn mode(codes: &[f64]) -> f64 {
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for &c in codes {
        *counts.entry(c as i64).or_default() += 1;
    }
    // BTreeMap iterates in ascending code order, so `>` keeps the lowest code on ties.
    let mut best = (i64::MAX, 0usize);
    for (code, count) in counts {
        if count > best.1 {
            best = (code, count);
        }
    }
    best.0 as f64
}

/// How one schema feature maps onto design-matrix columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "encoding")]
pub enum FeatureEncoding {
    /// `(x - mean) / sd`; a zero `sd` emits a constant 0 column.
    Standardize { feature: String, mean: f64, sd: f64 },
    /// One indicator per non-reference level, in ascending code order.
    OneHot {
        feature: String,
        reference: i64,
        levels: Vec<i64>,
    },
}

impl FeatureEncoding {
    pub fn feature(&self) -> &str {
        match self {
            Self::Standardize { feature, .. } | Self::OneHot { feature, .. } => feature,
        }
    }

    pub fn width(&self) -> usize {
        match self {
            Self::Standardize { .. } => 1,
            Self::OneHot { levels, .. } => levels.len(),
        }
    }

    fn write(&self, value: f64, out: &mut [f64]) -> Result<()> {
        match self {
            Self::Standardize { mean, sd, .. } => {
                out[0] = standardize(value, *mean, *sd);
            }
            Self::OneHot {
                feature,
                reference,
                levels,
            } => {
                out.fill(0.0);
                if value != *reference as f64 {
                    let pos = levels
                        .iter()
                        .position(|&l| l as f64 == value)
                        .ok_or_else(|| IngestError::UnknownLevel {
                            feature: feature.clone(),
                            code: value,
                        })?;
                    out[pos] = 1.0;
                }
            }
        }
        Ok(())
    }

    /// Contribution of this feature to a linear score with the given block of
    /// weights. Summation order matches [`EncodingRecipe::apply`] followed by
    /// a block-wise dot product.
    pub fn block_score(&self, value: f64, weights: &[f64]) -> Result<f64> {
        match self {
            Self::Standardize { mean, sd, .. } => Ok(0.0 + weights[0] * standardize(value, *mean, *sd)),
            Self::OneHot {
                feature,
                reference,
                levels,
            } => {
                if value == *reference as f64 {
                    return Ok(block_dot(weights, None));
                }
                let pos = levels
                    .iter()
                    .position(|&l| l as f64 == value)
                    .ok_or_else(|| IngestError::UnknownLevel {
                        feature: feature.clone(),
                        code: value,
                    })?;
                Ok(block_dot(weights, Some(pos)))
            }
        }
    }
}

fn block_dot(weights: &[f64], hot: Option<usize>) -> f64 {
    let mut s = 0.0;
    for (k, w) in weights.iter().enumerate() {
        s += w * if Some(k) == hot { 1.0 } else { 0.0 };
    }
    s
}

fn standardize(value: f64, mean: f64, sd: f64) -> f64 {
    if sd > 0.0 {
        (value - mean) / sd
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "level")]
pub enum ColumnKind {
    Standardized,
    Indicator(i64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub source: String,
    pub kind: ColumnKind,
}

impl Column {
    pub fn label(&self) -> String {
        match self.kind {
            ColumnKind::Standardized => self.source.clone(),
            ColumnKind::Indicator(level) => format!("{}={}", self.source, level),
        }
    }
}

/// Everything needed to turn a complete raw record into a design row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingRecipe {
    features: Vec<FeatureEncoding>,
}

impl EncodingRecipe {
    pub fn new(features: Vec<FeatureEncoding>) -> Self {
        Self { features }
    }

    /// Pass-through recipe: each named feature becomes one column unchanged.
    pub fn identity(names: &[&str]) -> Self {
        Self::new(
            names
                .iter()
                .map(|n| FeatureEncoding::Standardize {
                    feature: n.to_string(),
                    mean: 0.0,
                    sd: 1.0,
                })
                .collect(),
        )
    }

    pub fn features(&self) -> &[FeatureEncoding] {
        &self.features
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn width(&self) -> usize {
        self.features.iter().map(FeatureEncoding::width).sum()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.feature().to_string()).collect()
    }

    pub fn columns(&self) -> Vec<Column> {
        let mut cols = Vec::with_capacity(self.width());
        for f in &self.features {
            match f {
                FeatureEncoding::Standardize { feature, .. } => cols.push(Column {
                    source: feature.clone(),
                    kind: ColumnKind::Standardized,
                }),
                FeatureEncoding::OneHot { feature, levels, .. } => {
                    cols.extend(levels.iter().map(|&l| Column {
                        source: feature.clone(),
                        kind: ColumnKind::Indicator(l),
                    }))
                }
            }
        }
        cols
    }

    /// Column ranges per feature, in feature order.
    pub fn blocks(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.features
            .iter()
            .map(|f| {
                let r = start..start + f.width();
                start = r.end;
                r
            })
            .collect()
    }

    pub fn apply(&self, record: &[f64]) -> Result<Vec<f64>> {
        let mut row = vec![0.0; self.width()];
        self.apply_into(record, &mut row)?;
        Ok(row)
    }

    pub fn apply_into(&self, record: &[f64], row: &mut [f64]) -> Result<()> {
        if record.len() != self.features.len() {
            return Err(IngestError::RecordLength {
                expected: self.features.len(),
                got: record.len(),
            });
        }
        let mut start = 0;
        for (f, &v) in self.features.iter().zip(record) {
            let w = f.width();
            f.write(v, &mut row[start..start + w])?;
            start += w;
        }
        Ok(())
    }
}

/// Standalone form of [`EncodingRecipe::apply`].
pub fn apply_recipe(recipe: &EncodingRecipe, record: &[f64]) -> Result<Vec<f64>> {
    recipe.apply(record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EncodeWarning {
    ZeroVariance(String),
}

/// Row-major numeric matrix with labels and the recipe that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    columns: Vec<Column>,
    values: Vec<f64>,
    labels: Vec<u8>,
    recipe: EncodingRecipe,
    warnings: Vec<EncodeWarning>,
}

impl DesignMatrix {
    /// Wraps already-numeric rows under an identity recipe. Column names are
    /// `x0, x1, ...`.
    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<u8>) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        let names: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        Self::with_recipe(rows, labels, EncodingRecipe::identity(&refs))
    }

    fn with_recipe(rows: &[Vec<f64>], labels: Vec<u8>, recipe: EncodingRecipe) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(IngestError::RecordLength {
                expected: rows.len(),
                got: labels.len(),
            });
        }
        if rows.is_empty() {
            return Err(IngestError::EmptyCohort);
        }
        let p = recipe.width();
        let mut values = Vec::with_capacity(rows.len() * p);
        for r in rows {
            if r.len() != p {
                return Err(IngestError::RecordLength {
                    expected: p,
                    got: r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        Ok(Self {
            columns: recipe.columns(),
            values,
            labels,
            recipe,
            warnings: Vec::new(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_cols();
        &self.values[i * p..(i + 1) * p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n_rows()).map(move |i| self.row(i))
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn recipe(&self) -> &EncodingRecipe {
        &self.recipe
    }

    pub fn warnings(&self) -> &[EncodeWarning] {
        &self.warnings
    }

    /// Copy restricted to the given rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut values = Vec::with_capacity(idx.len() * self.n_cols());
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            values.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self {
            columns: self.columns.clone(),
            values,
            labels,
            recipe: self.recipe.clone(),
            warnings: self.warnings.clone(),
        }
    }
}

/// Z-scores continuous features (sample standard deviation) and one-hot
/// encodes categorical features against their lowest valid code.
pub fn encode(cohort: &Cohort) -> Result<DesignMatrix> {
    let records = cohort.complete_records()?;
    let n = records.len();
    let mut encodings = Vec::with_capacity(cohort.schema.len());
    let mut warnings = Vec::new();
    for (j, spec) in cohort.schema.features().iter().enumerate() {
        match &spec.kind {
            FeatureKind::Continuous => {
                let mean = records.iter().map(|r| r[j]).sum::<f64>() / n as f64;
                let sd = if n > 1 {
                    let ss: f64 = records.iter().map(|r| (r[j] - mean).powi(2)).sum();
                    (ss / (n - 1) as f64).sqrt()
                } else {
                    0.0
                };
                if sd.is_nan() || sd <= 0.0 {
                    warnings.push(EncodeWarning::ZeroVariance(spec.name.clone()));
                }
                encodings.push(FeatureEncoding::Standardize {
                    feature: spec.name.clone(),
                    mean,
                    sd: if sd > 0.0 { sd } else { 0.0 },
                });
            }
            FeatureKind::Categorical { valid_codes } => {
                let reference = valid_codes[0];
                encodings.push(FeatureEncoding::OneHot {
                    feature: spec.name.clone(),
                    reference,
                    levels: valid_codes[1..].to_vec(),
                });
            }
        }
    }
    let recipe = EncodingRecipe::new(encodings);
    let rows = records
        .iter()
        .map(|r| recipe.apply(r))
        .collect::<Result<Vec<_>>>()?;
    let mut matrix = DesignMatrix::with_recipe(&rows, cohort.labels.clone(), recipe)?;
    matrix.warnings = warnings;
    Ok(matrix)
}
