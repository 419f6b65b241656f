//! Tabular input, quantile discretization, cumulative binning and the
//! categorical encoding every other module works on.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{OmtError, Result};

/// Level name given to empty fields of categorical columns.
pub const MISSING_LEVEL: &str = "<NA>";

/// Code assigned to categorical values never seen while fitting the encoder.
/// Only SKIP nodes admit it.
pub const UNSEEN_CODE: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Categorical,
    Numerical,
    /// Ordered levels given as numbers; binned exactly like numerical columns.
    Ordinal,
}

impl ColumnKind {
    pub fn is_numeric(self) -> bool {
        matches!(self, ColumnKind::Numerical | ColumnKind::Ordinal)
    }
}

/// Per-column kind overrides applied on top of inference.
pub type SchemaHints = BTreeMap<String, ColumnKind>;

#[derive(Clone, Debug)]
pub struct RawColumn {
    pub name: String,
    pub kind: ColumnKind,
    pub text: Vec<String>,
    /// Parsed values, present exactly when `kind.is_numeric()`.
    pub numeric: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct RawDataset {
    pub columns: Vec<RawColumn>,
    pub label_column: usize,
    pub n_samples: usize,
}

impl RawDataset {
    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    /// Indices of all non-label columns, in file order.
    pub fn feature_columns(&self) -> Vec<usize> {
        (0..self.columns.len()).filter(|&c| c != self.label_column).collect()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len().saturating_sub(1)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn label(&self) -> &RawColumn {
        &self.columns[self.label_column]
    }

    /// Row subset in the given order.
    pub fn subset(&self, rows: &[usize]) -> RawDataset {
        let columns = self
            .columns
            .iter()
            .map(|c| RawColumn {
                name: c.name.clone(),
                kind: c.kind,
                text: rows.iter().map(|&r| c.text[r].clone()).collect(),
                numeric: c.numeric.as_ref().map(|v| rows.iter().map(|&r| v[r]).collect()),
            })
            .collect();
        RawDataset {
            columns,
            label_column: self.label_column,
            n_samples: rows.len(),
        }
    }
}

pub fn load_csv(path: &Path, label_column: &str, hints: &SchemaHints) -> Result<RawDataset> {
    let text = std::fs::read_to_string(path).map_err(|source| OmtError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_csv(&text, label_column, hints)
}

/// Parses comma-separated text with a mandatory header row.
///
/// Rows are numbered from 1 (the header) in error messages.
pub fn parse_csv(text: &str, label_column: &str, hints: &SchemaHints) -> Result<RawDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .quoting(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = reader.records();

    let mut next_row = || -> Result<Option<(usize, Vec<String>)>> {
        let Some(record) = records.next() else {
            return Ok(None);
        };
        let record = record.map_err(|e| OmtError::Parse {
            row: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().any(|f| f.contains('"')) {
            return Err(OmtError::Parse {
                row,
                message: "quoted fields are not supported".into(),
            });
        }
        Ok(Some((row, record.iter().map(str::to_string).collect())))
    };

    let (_, names) = next_row()?.ok_or(OmtError::Parse {
        row: 1,
        message: "missing header row".into(),
    })?;
    let arity = names.len();

    let mut cells: Vec<Vec<String>> = vec![Vec::new(); arity];
    while let Some((row, fields)) = next_row()? {
        if fields.len() != arity {
            return Err(OmtError::Parse {
                row,
                message: format!("expected {arity} fields, found {}", fields.len()),
            });
        }
        for (col, f) in fields.into_iter().enumerate() {
            cells[col].push(f);
        }
    }
    let n_samples = cells.first().map_or(0, Vec::len);

    let label_idx = names
        .iter()
        .position(|n| n == label_column)
        .ok_or_else(|| OmtError::config(format!("unknown label column '{label_column}'")))?;
    for name in hints.keys() {
        if !names.contains(name) {
            return Err(OmtError::config(format!("schema hint for unknown column '{name}'")));
        }
    }

    let mut columns = Vec::with_capacity(arity);
    for (name, text) in names.into_iter().zip(cells) {
        let parsed: Option<Vec<f64>> = if n_samples == 0 {
            None
        } else {
            text.iter().map(|s| parse_real(s)).collect()
        };
        let kind = match hints.get(&name) {
            Some(&k) => k,
            None if parsed.is_some() => ColumnKind::Numerical,
            None => ColumnKind::Categorical,
        };
        let (text, numeric) = if kind.is_numeric() {
            let values = match parsed {
                Some(v) => v,
                None => {
                    let row = text.iter().position(|s| parse_real(s).is_none()).unwrap_or(0);
                    return Err(OmtError::Parse {
                        row: row + 2,
                        message: format!(
                            "column '{name}' is {kind:?} but value '{}' is not a number",
                            text.get(row).map_or("", String::as_str)
                        ),
                    });
                }
            };
            (text, Some(values))
        } else {
            let text = text
                .into_iter()
                .map(|s| if s.is_empty() { MISSING_LEVEL.to_string() } else { s })
                .collect();
            (text, None)
        };
        columns.push(RawColumn {
            name,
            kind,
            text,
            numeric,
        });
    }
    Ok(RawDataset {
        columns,
        label_column: label_idx,
        n_samples,
    })
}

fn parse_real(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

// ---------------------------------------------------------------------------
// Binning

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinKind {
    Plain,
    Cumulative,
}

/// One node-level interval: the union of base intervals `first..=last`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinInterval {
    pub lo: f64,
    pub hi: f64,
    pub first: u32,
    pub last: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub feature_index: usize,
    pub kind: BinKind,
    /// Strictly increasing cut points; base interval `k` is `[t[k-1], t[k])`.
    pub thresholds: Vec<f64>,
    /// Observed range on the fitting data; values outside it are clamped.
    pub lower: f64,
    pub upper: f64,
    pub intervals: Vec<BinInterval>,
}

impl BinSpec {
    /// Plain spec with one interval per base bin.
    pub fn plain(feature_index: usize, thresholds: Vec<f64>, lower: f64, upper: f64) -> BinSpec {
        debug_assert!(thresholds.windows(2).all(|w| w[0] < w[1]));
        let kappa = thresholds.len() + 1;
        let intervals = (0..kappa)
            .map(|k| base_interval(&thresholds, lower, upper, k, k))
            .collect();
        BinSpec {
            feature_index,
            kind: BinKind::Plain,
            thresholds,
            lower,
            upper,
            intervals,
        }
    }

    /// Number of base intervals (κ).
    pub fn n_base(&self) -> usize {
        self.thresholds.len() + 1
    }

    /// Index of the base interval containing `value`.
    pub fn code_of(&self, value: f64) -> u32 {
        if value.is_nan() {
            return 0;
        }
        self.thresholds.partition_point(|&t| t <= value) as u32
    }

    pub fn is_out_of_range(&self, value: f64) -> bool {
        value.is_nan() || value < self.lower || value > self.upper
    }
}

fn base_interval(t: &[f64], lower: f64, upper: f64, first: usize, last: usize) -> BinInterval {
    let kappa = t.len() + 1;
    BinInterval {
        lo: if first == 0 { lower } else { t[first - 1] },
        hi: if last + 1 == kappa { upper } else { t[last] },
        first: first as u32,
        last: last as u32,
    }
}

/// Cut points at the `j/κ` empirical quantiles (linear interpolation between
/// order statistics), `j = 1..κ-1`.
///
/// Repeated cut points are collapsed and cut points that do not separate
/// any two observed values (at or below the minimum) are dropped, so the
/// result may be shorter than `κ - 1` and is empty for a constant column.
pub fn quantile_thresholds(values: &[f64], n_bins: usize) -> Result<Vec<f64>> {
    if n_bins < 2 {
        return Err(OmtError::config("quantile discretization needs at least 2 bins"));
    }
    if values.is_empty() {
        return Err(OmtError::config("quantile discretization of an empty column"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let min = sorted[0];
    let mut out: Vec<f64> = Vec::with_capacity(n_bins - 1);
    for j in 1..n_bins {
        let h = (n - 1) as f64 * j as f64 / n_bins as f64;
        let lo = h.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        let q = sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]);
        if q <= min {
            continue;
        }
        if out.last().is_some_and(|&last| q <= last) {
            continue;
        }
        out.push(q);
    }
    Ok(out)
}

/// Expands a spec with κ ≥ 2 base intervals into every contiguous union of
/// base intervals except the full range: κ(κ+1)/2 − 1 intervals, shortest
/// first.
pub fn apply_cumulative_binning(spec: &BinSpec) -> Result<BinSpec> {
    let kappa = spec.n_base();
    if kappa < 2 {
        return Err(OmtError::config(format!(
            "cumulative binning needs at least 2 base intervals (feature {})",
            spec.feature_index
        )));
    }
    let mut intervals = Vec::with_capacity(kappa * (kappa + 1) / 2 - 1);
    for span in 1..kappa {
        for first in 0..=(kappa - span) {
            let last = first + span - 1;
            intervals.push(base_interval(&spec.thresholds, spec.lower, spec.upper, first, last));
        }
    }
    Ok(BinSpec {
        kind: BinKind::Cumulative,
        intervals,
        ..spec.clone()
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinningConfig {
    /// Target number of base intervals κ for numerical and ordinal columns.
    pub n_bins: usize,
    pub cumulative: bool,
}

impl Default for BinningConfig {
    fn default() -> Self {
        BinningConfig {
            n_bins: 4,
            cumulative: true,
        }
    }
}

/// Fits the bin spec of one numerical column.
///
/// Columns with at most κ distinct values get one base interval per value
/// (cuts at midpoints); otherwise quantile cut points are used.
pub fn fit_bin_spec(feature_index: usize, values: &[f64], config: &BinningConfig) -> Result<BinSpec> {
    if values.is_empty() {
        return Err(OmtError::config("cannot bin an empty column"));
    }
    let mut distinct = values.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let lower = distinct[0];
    let upper = *distinct.last().unwrap();
    let thresholds = if distinct.len() <= config.n_bins {
        distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    } else {
        quantile_thresholds(values, config.n_bins)?
    };
    let plain = BinSpec::plain(feature_index, thresholds, lower, upper);
    if config.cumulative && plain.n_base() >= 2 {
        apply_cumulative_binning(&plain)
    } else {
        Ok(plain)
    }
}

// ---------------------------------------------------------------------------
// Encoding

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum FeatureEncoding {
    Categorical { levels: Vec<String> },
    Binned { spec: BinSpec },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub name: String,
    pub kind: ColumnKind,
    pub encoding: FeatureEncoding,
}

impl FeatureEncoder {
    /// Number of base codes (η_f).
    pub fn cardinality(&self) -> u32 {
        match &self.encoding {
            FeatureEncoding::Categorical { levels } => levels.len().max(1) as u32,
            FeatureEncoding::Binned { spec } => spec.n_base() as u32,
        }
    }

    /// Human-readable description of the base codes `first..=last`.
    pub fn describe(&self, first: u32, last: u32) -> String {
        match &self.encoding {
            FeatureEncoding::Categorical { levels } => {
                let names: Vec<&str> = (first..=last)
                    .map(|c| levels.get(c as usize).map_or("?", String::as_str))
                    .collect();
                names.join("|")
            }
            FeatureEncoding::Binned { spec } => {
                let b = base_interval(&spec.thresholds, spec.lower, spec.upper, first as usize, last as usize);
                let close = if last as usize + 1 == spec.n_base() { "]" } else { ")" };
                format!("[{}, {}{}", fmt_num(b.lo), fmt_num(b.hi), close)
            }
        }
    }
}

fn fmt_num(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Classification,
    Regression,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LabelEncoding {
    /// Class names sorted lexicographically; the id of a class is its index.
    Classes {
        names: Vec<String>,
    },
    Real,
}

/// Everything needed to turn raw rows into codes, fitted on training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub features: Vec<FeatureEncoder>,
    pub label_name: String,
    pub label: LabelEncoding,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EncodeWarnings {
    /// Numerical values outside the fitted range, clamped to a boundary bin.
    pub clamped: usize,
    /// Categorical values not seen during fitting.
    pub unseen: usize,
}

impl Encoder {
    pub fn fit(raw: &RawDataset, config: &BinningConfig, task: TaskKind) -> Result<Encoder> {
        let mut features = Vec::new();
        for (f, col) in raw.feature_columns().into_iter().enumerate() {
            let column = &raw.columns[col];
            let encoding = if column.kind.is_numeric() {
                let values = column.numeric.as_ref().expect("numeric column");
                if values.is_empty() {
                    FeatureEncoding::Binned {
                        spec: BinSpec::plain(f, Vec::new(), 0.0, 0.0),
                    }
                } else {
                    FeatureEncoding::Binned {
                        spec: fit_bin_spec(f, values, config)?,
                    }
                }
            } else {
                let mut levels: Vec<String> = Vec::new();
                let mut seen: HashMap<&str, ()> = HashMap::new();
                for v in &column.text {
                    if seen.insert(v.as_str(), ()).is_none() {
                        levels.push(v.clone());
                    }
                }
                FeatureEncoding::Categorical { levels }
            };
            features.push(FeatureEncoder {
                name: column.name.clone(),
                kind: column.kind,
                encoding,
            });
        }

        let label_col = raw.label();
        let label = match task {
            TaskKind::Classification => {
                let mut names: Vec<String> = label_col.text.clone();
                names.sort();
                names.dedup();
                LabelEncoding::Classes { names }
            }
            TaskKind::Regression => {
                if label_col.numeric.is_none() && raw.n_samples > 0 {
                    return Err(OmtError::config(format!(
                        "regression needs a numerical label, column '{}' is categorical",
                        label_col.name
                    )));
                }
                LabelEncoding::Real
            }
        };
        Ok(Encoder {
            features,
            label_name: label_col.name.clone(),
            label,
        })
    }

    pub fn task(&self) -> TaskKind {
        match self.label {
            LabelEncoding::Classes { .. } => TaskKind::Classification,
            LabelEncoding::Real => TaskKind::Regression,
        }
    }

    pub fn class_names(&self) -> &[String] {
        match &self.label {
            LabelEncoding::Classes { names } => names,
            LabelEncoding::Real => &[],
        }
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn cardinalities(&self) -> Vec<u32> {
        self.features.iter().map(FeatureEncoder::cardinality).collect()
    }

    /// Locates every encoded feature in `raw` by name.
    fn locate(&self, raw: &RawDataset) -> Result<Vec<usize>> {
        let mut missing = Vec::new();
        let mut cols = Vec::new();
        for f in &self.features {
            match raw.column_index(&f.name) {
                Some(c) => cols.push(c),
                None => missing.push(f.name.clone()),
            }
        }
        if missing.is_empty() {
            Ok(cols)
        } else {
            Err(OmtError::Model(format!("missing columns: {}", missing.join(", "))))
        }
    }

    /// Per-feature codes of every row of `raw`.
    pub fn encode_features(&self, raw: &RawDataset) -> Result<(Vec<Vec<u32>>, EncodeWarnings)> {
        let cols = self.locate(raw)?;
        let mut warnings = EncodeWarnings::default();
        let mut codes = Vec::with_capacity(self.features.len());
        for (fe, &col) in self.features.iter().zip(&cols) {
            let column = &raw.columns[col];
            let fcodes: Vec<u32> = match &fe.encoding {
                FeatureEncoding::Categorical { levels } => {
                    let index: HashMap<&str, u32> =
                        levels.iter().enumerate().map(|(i, l)| (l.as_str(), i as u32)).collect();
                    column
                        .text
                        .iter()
                        .map(|v| {
                            let v = if v.is_empty() { MISSING_LEVEL } else { v.as_str() };
                            index.get(v).copied().unwrap_or_else(|| {
                                warnings.unseen += 1;
                                UNSEEN_CODE
                            })
                        })
                        .collect()
                }
                FeatureEncoding::Binned { spec } => {
                    let values: Vec<f64> = match &column.numeric {
                        Some(v) => v.clone(),
                        None => column.text.iter().map(|s| parse_real(s).unwrap_or(f64::NAN)).collect(),
                    };
                    values
                        .iter()
                        .map(|&v| {
                            if spec.is_out_of_range(v) {
                                warnings.clamped += 1;
                            }
                            spec.code_of(v)
                        })
                        .collect()
                }
            };
            codes.push(fcodes);
        }
        Ok((codes, warnings))
    }

    /// Encodes a labeled dataset. Class names unseen during fitting receive
    /// ids past the fitted ones, in order of first appearance.
    pub fn encode(&self, raw: &RawDataset) -> Result<(BinnedDataset, EncodeWarnings)> {
        let (codes, warnings) = self.encode_features(raw)?;
        let label_col = raw
            .column_index(&self.label_name)
            .ok_or_else(|| OmtError::Model(format!("missing columns: {}", self.label_name)))?;
        let column = &raw.columns[label_col];
        let labels = match &self.label {
            LabelEncoding::Classes { names } => {
                let mut all = names.clone();
                let mut index: HashMap<String, u32> =
                    names.iter().enumerate().map(|(i, n)| (n.clone(), i as u32)).collect();
                let ids = column
                    .text
                    .iter()
                    .map(|v| {
                        *index.entry(v.clone()).or_insert_with(|| {
                            all.push(v.clone());
                            (all.len() - 1) as u32
                        })
                    })
                    .collect();
                Labels::Classes {
                    ids,
                    n_classes: all.len() as u32,
                }
            }
            LabelEncoding::Real => {
                let values = match &column.numeric {
                    Some(v) => v.clone(),
                    None => column
                        .text
                        .iter()
                        .map(|s| {
                            parse_real(s).ok_or_else(|| OmtError::config(format!("non-numeric regression label '{s}'")))
                        })
                        .collect::<Result<_>>()?,
                };
                Labels::Real(values)
            }
        };
        let ds = BinnedDataset::new(self.feature_names(), codes, self.cardinalities(), labels)?;
        Ok((ds, warnings))
    }
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub enum Labels {
    Classes { ids: Vec<u32>, n_classes: u32 },
    Real(Vec<f64>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes { ids, .. } => ids.len(),
            Labels::Real(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Samples as per-feature codes plus labels. Immutable after construction.
#[derive(Clone, Debug)]
pub struct BinnedDataset {
    feature_names: Vec<String>,
    /// `codes[f][i]`: base code of sample `i` on feature `f`.
    codes: Vec<Vec<u32>>,
    cardinalities: Vec<u32>,
    labels: Labels,
    group_feature: Option<usize>,
    n_samples: usize,
}

impl BinnedDataset {
    pub fn new(
        feature_names: Vec<String>,
        codes: Vec<Vec<u32>>,
        cardinalities: Vec<u32>,
        labels: Labels,
    ) -> Result<BinnedDataset> {
        let n_samples = labels.len();
        if codes.len() != cardinalities.len() || codes.len() != feature_names.len() {
            return Err(OmtError::config("feature count mismatch"));
        }
        for (f, (col, &card)) in codes.iter().zip(&cardinalities).enumerate() {
            if card == 0 {
                return Err(OmtError::config(format!("feature {f} has zero cardinality")));
            }
            if col.len() != n_samples {
                return Err(OmtError::config(format!(
                    "feature {f} has {} values for {n_samples} samples",
                    col.len()
                )));
            }
            if let Some(&bad) = col.iter().find(|&&c| c >= card && c != UNSEEN_CODE) {
                return Err(OmtError::config(format!(
                    "feature {f}: code {bad} out of range (cardinality {card})"
                )));
            }
        }
        if let Labels::Classes { ids, n_classes } = &labels {
            if ids.iter().any(|&y| y >= *n_classes) {
                return Err(OmtError::config("class id out of range"));
            }
        }
        Ok(BinnedDataset {
            feature_names,
            codes,
            cardinalities,
            labels,
            group_feature: None,
            n_samples,
        })
    }

    /// Marks `feature` as the sensitive attribute for fairness statistics.
    pub fn with_group_feature(mut self, feature: usize) -> Result<BinnedDataset> {
        if feature >= self.n_features() {
            return Err(OmtError::config(format!("group feature {feature} out of range")));
        }
        if self.cardinalities[feature] > 8 {
            return Err(OmtError::config(format!(
                "group feature '{}' has {} groups; at most 8 are supported",
                self.feature_names[feature], self.cardinalities[feature]
            )));
        }
        self.group_feature = Some(feature);
        Ok(self)
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_features(&self) -> usize {
        self.codes.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn codes(&self, feature: usize) -> &[u32] {
        &self.codes[feature]
    }

    pub fn code(&self, feature: usize, sample: usize) -> u32 {
        self.codes[feature][sample]
    }

    /// Codes of one sample across all features.
    pub fn row(&self, sample: usize) -> Vec<u32> {
        self.codes.iter().map(|c| c[sample]).collect()
    }

    pub fn cardinalities(&self) -> &[u32] {
        &self.cardinalities
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn task(&self) -> TaskKind {
        match self.labels {
            Labels::Classes { .. } => TaskKind::Classification,
            Labels::Real(_) => TaskKind::Regression,
        }
    }

    pub fn n_classes(&self) -> usize {
        match &self.labels {
            Labels::Classes { n_classes, .. } => *n_classes as usize,
            Labels::Real(_) => 0,
        }
    }

    pub fn class_ids(&self) -> Option<&[u32]> {
        match &self.labels {
            Labels::Classes { ids, .. } => Some(ids),
            Labels::Real(_) => None,
        }
    }

    pub fn real_labels(&self) -> Option<&[f64]> {
        match &self.labels {
            Labels::Real(v) => Some(v),
            Labels::Classes { .. } => None,
        }
    }

    pub fn group_feature(&self) -> Option<usize> {
        self.group_feature
    }

    pub fn n_groups(&self) -> usize {
        self.group_feature.map_or(0, |g| self.cardinalities[g] as usize)
    }

    /// Row subset, keeping encodings and group designation.
    pub fn select(&self, rows: &[usize]) -> BinnedDataset {
        let codes = self
            .codes
            .iter()
            .map(|c| rows.iter().map(|&r| c[r]).collect())
            .collect();
        let labels = match &self.labels {
            Labels::Classes { ids, n_classes } => Labels::Classes {
                ids: rows.iter().map(|&r| ids[r]).collect(),
                n_classes: *n_classes,
            },
            Labels::Real(v) => Labels::Real(rows.iter().map(|&r| v[r]).collect()),
        };
        BinnedDataset {
            feature_names: self.feature_names.clone(),
            codes,
            cardinalities: self.cardinalities.clone(),
            labels,
            group_feature: self.group_feature,
            n_samples: rows.len(),
        }
    }
}
