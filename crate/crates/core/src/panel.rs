//! Feature/return panels and their quantile discretization.
//!
//! Raw observations carry numeric values or category labels per feature. A
//! [`Discretizer`] is fitted on one sample and applied to any other sample
//! sharing the same feature definitions, mapping every value to a small
//! integer code (a *modality*).

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discrete feature code. Numeric features use `0..m`, categorical features
/// use the index of their label in the sorted level set.
pub type Code = u16;

/// Reserved code for a missing value. No interval ever contains it.
pub const MISSING: Code = Code::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

/// Universe against which a feature was made relative upstream. Metadata only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelativeTo {
    #[default]
    All,
    Sector,
    PeerGroup,
    DeltaScore,
}

impl fmt::Display for RelativeTo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RelativeTo::All => "all",
            RelativeTo::Sector => "sector",
            RelativeTo::PeerGroup => "peer group",
            RelativeTo::DeltaScore => "delta score",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub feature_id: String,
    pub kind: FeatureKind,
    #[serde(default)]
    pub relative_to: RelativeTo,
}

impl FeatureSpec {
    pub fn numeric(feature_id: impl Into<String>) -> Self {
        FeatureSpec {
            feature_id: feature_id.into(),
            kind: FeatureKind::Numeric,
            relative_to: RelativeTo::All,
        }
    }

    pub fn categorical(feature_id: impl Into<String>) -> Self {
        FeatureSpec {
            feature_id: feature_id.into(),
            kind: FeatureKind::Categorical,
            relative_to: RelativeTo::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RawValue {
    Num(f64),
    Label(String),
    Missing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawObservation {
    pub date: NaiveDate,
    pub stock_id: String,
    pub features: Vec<RawValue>,
    /// 3-month forward excess return, decimal. `None` when not (yet) realized.
    pub y: Option<f64>,
}

/// Time-ordered raw observations with their feature definitions.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPanel {
    specs: Vec<FeatureSpec>,
    observations: Vec<RawObservation>,
}

impl RawPanel {
    /// Validates the specs and sorts observations by `(date, stock_id)`.
    /// The sort is stable, so the result does not depend on input order
    /// except between exact duplicates.
    pub fn new(specs: Vec<FeatureSpec>, mut observations: Vec<RawObservation>) -> Result<Self> {
        check_unique_ids(&specs)?;
        for obs in &observations {
            if obs.features.len() != specs.len() {
                return Err(Error::DimensionMismatch {
                    expected: specs.len(),
                    got: obs.features.len(),
                });
            }
            if let Some(y) = obs.y {
                if !y.is_finite() {
                    return Err(Error::parse(
                        format!("{} {}", obs.date, obs.stock_id),
                        "non-finite return",
                    ));
                }
            }
        }
        observations.sort_by(|a, b| (a.date, &a.stock_id).cmp(&(b.date, &b.stock_id)));
        Ok(RawPanel {
            specs,
            observations,
        })
    }

    pub fn specs(&self) -> &[FeatureSpec] {
        &self.specs
    }

    pub fn observations(&self) -> &[RawObservation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Loads `features.csv` and joins `returns.csv` on `(date, stock_id)`.
    /// Feature kinds are inferred (numeric when every non-empty cell parses as
    /// a number) unless `specs` is given.
    pub fn from_csv(
        features: &Path,
        returns: Option<&Path>,
        specs: Option<Vec<FeatureSpec>>,
    ) -> Result<Self> {
        let (header, rows) = read_feature_rows(features)?;
        let specs = match specs {
            Some(specs) => {
                let ids: Vec<&str> = specs.iter().map(|s| s.feature_id.as_str()).collect();
                if ids != header.iter().map(String::as_str).collect::<Vec<_>>() {
                    return Err(Error::SpecMismatch(
                        "feature spec ids do not match the features.csv header".into(),
                    ));
                }
                specs
            }
            None => infer_specs(&header, &rows),
        };
        let returns = match returns {
            Some(path) => read_returns(path)?,
            None => HashMap::new(),
        };
        let mut observations = Vec::with_capacity(rows.len());
        for (date, stock_id, cells) in rows {
            let features = cells
                .into_iter()
                .zip(&specs)
                .map(|(cell, spec)| parse_cell(&cell, spec))
                .collect::<Result<Vec<_>>>()?;
            let y = returns.get(&(date, stock_id.clone())).copied();
            observations.push(RawObservation {
                date,
                stock_id,
                features,
                y,
            });
        }
        RawPanel::new(specs, observations)
    }
}

fn check_unique_ids(specs: &[FeatureSpec]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for s in specs {
        if !seen.insert(s.feature_id.as_str()) {
            return Err(Error::SpecMismatch(format!(
                "duplicate feature id {}",
                s.feature_id
            )));
        }
    }
    Ok(())
}

pub(crate) fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
        .map_err(|e| Error::parse(format!("date '{s}'"), e.to_string()))
}

type FeatureRow = (NaiveDate, String, Vec<String>);

fn read_feature_rows(path: &Path) -> Result<(Vec<String>, Vec<FeatureRow>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 || &headers[0] != "date" || &headers[1] != "stock_id" {
        return Err(Error::parse(
            path.display().to_string(),
            "header must start with date,stock_id",
        ));
    }
    let feature_ids: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let date = parse_date(&record[0])?;
        let stock_id = record[1].to_string();
        let cells = record.iter().skip(2).map(str::to_string).collect();
        rows.push((date, stock_id, cells));
    }
    Ok((feature_ids, rows))
}

fn read_returns(path: &Path) -> Result<HashMap<(NaiveDate, String), f64>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = HashMap::new();
    for record in rdr.records() {
        let record = record?;
        if record.len() < 3 {
            return Err(Error::parse(path.display().to_string(), "expected 3 columns"));
        }
        let cell = record[2].trim();
        if cell.is_empty() {
            continue;
        }
        let y: f64 = cell
            .parse()
            .map_err(|_| Error::parse(path.display().to_string(), format!("bad return '{cell}'")))?;
        out.insert((parse_date(&record[0])?, record[1].to_string()), y);
    }
    Ok(out)
}

fn infer_specs(header: &[String], rows: &[FeatureRow]) -> Vec<FeatureSpec> {
    header
        .iter()
        .enumerate()
        .map(|(k, id)| {
            let numeric = rows.iter().all(|(_, _, cells)| {
                let c = cells[k].trim();
                c.is_empty() || c.parse::<f64>().is_ok()
            });
            if numeric {
                FeatureSpec::numeric(id.clone())
            } else {
                FeatureSpec::categorical(id.clone())
            }
        })
        .collect()
}

fn parse_cell(cell: &str, spec: &FeatureSpec) -> Result<RawValue> {
    let c = cell.trim();
    if c.is_empty() {
        return Ok(RawValue::Missing);
    }
    match spec.kind {
        FeatureKind::Numeric => c
            .parse::<f64>()
            .map(RawValue::Num)
            .map_err(|_| Error::parse(&spec.feature_id, format!("non-numeric value '{c}'"))),
        FeatureKind::Categorical => Ok(RawValue::Label(c.to_string())),
    }
}

/// Binning of a single feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureBins {
    /// Strictly increasing cut points. Bin `k` is `(edges[k-1], edges[k]]`,
    /// the first bin is unbounded below and the last unbounded above.
    Numeric {
        #[serde(default)]
        relative_to: RelativeTo,
        edges: Vec<f64>,
    },
    /// Sorted level set; the code of a label is its index.
    Categorical {
        #[serde(default)]
        relative_to: RelativeTo,
        levels: Vec<String>,
    },
}

impl FeatureBins {
    pub fn n_codes(&self) -> usize {
        match self {
            FeatureBins::Numeric { edges, .. } => edges.len() + 1,
            FeatureBins::Categorical { levels, .. } => levels.len().max(1),
        }
    }

    pub fn kind(&self) -> FeatureKind {
        match self {
            FeatureBins::Numeric { .. } => FeatureKind::Numeric,
            FeatureBins::Categorical { .. } => FeatureKind::Categorical,
        }
    }

    pub fn code(&self, value: &RawValue) -> Code {
        match (self, value) {
            (FeatureBins::Numeric { edges, .. }, RawValue::Num(v)) if !v.is_nan() => {
                edges.partition_point(|e| e < v) as Code
            }
            (FeatureBins::Categorical { levels, .. }, RawValue::Label(l)) => {
                match levels.binary_search_by(|x| cmp_labels(x, l)) {
                    Ok(i) => i as Code,
                    Err(_) => MISSING,
                }
            }
            (FeatureBins::Categorical { levels, .. }, RawValue::Num(v)) => {
                let l = format_number(*v);
                match levels.binary_search_by(|x| cmp_labels(x, &l)) {
                    Ok(i) => i as Code,
                    Err(_) => MISSING,
                }
            }
            _ => MISSING,
        }
    }

    /// Human-readable label of a code (bin bounds or category level).
    pub fn describe_code(&self, code: Code) -> String {
        match self {
            FeatureBins::Numeric { edges, .. } => {
                let k = code as usize;
                match (k.checked_sub(1).and_then(|i| edges.get(i)), edges.get(k)) {
                    (None, None) => "any".to_string(),
                    (None, Some(hi)) => format!("<= {hi}"),
                    (Some(lo), None) => format!("> {lo}"),
                    (Some(lo), Some(hi)) => format!("({lo}, {hi}]"),
                }
            }
            FeatureBins::Categorical { levels, .. } => levels
                .get(code as usize)
                .cloned()
                .unwrap_or_else(|| "?".to_string()),
        }
    }
}

fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Labels that all parse as integers sort numerically, others lexicographically.
fn cmp_labels(a: &str, b: &str) -> std::cmp::Ordering {
    match (a.parse::<i64>(), b.parse::<i64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        _ => a.cmp(b),
    }
}

/// Index of the `k/m` empirical quantile in a sorted sample of length `n`:
/// the smallest value whose empirical CDF is at least `k/m`.
pub fn quantile_index(n: usize, k: usize, m: usize) -> usize {
    debug_assert!(n > 0 && k <= m && m > 0);
    ((k * n).div_ceil(m)).max(1) - 1
}

/// Fits `m - 1` quantile cut points on one numeric column.
pub fn fit_numeric_edges(values: &[f64], m: usize) -> Vec<f64> {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
    if sorted.is_empty() {
        return Vec::new();
    }
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() <= m {
        // identity binning: one code per distinct value
        distinct.pop();
        return distinct;
    }
    let max = *sorted.last().unwrap();
    let n = sorted.len();
    let mut edges: Vec<f64> = Vec::with_capacity(m - 1);
    for k in 1..m {
        let e = sorted[quantile_index(n, k, m)];
        if e < max && edges.last().is_none_or(|&last| e > last) {
            edges.push(e);
        }
    }
    edges
}

fn fit_levels(values: &[&RawValue]) -> Vec<String> {
    let mut levels: Vec<String> = values
        .iter()
        .filter_map(|v| match v {
            RawValue::Label(l) => Some(l.clone()),
            RawValue::Num(x) if !x.is_nan() => Some(format_number(*x)),
            _ => None,
        })
        .collect();
    levels.sort_by(|a, b| cmp_labels(a, b));
    levels.dedup();
    levels
}

/// Per-feature bins keyed by feature id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Discretizer {
    pub features: BTreeMap<String, FeatureBins>,
}

impl Discretizer {
    /// Fits quantile bins on `raw`. Numeric features with at most `m`
    /// distinct values get one code per value; categorical features keep
    /// their level set.
    pub fn fit(raw: &[RawObservation], specs: &[FeatureSpec], m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::NonPositiveModalities(m));
        }
        if raw.is_empty() {
            return Err(Error::EmptyPanel);
        }
        check_unique_ids(specs)?;
        let bins: Vec<(String, FeatureBins)> = specs
            .par_iter()
            .enumerate()
            .map(|(k, spec)| {
                let bins = match spec.kind {
                    FeatureKind::Numeric => {
                        let values: Vec<f64> = raw
                            .iter()
                            .filter_map(|o| match o.features[k] {
                                RawValue::Num(v) => Some(v),
                                _ => None,
                            })
                            .collect();
                        FeatureBins::Numeric {
                            relative_to: spec.relative_to,
                            edges: fit_numeric_edges(&values, m),
                        }
                    }
                    FeatureKind::Categorical => {
                        let values: Vec<&RawValue> = raw.iter().map(|o| &o.features[k]).collect();
                        FeatureBins::Categorical {
                            relative_to: spec.relative_to,
                            levels: fit_levels(&values),
                        }
                    }
                };
                (spec.feature_id.clone(), bins)
            })
            .collect();
        Ok(Discretizer {
            features: bins.into_iter().collect(),
        })
    }

    /// Maps every raw value to its code with these frozen bins.
    pub fn apply(&self, raw: &RawPanel) -> Result<DiscretizedPanel> {
        let bins: Vec<FeatureBins> = raw
            .specs()
            .iter()
            .map(|spec| {
                let b = self.features.get(&spec.feature_id).ok_or_else(|| {
                    Error::SpecMismatch(format!("no bins for feature {}", spec.feature_id))
                })?;
                if b.kind() != spec.kind {
                    return Err(Error::SpecMismatch(format!(
                        "feature {} has kind {:?} but bins are {:?}",
                        spec.feature_id,
                        spec.kind,
                        b.kind()
                    )));
                }
                Ok(b.clone())
            })
            .collect::<Result<_>>()?;
        let d = bins.len();
        let n = raw.len();
        let mut codes = Vec::with_capacity(n * d);
        let mut dates = Vec::with_capacity(n);
        let mut stock_ids = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for obs in raw.observations() {
            codes.extend(obs.features.iter().zip(&bins).map(|(v, b)| b.code(v)));
            dates.push(obs.date);
            stock_ids.push(obs.stock_id.clone());
            ys.push(obs.y);
        }
        Ok(DiscretizedPanel {
            specs: raw.specs().to_vec(),
            bins,
            dates,
            stock_ids,
            codes,
            ys,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Discretized, time-ordered panel. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedPanel {
    specs: Vec<FeatureSpec>,
    bins: Vec<FeatureBins>,
    dates: Vec<NaiveDate>,
    stock_ids: Vec<String>,
    /// Row-major `len() x d()` code matrix.
    codes: Vec<Code>,
    ys: Vec<Option<f64>>,
}

impl DiscretizedPanel {
    /// Builds a panel directly from codes, e.g. for tests or synthetic data
    /// already expressed in modality space. Rows must be time-ordered.
    pub fn from_codes(
        specs: Vec<FeatureSpec>,
        n_codes: &[usize],
        rows: Vec<(NaiveDate, String, Vec<Code>, Option<f64>)>,
    ) -> Result<Self> {
        if n_codes.len() != specs.len() {
            return Err(Error::DimensionMismatch {
                expected: specs.len(),
                got: n_codes.len(),
            });
        }
        check_unique_ids(&specs)?;
        let bins = specs
            .iter()
            .zip(n_codes)
            .map(|(s, &k)| match s.kind {
                FeatureKind::Numeric => FeatureBins::Numeric {
                    relative_to: s.relative_to,
                    edges: (0..k.saturating_sub(1)).map(|e| e as f64).collect(),
                },
                FeatureKind::Categorical => FeatureBins::Categorical {
                    relative_to: s.relative_to,
                    levels: (0..k).map(|e| e.to_string()).collect(),
                },
            })
            .collect();
        let d = specs.len();
        let mut panel = DiscretizedPanel {
            specs,
            bins,
            dates: Vec::with_capacity(rows.len()),
            stock_ids: Vec::with_capacity(rows.len()),
            codes: Vec::with_capacity(rows.len() * d),
            ys: Vec::with_capacity(rows.len()),
        };
        let mut last = None;
        for (date, id, x, y) in rows {
            if x.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: x.len(),
                });
            }
            for (k, &c) in x.iter().enumerate() {
                if c != MISSING && c as usize >= n_codes[k] {
                    return Err(Error::SpecMismatch(format!(
                        "code {c} out of range for feature {k}"
                    )));
                }
            }
            if last.is_some_and(|l| date < l) {
                return Err(Error::SpecMismatch("rows are not time-ordered".into()));
            }
            last = Some(date);
            panel.dates.push(date);
            panel.stock_ids.push(id);
            panel.codes.extend(x);
            panel.ys.push(y);
        }
        Ok(panel)
    }

    pub fn specs(&self) -> &[FeatureSpec] {
        &self.specs
    }

    pub fn bins(&self) -> &[FeatureBins] {
        &self.bins
    }

    pub fn d(&self) -> usize {
        self.specs.len()
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Number of codes of feature `k`, i.e. the size of its code set.
    pub fn n_codes(&self, k: usize) -> usize {
        self.bins[k].n_codes()
    }

    pub fn code_counts(&self) -> Vec<usize> {
        self.bins.iter().map(FeatureBins::n_codes).collect()
    }

    pub fn row(&self, i: usize) -> &[Code] {
        let d = self.d();
        &self.codes[i * d..(i + 1) * d]
    }

    pub fn date(&self, i: usize) -> NaiveDate {
        self.dates[i]
    }

    pub fn stock_id(&self, i: usize) -> &str {
        &self.stock_ids[i]
    }

    pub fn y(&self, i: usize) -> Option<f64> {
        self.ys[i]
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn view(&self) -> PanelView<'_> {
        PanelView {
            panel: self,
            start: 0,
            end: self.len(),
        }
    }

    /// Chronological split into the learning set (first `n` rows) and the
    /// aggregation set (the remaining rows).
    pub fn split(&self, n: usize) -> Result<TrainSplit<'_>> {
        let len = self.len();
        if n == 0 || n >= len {
            return Err(Error::BadSplitPoint { n, len });
        }
        if len - n <= n {
            log::warn!(
                "aggregation set ({} rows) is not larger than the learning set ({n} rows)",
                len - n
            );
        }
        Ok(TrainSplit {
            learn: PanelView {
                panel: self,
                start: 0,
                end: n,
            },
            aggregate: PanelView {
                panel: self,
                start: n,
                end: len,
            },
        })
    }

    /// Split point that puts `fraction` of the rows in the learning set.
    pub fn split_fraction(&self, fraction: f64) -> Result<TrainSplit<'_>> {
        let n = ((self.len() as f64) * fraction).floor() as usize;
        self.split(n.clamp(1, self.len().saturating_sub(1).max(1)))
    }
}

/// Contiguous row range of a panel.
#[derive(Debug, Clone, Copy)]
pub struct PanelView<'a> {
    panel: &'a DiscretizedPanel,
    start: usize,
    end: usize,
}

impl<'a> PanelView<'a> {
    pub fn new(panel: &'a DiscretizedPanel, rows: std::ops::Range<usize>) -> Self {
        assert!(rows.end <= panel.len() && rows.start <= rows.end);
        PanelView {
            panel,
            start: rows.start,
            end: rows.end,
        }
    }

    pub fn panel(&self) -> &'a DiscretizedPanel {
        self.panel
    }

    pub fn rows(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn first_date(&self) -> Option<NaiveDate> {
        (!self.is_empty()).then(|| self.panel.date(self.start))
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        (!self.is_empty()).then(|| self.panel.date(self.end - 1))
    }

    /// Iterates `(row index, codes, y)` over the rows of the view.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &'a [Code], Option<f64>)> + 'a {
        let panel = self.panel;
        (self.start..self.end).map(move |i| (i, panel.row(i), panel.y(i)))
    }
}

/// Learning set `D_n` followed by aggregation set `D_t`.
#[derive(Debug, Clone, Copy)]
pub struct TrainSplit<'a> {
    pub learn: PanelView<'a>,
    pub aggregate: PanelView<'a>,
}
