//! Rule algebra: hyper-rectangle conditions, activation, conditional means,
//! coverage and significance, and suitable intersections.

use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bits::BitSet;
use crate::error::{Error, Result};
use crate::panel::{Code, FeatureBins, FeatureKind, FeatureSpec, PanelView, RelativeTo, MISSING};

/// Closed code interval `[lo, hi]` on one feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Interval {
    pub feature_index: usize,
    pub lo: Code,
    pub hi: Code,
}

impl Interval {
    pub fn new(feature_index: usize, lo: Code, hi: Code) -> Result<Self> {
        if lo > hi || hi == MISSING {
            return Err(Error::InvalidParameter(format!(
                "bad interval [{lo}, {hi}] on feature {feature_index}"
            )));
        }
        Ok(Interval {
            feature_index,
            lo,
            hi,
        })
    }

    pub fn contains(&self, code: Code) -> bool {
        code != MISSING && self.lo <= code && code <= self.hi
    }

    /// Whether the interval is strictly narrower than a code set of size `n_codes`.
    pub fn is_narrow(&self, n_codes: usize) -> bool {
        self.lo > 0 || (self.hi as usize) + 1 < n_codes
    }
}

/// Hyper-rectangle in code space. Features without an interval are
/// unconstrained.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Condition {
    intervals: Vec<Interval>,
}

impl Condition {
    /// The full space: activated by every feature vector.
    pub fn full() -> Self {
        Condition::default()
    }

    pub fn new(mut intervals: Vec<Interval>) -> Result<Self> {
        intervals.sort();
        if intervals
            .windows(2)
            .any(|w| w[0].feature_index == w[1].feature_index)
        {
            return Err(Error::InvalidParameter(
                "condition has two intervals on the same feature".into(),
            ));
        }
        Ok(Condition { intervals })
    }

    pub fn single(feature_index: usize, lo: Code, hi: Code) -> Result<Self> {
        Ok(Condition {
            intervals: vec![Interval::new(feature_index, lo, hi)?],
        })
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn interval_on(&self, feature_index: usize) -> Option<&Interval> {
        self.intervals
            .binary_search_by_key(&feature_index, |i| i.feature_index)
            .ok()
            .map(|i| &self.intervals[i])
    }

    /// Membership test without dimension checking.
    pub fn contains(&self, x: &[Code]) -> bool {
        self.intervals
            .iter()
            .all(|iv| iv.contains(x[iv.feature_index]))
    }

    /// Whether `x` satisfies every interval. Missing codes never do.
    pub fn activates(&self, x: &[Code]) -> Result<bool> {
        if let Some(last) = self.intervals.last() {
            if last.feature_index >= x.len() {
                return Err(Error::DimensionMismatch {
                    expected: last.feature_index + 1,
                    got: x.len(),
                });
            }
        }
        Ok(self.contains(x))
    }

    /// Number of intervals strictly narrower than their feature's code set.
    pub fn complexity(&self, n_codes: &[usize]) -> usize {
        self.intervals
            .iter()
            .filter(|iv| iv.is_narrow(n_codes[iv.feature_index]))
            .count()
    }

    /// Geometric intersection, `None` when empty.
    pub fn intersection(&self, other: &Condition) -> Option<Condition> {
        let mut out = Vec::with_capacity(self.intervals.len() + other.intervals.len());
        let (mut a, mut b) = (self.intervals.iter().peekable(), other.intervals.iter().peekable());
        loop {
            match (a.peek(), b.peek()) {
                (Some(x), Some(y)) if x.feature_index == y.feature_index => {
                    let lo = x.lo.max(y.lo);
                    let hi = x.hi.min(y.hi);
                    if lo > hi {
                        return None;
                    }
                    out.push(Interval {
                        feature_index: x.feature_index,
                        lo,
                        hi,
                    });
                    a.next();
                    b.next();
                }
                (Some(x), Some(y)) if x.feature_index < y.feature_index => {
                    out.push(**x);
                    a.next();
                }
                (Some(_), Some(y)) => {
                    out.push(**y);
                    b.next();
                }
                (Some(x), None) => {
                    out.push(**x);
                    a.next();
                }
                (None, Some(y)) => {
                    out.push(**y);
                    b.next();
                }
                (None, None) => break,
            }
        }
        Some(Condition { intervals: out })
    }

    /// Whether every point of `self` lies in `other`.
    pub fn is_subset_of(&self, other: &Condition) -> bool {
        other.intervals.iter().all(|o| match self.interval_on(o.feature_index) {
            Some(s) => o.lo <= s.lo && s.hi <= o.hi,
            None => false,
        })
    }

    /// Lexicographic key used to break ties between equally ranked rules.
    pub(crate) fn tie_key(&self) -> impl Iterator<Item = (usize, Code, Code)> + '_ {
        self.intervals
            .iter()
            .map(|i| (i.feature_index, i.lo, i.hi))
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.intervals.is_empty() {
            return f.write_str("TRUE");
        }
        for (k, iv) in self.intervals.iter().enumerate() {
            if k > 0 {
                f.write_str(" AND ")?;
            }
            write!(f, "x{} in [{}, {}]", iv.feature_index, iv.lo, iv.hi)?;
        }
        Ok(())
    }
}

/// Significance function `z(r, D_n, alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZKind {
    /// `q(1 - alpha/2) * sd(y on D_n) / sqrt(n(r, D_n))`, with `q` the
    /// standard normal quantile.
    #[default]
    Gaussian,
}

impl std::str::FromStr for ZKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(ZKind::Gaussian),
            other => Err(Error::Config(format!("unknown z_kind '{other}'"))),
        }
    }
}

impl fmt::Display for ZKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ZKind::Gaussian => f.write_str("gaussian"),
        }
    }
}

/// Two-sided standard normal critical value `q(1 - alpha/2)`.
pub fn normal_critical_value(alpha: f64) -> f64 {
    if alpha >= 1.0 {
        return 0.0;
    }
    if alpha <= 0.0 {
        return f64::INFINITY;
    }
    Normal::standard().inverse_cdf(1.0 - alpha / 2.0)
}

/// Rule-search parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    /// Number of modalities per numeric feature.
    pub m: usize,
    /// False-rejection rate of the significance test.
    pub alpha: f64,
    pub c_min: f64,
    pub c_max: f64,
    pub cp_max: usize,
    /// Number of top-ranked rules of each parent complexity used to build the next level.
    pub branch_width: usize,
    pub z_kind: ZKind,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            m: 10,
            alpha: 0.05,
            c_min: 0.05,
            c_max: 0.5,
            cp_max: 2,
            branch_width: 20,
            z_kind: ZKind::Gaussian,
        }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::NonPositiveModalities(self.m));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.c_min >= 0.0 && self.c_min < self.c_max && self.c_max <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "coverage bounds must satisfy 0 <= c_min < c_max <= 1, got [{}, {}]",
                self.c_min, self.c_max
            )));
        }
        if self.cp_max == 0 {
            return Err(Error::InvalidParameter("cp_max must be at least 1".into()));
        }
        if self.branch_width == 0 {
            return Err(Error::InvalidParameter("branch width M must be at least 1".into()));
        }
        Ok(())
    }
}

/// Labeled observations of a learning set, indexed for fast activation
/// queries. Rows without a realized return are dropped.
#[derive(Debug, Clone)]
pub struct LearningSet {
    n_codes: Vec<usize>,
    codes: Vec<Code>,
    y: Vec<f64>,
    /// `code_sets[k][c]`: rows whose feature `k` has code `c`.
    code_sets: Vec<Vec<BitSet>>,
    mean: f64,
    sd: f64,
}

impl LearningSet {
    pub fn from_view(view: &PanelView<'_>) -> Self {
        let panel = view.panel();
        let mut codes = Vec::new();
        let mut y = Vec::new();
        for (_, x, yi) in view.iter() {
            if let Some(yi) = yi {
                codes.extend_from_slice(x);
                y.push(yi);
            }
        }
        Self::from_rows(panel.code_counts(), codes, y)
    }

    /// `codes` is row-major with `n_codes.len()` columns.
    pub fn from_rows(n_codes: Vec<usize>, codes: Vec<Code>, y: Vec<f64>) -> Self {
        let d = n_codes.len();
        let n = y.len();
        assert_eq!(codes.len(), n * d, "code matrix shape");
        let mut code_sets: Vec<Vec<BitSet>> = n_codes
            .iter()
            .map(|&k| vec![BitSet::empty(n); k])
            .collect();
        for i in 0..n {
            for k in 0..d {
                let c = codes[i * d + k];
                if c != MISSING {
                    code_sets[k][c as usize].insert(i);
                }
            }
        }
        let mean = if n == 0 { 0.0 } else { y.iter().sum::<f64>() / n as f64 };
        let sd = if n < 2 {
            0.0
        } else {
            (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        LearningSet {
            n_codes,
            codes,
            y,
            code_sets,
            mean,
            sd,
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn d(&self) -> usize {
        self.n_codes.len()
    }

    pub fn n_codes(&self) -> &[usize] {
        &self.n_codes
    }

    pub fn row(&self, i: usize) -> &[Code] {
        let d = self.d();
        &self.codes[i * d..(i + 1) * d]
    }

    pub fn ys(&self) -> &[f64] {
        &self.y
    }

    /// `mu(X, D_n)`: the mean return over the whole learning set.
    pub fn global_mean(&self) -> f64 {
        self.mean
    }

    /// Sample standard deviation of returns over the learning set.
    pub fn global_sd(&self) -> f64 {
        self.sd
    }

    /// Rows with a code in `[lo, hi]` on feature `k`.
    pub fn interval_set(&self, iv: &Interval) -> BitSet {
        let mut out = BitSet::empty(self.len());
        let top = self.n_codes[iv.feature_index].saturating_sub(1);
        for c in iv.lo as usize..=(iv.hi as usize).min(top) {
            out.union_with(&self.code_sets[iv.feature_index][c]);
        }
        out
    }

    /// Activation set of a condition.
    pub fn activation(&self, condition: &Condition) -> BitSet {
        let mut bits = BitSet::full(self.len());
        for iv in condition.intervals() {
            bits.intersect_with(&self.interval_set(iv));
        }
        bits
    }

    /// `(n(r, D_n), sum of y over activations)`, summed in row order.
    pub fn stats(&self, bits: &BitSet) -> (usize, f64) {
        let mut count = 0;
        let mut sum = 0.0;
        for i in bits.ones() {
            count += 1;
            sum += self.y[i];
        }
        (count, sum)
    }

    pub fn n_activations(&self, condition: &Condition) -> usize {
        self.activation(condition).count()
    }

    /// Mean return over the rows activating `condition`, 0 when none does.
    pub fn conditional_mean(&self, condition: &Condition) -> f64 {
        let (count, sum) = self.stats(&self.activation(condition));
        mean_or_zero(sum, count)
    }

    pub fn coverage_ratio(&self, condition: &Condition) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::EmptyLearningSet);
        }
        Ok(self.n_activations(condition) as f64 / self.len() as f64)
    }

    /// Significance threshold for a rule with `activations` activations.
    pub fn significance_threshold(&self, activations: usize, alpha: f64, z_kind: ZKind) -> Result<f64> {
        if activations == 0 {
            return Err(Error::NoActivations);
        }
        match z_kind {
            ZKind::Gaussian => {
                let q = normal_critical_value(alpha);
                if q == 0.0 {
                    return Ok(0.0);
                }
                Ok(q * self.sd / (activations as f64).sqrt())
            }
        }
    }

    /// Coverage and significance conditions.
    pub fn is_suitable(&self, rule: &Rule, params: &SearchParams) -> bool {
        if self.is_empty() || rule.activations == 0 {
            return false;
        }
        let coverage = rule.activations as f64 / self.len() as f64;
        if coverage < params.c_min || coverage > params.c_max {
            return false;
        }
        match self.significance_threshold(rule.activations, params.alpha, params.z_kind) {
            Ok(z) => (rule.prediction - self.mean).abs() >= z,
            Err(_) => false,
        }
    }

    /// Evaluates a condition into a rule on this learning set.
    pub fn rule(&self, condition: Condition) -> Rule {
        let bits = self.activation(&condition);
        self.rule_with_bits(condition, &bits)
    }

    pub(crate) fn rule_with_bits(&self, condition: Condition, bits: &BitSet) -> Rule {
        let (count, sum) = self.stats(bits);
        let prediction = mean_or_zero(sum, count);
        let complexity = condition.complexity(&self.n_codes);
        Rule::new(condition, prediction, count, complexity, self.mean)
    }

    /// Suitable-intersection test of two rules.
    pub fn intersect(&self, a: &Rule, b: &Rule) -> std::result::Result<Condition, IntersectRejection> {
        let bits_a = self.activation(&a.condition);
        let bits_b = self.activation(&b.condition);
        self.intersect_with_bits(a, &bits_a, b, &bits_b)
            .map(|(c, _)| c)
    }

    pub(crate) fn intersect_with_bits(
        &self,
        a: &Rule,
        bits_a: &BitSet,
        b: &Rule,
        bits_b: &BitSet,
    ) -> std::result::Result<(Condition, BitSet), IntersectRejection> {
        let cond = a
            .condition
            .intersection(&b.condition)
            .ok_or(IntersectRejection::Empty)?;
        let mut bits = bits_a.clone();
        bits.intersect_with(bits_b);
        let n = bits.count();
        if n == a.activations || n == b.activations {
            return Err(IntersectRejection::ActivationUnchanged);
        }
        if cond.complexity(&self.n_codes) != a.complexity + b.complexity {
            return Err(IntersectRejection::SharedFeature);
        }
        Ok((cond, bits))
    }
}

fn mean_or_zero(sum: f64, count: usize) -> f64 {
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Why two rules do not form a suitable intersection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntersectRejection {
    /// The hyper-rectangles do not meet.
    Empty,
    /// The intersection is activated by exactly the same rows as one parent.
    ActivationUnchanged,
    /// The parents constrain a common feature.
    SharedFeature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Positive,
    Negative,
}

/// If-Then rule: condition, conditional-mean prediction and activation count
/// on the learning set it was built on.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub condition: Condition,
    pub prediction: f64,
    pub activations: usize,
    pub complexity: usize,
    /// Sign of `prediction - mu(X, D_n)`, frozen at construction.
    pub sign: Sign,
    /// `|prediction - mu(X, D_n)| * sqrt(activations)`.
    pub criterion: f64,
    /// Full-space fallback appended to complete a covering.
    pub is_default: bool,
}

impl Rule {
    pub fn new(
        condition: Condition,
        prediction: f64,
        activations: usize,
        complexity: usize,
        global_mean: f64,
    ) -> Self {
        let delta = prediction - global_mean;
        Rule {
            condition,
            prediction,
            activations,
            complexity,
            sign: if delta < 0.0 { Sign::Negative } else { Sign::Positive },
            criterion: delta.abs() * (activations as f64).sqrt(),
            is_default: false,
        }
    }

    /// Full-space rule predicting the global mean.
    pub fn default_rule(set: &LearningSet) -> Self {
        let mut r = Rule::new(Condition::full(), set.global_mean(), set.len(), 0, set.global_mean());
        r.criterion = 0.0;
        r.is_default = true;
        r
    }

    pub fn activates(&self, x: &[Code]) -> bool {
        self.condition.contains(x)
    }

    /// Ranking: criterion descending, then lower complexity, then
    /// lexicographically smaller intervals.
    pub fn rank_cmp(&self, other: &Rule) -> std::cmp::Ordering {
        other
            .criterion
            .total_cmp(&self.criterion)
            .then(self.complexity.cmp(&other.complexity))
            .then_with(|| self.condition.tie_key().cmp(other.condition.tie_key()))
    }

    /// If-Then rendering in plain words.
    pub fn describe(&self, specs: &[FeatureSpec], bins: &[FeatureBins]) -> String {
        let then = match self.sign {
            Sign::Positive => "Opportunity",
            Sign::Negative => "Risk",
        };
        if self.condition.intervals().is_empty() {
            return format!("OTHERWISE predict {:+.2}%", self.prediction * 100.0);
        }
        let parts: Vec<String> = self
            .condition
            .intervals()
            .iter()
            .map(|iv| describe_interval(iv, &specs[iv.feature_index], &bins[iv.feature_index]))
            .collect();
        format!(
            "WHEN {} THEN {} ({:+.2}%)",
            parts.join(" AND "),
            then,
            self.prediction * 100.0
        )
    }
}

fn describe_interval(iv: &Interval, spec: &FeatureSpec, bins: &FeatureBins) -> String {
    let name = &spec.feature_id;
    let relative = match spec.relative_to {
        RelativeTo::All => String::new(),
        RelativeTo::DeltaScore => " (delta score)".to_string(),
        other => format!(" relative to {other}"),
    };
    if spec.kind == FeatureKind::Categorical {
        let levels: Vec<String> = (iv.lo..=iv.hi).map(|c| bins.describe_code(c)).collect();
        return format!("{name} is one of {{{}}}", levels.join(", "));
    }
    let top = bins.n_codes().saturating_sub(1) as Code;
    let level = if iv.lo == 0 && iv.hi >= top {
        "is any value".to_string()
    } else if iv.lo == top {
        "is at the maximum".to_string()
    } else if iv.hi == 0 {
        "is at the minimum".to_string()
    } else if iv.lo == 0 {
        let frac = (iv.hi as f64 + 1.0) / (top as f64 + 1.0);
        if frac <= 0.3 {
            "is very low".to_string()
        } else if frac <= 0.5 {
            "is low".to_string()
        } else {
            "is not high".to_string()
        }
    } else if iv.hi >= top {
        let frac = iv.lo as f64 / (top as f64 + 1.0);
        if frac >= 0.7 {
            "is very high".to_string()
        } else if frac >= 0.5 {
            "is high".to_string()
        } else {
            "is not low".to_string()
        }
    } else {
        format!("is in modalities [{}, {}]", iv.lo, iv.hi)
    };
    format!("{name} {level}{relative}")
}

/// JSON record of one rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleRecord {
    pub intervals: Vec<IntervalRecord>,
    pub prediction: f64,
    pub activations: usize,
    pub learned_at: NaiveDate,
    pub complexity: usize,
    pub sign: Sign,
    #[serde(default)]
    pub is_default: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRecord {
    pub feature_id: String,
    pub lo: Code,
    pub hi: Code,
}

/// Covering rule set selected at a learning date.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleSet {
    pub rules: Vec<Rule>,
    pub learned_at: NaiveDate,
    /// Feature ids in panel order; interval indices refer to these.
    pub feature_ids: Vec<String>,
}

impl RuleSet {
    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Whether some rule activates `x`.
    pub fn covers(&self, x: &[Code]) -> bool {
        self.rules.iter().any(|r| r.activates(x))
    }

    pub fn to_records(&self) -> Vec<RuleRecord> {
        self.rules
            .iter()
            .map(|r| RuleRecord {
                intervals: r
                    .condition
                    .intervals()
                    .iter()
                    .map(|iv| IntervalRecord {
                        feature_id: self.feature_ids[iv.feature_index].clone(),
                        lo: iv.lo,
                        hi: iv.hi,
                    })
                    .collect(),
                prediction: r.prediction,
                activations: r.activations,
                learned_at: self.learned_at,
                complexity: r.complexity,
                sign: r.sign,
                is_default: r.is_default,
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_records())?)
    }

    /// Parses a rule list, resolving feature ids against `feature_ids`.
    pub fn from_json(s: &str, feature_ids: &[String]) -> Result<Self> {
        let records: Vec<RuleRecord> = serde_json::from_str(s)?;
        let learned_at = records
            .first()
            .map(|r| r.learned_at)
            .ok_or_else(|| Error::parse("rules.json", "empty rule list"))?;
        let mut rules = Vec::with_capacity(records.len());
        for rec in records {
            let intervals = rec
                .intervals
                .iter()
                .map(|iv| {
                    let k = feature_ids
                        .iter()
                        .position(|f| f == &iv.feature_id)
                        .ok_or_else(|| {
                            Error::SpecMismatch(format!("unknown feature {}", iv.feature_id))
                        })?;
                    Interval::new(k, iv.lo, iv.hi)
                })
                .collect::<Result<Vec<_>>>()?;
            rules.push(Rule {
                condition: Condition::new(intervals)?,
                prediction: rec.prediction,
                activations: rec.activations,
                complexity: rec.complexity,
                sign: rec.sign,
                criterion: 0.0,
                is_default: rec.is_default,
            });
        }
        Ok(RuleSet {
            rules,
            learned_at,
            feature_ids: feature_ids.to_vec(),
        })
    }

    /// If-Then listing, one rule per line.
    pub fn describe(&self, specs: &[FeatureSpec], bins: &[FeatureBins]) -> Vec<String> {
        self.rules.iter().map(|r| r.describe(specs, bins)).collect()
    }
}
