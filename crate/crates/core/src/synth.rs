//! Synthetic panels with planted rules.
//!
//! Each stock carries `d` numeric features, uniform on `[0, 1)`, whose true
//! modality is `floor(value * m)`. Features are observed at month-ends and
//! redrawn with probability `redraw_prob` each month, otherwise kept. The
//! monthly log excess return of a stock over the market factor is
//!
//! ```text
//! g = (ln(1 + effect) - sigma^2 / 2) / h + N(0, sigma^2 / h)
//! ```
//!
//! where `effect` sums the planted rules activated by the features observed
//! at the start of the month and `h` is the return horizon in months. Daily
//! returns bridge each month exactly, so the 3-month forward excess return
//! `y = exp(g_t + g_{t+1} + g_{t+2}) - 1` is what the price files realize,
//! and `E[y | x] = effect` when the features do not move over the horizon.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::backtest::calendar::{business_days_between, last_business_day};
use crate::backtest::data::{Market, Prices, Universe, UniverseRow};
use crate::error::{Error, Result};
use crate::panel::{Code, FeatureSpec, RawObservation, RawPanel, RawValue, RelativeTo};
use crate::rules::{Condition, Interval};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedInterval {
    pub feature: usize,
    pub lo: Code,
    pub hi: Code,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedRule {
    pub condition: Vec<PlantedInterval>,
    /// Shift of the expected 3-month excess return, decimal.
    pub effect: f64,
}

impl PlantedRule {
    pub fn new(condition: &[(usize, Code, Code)], effect: f64) -> Self {
        PlantedRule {
            condition: condition
                .iter()
                .map(|&(feature, lo, hi)| PlantedInterval { feature, lo, hi })
                .collect(),
            effect,
        }
    }

    pub fn to_condition(&self) -> Result<Condition> {
        let ivs = self
            .condition
            .iter()
            .map(|p| Interval::new(p.feature, p.lo, p.hi))
            .collect::<Result<Vec<_>>>()?;
        Condition::new(ivs)
    }

    fn activates(&self, x: &[Code]) -> bool {
        self.condition
            .iter()
            .all(|p| (p.lo..=p.hi).contains(&x[p.feature]))
    }
}

/// Replacement of the planted rules from `date` on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeShift {
    pub date: NaiveDate,
    pub planted: Vec<PlantedRule>,
}

fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2009, 1, 1).expect("valid date")
}
fn default_one() -> f64 {
    1.0
}
fn default_sectors() -> usize {
    4
}
fn default_peer_groups() -> usize {
    2
}
fn default_horizon() -> u32 {
    3
}
fn default_market_drift() -> f64 {
    0.0003
}
fn default_market_vol() -> f64 {
    0.01
}
fn default_cap_dispersion() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_stocks: usize,
    /// Number of monthly observation dates.
    pub n_dates: usize,
    /// Number of numeric features.
    pub d: usize,
    /// Modalities per numeric feature.
    pub m: usize,
    #[serde(default)]
    pub planted: Vec<PlantedRule>,
    /// Standard deviation of the 3-month log excess return noise.
    pub noise_sigma: f64,
    #[serde(default)]
    pub regime_shift: Option<RegimeShift>,
    /// Further shifts, applied in date order after `regime_shift`.
    #[serde(default)]
    pub regime_shifts: Vec<RegimeShift>,
    pub seed: u64,
    /// Month of the first observation.
    #[serde(default = "default_start")]
    pub start: NaiveDate,
    #[serde(default = "default_sectors")]
    pub n_sectors: usize,
    #[serde(default = "default_peer_groups")]
    pub peer_groups_per_sector: usize,
    /// Appends the sector as a categorical feature at index `d`.
    #[serde(default)]
    pub sector_feature: bool,
    /// Monthly probability that a feature is redrawn.
    #[serde(default = "default_one")]
    pub redraw_prob: f64,
    /// Correlation between consecutive features (AR(1) blend across the
    /// feature index on a Gaussian copula). `0` gives independent features.
    #[serde(default)]
    pub feature_correlation: f64,
    #[serde(default = "default_horizon")]
    pub horizon_months: u32,
    /// Daily mean and volatility of the market factor.
    #[serde(default = "default_market_drift")]
    pub market_drift: f64,
    #[serde(default = "default_market_vol")]
    pub market_vol: f64,
    /// Log-scale dispersion of the initial capitalizations.
    #[serde(default = "default_cap_dispersion")]
    pub cap_dispersion: f64,
}

impl SynthSpec {
    /// Spec with defaults for everything but the sizes, noise and seed.
    pub fn new(n_stocks: usize, n_dates: usize, d: usize, m: usize, noise_sigma: f64, seed: u64) -> Self {
        SynthSpec {
            n_stocks,
            n_dates,
            d,
            m,
            planted: Vec::new(),
            noise_sigma,
            regime_shift: None,
            regime_shifts: Vec::new(),
            seed,
            start: default_start(),
            n_sectors: default_sectors(),
            peer_groups_per_sector: default_peer_groups(),
            sector_feature: false,
            redraw_prob: 1.0,
            feature_correlation: 0.0,
            horizon_months: default_horizon(),
            market_drift: default_market_drift(),
            market_vol: default_market_vol(),
            cap_dispersion: default_cap_dispersion(),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Total number of features, including the sector feature.
    pub fn n_features(&self) -> usize {
        self.d + usize::from(self.sector_feature)
    }

    fn n_codes(&self, feature: usize) -> usize {
        if feature < self.d {
            self.m
        } else {
            self.n_sectors
        }
    }

    /// Regimes in date order, the first one starting at the beginning.
    fn regimes(&self) -> Vec<(Option<NaiveDate>, &[PlantedRule])> {
        let mut out: Vec<(Option<NaiveDate>, &[PlantedRule])> = vec![(None, &self.planted)];
        let mut shifts: Vec<&RegimeShift> = self.regime_shift.iter().chain(&self.regime_shifts).collect();
        shifts.sort_by_key(|s| s.date);
        out.extend(shifts.into_iter().map(|s| (Some(s.date), s.planted.as_slice())));
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InconsistentSpec(msg));
        if self.n_stocks == 0 || self.n_dates == 0 || self.d == 0 {
            return bad("n_stocks, n_dates and d must be positive".into());
        }
        if self.m < 2 || self.m > Code::MAX as usize {
            return bad(format!("m must lie in [2, {}], got {}", Code::MAX, self.m));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be finite and >= 0, got {}", self.noise_sigma));
        }
        if self.n_sectors == 0 || self.peer_groups_per_sector == 0 {
            return bad("n_sectors and peer_groups_per_sector must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.redraw_prob) {
            return bad(format!("redraw_prob must lie in [0, 1], got {}", self.redraw_prob));
        }
        if !(-1.0 < self.feature_correlation && self.feature_correlation < 1.0) {
            return bad(format!(
                "feature_correlation must lie in (-1, 1), got {}",
                self.feature_correlation
            ));
        }
        if self.horizon_months == 0 {
            return bad("horizon_months must be positive".into());
        }
        if !(self.market_vol >= 0.0 && self.market_drift.is_finite() && self.market_vol.is_finite()) {
            return bad("market drift and volatility must be finite, volatility >= 0".into());
        }
        if !(self.cap_dispersion >= 0.0 && self.cap_dispersion.is_finite()) {
            return bad(format!("cap_dispersion must be finite and >= 0, got {}", self.cap_dispersion));
        }
        let mut dates = Vec::new();
        for (date, rules) in self.regimes() {
            dates.extend(date);
            for r in rules {
                if !(r.effect.is_finite() && r.effect > -1.0) {
                    return bad(format!("planted effect {} must be finite and > -1", r.effect));
                }
                let mut seen = std::collections::HashSet::new();
                for p in &r.condition {
                    if p.feature >= self.n_features() {
                        return bad(format!("planted rule uses unknown feature {}", p.feature));
                    }
                    if p.lo > p.hi || p.hi as usize >= self.n_codes(p.feature) {
                        return bad(format!(
                            "planted interval [{}, {}] invalid for feature {}",
                            p.lo, p.hi, p.feature
                        ));
                    }
                    if !seen.insert(p.feature) {
                        return bad(format!("planted rule constrains feature {} twice", p.feature));
                    }
                }
            }
        }
        if dates.windows(2).any(|w| w[0] == w[1]) {
            return bad("two regime shifts share a date".into());
        }
        Ok(())
    }

    pub fn feature_specs(&self) -> Vec<FeatureSpec> {
        const RELATIVE: [RelativeTo; 4] = [
            RelativeTo::All,
            RelativeTo::Sector,
            RelativeTo::PeerGroup,
            RelativeTo::DeltaScore,
        ];
        let mut specs: Vec<FeatureSpec> = (0..self.d)
            .map(|k| FeatureSpec {
                relative_to: RELATIVE[k % RELATIVE.len()],
                ..FeatureSpec::numeric(format!("f{k}"))
            })
            .collect();
        if self.sector_feature {
            specs.push(FeatureSpec::categorical("sector"));
        }
        specs
    }
}

/// Generated panel and market data.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub spec: SynthSpec,
    pub panel: RawPanel,
    /// True modality codes of each panel row (numeric features, then the
    /// sector code when it is a feature).
    pub codes: Vec<Vec<Code>>,
    pub universe: Universe,
    pub prices: Prices,
    /// Daily returns of the market factor the excess returns refer to.
    pub market_returns: Vec<(NaiveDate, f64)>,
}

impl SynthData {
    pub fn market(&self) -> Market {
        Market {
            universe: self.universe.clone(),
            prices: self.prices.clone(),
        }
    }

    /// Writes `features.csv`, `returns.csv`, `universe.csv`, `prices.csv`
    /// and `market.csv` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let specs = self.panel.specs();
        let mut w = csv::Writer::from_path(dir.join("features.csv"))?;
        let mut header = vec!["date".to_string(), "stock_id".to_string()];
        header.extend(specs.iter().map(|s| s.feature_id.clone()));
        w.write_record(&header)?;
        let mut r = csv::Writer::from_path(dir.join("returns.csv"))?;
        r.write_record(["date", "stock_id", "fwd_excess_return_3m"])?;
        for o in self.panel.observations() {
            let mut rec = vec![o.date.to_string(), o.stock_id.clone()];
            rec.extend(o.features.iter().map(|v| match v {
                RawValue::Num(x) => x.to_string(),
                RawValue::Label(s) => s.clone(),
                RawValue::Missing => String::new(),
            }));
            w.write_record(&rec)?;
            if let Some(y) = o.y {
                r.write_record([o.date.to_string(), o.stock_id.clone(), y.to_string()])?;
            }
        }
        w.flush()?;
        r.flush()?;
        self.universe.write_csv(&dir.join("universe.csv"))?;
        self.prices.write_csv(&dir.join("prices.csv"))?;
        let mut mk = csv::Writer::from_path(dir.join("market.csv"))?;
        mk.write_record(["date", "total_return_daily"])?;
        for (d, v) in &self.market_returns {
            mk.write_record([d.to_string(), v.to_string()])?;
        }
        mk.flush()?;
        Ok(())
    }
}

/// Independent random streams, so that the panel does not depend on whether
/// daily prices are generated.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

struct Monthly {
    /// Month-end boundaries `t_0 .. t_{n_dates + h - 1}`.
    bounds: Vec<NaiveDate>,
    /// `[stock][observation] -> raw uniforms`.
    values: Vec<Vec<Vec<f64>>>,
    sectors: Vec<usize>,
    peer_groups: Vec<usize>,
    /// `[stock][month]` log excess return over `(t_j, t_{j+1}]`.
    g: Vec<Vec<f64>>,
}

fn month_bounds(spec: &SynthSpec) -> Vec<NaiveDate> {
    let n = spec.n_dates + spec.horizon_months as usize;
    let (mut y, mut m) = (spec.start.year(), spec.start.month());
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(last_business_day(y, m));
        if m == 12 {
            y += 1;
            m = 1;
        } else {
            m += 1;
        }
    }
    out
}

fn draw_features(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if spec.feature_correlation == 0.0 {
        return (0..spec.d).map(|_| rng.random::<f64>()).collect();
    }
    let rho = spec.feature_correlation;
    let std = Normal::standard();
    let mut z: f64 = rng.sample(StandardNormal);
    let mut out = Vec::with_capacity(spec.d);
    for k in 0..spec.d {
        if k > 0 {
            let e: f64 = rng.sample(StandardNormal);
            z = rho * z + (1.0 - rho * rho).sqrt() * e;
        }
        // keep the value inside [0, 1) so the modality stays below m
        out.push(std.cdf(z).min(1.0 - f64::EPSILON));
    }
    out
}

fn true_codes(spec: &SynthSpec, values: &[f64], sector: usize) -> Vec<Code> {
    let mut codes: Vec<Code> = values
        .iter()
        .map(|v| ((v * spec.m as f64).floor() as usize).min(spec.m - 1) as Code)
        .collect();
    if spec.sector_feature {
        codes.push(sector as Code);
    }
    codes
}

fn monthly(spec: &SynthSpec) -> Monthly {
    let bounds = month_bounds(spec);
    let n_months = bounds.len() - 1;
    let h = spec.horizon_months as f64;
    let regimes = spec.regimes();

    let mut feat_rng = stream(spec.seed, 1);
    let mut noise_rng = stream(spec.seed, 2);
    let mut uni_rng = stream(spec.seed, 4);
    let sectors: Vec<usize> = (0..spec.n_stocks)
        .map(|_| uni_rng.random_range(0..spec.n_sectors))
        .collect();
    let peer_groups: Vec<usize> = (0..spec.n_stocks)
        .map(|_| uni_rng.random_range(0..spec.peer_groups_per_sector))
        .collect();

    let mut values = Vec::with_capacity(spec.n_stocks);
    let mut g = Vec::with_capacity(spec.n_stocks);
    for i in 0..spec.n_stocks {
        let mut path: Vec<Vec<f64>> = Vec::with_capacity(spec.n_dates);
        let mut current = draw_features(spec, &mut feat_rng);
        path.push(current.clone());
        for _ in 1..spec.n_dates {
            let fresh = draw_features(spec, &mut feat_rng);
            for (c, f) in current.iter_mut().zip(fresh) {
                if feat_rng.random::<f64>() < spec.redraw_prob {
                    *c = f;
                }
            }
            path.push(current.clone());
        }
        let mut gi = Vec::with_capacity(n_months);
        for j in 0..n_months {
            let x = true_codes(spec, &path[j.min(spec.n_dates - 1)], sectors[i]);
            let start = bounds[j];
            let rules = regimes
                .iter()
                .rev()
                .find(|(d, _)| d.is_none_or(|d| d <= start))
                .map(|(_, r)| *r)
                .unwrap_or(&[]);
            let effect: f64 = rules.iter().filter(|r| r.activates(&x)).map(|r| r.effect).sum();
            let drift = ((1.0 + effect).max(1e-6).ln() - spec.noise_sigma.powi(2) / 2.0) / h;
            let z: f64 = noise_rng.sample(StandardNormal);
            gi.push(drift + spec.noise_sigma / h.sqrt() * z);
        }
        values.push(path);
        g.push(gi);
    }
    Monthly {
        bounds,
        values,
        sectors,
        peer_groups,
        g,
    }
}

fn stock_id(i: usize, n: usize) -> String {
    let width = n.to_string().len().max(4);
    format!("S{:0width$}", i + 1)
}

fn build_panel(spec: &SynthSpec, mo: &Monthly) -> Result<(RawPanel, Vec<Vec<Code>>)> {
    let h = spec.horizon_months as usize;
    let mut obs = Vec::with_capacity(spec.n_stocks * spec.n_dates);
    let mut codes = Vec::with_capacity(obs.capacity());
    // rows in (date, stock_id) order, matching RawPanel's sort
    for j in 0..spec.n_dates {
        for i in 0..spec.n_stocks {
            let v = &mo.values[i][j];
            let mut features: Vec<RawValue> = v.iter().map(|&x| RawValue::Num(x)).collect();
            if spec.sector_feature {
                features.push(RawValue::Label(format!("S{}", mo.sectors[i])));
            }
            let y = mo.g[i][j..j + h].iter().sum::<f64>().exp() - 1.0;
            obs.push(RawObservation {
                date: mo.bounds[j],
                stock_id: stock_id(i, spec.n_stocks),
                features,
                y: Some(y),
            });
            codes.push(true_codes(spec, v, mo.sectors[i]));
        }
    }
    Ok((RawPanel::new(spec.feature_specs(), obs)?, codes))
}

/// Panel only, without universe or prices. Identical to the panel of
/// [`generate`] for the same spec.
pub fn generate_panel(spec: &SynthSpec) -> Result<(RawPanel, Vec<Vec<Code>>)> {
    spec.validate()?;
    build_panel(spec, &monthly(spec))
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mo = monthly(spec);
    let (panel, codes) = build_panel(spec, &mo)?;
    let n = spec.n_stocks;
    let ids: Vec<String> = (0..n).map(|i| stock_id(i, n)).collect();

    let mut day_rng = stream(spec.seed, 3);
    let mut uni_rng = stream(spec.seed, 5);
    let daily_sd = spec.noise_sigma / (21.0 * spec.horizon_months as f64).sqrt();
    let mut market_returns = Vec::new();
    let mut triples = Vec::new();
    // cumulative growth of each stock since t_0, sampled at observation dates
    let mut growth = vec![1.0f64; n];
    let mut growth_at = vec![growth.clone()];
    for j in 0..mo.bounds.len() - 1 {
        let days = business_days_between(mo.bounds[j], mo.bounds[j + 1]);
        let nb = days.len() as f64;
        let market: Vec<f64> = days
            .iter()
            .map(|_| {
                let z: f64 = day_rng.sample(StandardNormal);
                spec.market_drift + spec.market_vol * z
            })
            .collect();
        let mut month = vec![Vec::with_capacity(days.len()); n];
        for (i, row) in month.iter_mut().enumerate() {
            let z: Vec<f64> = days
                .iter()
                .map(|_| day_rng.sample::<f64, _>(StandardNormal) * daily_sd)
                .collect();
            let zbar = z.iter().sum::<f64>() / nb;
            for (zd, rm) in z.iter().zip(&market) {
                let e = zd - zbar + mo.g[i][j] / nb;
                let r = (1.0 + rm) * e.exp() - 1.0;
                growth[i] *= 1.0 + r;
                row.push(r);
            }
        }
        for (di, d) in days.iter().enumerate() {
            market_returns.push((*d, market[di]));
            for i in 0..n {
                triples.push((*d, ids[i].clone(), month[i][di]));
            }
        }
        growth_at.push(growth.clone());
    }
    let prices = Prices::from_triples(triples)?;

    let sizes: Vec<f64> = {
        let ln = LogNormal::new(0.0, spec.cap_dispersion).expect("valid lognormal");
        (0..n).map(|_| ln.sample(&mut uni_rng)).collect()
    };
    let ratings: Vec<f64> = (0..n).map(|_| uni_rng.random::<f64>() * 100.0).collect();
    let mut snapshots = BTreeMap::new();
    for j in 0..spec.n_dates {
        let caps: Vec<f64> = (0..n).map(|i| sizes[i] * growth_at[j][i]).collect();
        let total: f64 = caps.iter().sum();
        let rows = (0..n)
            .map(|i| {
                let z: f64 = uni_rng.sample(StandardNormal);
                UniverseRow {
                    stock_id: ids[i].clone(),
                    cap_weight: caps[i] / total,
                    sector: format!("S{}", mo.sectors[i]),
                    peer_group: format!("S{}-P{}", mo.sectors[i], mo.peer_groups[i]),
                    esg_rating: ratings[i] + 5.0 * z,
                }
            })
            .collect();
        snapshots.insert(mo.bounds[j], rows);
    }
    Ok(SynthData {
        spec: spec.clone(),
        panel,
        codes,
        universe: Universe::new(snapshots)?,
        prices,
        market_returns,
    })
}
