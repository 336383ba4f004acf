//! Walk-forward protocol: yearly rule learning on an expanding history,
//! daily aggregation updates out of sample, and monthly screened portfolios.
//!
//! A cycle starts at the score date of each December review. Rules are
//! designed on every observation whose forward return has been realized by
//! then, and the resulting rule set drives the portfolios held over the
//! following calendar year. Between learnings the aggregation weights absorb
//! each newly realized return, in order of realization.

use std::collections::{BTreeMap, HashMap};

use chrono::{Datelike, Duration, NaiveDate};
use rayon::prelude::*;
use serde::Serialize;

use crate::aggregate::{default_eta, sample_sd, score, AggregationState, LossKind};
use crate::backtest::calendar::{last_business_day, monthly_reviews, resolution_date, Review};
use crate::backtest::data::{Market, UniverseRow, UniverseSnapshot};
use crate::backtest::kpi::{kpis_with_risk_free, KpiReport};
use crate::backtest::screens::{best_in_class, ml_screen, sector_match};
use crate::backtest::simulate::{simulate, PortfolioSeries};
use crate::error::{Error, Result};
use crate::panel::{DiscretizedPanel, Discretizer, RawPanel};
use crate::rulegen::{design_rules, select_covering, LevelReport};
use crate::rules::{LearningSet, RuleSet, SearchParams};

/// Maps a universe snapshot to portfolio weights for one strategy leg.
type Screen<'a> = Box<dyn Fn(&UniverseSnapshot) -> Result<Vec<f64>> + Sync + 'a>;

pub const BENCHMARK: &str = "Benchmark";
pub const POSITIVE_ML: &str = "Positive ML";
pub const POSITIVE_SECTOR_MATCHED: &str = "Positive Sector-Matched";
pub const NEGATIVE_ML: &str = "Negative ML";

pub fn best_in_class_name(x: f64) -> String {
    format!("Best-in-class {}%", (x * 100.0).round())
}

pub fn learning_y_name(year: i32) -> String {
    format!("LEARNING {year}")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WalkForwardConfig {
    pub search: SearchParams,
    /// Calendar years of history before the first learning.
    pub initial_years: u32,
    /// Horizon of the forward return, in months.
    pub horizon_months: u32,
    /// Business days between the score date and the review date.
    pub score_lag_days: u32,
    /// Share of the realized history used to design rules; the rest warms up
    /// the aggregation weights and calibrates the dead zone. `1.0` designs on
    /// everything and starts from uniform weights.
    pub design_fraction: f64,
    /// Fixed learning rate; tuned per cycle when `None`.
    pub eta: Option<f64>,
    /// Fixed score dead zone; calibrated per cycle when `None`.
    pub epsilon: Option<f64>,
    pub loss_kind: LossKind,
    pub loss_cap: f64,
    pub best_in_class_x: f64,
    pub periods_per_year: f64,
    pub risk_free: f64,
    /// Last date of the backtest; the last price date when `None`.
    pub end: Option<NaiveDate>,
}

impl Default for WalkForwardConfig {
    fn default() -> Self {
        WalkForwardConfig {
            search: SearchParams::default(),
            initial_years: 3,
            horizon_months: 3,
            score_lag_days: 4,
            design_fraction: 1.0,
            eta: None,
            epsilon: None,
            loss_kind: LossKind::Squared,
            loss_cap: 1.0,
            best_in_class_x: 0.30,
            periods_per_year: 252.0,
            risk_free: 0.0,
            end: None,
        }
    }
}

impl WalkForwardConfig {
    pub fn validate(&self) -> Result<()> {
        self.search.validate()?;
        if self.initial_years == 0 {
            return Err(Error::InvalidParameter("initial_years must be >= 1".into()));
        }
        if self.horizon_months == 0 {
            return Err(Error::InvalidParameter("horizon_months must be >= 1".into()));
        }
        if !(self.design_fraction > 0.0 && self.design_fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "design_fraction must lie in (0, 1], got {}",
                self.design_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.best_in_class_x) {
            return Err(Error::InvalidParameter(format!(
                "best_in_class_x must lie in [0, 1), got {}",
                self.best_in_class_x
            )));
        }
        if !(self.periods_per_year > 0.0) {
            return Err(Error::InvalidParameter("periods_per_year must be > 0".into()));
        }
        Ok(())
    }
}

/// Rules and aggregation settings frozen at one yearly learning.
#[derive(Debug, Clone)]
pub struct Cycle {
    pub learning_year: i32,
    pub learned_at: NaiveDate,
    /// Reviews `[first_review, end_review)` of the schedule use this cycle.
    pub first_review: usize,
    pub end_review: usize,
    pub discretizer: Discretizer,
    /// Whole raw panel under this cycle's bins.
    pub panel: DiscretizedPanel,
    pub rules: RuleSet,
    pub levels: Vec<LevelReport>,
    pub n_learn: usize,
    /// Aggregation state at the start of the out-of-sample year.
    pub initial_state: AggregationState,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleSummary {
    pub learning_year: i32,
    pub learned_at: NaiveDate,
    pub n_learn: usize,
    pub n_rules: usize,
    pub eta: f64,
    pub epsilon: f64,
    pub levels: Vec<LevelReport>,
}

impl Cycle {
    pub fn summary(&self) -> CycleSummary {
        CycleSummary {
            learning_year: self.learning_year,
            learned_at: self.learned_at,
            n_learn: self.n_learn,
            n_rules: self.rules.len(),
            eta: self.initial_state.eta,
            epsilon: self.initial_state.epsilon,
            levels: self.levels.clone(),
        }
    }
}

/// Scores of the universe at one review.
#[derive(Debug, Clone, PartialEq)]
pub struct ReviewScores {
    pub review: Review,
    pub snapshot: UniverseSnapshot,
    pub y_hat: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BacktestReport {
    pub name: String,
    pub series: PortfolioSeries,
    pub kpis: KpiReport,
    /// Reviews where the screen selected nothing and the benchmark was held.
    pub fallback_reviews: usize,
}

#[derive(Debug, Clone)]
pub struct WalkForward {
    pub reports: BTreeMap<String, BacktestReport>,
    pub cycles: Vec<CycleSummary>,
    pub scores: Vec<ReviewScores>,
}

/// Precomputed learning cycles over one panel and market.
pub struct Engine<'a> {
    raw: &'a RawPanel,
    market: &'a Market,
    cfg: WalkForwardConfig,
    end: NaiveDate,
    reviews: Vec<Review>,
    cycles: Vec<Cycle>,
    cycle_of_review: Vec<usize>,
    resolution: Vec<NaiveDate>,
    /// Labeled rows by (resolution date, observation date, stock id).
    update_order: Vec<usize>,
    rows_by_stock: HashMap<String, Vec<usize>>,
}

impl<'a> Engine<'a> {
    pub fn new(raw: &'a RawPanel, market: &'a Market, cfg: WalkForwardConfig) -> Result<Self> {
        cfg.validate()?;
        let obs = raw.observations();
        let first_date = obs
            .first()
            .ok_or_else(|| Error::InsufficientHistory("empty panel".into()))?
            .date;
        let last_price = market
            .prices
            .last_date()
            .ok_or_else(|| Error::InsufficientHistory("no prices".into()))?;
        let end = cfg.end.map_or(last_price, |e| e.min(last_price));
        let first_learning_year = first_date.year() + cfg.initial_years as i32 - 1;
        let reviews = monthly_reviews(last_business_day(first_learning_year, 12), end, cfg.score_lag_days);
        if reviews.is_empty() {
            return Err(Error::InsufficientHistory(format!(
                "prices end on {end}, before the first out-of-sample review of {}",
                first_learning_year + 1
            )));
        }
        let resolution: Vec<NaiveDate> = obs
            .iter()
            .map(|o| resolution_date(o.date, cfg.horizon_months))
            .collect();
        let mut update_order: Vec<usize> = (0..obs.len()).filter(|&i| obs[i].y.is_some()).collect();
        // rows are already in (date, stock_id) order; the sort is stable
        update_order.sort_by_key(|&i| resolution[i]);
        let mut rows_by_stock: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, o) in obs.iter().enumerate() {
            rows_by_stock.entry(o.stock_id.clone()).or_default().push(i);
        }

        let starts: Vec<usize> = reviews
            .iter()
            .enumerate()
            .filter(|(_, r)| r.review_date.month() == 12)
            .map(|(i, _)| i)
            .collect();
        let mut cycle_of_review = vec![0; reviews.len()];
        for (c, w) in starts.iter().enumerate() {
            let end = starts.get(c + 1).copied().unwrap_or(reviews.len());
            cycle_of_review[*w..end].fill(c);
        }
        let mut engine = Engine {
            raw,
            market,
            cfg,
            end,
            reviews,
            cycles: Vec::new(),
            cycle_of_review,
            resolution,
            update_order,
            rows_by_stock,
        };
        let cycles: Vec<Cycle> = starts
            .par_iter()
            .enumerate()
            .map(|(c, &first)| {
                let end = starts.get(c + 1).copied().unwrap_or(engine.reviews.len());
                engine.learn_cycle(first, end)
            })
            .collect::<Result<_>>()?;
        engine.cycles = cycles;
        Ok(engine)
    }

    pub fn config(&self) -> &WalkForwardConfig {
        &self.cfg
    }

    pub fn reviews(&self) -> &[Review] {
        &self.reviews
    }

    pub fn cycles(&self) -> &[Cycle] {
        &self.cycles
    }

    pub fn learning_years(&self) -> Vec<i32> {
        self.cycles.iter().map(|c| c.learning_year).collect()
    }

    fn learn_cycle(&self, first_review: usize, end_review: usize) -> Result<Cycle> {
        let review = self.reviews[first_review];
        let learned_at = review.score_date;
        let obs = self.raw.observations();
        let known: Vec<_> = obs.iter().filter(|o| o.date <= learned_at).cloned().collect();
        if known.is_empty() {
            return Err(Error::InsufficientHistory(format!("no observation before {learned_at}")));
        }
        let discretizer = Discretizer::fit(&known, self.raw.specs(), self.cfg.search.m)?;
        let panel = discretizer.apply(self.raw)?;
        let realized: Vec<usize> = self
            .update_order
            .iter()
            .copied()
            .take_while(|&i| self.resolution[i] <= learned_at)
            .collect();
        if realized.is_empty() {
            return Err(Error::InsufficientHistory(format!(
                "no realized return before {learned_at}"
            )));
        }
        let n_design = ((realized.len() as f64) * self.cfg.design_fraction).ceil() as usize;
        let (design_rows, warmup_rows) = realized.split_at(n_design.clamp(1, realized.len()));
        let set = learning_set(&panel, design_rows);
        let design = design_rules(&set, &self.cfg.search)?;
        let feature_ids = self.raw.specs().iter().map(|s| s.feature_id.clone()).collect();
        let rules = select_covering(&design.rules, &set, learned_at, feature_ids);

        let year_ago = learned_at - Duration::days(365);
        let recent = realized
            .iter()
            .filter(|&&i| self.resolution[i] > year_ago)
            .count();
        let eta = self
            .cfg
            .eta
            .unwrap_or_else(|| default_eta(rules.len(), recent.max(1)));
        let mut state = AggregationState::new(rules.len(), eta, self.cfg.loss_kind, self.cfg.loss_cap, 0.0)?;
        let calibration_rows: &[usize] = if warmup_rows.is_empty() { design_rows } else { warmup_rows };
        let mut y_hats = Vec::with_capacity(calibration_rows.len());
        for &i in calibration_rows {
            let x = panel.row(i);
            match state.predict(&rules, x) {
                Ok(p) => {
                    y_hats.push(p);
                    if !warmup_rows.is_empty() {
                        state.update(&rules, x, panel.y(i).expect("labeled row"))?;
                    }
                }
                Err(Error::NoActiveRule) => {}
                Err(e) => return Err(e),
            }
        }
        state.epsilon = self.cfg.epsilon.unwrap_or_else(|| sample_sd(&y_hats));
        log::info!(
            "learned {} rules at {learned_at} from {} rows (eta {:.4}, epsilon {:.5})",
            rules.len(),
            set.len(),
            state.eta,
            state.epsilon
        );
        Ok(Cycle {
            learning_year: review.review_date.year(),
            learned_at,
            first_review,
            end_review,
            discretizer,
            panel,
            rules,
            levels: design.levels,
            n_learn: set.len(),
            initial_state: state,
        })
    }

    fn cycle_index(&self, year: i32) -> Result<usize> {
        self.cycles
            .iter()
            .position(|c| c.learning_year == year)
            .ok_or(Error::UnknownLearningYear(year))
    }

    /// Scores every review from cycle `start` on. When `frozen`, the rules
    /// and weights of cycle `start` are kept forever; otherwise each cycle
    /// brings its own rules and fresh weights.
    pub fn run_track(&self, start: usize, frozen: bool) -> Result<Vec<ReviewScores>> {
        let mut k = start;
        let mut state = self.cycles[k].initial_state.clone();
        let mut ptr = self.first_update_after(self.cycles[k].learned_at);
        let mut out = Vec::with_capacity(self.reviews.len() - self.cycles[start].first_review);
        for ri in self.cycles[start].first_review..self.reviews.len() {
            let c = self.cycle_of_review[ri];
            if !frozen && c != k {
                k = c;
                state = self.cycles[k].initial_state.clone();
                ptr = self.first_update_after(self.cycles[k].learned_at);
            }
            let cycle = &self.cycles[k];
            let review = self.reviews[ri];
            while ptr < self.update_order.len() && self.resolution[self.update_order[ptr]] <= review.score_date {
                let i = self.update_order[ptr];
                let y = self.raw.observations()[i].y.expect("labeled row");
                match state.update(&cycle.rules, cycle.panel.row(i), y) {
                    Ok(()) | Err(Error::NoActiveRule) => {}
                    Err(e) => return Err(e),
                }
                ptr += 1;
            }
            out.push(self.score_review(review, cycle, &state)?);
        }
        Ok(out)
    }

    fn first_update_after(&self, date: NaiveDate) -> usize {
        self.update_order
            .partition_point(|&i| self.resolution[i] <= date)
    }

    fn latest_row(&self, stock_id: &str, asof: NaiveDate) -> Option<usize> {
        let rows = self.rows_by_stock.get(stock_id)?;
        let obs = self.raw.observations();
        let n = rows.partition_point(|&i| obs[i].date <= asof);
        (n > 0).then(|| rows[n - 1])
    }

    fn score_review(&self, review: Review, cycle: &Cycle, state: &AggregationState) -> Result<ReviewScores> {
        let (_, rows) = self.market.universe.at(review.score_date).ok_or_else(|| {
            Error::InsufficientHistory(format!("no universe snapshot on or before {}", review.score_date))
        })?;
        let mut y_hat = Vec::with_capacity(rows.len());
        let mut scores = Vec::with_capacity(rows.len());
        for r in rows {
            let p = match self.latest_row(&r.stock_id, review.score_date) {
                Some(i) => match state.predict(&cycle.rules, cycle.panel.row(i)) {
                    Ok(p) => Some(p),
                    Err(Error::NoActiveRule) => None,
                    Err(e) => return Err(e),
                },
                None => None,
            };
            y_hat.push(p);
            scores.push(p.map(|p| score(p, state.epsilon)));
        }
        let snapshot = UniverseSnapshot::new(review.review_date, rows.to_vec()).with_scores(scores);
        Ok(ReviewScores {
            review,
            snapshot,
            y_hat,
        })
    }

    fn report(&self, name: &str, reviews: &[Review], weights: &[Vec<f64>], rows: &[&[UniverseRow]], bench: &PortfolioSeries, fallback_reviews: usize) -> Result<BacktestReport> {
        let by_date: HashMap<NaiveDate, usize> =
            reviews.iter().enumerate().map(|(i, r)| (r.review_date, i)).collect();
        let series = simulate(name, reviews, &self.market.prices, Some(self.end), |r| {
            let i = by_date[&r.review_date];
            Ok(rows[i]
                .iter()
                .zip(&weights[i])
                .map(|(row, &w)| (row.stock_id.clone(), w))
                .collect())
        })?;
        let kpis = kpis_with_risk_free(&series, bench, self.cfg.periods_per_year, self.cfg.risk_free)?;
        Ok(BacktestReport {
            name: name.to_string(),
            series,
            kpis,
            fallback_reviews,
        })
    }

    fn benchmark_series(&self, scores: &[ReviewScores]) -> Result<PortfolioSeries> {
        let reviews: Vec<Review> = scores.iter().map(|s| s.review).collect();
        let weights: Vec<Vec<(String, f64)>> = scores
            .iter()
            .map(|s| {
                s.snapshot
                    .rows
                    .iter()
                    .map(|r| (r.stock_id.clone(), r.cap_weight))
                    .collect()
            })
            .collect();
        let mut i = 0;
        simulate(BENCHMARK, &reviews, &self.market.prices, Some(self.end), |_| {
            i += 1;
            Ok(weights[i - 1].clone())
        })
    }

    /// Screen weights at each review, holding the benchmark when the screen
    /// selects nothing.
    fn screen_weights(
        &self,
        scores: &[ReviewScores],
        f: impl Fn(&UniverseSnapshot) -> Result<Vec<f64>>,
    ) -> Result<(Vec<Vec<f64>>, usize)> {
        let mut fallbacks = 0;
        let mut out = Vec::with_capacity(scores.len());
        for s in scores {
            match f(&s.snapshot) {
                Ok(w) => out.push(w),
                Err(Error::EmptyAfterFilter(_)) | Err(Error::NoPopulatedSector) => {
                    log::warn!("empty screen at {}, holding the benchmark", s.review.review_date);
                    fallbacks += 1;
                    out.push(s.snapshot.cap_weights());
                }
                Err(e) => return Err(e),
            }
        }
        Ok((out, fallbacks))
    }

    /// Walk-forward run of all strategy legs.
    pub fn walk_forward(&self) -> Result<WalkForward> {
        let scores = self.run_track(0, false)?;
        let reviews: Vec<Review> = scores.iter().map(|s| s.review).collect();
        let rows: Vec<&[UniverseRow]> = scores.iter().map(|s| s.snapshot.rows.as_slice()).collect();
        let bench = self.benchmark_series(&scores)?;
        let x = self.cfg.best_in_class_x;
        let legs: Vec<(String, Screen)> = vec![
            (BENCHMARK.to_string(), Box::new(|s: &UniverseSnapshot| Ok(s.cap_weights()))),
            (POSITIVE_ML.to_string(), Box::new(|s: &UniverseSnapshot| ml_screen(s, 1))),
            (
                POSITIVE_SECTOR_MATCHED.to_string(),
                Box::new(|s: &UniverseSnapshot| sector_match(&ml_screen(s, 1)?, s)),
            ),
            (NEGATIVE_ML.to_string(), Box::new(|s: &UniverseSnapshot| ml_screen(s, -1))),
            (best_in_class_name(x), Box::new(move |s: &UniverseSnapshot| best_in_class(s, x))),
        ];
        let reports: Vec<BacktestReport> = legs
            .par_iter()
            .map(|(name, f)| {
                let (weights, fallbacks) = self.screen_weights(&scores, f)?;
                self.report(name, &reviews, &weights, &rows, &bench, fallbacks)
            })
            .collect::<Result<_>>()?;
        Ok(WalkForward {
            reports: reports.into_iter().map(|r| (r.name.clone(), r)).collect(),
            cycles: self.cycles.iter().map(Cycle::summary).collect(),
            scores,
        })
    }

    /// Positive ML leg that follows the walk-forward until the learning at
    /// the end of `year`, then keeps that rule set for good while its
    /// weights keep updating.
    pub fn learning_y(&self, year: i32) -> Result<BacktestReport> {
        let k = self.cycle_index(year)?;
        let mut scores = self.run_track(0, false)?;
        let frozen = self.run_track(k, true)?;
        let split = self.cycles[k].first_review;
        scores.truncate(split);
        scores.extend(frozen);
        self.positive_leg(&learning_y_name(year), &scores)
    }

    /// All LEARNING-Y legs plus the walk-forward Positive ML leg, sharing
    /// one walk-forward track.
    pub fn learning_y_all(&self) -> Result<BTreeMap<String, BacktestReport>> {
        let base = self.run_track(0, false)?;
        let mut out: BTreeMap<String, BacktestReport> = self
            .cycles
            .par_iter()
            .enumerate()
            .map(|(k, c)| {
                let mut scores = base[..c.first_review].to_vec();
                scores.extend(self.run_track(k, true)?);
                let name = learning_y_name(c.learning_year);
                Ok((name.clone(), self.positive_leg(&name, &scores)?))
            })
            .collect::<Result<_>>()?;
        out.insert(POSITIVE_ML.to_string(), self.positive_leg(POSITIVE_ML, &base)?);
        Ok(out)
    }

    fn positive_leg(&self, name: &str, scores: &[ReviewScores]) -> Result<BacktestReport> {
        let reviews: Vec<Review> = scores.iter().map(|s| s.review).collect();
        let rows: Vec<&[UniverseRow]> = scores.iter().map(|s| s.snapshot.rows.as_slice()).collect();
        let bench = self.benchmark_series(scores)?;
        let (weights, fallbacks) = self.screen_weights(scores, |s| ml_screen(s, 1))?;
        self.report(name, &reviews, &weights, &rows, &bench, fallbacks)
    }
}

fn learning_set(panel: &DiscretizedPanel, rows: &[usize]) -> LearningSet {
    let mut codes = Vec::with_capacity(rows.len() * panel.d());
    let mut ys = Vec::with_capacity(rows.len());
    for &i in rows {
        codes.extend_from_slice(panel.row(i));
        ys.push(panel.y(i).expect("labeled row"));
    }
    LearningSet::from_rows(panel.code_counts(), codes, ys)
}

/// Walk-forward run of every strategy leg.
pub fn walk_forward(raw: &RawPanel, market: &Market, cfg: &WalkForwardConfig) -> Result<WalkForward> {
    Engine::new(raw, market, cfg.clone())?.walk_forward()
}

/// Positive ML leg with rules frozen at the learning of `year`.
pub fn learning_y(raw: &RawPanel, market: &Market, cfg: &WalkForwardConfig, year: i32) -> Result<BacktestReport> {
    Engine::new(raw, market, cfg.clone())?.learning_y(year)
}
