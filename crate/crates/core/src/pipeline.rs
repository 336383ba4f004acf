//! Standalone learning on a chronological split and as-of scoring.
//!
//! The walk-forward engine in [`crate::backtest`] relearns every year; the
//! functions here do a single learning, the way `learn` and `score` work on
//! the command line.

use std::collections::BTreeMap;

use chrono::NaiveDate;

use crate::aggregate::{default_eta, sample_sd, AggregationState, LossKind, Pass};
use crate::error::{Error, Result};
use crate::panel::{DiscretizedPanel, Discretizer, RawPanel};
use crate::rulegen::{design_rules, select_covering, LevelReport};
use crate::rules::{LearningSet, RuleSet, SearchParams};

#[derive(Debug, Clone)]
pub struct LearnOptions {
    pub search: SearchParams,
    /// Share of the rows in the learning set `D_n`.
    pub learn_fraction: f64,
    pub eta: Option<f64>,
    pub epsilon: Option<f64>,
    pub loss_kind: LossKind,
    pub loss_cap: f64,
}

impl Default for LearnOptions {
    fn default() -> Self {
        LearnOptions {
            search: SearchParams::default(),
            learn_fraction: 0.4,
            eta: None,
            epsilon: None,
            loss_kind: LossKind::Squared,
            loss_cap: 1.0,
        }
    }
}

/// Output of one learning: bins fitted on `D_n`, the covering rule set and
/// the weights after aggregating over `D_t`.
#[derive(Debug, Clone)]
pub struct Learned {
    pub discretizer: Discretizer,
    pub panel: DiscretizedPanel,
    pub rules: RuleSet,
    pub levels: Vec<LevelReport>,
    pub state: AggregationState,
    /// Labeled rows in `D_n` and `D_t`.
    pub n_learn: usize,
    pub n_aggregate: usize,
    /// Sequential predictions over `D_t`.
    pub pass: Pass,
}

/// Splits the panel chronologically, designs rules on the first part and
/// runs the aggregation over the second.
///
/// The split never cuts through a date: all rows of the date holding the
/// split row go to `D_n`. The dead zone is the sample deviation of the
/// uniform-weight predictions over `D_n`.
pub fn learn(raw: &RawPanel, opts: &LearnOptions) -> Result<Learned> {
    opts.search.validate()?;
    if !(opts.learn_fraction > 0.0 && opts.learn_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "learn_fraction must lie in (0, 1), got {}",
            opts.learn_fraction
        )));
    }
    let obs = raw.observations();
    if obs.is_empty() {
        return Err(Error::EmptyPanel);
    }
    let mut n = ((obs.len() as f64) * opts.learn_fraction).floor().max(1.0) as usize;
    let cut_date = obs[n - 1].date;
    while n < obs.len() && obs[n].date == cut_date {
        n += 1;
    }
    if n >= obs.len() {
        return Err(Error::BadSplitPoint { n, len: obs.len() });
    }
    let discretizer = Discretizer::fit(&obs[..n], raw.specs(), opts.search.m)?;
    let panel = discretizer.apply(raw)?;
    let split = panel.split(n)?;
    let set = LearningSet::from_view(&split.learn);
    if set.is_empty() {
        return Err(Error::EmptyLearningSet);
    }
    let design = design_rules(&set, &opts.search)?;
    let feature_ids = raw.specs().iter().map(|s| s.feature_id.clone()).collect();
    let rules = select_covering(&design.rules, &set, cut_date, feature_ids);

    let agg_rows: Vec<(&[crate::panel::Code], f64)> = split
        .aggregate
        .iter()
        .filter_map(|(_, x, y)| y.map(|y| (x, y)))
        .collect();
    let eta = opts
        .eta
        .unwrap_or_else(|| default_eta(rules.len(), agg_rows.len().max(1)));
    let mut state = AggregationState::new(rules.len(), eta, opts.loss_kind, opts.loss_cap, 0.0)?;
    let epsilon = match opts.epsilon {
        Some(e) => e,
        None => {
            let y_hats: Vec<f64> = (0..set.len())
                .filter_map(|i| state.predict(&rules, set.row(i)).ok())
                .collect();
            sample_sd(&y_hats)
        }
    };
    state.epsilon = epsilon;
    let n_aggregate = agg_rows.len();
    let pass = state.run(&rules, agg_rows)?;
    log::info!(
        "learned {} rules on {} rows, aggregated over {} rows (eta {eta:.4}, epsilon {epsilon:.5})",
        rules.len(),
        set.len(),
        n_aggregate
    );
    Ok(Learned {
        discretizer,
        panel,
        rules,
        levels: design.levels,
        state,
        n_learn: set.len(),
        n_aggregate,
        pass,
    })
}

/// One line of `scores.csv`. `y_hat` is `None` when no rule is active.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub date: NaiveDate,
    pub stock_id: String,
    pub y_hat: Option<f64>,
    pub score: i8,
}

/// Scores the latest observation of each stock dated on or before `asof`,
/// in stock id order.
pub fn score_asof(
    raw: &RawPanel,
    discretizer: &Discretizer,
    rules: &RuleSet,
    state: &AggregationState,
    asof: NaiveDate,
) -> Result<Vec<ScoreRow>> {
    let panel = discretizer.apply(raw)?;
    let mut latest: BTreeMap<&str, usize> = BTreeMap::new();
    for i in 0..panel.len() {
        if panel.date(i) <= asof {
            latest.insert(panel.stock_id(i), i);
        }
    }
    if latest.is_empty() {
        return Err(Error::InsufficientHistory(format!("no observation on or before {asof}")));
    }
    latest
        .into_iter()
        .map(|(id, i)| {
            let y_hat = match state.predict(rules, panel.row(i)) {
                Ok(p) => Some(p),
                Err(Error::NoActiveRule) => None,
                Err(e) => return Err(e),
            };
            Ok(ScoreRow {
                date: asof,
                stock_id: id.to_string(),
                y_hat,
                score: y_hat.map_or(0, |p| crate::aggregate::score(p, state.epsilon)),
            })
        })
        .collect()
}

pub fn write_scores_csv(rows: &[ScoreRow], path: &std::path::Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["date", "stock_id", "y_hat", "score"])?;
    for r in rows {
        w.write_record([
            r.date.to_string(),
            r.stock_id.clone(),
            r.y_hat.map_or(String::new(), |v| v.to_string()),
            r.score.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_panel, PlantedRule, SynthSpec};

    fn panel() -> RawPanel {
        let mut spec = SynthSpec::new(120, 36, 3, 4, 0.05, 3);
        spec.planted = vec![PlantedRule::new(&[(0, 3, 3)], 0.05)];
        generate_panel(&spec).unwrap().0
    }

    #[test]
    fn split_keeps_dates_whole() {
        let raw = panel();
        let l = learn(&raw, &LearnOptions::default()).unwrap();
        let n_rows_learn_dates = raw
            .observations()
            .iter()
            .filter(|o| o.date <= l.rules.learned_at)
            .count();
        assert_eq!(n_rows_learn_dates % 120, 0);
        assert!(l.n_learn > 0 && l.n_aggregate > 0);
        assert_eq!(l.state.weights.len(), l.rules.len());
        assert!((l.state.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scores_one_row_per_stock() {
        let raw = panel();
        let l = learn(&raw, &LearnOptions::default()).unwrap();
        let last = raw.observations().last().unwrap().date;
        let rows = score_asof(&raw, &l.discretizer, &l.rules, &l.state, last).unwrap();
        assert_eq!(rows.len(), 120);
        assert!(rows.windows(2).all(|w| w[0].stock_id < w[1].stock_id));
        let early = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
        assert!(matches!(
            score_asof(&raw, &l.discretizer, &l.rules, &l.state, early),
            Err(Error::InsufficientHistory(_))
        ));
    }
}
