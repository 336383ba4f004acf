//! Buy-and-hold simulation between monthly rebalancings.

use chrono::NaiveDate;
use serde::Serialize;

use crate::backtest::calendar::Review;
use crate::backtest::data::Prices;
use crate::error::{Error, Result};

/// Total-return level series, base 100 at the first review.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PortfolioSeries {
    pub name: String,
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
    /// Target weights set at each review, zero weights omitted.
    pub weights_history: Vec<(NaiveDate, Vec<(String, f64)>)>,
}

impl PortfolioSeries {
    /// Daily simple returns.
    pub fn returns(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| w[1] / w[0] - 1.0).collect()
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["date", "level"])?;
        for (d, v) in self.dates.iter().zip(&self.values) {
            w.write_record([d.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

const WEIGHT_TOLERANCE: f64 = 1e-9;

fn check_weights(review: &Review, weights: &[(String, f64)]) -> Result<()> {
    if weights.iter().any(|(_, w)| !(*w >= 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "negative weight at review {}",
            review.review_date
        )));
    }
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    if (total - 1.0).abs() > WEIGHT_TOLERANCE {
        return Err(Error::InvalidParameter(format!(
            "weights at review {} sum to {total}",
            review.review_date
        )));
    }
    Ok(())
}

/// Runs a monthly-rebalanced portfolio over the price grid from the first
/// review to `end` (the last price date when `None`).
///
/// At the close of each review date the portfolio is reset to
/// `weights_fn(review)`; in between, positions drift with their daily total
/// returns. A review falling on a date without quotes takes effect at the
/// close of the last quoted date before it.
pub fn simulate<F>(
    name: &str,
    reviews: &[Review],
    prices: &Prices,
    end: Option<NaiveDate>,
    mut weights_fn: F,
) -> Result<PortfolioSeries>
where
    F: FnMut(&Review) -> Result<Vec<(String, f64)>>,
{
    let first = reviews
        .first()
        .ok_or_else(|| Error::InsufficientHistory("empty review schedule".into()))?;
    let end = end.or(prices.last_date()).unwrap_or(first.review_date);
    let mut series = PortfolioSeries {
        name: name.to_string(),
        dates: vec![first.review_date],
        values: vec![100.0],
        weights_history: Vec::new(),
    };
    let mut rebalance = |review: &Review, value: f64, history: &mut Vec<_>| -> Result<Vec<(usize, String, f64)>> {
        let weights = weights_fn(review)?;
        check_weights(review, &weights)?;
        let mut out = Vec::with_capacity(weights.len());
        let mut kept = Vec::with_capacity(weights.len());
        for (id, w) in weights {
            if w > 0.0 {
                let si = prices.stock_index(&id).ok_or_else(|| Error::MissingPriceData {
                    stock_id: id.clone(),
                    date: review.review_date,
                })?;
                out.push((si, id.clone(), value * w));
                kept.push((id, w));
            }
        }
        history.push((review.review_date, kept));
        Ok(out)
    };
    // (price column, stock id, position value)
    let mut holdings = rebalance(first, 100.0, &mut series.weights_history)?;
    let mut next = 1;
    for (di, &d) in prices.dates().iter().enumerate() {
        if d <= first.review_date || d > end {
            continue;
        }
        let value = *series.values.last().expect("non-empty");
        while next < reviews.len() && reviews[next].review_date < d {
            holdings = rebalance(&reviews[next], value, &mut series.weights_history)?;
            next += 1;
        }
        for (si, id, v) in &mut holdings {
            let r = prices.get(di, *si).ok_or_else(|| Error::MissingPriceData {
                stock_id: id.clone(),
                date: d,
            })?;
            *v *= 1.0 + r;
        }
        series.dates.push(d);
        series.values.push(holdings.iter().map(|h| h.2).sum());
    }
    Ok(series)
}
