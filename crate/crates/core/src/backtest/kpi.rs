//! Performance and risk indicators of a level series against a benchmark.

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate};
use serde::Serialize;

use crate::backtest::simulate::PortfolioSeries;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KpiReport {
    pub ann_performance: f64,
    pub ann_volatility: f64,
    pub sharpe: f64,
    pub max_drawdown: f64,
    pub information_ratio: f64,
    pub ann_alpha: f64,
    /// Calendar-year return minus the benchmark's over the same year.
    pub calendar_excess: BTreeMap<i32, f64>,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Most negative peak-to-trough return, `<= 0`.
pub fn max_drawdown(values: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst = 0.0f64;
    for &v in values {
        peak = peak.max(v);
        worst = worst.min(v / peak - 1.0);
    }
    worst
}

/// Geometric annualization of the total return over `periods` periods.
pub fn annualized_return(values: &[f64], periods_per_year: f64) -> f64 {
    let n = values.len().saturating_sub(1);
    if n == 0 {
        return 0.0;
    }
    (values[n] / values[0]).powf(periods_per_year / n as f64) - 1.0
}

/// Index of the last date of each calendar month, preceded by index 0.
fn month_end_indices(dates: &[NaiveDate]) -> Vec<usize> {
    let mut out = vec![0];
    for i in 1..dates.len() {
        let last_of_month = i + 1 == dates.len()
            || (dates[i + 1].year(), dates[i + 1].month()) != (dates[i].year(), dates[i].month());
        if last_of_month {
            out.push(i);
        }
    }
    out
}

fn returns_at(values: &[f64], anchors: &[usize]) -> Vec<f64> {
    anchors
        .windows(2)
        .map(|w| values[w[1]] / values[w[0]] - 1.0)
        .collect()
}

/// Annualized intercept of the OLS regression of monthly strategy returns on
/// monthly benchmark returns.
fn monthly_alpha(s: &[f64], b: &[f64]) -> f64 {
    if s.is_empty() {
        return 0.0;
    }
    let (ms, mb) = (mean(s), mean(b));
    let var: f64 = b.iter().map(|x| (x - mb).powi(2)).sum();
    let beta = if var > 0.0 {
        s.iter().zip(b).map(|(x, y)| (x - ms) * (y - mb)).sum::<f64>() / var
    } else {
        1.0
    };
    12.0 * (ms - beta * mb)
}

fn calendar_returns(dates: &[NaiveDate], values: &[f64]) -> BTreeMap<i32, f64> {
    let mut out = BTreeMap::new();
    let mut start = 0;
    for i in 1..dates.len() {
        let year_ends = i + 1 == dates.len() || dates[i + 1].year() != dates[i].year();
        if year_ends {
            out.insert(dates[i].year(), values[i] / values[start] - 1.0);
            start = i;
        }
    }
    out
}

/// KPIs with a zero risk-free rate.
pub fn kpis(series: &PortfolioSeries, benchmark: &PortfolioSeries, periods_per_year: f64) -> Result<KpiReport> {
    kpis_with_risk_free(series, benchmark, periods_per_year, 0.0)
}

pub fn kpis_with_risk_free(
    series: &PortfolioSeries,
    benchmark: &PortfolioSeries,
    periods_per_year: f64,
    risk_free: f64,
) -> Result<KpiReport> {
    if series.dates != benchmark.dates || series.values.len() != benchmark.values.len() {
        return Err(Error::GridMismatch);
    }
    let rs = series.returns();
    let rb = benchmark.returns();
    let ann_performance = annualized_return(&series.values, periods_per_year);
    let ann_volatility = sample_sd(&rs) * periods_per_year.sqrt();
    let sharpe = if ann_volatility > 0.0 {
        (ann_performance - risk_free) / ann_volatility
    } else {
        0.0
    };
    let excess: Vec<f64> = rs.iter().zip(&rb).map(|(a, b)| a - b).collect();
    let te = sample_sd(&excess) * periods_per_year.sqrt();
    let information_ratio = if te > 0.0 {
        mean(&excess) * periods_per_year / te
    } else {
        0.0
    };
    let anchors = month_end_indices(&series.dates);
    let ann_alpha = monthly_alpha(
        &returns_at(&series.values, &anchors),
        &returns_at(&benchmark.values, &anchors),
    );
    let bench_years = calendar_returns(&benchmark.dates, &benchmark.values);
    let calendar_excess = calendar_returns(&series.dates, &series.values)
        .into_iter()
        .map(|(y, r)| (y, r - bench_years[&y]))
        .collect();
    Ok(KpiReport {
        ann_performance,
        ann_volatility,
        sharpe,
        max_drawdown: max_drawdown(&series.values),
        information_ratio,
        ann_alpha,
        calendar_excess,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(values: &[f64]) -> PortfolioSeries {
        let start = NaiveDate::from_ymd_opt(2013, 1, 1).unwrap();
        PortfolioSeries {
            name: "s".into(),
            dates: start.iter_days().take(values.len()).collect(),
            values: values.to_vec(),
            weights_history: Vec::new(),
        }
    }

    #[test]
    fn drawdown_hand_case() {
        assert_eq!(max_drawdown(&[100.0, 120.0, 90.0, 110.0]), -0.25);
        assert_eq!(max_drawdown(&[100.0, 101.0, 130.0]), 0.0);
    }

    #[test]
    fn self_information_ratio_is_zero() {
        let s = series(&[100.0, 101.0, 99.5, 103.0, 102.0]);
        let k = kpis(&s, &s, 252.0).unwrap();
        assert_eq!(k.information_ratio, 0.0);
        assert!(k.calendar_excess.values().all(|v| *v == 0.0));
        assert!(k.max_drawdown <= 0.0);
    }

    #[test]
    fn grid_mismatch() {
        let a = series(&[100.0, 101.0]);
        let b = series(&[100.0, 101.0, 102.0]);
        assert!(matches!(kpis(&a, &b, 252.0), Err(Error::GridMismatch)));
    }

    #[test]
    fn annualization_and_calendar() {
        // 10% over exactly one year of 252 periods
        let mut v = vec![100.0];
        let g = 1.1f64.powf(1.0 / 252.0);
        for _ in 0..252 {
            v.push(v.last().unwrap() * g);
        }
        assert!((annualized_return(&v, 252.0) - 0.10).abs() < 1e-12);
        let dates = vec![
            NaiveDate::from_ymd_opt(2012, 12, 31).unwrap(),
            NaiveDate::from_ymd_opt(2013, 6, 28).unwrap(),
            NaiveDate::from_ymd_opt(2013, 12, 31).unwrap(),
            NaiveDate::from_ymd_opt(2014, 3, 31).unwrap(),
        ];
        let cal = calendar_returns(&dates, &[100.0, 105.0, 110.0, 99.0]);
        assert_eq!(cal.len(), 2);
        assert!((cal[&2013] - 0.10).abs() < 1e-15);
        assert!((cal[&2014] + 0.10).abs() < 1e-15);
    }
}
