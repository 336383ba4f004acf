//! KPIs against direct textbook formulas on random level series.

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rulescreen::backtest::kpi::kpis_with_risk_free;
use rulescreen::backtest::PortfolioSeries;

const TOL: f64 = 1e-10;

fn weekdays(n: usize) -> Vec<NaiveDate> {
    let mut d = NaiveDate::from_ymd_opt(2011, 12, 30).unwrap();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        if d.weekday().num_days_from_monday() < 5 {
            out.push(d);
        }
        d = d.succ_opt().unwrap();
    }
    out
}

fn series(name: &str, dates: &[NaiveDate], rets: &[f64]) -> PortfolioSeries {
    let mut values = vec![100.0];
    for r in rets {
        values.push(values.last().unwrap() * (1.0 + r));
    }
    PortfolioSeries {
        name: name.into(),
        dates: dates.to_vec(),
        values,
        weights_history: Vec::new(),
    }
}

fn sd(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

/// O(n^2) drawdown: worst ratio over every pair i <= j.
fn brute_drawdown(v: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..v.len() {
        for j in i..v.len() {
            worst = worst.min(v[j] / v[i] - 1.0);
        }
    }
    worst
}

fn month_end_levels(dates: &[NaiveDate], v: &[f64]) -> Vec<f64> {
    let mut out = vec![v[0]];
    for i in 1..dates.len() {
        let last = i + 1 == dates.len() || dates[i + 1].month() != dates[i].month();
        if last {
            out.push(v[i]);
        }
    }
    out
}

fn ols_alpha(s: &[f64], b: &[f64]) -> f64 {
    let n = s.len() as f64;
    let (sx, sy) = (b.iter().sum::<f64>(), s.iter().sum::<f64>());
    let sxx: f64 = b.iter().map(|x| x * x).sum();
    let sxy: f64 = b.iter().zip(s).map(|(x, y)| x * y).sum();
    let beta = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    12.0 * (sy - beta * sx) / n
}

#[test]
fn kpis_match_direct_formulas() {
    for seed in 0..30u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(300..900);
        let dates = weekdays(n + 1);
        let rb: Vec<f64> = (0..n).map(|_| 0.01 * (rng.random::<f64>() - 0.48)).collect();
        let rs: Vec<f64> = rb.iter().map(|b| 1.1 * b + 0.004 * (rng.random::<f64>() - 0.45)).collect();
        let bench = series("b", &dates, &rb);
        let strat = series("s", &dates, &rs);
        let rf = 0.01;
        let ppy = 252.0;
        let k = kpis_with_risk_free(&strat, &bench, ppy, rf).unwrap();

        let total = strat.values[n] / strat.values[0];
        let ann = total.powf(ppy / n as f64) - 1.0;
        let vol = sd(&rs) * ppy.sqrt();
        let excess: Vec<f64> = rs.iter().zip(&rb).map(|(a, b)| a - b).collect();
        let ir = (excess.iter().sum::<f64>() / n as f64) * ppy / (sd(&excess) * ppy.sqrt());
        let ms = month_end_levels(&dates, &strat.values);
        let mb = month_end_levels(&dates, &bench.values);
        let mret = |v: &[f64]| v.windows(2).map(|w| w[1] / w[0] - 1.0).collect::<Vec<_>>();
        let alpha = ols_alpha(&mret(&ms), &mret(&mb));

        assert!((k.ann_performance - ann).abs() < TOL, "seed {seed}");
        assert!((k.ann_volatility - vol).abs() < TOL, "seed {seed}");
        assert!((k.sharpe - (ann - rf) / vol).abs() < TOL, "seed {seed}");
        assert!((k.max_drawdown - brute_drawdown(&strat.values)).abs() < TOL, "seed {seed}");
        assert!((k.information_ratio - ir).abs() < TOL, "seed {seed}");
        assert!((k.ann_alpha - alpha).abs() < TOL, "seed {seed}: {} vs {alpha}", k.ann_alpha);

        // calendar excess from year-end levels
        for (year, ex) in &k.calendar_excess {
            let last_of = |y: i32| dates.iter().rposition(|d| d.year() == y);
            let end = last_of(*year).unwrap();
            let start = last_of(year - 1).unwrap_or(0);
            let want = strat.values[end] / strat.values[start] - bench.values[end] / bench.values[start];
            assert!((ex - want).abs() < TOL, "seed {seed} year {year}");
        }
    }
}

#[test]
fn drawdown_and_self_ir_hand_cases() {
    let dates = weekdays(4);
    let s = PortfolioSeries {
        name: "s".into(),
        dates,
        values: vec![100.0, 120.0, 90.0, 110.0],
        weights_history: Vec::new(),
    };
    let k = kpis_with_risk_free(&s, &s, 252.0, 0.0).unwrap();
    assert_eq!(k.max_drawdown, -0.25);
    assert_eq!(k.information_ratio, 0.0);
}
