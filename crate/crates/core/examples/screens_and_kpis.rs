//! Best-in-class and sector-matched weights, then KPIs of a simulated portfolio.

use chrono::NaiveDate;
use rulescreen::backtest::calendar::monthly_reviews;
use rulescreen::backtest::{best_in_class, kpis, ml_screen, sector_match, simulate, UniverseSnapshot};
use rulescreen::synth::{generate, SynthSpec};

fn main() -> rulescreen::Result<()> {
    let data = generate(&SynthSpec::new(40, 24, 2, 5, 0.08, 5))?;
    let start = NaiveDate::from_ymd_opt(2009, 2, 27).unwrap();
    let reviews = monthly_reviews(start, NaiveDate::from_ymd_opt(2010, 12, 31).unwrap(), 4);
    let snapshot_at = |d: NaiveDate| {
        let (_, rows) = data.universe.at(d).expect("snapshot");
        UniverseSnapshot::new(d, rows.to_vec())
    };

    let snap = snapshot_at(start);
    let bic = best_in_class(&snap, 0.3)?;
    println!("best-in-class keeps {} of {} stocks", bic.iter().filter(|w| **w > 0.0).count(), bic.len());
    // pretend every other stock scored +1
    let scored = snap.clone().with_scores((0..snap.rows.len()).map(|i| Some(if i % 2 == 0 { 1 } else { 0 })).collect());
    let ml = ml_screen(&scored, 1)?;
    let matched = sector_match(&ml, &scored)?;
    println!("ml weight sum {:.6}, sector-matched weight sum {:.6}", ml.iter().sum::<f64>(), matched.iter().sum::<f64>());

    let weights_of = |r: &rulescreen::backtest::Review, f: &dyn Fn(&UniverseSnapshot) -> rulescreen::Result<Vec<f64>>| {
        let s = snapshot_at(r.review_date);
        let w = f(&s)?;
        Ok(s.rows.iter().zip(w).map(|(u, w)| (u.stock_id.clone(), w)).collect())
    };
    let bench = simulate("Benchmark", &reviews, &data.prices, None, |r| weights_of(r, &|s| Ok(s.cap_weights())))?;
    let screened = simulate("Best-in-class 30%", &reviews, &data.prices, None, |r| weights_of(r, &|s| best_in_class(s, 0.3)))?;
    let k = kpis(&screened, &bench, 252.0)?;
    println!("{}", serde_json::to_string_pretty(&k)?);
    Ok(())
}
