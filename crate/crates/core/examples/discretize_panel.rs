//! Quantile binning of a small panel, then out-of-sample coding with frozen bins.

use chrono::NaiveDate;
use rulescreen::panel::{Discretizer, FeatureSpec, RawObservation, RawPanel, RawValue, MISSING};

fn obs(day: u32, id: &str, size: f64, sector: &str) -> RawObservation {
    RawObservation {
        date: NaiveDate::from_ymd_opt(2020, 1, day).unwrap(),
        stock_id: id.into(),
        features: vec![RawValue::Num(size), RawValue::Label(sector.into())],
        y: None,
    }
}

fn main() -> rulescreen::Result<()> {
    let specs = vec![FeatureSpec::numeric("size"), FeatureSpec::categorical("sector")];
    let learn: Vec<RawObservation> = (0..12)
        .map(|i| obs(2, &format!("S{i:02}"), i as f64 * 10.0, if i % 2 == 0 { "energy" } else { "tech" }))
        .collect();
    let disc = Discretizer::fit(&learn, &specs, 4)?;
    println!("{}", disc.to_json()?);

    // later data: out-of-range sizes clamp, unseen sectors become missing
    let mut later = learn.clone();
    later.push(obs(3, "NEW1", -50.0, "tech"));
    later.push(obs(3, "NEW2", 1e6, "utilities"));
    let panel = disc.apply(&RawPanel::new(specs, later)?)?;
    for i in panel.len() - 2..panel.len() {
        let codes: Vec<String> = panel
            .row(i)
            .iter()
            .map(|&c| if c == MISSING { "missing".into() } else { c.to_string() })
            .collect();
        println!("{} -> {:?}", panel.stock_id(i), codes);
    }
    Ok(())
}
