//! Yearly relearning, monthly reviews and the LEARNING-Y frozen legs.

use chrono::NaiveDate;
use rulescreen::backtest::walk::{learning_y_name, Engine, WalkForwardConfig, POSITIVE_ML};
use rulescreen::rules::SearchParams;
use rulescreen::synth::{generate, PlantedRule, RegimeShift, SynthSpec};

fn main() -> rulescreen::Result<()> {
    let mut spec = SynthSpec::new(150, 72, 4, 5, 0.08, 21);
    spec.sector_feature = true;
    spec.redraw_prob = 0.1;
    spec.planted = vec![
        PlantedRule::new(&[(4, 0, 0)], 0.05),
        PlantedRule::new(&[(0, 4, 4)], 0.08),
        PlantedRule::new(&[(0, 0, 0)], -0.08),
    ];
    let mut after = spec.planted.clone();
    after.push(PlantedRule::new(&[(1, 4, 4)], 0.08));
    spec.regime_shift = Some(RegimeShift { date: NaiveDate::from_ymd_opt(2013, 1, 1).unwrap(), planted: after });
    let data = generate(&spec)?;
    let market = data.market();
    let cfg = WalkForwardConfig {
        search: SearchParams { m: 5, ..SearchParams::default() },
        ..WalkForwardConfig::default()
    };
    let engine = Engine::new(&data.panel, &market, cfg)?;
    for c in engine.cycles() {
        let s = c.summary();
        println!("learned {} rules at {} from {} rows (eta {:.3}, epsilon {:.4})", s.n_rules, s.learned_at, s.n_learn, s.eta, s.epsilon);
    }
    let wf = engine.walk_forward()?;
    for (name, r) in &wf.reports {
        println!("{name:<28} ann {:+.2}%  IR {:+.2}  fallbacks {}", 100.0 * r.kpis.ann_performance, r.kpis.information_ratio, r.fallback_reviews);
    }
    let legs = engine.learning_y_all()?;
    let walk = &legs[POSITIVE_ML].kpis.calendar_excess;
    for y in engine.learning_years() {
        let frozen = &legs[&learning_y_name(y)].kpis.calendar_excess;
        let diffs: Vec<String> = frozen.iter().map(|(yr, v)| format!("{yr}: {:+.3}", v - walk[yr])).collect();
        println!("{} minus walk-forward: {}", learning_y_name(y), diffs.join(", "));
    }
    Ok(())
}
