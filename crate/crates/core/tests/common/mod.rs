#![allow(dead_code)]

use chrono::NaiveDate;
use rulescreen::backtest::walk::WalkForwardConfig;
use rulescreen::rules::SearchParams;
use rulescreen::synth::{PlantedRule, RegimeShift, SynthSpec};

pub fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

fn desk_base(seed: u64) -> SynthSpec {
    let mut s = SynthSpec::new(400, 84, 6, 5, 0.08, seed);
    s.sector_feature = true;
    s.redraw_prob = 0.1;
    s.cap_dispersion = 0.5;
    s
}

/// Persistent rules, a sector premium and one regime shift in mid-2013.
pub fn table7_spec(seed: u64) -> SynthSpec {
    let mut s = desk_base(seed);
    s.planted = vec![
        PlantedRule::new(&[(6, 0, 0)], 0.07),
        PlantedRule::new(&[(6, 1, 1)], -0.07),
        PlantedRule::new(&[(0, 3, 4)], 0.04),
        PlantedRule::new(&[(1, 3, 4)], -0.04),
        PlantedRule::new(&[(2, 3, 4), (3, 3, 4)], 0.06),
        PlantedRule::new(&[(2, 0, 1), (3, 0, 1)], -0.06),
    ];
    let mut after = s.planted.clone();
    after[2] = PlantedRule::new(&[(4, 3, 4)], 0.04);
    s.regime_shift = Some(RegimeShift {
        date: date(2013, 7, 1),
        planted: after,
    });
    s
}

/// Regimes that add a new pair of rules every January from 2012 on, so
/// that every frozen rule set misses what appeared after its learning.
pub fn decay_spec(seed: u64) -> SynthSpec {
    let eff = 0.08;
    let mut s = desk_base(seed);
    let mut rules = vec![
        PlantedRule::new(&[(6, 0, 0)], 0.07),
        PlantedRule::new(&[(6, 1, 1)], -0.07),
        PlantedRule::new(&[(0, 4, 4)], eff),
        PlantedRule::new(&[(0, 0, 0)], -eff),
    ];
    s.planted = rules.clone();
    for (k, year) in (2012..=2015).enumerate() {
        rules.push(PlantedRule::new(&[(k + 1, 4, 4)], eff));
        rules.push(PlantedRule::new(&[(k + 1, 0, 0)], -eff));
        s.regime_shifts.push(RegimeShift {
            date: date(year, 1, 1),
            planted: rules.clone(),
        });
    }
    s
}

pub fn desk_config() -> WalkForwardConfig {
    WalkForwardConfig {
        search: SearchParams {
            m: 5,
            ..SearchParams::default()
        },
        end: Some(date(2015, 12, 31)),
        ..WalkForwardConfig::default()
    }
}
