mod common;

use chrono::Datelike;
use rulescreen::backtest::calendar::last_business_day;
use rulescreen::backtest::walk::{
    best_in_class_name, learning_y_name, Engine, WalkForwardConfig, BENCHMARK, NEGATIVE_ML, POSITIVE_ML,
    POSITIVE_SECTOR_MATCHED,
};
use rulescreen::backtest::Market;
use rulescreen::rules::SearchParams;
use rulescreen::synth::{generate, PlantedRule, SynthData, SynthSpec};
use rulescreen::Error;

use common::date;

fn small(seed: u64) -> SynthData {
    let mut s = SynthSpec::new(80, 48, 3, 4, 0.08, seed);
    s.sector_feature = true;
    s.redraw_prob = 0.2;
    s.planted = vec![
        PlantedRule::new(&[(3, 0, 0)], 0.05),
        PlantedRule::new(&[(0, 3, 3)], 0.06),
        PlantedRule::new(&[(1, 0, 0)], -0.06),
    ];
    generate(&s).unwrap()
}

fn config() -> WalkForwardConfig {
    WalkForwardConfig {
        search: SearchParams {
            m: 4,
            ..SearchParams::default()
        },
        ..WalkForwardConfig::default()
    }
}

#[test]
fn weights_are_a_partition_of_unity() {
    let data = small(1);
    let market = data.market();
    let wf = Engine::new(&data.panel, &market, config()).unwrap().walk_forward().unwrap();
    let names = [BENCHMARK, POSITIVE_ML, POSITIVE_SECTOR_MATCHED, NEGATIVE_ML];
    for name in names.iter().copied().chain([best_in_class_name(0.3).as_str()]) {
        let report = &wf.reports[name];
        assert!(!report.series.weights_history.is_empty());
        for (d, w) in &report.series.weights_history {
            let total: f64 = w.iter().map(|x| x.1).sum();
            assert!((total - 1.0).abs() < 1e-9, "{name} at {d}: {total}");
            assert!(w.iter().all(|x| x.1 > 0.0));
        }
    }
    // scores split each review's universe into positive, neutral and negative
    for rs in &wf.scores {
        let n = rs.snapshot.rows.len();
        let (mut pos, mut zero, mut neg) = (0, 0, 0);
        for s in &rs.snapshot.scores {
            match s {
                Some(1) => pos += 1,
                Some(-1) => neg += 1,
                _ => zero += 1,
            }
        }
        assert_eq!(pos + zero + neg, n);
        let ml: Vec<&String> = wf.reports[POSITIVE_ML]
            .series
            .weights_history
            .iter()
            .find(|(d, _)| *d == rs.review.review_date)
            .map(|(_, w)| w.iter().map(|x| &x.0).collect())
            .unwrap();
        if pos > 0 {
            assert_eq!(ml.len(), pos);
        }
    }
}

#[test]
fn first_out_of_sample_review_follows_initial_years() {
    let data = small(2);
    let market = data.market();
    let engine = Engine::new(&data.panel, &market, config()).unwrap();
    let first = engine.reviews()[0];
    assert_eq!(first.review_date, last_business_day(2011, 12));
    assert!(first.score_date < first.review_date);
    let cycle = &engine.cycles()[0];
    assert_eq!(cycle.learning_year, 2011);
    assert_eq!(cycle.learned_at, first.score_date);
    // nothing resolving after the learning date was used
    assert!(cycle.rules.learned_at <= first.score_date);
    assert_eq!(engine.learning_years(), vec![2011, 2012]);
}

#[test]
fn learning_y_coincides_the_year_after_learning() {
    let data = small(3);
    let market = data.market();
    let engine = Engine::new(&data.panel, &market, config()).unwrap();
    let wf = engine.walk_forward().unwrap();
    let frozen = engine.learning_y(2011).unwrap();
    let a = &wf.reports[POSITIVE_ML].series;
    let b = &frozen.series;
    assert_eq!(a.dates, b.dates);
    let split = a.dates.iter().position(|d| d.year() == 2013).unwrap();
    assert_eq!(a.values[..split], b.values[..split]);
    assert_eq!(frozen.name, learning_y_name(2011));
}

#[test]
fn unknown_learning_year_is_rejected() {
    let data = small(4);
    let market = data.market();
    let engine = Engine::new(&data.panel, &market, config()).unwrap();
    let err = engine.learning_y(2030).unwrap_err();
    assert!(matches!(err, Error::UnknownLearningYear(2030)));
    assert!(err.is_validation());
}

#[test]
fn too_short_history_is_reported() {
    let data = small(5);
    let market = data.market();
    let cfg = WalkForwardConfig {
        initial_years: 5,
        ..config()
    };
    assert!(matches!(
        Engine::new(&data.panel, &market, cfg),
        Err(Error::InsufficientHistory(_))
    ));
}

#[test]
fn missing_quotes_surface_as_missing_price_data() {
    let data = small(6);
    let mut triples = Vec::new();
    for (di, d) in data.prices.dates().iter().enumerate() {
        for (si, id) in data.prices.stock_ids().iter().enumerate() {
            // one stock stops trading in mid-2012
            if id == "S0001" && *d > date(2012, 6, 1) {
                continue;
            }
            triples.push((*d, id.clone(), data.prices.get(di, si).unwrap()));
        }
    }
    let market = Market {
        universe: data.universe.clone(),
        prices: rulescreen::backtest::Prices::from_triples(triples).unwrap(),
    };
    let err = Engine::new(&data.panel, &market, config())
        .unwrap()
        .walk_forward()
        .unwrap_err();
    assert!(matches!(err, Error::MissingPriceData { ref stock_id, .. } if stock_id == "S0001"));
}
