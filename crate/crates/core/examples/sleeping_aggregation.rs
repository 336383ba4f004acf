//! Sleeping experts: only the rules that fire are reweighted.

use chrono::NaiveDate;
use rulescreen::aggregate::{AggregationState, LossKind};
use rulescreen::rules::{Condition, Rule, RuleSet};

fn main() -> rulescreen::Result<()> {
    let rules = RuleSet {
        rules: vec![
            Rule::new(Condition::single(0, 1, 1)?, 0.04, 10, 1, 0.0),
            Rule::new(Condition::single(0, 1, 1)?, -0.02, 10, 1, 0.0),
            Rule::new(Condition::single(0, 0, 0)?, 0.01, 10, 1, 0.0),
        ],
        learned_at: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
        feature_ids: vec!["x".into()],
    };
    let mut state = AggregationState::new(3, 20.0, LossKind::Squared, 1.0, 0.005)?;
    for step in 0..5 {
        // only the first two rules fire on code 1; the third sleeps
        let x = [1];
        println!("step {step}: y_hat {:+.4} score {} weights {:.4?}", state.predict(&rules, &x)?, state.score(&rules, &x)?, state.weights);
        state.update(&rules, &x, 0.05)?;
    }
    println!("{}", state.to_json()?);
    Ok(())
}
