//! Conditions, activations, conditional means and suitable intersections.

use rulescreen::rules::{Condition, Interval, LearningSet, SearchParams};

fn main() -> rulescreen::Result<()> {
    // two features with 3 codes each, every cell twice
    let mut codes = Vec::new();
    let mut y = Vec::new();
    for rep in 0..2 {
        for a in 0..3u16 {
            for b in 0..3u16 {
                codes.extend([a, b]);
                let bonus = if a == 2 && b >= 1 { 0.10 } else { 0.0 };
                y.push(bonus + if rep == 0 { 0.01 } else { -0.01 });
            }
        }
    }
    let set = LearningSet::from_rows(vec![3, 3], codes, y);
    let high_a = set.rule(Condition::single(0, 2, 2)?);
    let high_b = set.rule(Condition::single(1, 1, 2)?);
    println!("a high: n={} mean={:+.4}", high_a.activations, high_a.prediction);
    println!("b not low: n={} mean={:+.4}", high_b.activations, high_b.prediction);

    match set.intersect(&high_a, &high_b) {
        Ok(c) => {
            let r = set.rule(c);
            println!("intersection {}: n={} mean={:+.4} complexity={}", r.condition, r.activations, r.prediction, r.complexity);
            let params = SearchParams { m: 3, alpha: 0.05, c_min: 0.05, c_max: 0.5, ..SearchParams::default() };
            println!("suitable: {}", set.is_suitable(&r, &params));
        }
        Err(why) => println!("not suitable to intersect: {why:?}"),
    }
    let same = Condition::new(vec![Interval::new(0, 2, 2)?])?;
    println!("self-intersection rejected: {:?}", set.intersect(&high_a, &set.rule(same)).err());
    Ok(())
}
