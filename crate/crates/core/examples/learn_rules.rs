//! Design suitable rules on a planted panel and print the covering set.

use rulescreen::pipeline::{learn, LearnOptions};
use rulescreen::rules::SearchParams;
use rulescreen::synth::{generate_panel, PlantedRule, SynthSpec};

fn main() -> rulescreen::Result<()> {
    let mut spec = SynthSpec::new(400, 36, 5, 5, 0.08, 11);
    spec.planted = vec![
        PlantedRule::new(&[(0, 3, 4), (1, 3, 4)], 0.08),
        PlantedRule::new(&[(2, 0, 0)], -0.05),
    ];
    let (raw, _) = generate_panel(&spec)?;
    let opts = LearnOptions {
        search: SearchParams { m: 5, ..SearchParams::default() },
        ..LearnOptions::default()
    };
    let learned = learn(&raw, &opts)?;
    for l in &learned.levels {
        println!("complexity {}: {} candidates, {} suitable (+{} / -{})", l.complexity, l.candidates, l.suitable, l.positive, l.negative);
    }
    let lines = learned.rules.describe(learned.panel.specs(), learned.panel.bins());
    for (line, w) in lines.iter().zip(&learned.state.weights) {
        println!("{w:.3}  {line}");
    }
    Ok(())
}
