//! Generate a planted panel, write its CSV files and check prices realize y.

use rulescreen::synth::{generate, PlantedRule, SynthSpec};

fn main() -> rulescreen::Result<()> {
    let mut spec = SynthSpec::new(50, 24, 3, 5, 0.05, 42);
    spec.planted = vec![PlantedRule::new(&[(0, 4, 4)], 0.06)];
    println!("{}", spec.to_json()?);
    let data = generate(&spec)?;
    let dir = std::env::temp_dir().join("rulescreen-synth-example");
    data.write_dir(&dir)?;
    println!("wrote {} observations to {}", data.panel.len(), dir.display());

    // mean forward return inside and outside the planted rectangle
    let (mut inside, mut outside) = (Vec::new(), Vec::new());
    for (o, x) in data.panel.observations().iter().zip(&data.codes) {
        if let Some(y) = o.y {
            if x[0] == 4 { inside.push(y) } else { outside.push(y) }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!("mean y inside {:+.4} ({} rows), outside {:+.4} ({} rows)", mean(&inside), inside.len(), mean(&outside), outside.len());
    Ok(())
}
