//! Acceptance criteria 1-10. Runs as a plain binary (no libtest harness) and
//! prints one PASS/FAIL line per criterion; exits non-zero when any fails.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use rulescreen::aggregate::{default_eta, AggregationState, LossKind};
use rulescreen::backtest::walk::{
    best_in_class_name, learning_y_name, Engine, BENCHMARK, NEGATIVE_ML, POSITIVE_ML,
    POSITIVE_SECTOR_MATCHED,
};
use rulescreen::backtest::{kpis, max_drawdown, simulate, Review};
use rulescreen::panel::{Code, Discretizer, MISSING};
use rulescreen::rulegen::{design_rules, enumerate_complexity1};
use rulescreen::rules::{Condition, Interval, LearningSet, Rule, RuleSet, SearchParams};
use rulescreen::synth::{generate, generate_panel, PlantedRule, SynthSpec};

use common::{date, decay_spec, desk_config, table7_spec};

const SEEDS: u64 = 100;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---- criterion 1 -------------------------------------------------------

fn random_condition(rng: &mut ChaCha8Rng, n_codes: &[usize]) -> Condition {
    let d = n_codes.len();
    let k = rng.random_range(0..=3.min(d));
    let mut feats: Vec<usize> = (0..d).collect();
    let mut ivs = Vec::new();
    for _ in 0..k {
        let f = feats.swap_remove(rng.random_range(0..feats.len()));
        let a = rng.random_range(0..n_codes[f]) as Code;
        let b = rng.random_range(0..n_codes[f]) as Code;
        ivs.push(Interval::new(f, a.min(b), a.max(b)).unwrap());
    }
    Condition::new(ivs).unwrap()
}

fn oracle_stats(codes: &[Code], y: &[f64], d: usize, c: &Condition) -> (usize, f64) {
    let mut n = 0;
    let mut sum = 0.0;
    for (i, yi) in y.iter().enumerate() {
        let x = &codes[i * d..(i + 1) * d];
        let active = c
            .intervals()
            .iter()
            .all(|iv| x[iv.feature_index] != MISSING && iv.lo <= x[iv.feature_index] && x[iv.feature_index] <= iv.hi);
        if active {
            n += 1;
            sum += yi;
        }
    }
    (n, sum)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut mismatches = 0;
    let mut checks = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let n = rng.random_range(1..=1000);
        let d = rng.random_range(1..=20);
        let m = rng.random_range(2..=10);
        let n_codes = vec![m; d];
        let codes: Vec<Code> = (0..n * d)
            .map(|_| {
                if rng.random::<f64>() < 0.05 {
                    MISSING
                } else {
                    rng.random_range(0..m) as Code
                }
            })
            .collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let set = LearningSet::from_rows(n_codes.clone(), codes.clone(), y.clone());
        for _ in 0..50 {
            let c = random_condition(&mut rng, &n_codes);
            let (on, osum) = oracle_stats(&codes, &y, d, &c);
            let omean = if on == 0 { 0.0 } else { osum / on as f64 };
            let ocov = on as f64 / n as f64;
            checks += 1;
            if set.n_activations(&c) != on
                || set.conditional_mean(&c) != omean
                || set.coverage_ratio(&c).unwrap() != ocov
            {
                mismatches += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        mismatches == 0 && elapsed < Duration::from_secs(10),
        format!("{mismatches} mismatches in {checks} checks on 100 panels, {:.2}s", elapsed.as_secs_f64()),
    )
}

// ---- criterion 2 -------------------------------------------------------

fn learning_set_of(spec: &SynthSpec, m: usize) -> LearningSet {
    let (raw, _) = generate_panel(spec).unwrap();
    let disc = Discretizer::fit(raw.observations(), raw.specs(), m).unwrap();
    let panel = disc.apply(&raw).unwrap();
    LearningSet::from_view(&panel.view())
}

fn check_rule(set: &LearningSet, rule: &Rule, p: &SearchParams) -> bool {
    let n = set.len();
    let mut n_r = 0;
    let mut sum = 0.0;
    for i in 0..n {
        let x = set.row(i);
        if rule.condition.intervals().iter().all(|iv| iv.contains(x[iv.feature_index])) {
            n_r += 1;
            sum += set.ys()[i];
        }
    }
    if n_r != rule.activations || n_r == 0 {
        return false;
    }
    let mean_all = set.ys().iter().sum::<f64>() / n as f64;
    let sd = (set.ys().iter().map(|y| (y - mean_all).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let cov = n_r as f64 / n as f64;
    let q = Normal::standard().inverse_cdf(1.0 - p.alpha / 2.0);
    let z = q * sd / (n_r as f64).sqrt();
    let mu = sum / n_r as f64;
    cov >= p.c_min && cov <= p.c_max && (mu - mean_all).abs() >= z
}

fn criterion_2() -> Outcome {
    let params = SearchParams {
        m: 5,
        ..SearchParams::default()
    };
    let results: Vec<(usize, usize)> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let mut spec = SynthSpec::new(300, 12, 8, 5, 0.1, 200 + seed);
            spec.planted = vec![
                PlantedRule::new(&[(0, 3, 4)], 0.03),
                PlantedRule::new(&[(1, 0, 0), (2, 2, 4)], -0.04),
            ];
            let set = learning_set_of(&spec, params.m);
            let design = design_rules(&set, &params).unwrap();
            let bad = design.rules.iter().filter(|r| !check_rule(&set, r, &params)).count();
            (design.rules.len(), bad)
        })
        .collect();
    let rules: usize = results.iter().map(|r| r.0).sum();
    let bad: usize = results.iter().map(|r| r.1).sum();
    outcome(
        bad == 0 && rules > 0,
        format!("{bad} violations among {rules} rules over 20 seeds"),
    )
}

// ---- criterion 3 -------------------------------------------------------

fn recovery_spec(seed: u64, planted: bool) -> SynthSpec {
    let sigma = 0.1;
    let mut spec = SynthSpec::new(5000, 1, 10, 5, sigma, 300 + seed);
    if planted {
        // codes {3,4} x {3,4} cover 4/25 = 16% of the rows
        spec.planted = vec![PlantedRule::new(&[(0, 3, 4), (1, 3, 4)], 3.0 * sigma)];
    }
    spec
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let params = SearchParams {
        m: 5,
        ..SearchParams::default()
    };
    let target = Condition::new(vec![Interval::new(0, 3, 4).unwrap(), Interval::new(1, 3, 4).unwrap()]).unwrap();
    let recovered: usize = (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            let set = learning_set_of(&recovery_spec(seed, true), params.m);
            let design = design_rules(&set, &params).unwrap();
            let mut ranked = design.rules.clone();
            ranked.sort_by(Rule::rank_cmp);
            usize::from(ranked.first().is_some_and(|r| r.condition == target))
        })
        .sum();
    let (suitable, eligible) = (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            let set = learning_set_of(&recovery_spec(seed, false), params.m);
            let suitable = enumerate_complexity1(&set, &params).unwrap().len();
            let mut eligible = 0;
            for k in 0..set.d() {
                for lo in 0..set.n_codes()[k] {
                    for hi in lo..set.n_codes()[k] {
                        let c = Condition::single(k, lo as Code, hi as Code).unwrap();
                        let cov = set.coverage_ratio(&c).unwrap();
                        if cov >= params.c_min && cov <= params.c_max {
                            eligible += 1;
                        }
                    }
                }
            }
            (suitable, eligible)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let rate = suitable as f64 / eligible as f64;
    let elapsed = start.elapsed();
    outcome(
        recovered >= 95 && rate <= 2.0 * params.alpha && elapsed < Duration::from_secs(300),
        format!(
            "recovered {recovered}/{SEEDS}, null false-suitable rate {rate:.4} ({suitable}/{eligible}), {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

// ---- criterion 4 -------------------------------------------------------

fn full_ruleset(predictions: &[f64]) -> RuleSet {
    RuleSet {
        rules: predictions
            .iter()
            .map(|&p| Rule::new(Condition::full(), p, 1, 0, 0.0))
            .collect(),
        learned_at: date(2020, 1, 1),
        feature_ids: vec!["f".into()],
    }
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let (t, r) = (500usize, 20usize);
    let eta = default_eta(r, t);
    let mut violations = 0;
    let mut worst_slack = f64::INFINITY;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let mut state = AggregationState::new(r, eta, LossKind::Squared, 1.0, 0.0).unwrap();
        let mut expert_loss = vec![0.0; r];
        let mut agg_loss = 0.0;
        for _ in 0..t {
            // fresh expert advice each round, all experts awake
            let preds: Vec<f64> = (0..r).map(|_| rng.random::<f64>()).collect();
            let y: f64 = rng.random();
            let rs = full_ruleset(&preds);
            let x = [0 as Code];
            let p = state.predict(&rs, &x).unwrap();
            agg_loss += ((p - y).powi(2)).min(1.0);
            for (l, q) in expert_loss.iter_mut().zip(&preds) {
                *l += ((q - y).powi(2)).min(1.0);
            }
            state.update(&rs, &x, y).unwrap();
        }
        let best = expert_loss.iter().copied().fold(f64::INFINITY, f64::min);
        let bound = best + (r as f64).ln() / eta + t as f64 * eta / 8.0;
        worst_slack = worst_slack.min(bound - agg_loss);
        if agg_loss > bound {
            violations += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        violations == 0 && elapsed < Duration::from_secs(30),
        format!(
            "{violations} violations on 50 streams (T={t}, R={r}, eta={eta:.4}), min slack {worst_slack:.3}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

// ---- criterion 5 -------------------------------------------------------

fn criterion_5() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let r = rng.random_range(2..=20);
        let asleep = rng.random_range(0..r);
        let mut rules: Vec<Rule> = (0..r)
            .map(|_| {
                let lo = rng.random_range(0..3) as Code;
                let c = Condition::single(0, lo, lo + rng.random_range(0..3) as Code).unwrap();
                Rule::new(c, rng.random::<f64>() - 0.5, 1, 1, 0.0)
            })
            .collect();
        // code 9 never occurs in the stream
        rules[asleep] = Rule::new(Condition::single(0, 9, 9).unwrap(), 0.3, 1, 1, 0.0);
        rules.push(Rule::new(Condition::full(), 0.0, 1, 0, 0.0));
        let rs = RuleSet {
            rules,
            learned_at: date(2020, 1, 1),
            feature_ids: vec!["f".into()],
        };
        let n = rs.len();
        let mut state = AggregationState::new(n, rng.random_range(0.1..5.0), LossKind::Squared, 1.0, 0.0).unwrap();
        let initial = state.weights[asleep];
        for _ in 0..1000 {
            let x = [rng.random_range(0..6) as Code];
            state.update(&rs, &x, rng.random::<f64>() * 2.0 - 1.0).unwrap();
        }
        worst = worst.max((state.weights[asleep] - initial).abs());
    }
    outcome(worst <= 1e-12, format!("max drift of a sleeping weight {worst:.3e} over 20 streams"))
}

// ---- criteria 6, 7, 8 --------------------------------------------------

struct Table7 {
    pass: bool,
    bic_ir: f64,
}

fn table7_seed(seed: u64) -> Table7 {
    let data = generate(&table7_spec(seed)).unwrap();
    let market = data.market();
    let wf = Engine::new(&data.panel, &market, desk_config())
        .unwrap()
        .walk_forward()
        .unwrap();
    let perf = |n: &str| wf.reports[n].kpis.ann_performance;
    let (b, pos, sm, neg) = (perf(BENCHMARK), perf(POSITIVE_ML), perf(POSITIVE_SECTOR_MATCHED), perf(NEGATIVE_ML));
    Table7 {
        pass: pos > b && b > neg && sm > b && sm - b < pos - b,
        bic_ir: wf.reports[&best_in_class_name(0.3)].kpis.information_ratio,
    }
}

struct Decay {
    /// (learning year, calendar year, frozen below walk-forward)
    pairs: Vec<(i32, i32, bool)>,
    coincide: bool,
}

fn decay_seed(seed: u64) -> Decay {
    let data = generate(&decay_spec(seed)).unwrap();
    let market = data.market();
    let engine = Engine::new(&data.panel, &market, desk_config()).unwrap();
    let all = engine.learning_y_all().unwrap();
    let wf = &all[POSITIVE_ML].kpis.calendar_excess;
    let mut pairs = Vec::new();
    let mut coincide = true;
    for y in engine.learning_years() {
        for (&year, v) in &all[&learning_y_name(y)].kpis.calendar_excess {
            if year == y + 1 {
                coincide &= v.to_bits() == wf[&year].to_bits();
            }
            if year >= y + 2 {
                pairs.push((y, year, *v < wf[&year]));
            }
        }
    }
    Decay { pairs, coincide }
}

fn criteria_6_to_8() -> (Outcome, Outcome, Outcome) {
    let start = Instant::now();
    let table7: Vec<Table7> = (0..SEEDS).into_par_iter().map(table7_seed).collect();
    let wins = table7.iter().filter(|t| t.pass).count();
    let c6 = outcome(
        wins >= 90,
        format!("ordering held in {wins}/{SEEDS} seeds, {:.1}s", start.elapsed().as_secs_f64()),
    );

    let mean_ir = table7.iter().map(|t| t.bic_ir).sum::<f64>() / table7.len() as f64;
    let c8 = outcome(
        mean_ir.abs() <= 0.5,
        format!("mean information ratio of Best-in-class 30% {mean_ir:+.4} over {SEEDS} seeds"),
    );

    let start = Instant::now();
    let decay: Vec<Decay> = (0..SEEDS).into_par_iter().map(decay_seed).collect();
    let coincide = decay.iter().all(|d| d.coincide);
    let mut counts: std::collections::BTreeMap<(i32, i32), usize> = Default::default();
    for d in &decay {
        for &(y, year, win) in &d.pairs {
            *counts.entry((y, year)).or_default() += usize::from(win);
        }
    }
    let worst = counts.values().copied().min().unwrap_or(0);
    let listing: Vec<String> = counts.iter().map(|((y, yr), c)| format!("{y}/{yr}:{c}")).collect();
    let c7 = outcome(
        coincide && !counts.is_empty() && worst >= 80,
        format!(
            "frozen below walk-forward per (Y, year): {}; year Y+1 bitwise equal: {coincide}; {:.1}s",
            listing.join(" "),
            start.elapsed().as_secs_f64()
        ),
    );
    (c6, c7, c8)
}

// ---- criterion 9 -------------------------------------------------------

fn criterion_9() -> Outcome {
    let dd = max_drawdown(&[100.0, 120.0, 90.0, 110.0]);
    let mut spec = SynthSpec::new(30, 24, 2, 5, 0.1, 9);
    spec.start = date(2012, 1, 1);
    let data = generate(&spec).unwrap();
    let reviews: Vec<Review> = rulescreen::backtest::calendar::monthly_reviews(date(2012, 1, 31), date(2013, 12, 31), 4);
    let bench = simulate("bench", &reviews, &data.prices, None, |r| {
        let (_, rows) = data.universe.at(r.review_date).unwrap();
        Ok(rows.iter().map(|u| (u.stock_id.clone(), u.cap_weight)).collect())
    })
    .unwrap();
    let ir = kpis(&bench, &bench, 252.0).unwrap().information_ratio;
    outcome(
        dd == -0.25 && ir == 0.0,
        format!("drawdown {dd}, information_ratio(bench, bench) {ir}"),
    )
}

// ---- criterion 10 ------------------------------------------------------

fn cli(dir: &Path, workers: &str, args: &[&str]) -> bool {
    let status = Command::new(env!("CARGO_BIN_EXE_rulescreen"))
        .args(args)
        .current_dir(dir)
        .env("RULESCREEN_WORKERS", workers)
        .status()
        .unwrap();
    status.success()
}

fn pipeline(dir: &Path, workers: &str) -> bool {
    std::fs::write(
        dir.join("run.cfg"),
        "m = 5\nfeatures = data/features.csv\nreturns = data/returns.csv\nuniverse = data/universe.csv\nprices = data/prices.csv\n",
    )
    .unwrap();
    cli(dir, workers, &["synth", "--out", "data", "--seed", "7"])
        && cli(dir, workers, &["--config", "run.cfg", "learn", "--out", "learn/rules.json"])
        && cli(
            dir,
            workers,
            &["--config", "run.cfg", "score", "--rules", "learn/rules.json", "--state", "learn/state.json", "--asof", "2013-12-31"],
        )
        && cli(dir, workers, &["--config", "run.cfg", "backtest", "--out", "report"])
        && cli(dir, workers, &["report", "--dir", "report", "--out", "summary"])
}

fn files_under(root: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn criterion_10() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    if !(pipeline(a.path(), "1") && pipeline(b.path(), "4")) {
        return outcome(false, "a CLI step failed".into());
    }
    let files = files_under(a.path());
    if files != files_under(b.path()) {
        return outcome(false, "output file sets differ".into());
    }
    let differing: Vec<String> = files
        .iter()
        .filter(|f| std::fs::read(a.path().join(f)).unwrap() != std::fs::read(b.path().join(f)).unwrap())
        .map(|f| f.display().to_string())
        .collect();
    let required = ["learn/rules.json", "learn/scores.csv", "report/kpis.json", "report/scores.csv"];
    let present = required.iter().all(|f| a.path().join(f).exists());
    outcome(
        differing.is_empty() && present,
        format!("{} files compared between 1 and 4 workers, differing: {:?}", files.len(), differing),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |n: u32, name: &str, o: Outcome| {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {n:>2} {name:<28} {tag}  {}", o.detail);
        if !o.pass {
            failed += 1;
        }
    };
    report(1, "oracle equivalence", criterion_1());
    report(2, "suitability post-conditions", criterion_2());
    report(3, "planted-rule recovery", criterion_3());
    report(4, "EWA regret", criterion_4());
    report(5, "sleeping invariance", criterion_5());
    let (c6, c7, c8) = criteria_6_to_8();
    report(6, "Table-7 ordering", c6);
    report(7, "learning decay", c7);
    report(8, "best-in-class neutrality", c8);
    report(9, "KPI hand cases", criterion_9());
    report(10, "determinism", criterion_10());
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
