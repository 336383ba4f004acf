//! Suitable-rule design by increasing complexity and covering selection.
//!
//! Complexity-1 rules are enumerated exhaustively. Complexity-`c` rules are
//! built by intersecting the `M` best complexity-1 rules with the `M` best
//! complexity-`c-1` rules. A greedy pass then keeps the best-ranked rules
//! until every learning row activates at least one of them.

use std::collections::HashSet;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::Serialize;

use crate::bits::BitSet;
use crate::error::{Error, Result};
use crate::panel::Code;
use crate::rules::{Condition, Interval, LearningSet, Rule, RuleSet, SearchParams, Sign};

/// Candidate and survivor counts of one complexity level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LevelReport {
    pub complexity: usize,
    pub candidates: usize,
    pub suitable: usize,
    pub positive: usize,
    pub negative: usize,
}

impl LevelReport {
    fn new(complexity: usize, candidates: usize, rules: &[Rule]) -> Self {
        let positive = rules.iter().filter(|r| r.sign == Sign::Positive).count();
        LevelReport {
            complexity,
            candidates,
            suitable: rules.len(),
            positive,
            negative: rules.len() - positive,
        }
    }
}

/// All suitable rules up to the maximal complexity, with per-level counts.
#[derive(Debug, Clone)]
pub struct Design {
    pub rules: Vec<Rule>,
    pub levels: Vec<LevelReport>,
}

fn sort_rules(rules: &mut [Rule]) {
    rules.sort_by(Rule::rank_cmp);
}

/// Number of complexity-1 candidate conditions for the given code counts.
pub fn complexity1_candidate_count(n_codes: &[usize]) -> usize {
    n_codes.iter().map(|k| k * (k + 1) / 2).sum()
}

/// Evaluates every single-feature interval `[a, b]` and keeps the suitable
/// ones, ranked.
pub fn enumerate_complexity1(set: &LearningSet, params: &SearchParams) -> Result<Vec<Rule>> {
    if set.is_empty() {
        return Err(Error::EmptyLearningSet);
    }
    let starts: Vec<(usize, usize)> = set
        .n_codes()
        .iter()
        .enumerate()
        .flat_map(|(k, &n)| (0..n).map(move |lo| (k, lo)))
        .collect();
    let per_start: Vec<Vec<Rule>> = starts
        .par_iter()
        .map(|&(k, lo)| {
            let mut out = Vec::new();
            let mut bits = BitSet::empty(set.len());
            for hi in lo..set.n_codes()[k] {
                let iv = Interval {
                    feature_index: k,
                    lo: lo as Code,
                    hi: hi as Code,
                };
                bits.union_with(&set.interval_set(&Interval { lo: hi as Code, ..iv }));
                let cond = Condition::single(k, iv.lo, iv.hi).expect("lo <= hi");
                let rule = set.rule_with_bits(cond, &bits);
                if set.is_suitable(&rule, params) {
                    out.push(rule);
                }
            }
            out
        })
        .collect();
    let mut rules: Vec<Rule> = per_start.into_iter().flatten().collect();
    sort_rules(&mut rules);
    Ok(rules)
}

/// Builds complexity-`c` rules from the top `M` rules of both parent lists
/// (each assumed ranked) by suitable intersection.
pub fn generate_complexity_c(
    suitable_1: &[Rule],
    suitable_prev: &[Rule],
    c: usize,
    params: &SearchParams,
    set: &LearningSet,
) -> Vec<Rule> {
    generate_level(suitable_1, suitable_prev, c, params, set).0
}

fn generate_level(
    suitable_1: &[Rule],
    suitable_prev: &[Rule],
    c: usize,
    params: &SearchParams,
    set: &LearningSet,
) -> (Vec<Rule>, usize) {
    let m = params.branch_width;
    let top1: Vec<(&Rule, BitSet)> = suitable_1
        .iter()
        .take(m)
        .map(|r| (r, set.activation(&r.condition)))
        .collect();
    let top_prev: Vec<(&Rule, BitSet)> = suitable_prev
        .iter()
        .take(m)
        .map(|r| (r, set.activation(&r.condition)))
        .collect();
    let pairs: Vec<(usize, usize)> = (0..top1.len())
        .flat_map(|i| (0..top_prev.len()).map(move |j| (i, j)))
        .collect();
    let found: Vec<Option<Rule>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (a, bits_a) = &top1[i];
            let (b, bits_b) = &top_prev[j];
            let (cond, bits) = set.intersect_with_bits(a, bits_a, b, bits_b).ok()?;
            let rule = set.rule_with_bits(cond, &bits);
            (rule.complexity == c && set.is_suitable(&rule, params)).then_some(rule)
        })
        .collect();
    let mut seen = HashSet::new();
    let mut rules: Vec<Rule> = found
        .into_iter()
        .flatten()
        .filter(|r| seen.insert(r.condition.clone()))
        .collect();
    sort_rules(&mut rules);
    (rules, pairs.len())
}

/// Designs all suitable rules of complexity `1..=cp_max`, stopping at the
/// first empty level.
pub fn design_rules(set: &LearningSet, params: &SearchParams) -> Result<Design> {
    params.validate()?;
    let level1 = enumerate_complexity1(set, params)?;
    let mut levels = vec![LevelReport::new(
        1,
        complexity1_candidate_count(set.n_codes()),
        &level1,
    )];
    let mut rules = level1.clone();
    let mut prev = level1.clone();
    for c in 2..=params.cp_max {
        if prev.is_empty() {
            break;
        }
        let (next, attempted) = generate_level(&level1, &prev, c, params, set);
        levels.push(LevelReport::new(c, attempted, &next));
        if next.is_empty() {
            break;
        }
        rules.extend(next.iter().cloned());
        prev = next;
    }
    Ok(Design { rules, levels })
}

/// Greedy covering selection. Rules are scanned in rank order and kept when
/// they activate at least one still-uncovered learning row. A full-space
/// default rule is appended when the kept rules leave rows uncovered.
pub fn select_covering(
    candidates: &[Rule],
    set: &LearningSet,
    learned_at: NaiveDate,
    feature_ids: Vec<String>,
) -> RuleSet {
    let mut ranked: Vec<&Rule> = candidates.iter().collect();
    ranked.sort_by(|a, b| a.rank_cmp(b));
    let mut uncovered = BitSet::full(set.len());
    let mut selected = Vec::new();
    for rule in ranked {
        if uncovered.count() == 0 {
            break;
        }
        let bits = set.activation(&rule.condition);
        if bits.intersection_count(&uncovered) > 0 {
            uncovered.difference_with(&bits);
            selected.push(rule.clone());
        }
    }
    if uncovered.count() > 0 || selected.is_empty() {
        selected.push(Rule::default_rule(set));
    }
    RuleSet {
        rules: selected,
        learned_at,
        feature_ids,
    }
}
