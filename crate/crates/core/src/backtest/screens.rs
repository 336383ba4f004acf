//! Weight constructions applied to a universe snapshot. Every function
//! returns one weight per snapshot row, non-negative and summing to 1.

use std::collections::BTreeMap;

use crate::backtest::data::UniverseSnapshot;
use crate::error::{Error, Result};

fn normalize(mut w: Vec<f64>, snapshot: &UniverseSnapshot) -> Result<Vec<f64>> {
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::EmptyAfterFilter(snapshot.review_date.to_string()));
    }
    for v in &mut w {
        *v /= total;
    }
    Ok(w)
}

/// Linearly interpolated empirical quantile of a sorted sample.
pub fn interpolated_quantile(sorted: &[f64], x: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = x.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Drops, within each peer group, the stocks rated strictly below the
/// group's `x`-quantile, then renormalizes the surviving cap weights.
pub fn best_in_class(snapshot: &UniverseSnapshot, x: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&x) {
        return Err(Error::InvalidParameter(format!(
            "best-in-class threshold must lie in [0, 1), got {x}"
        )));
    }
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in &snapshot.rows {
        groups.entry(r.peer_group.as_str()).or_default().push(r.esg_rating);
    }
    let cut: BTreeMap<&str, f64> = groups
        .into_iter()
        .map(|(g, mut v)| {
            v.sort_by(f64::total_cmp);
            (g, interpolated_quantile(&v, x))
        })
        .collect();
    let w = snapshot
        .rows
        .iter()
        .map(|r| {
            if r.esg_rating < cut[r.peer_group.as_str()] {
                0.0
            } else {
                r.cap_weight
            }
        })
        .collect();
    normalize(w, snapshot)
}

/// Keeps the stocks whose score equals `sign`, cap-weighted. Absent scores
/// are never selected.
pub fn ml_screen(snapshot: &UniverseSnapshot, sign: i8) -> Result<Vec<f64>> {
    let w = snapshot
        .rows
        .iter()
        .zip(&snapshot.scores)
        .map(|(r, s)| if *s == Some(sign) { r.cap_weight } else { 0.0 })
        .collect();
    normalize(w, snapshot)
}

/// Rescales a selection so each populated sector carries the benchmark's
/// sector weight. The benchmark mass of empty sectors is spread pro rata over
/// the populated ones.
pub fn sector_match(weights: &[f64], snapshot: &UniverseSnapshot) -> Result<Vec<f64>> {
    assert_eq!(weights.len(), snapshot.rows.len());
    let mut bench: BTreeMap<&str, f64> = BTreeMap::new();
    let mut selected: BTreeMap<&str, f64> = BTreeMap::new();
    for (r, &w) in snapshot.rows.iter().zip(weights) {
        *bench.entry(r.sector.as_str()).or_default() += r.cap_weight;
        if w > 0.0 {
            *selected.entry(r.sector.as_str()).or_default() += w;
        }
    }
    if let Some((s, _)) = selected.iter().find(|(s, _)| !(bench[*s] > 0.0)) {
        return Err(Error::InvalidUniverse(format!(
            "sector {s} is selected but has no benchmark weight"
        )));
    }
    let populated: f64 = selected.keys().map(|s| bench[s]).sum();
    if !(populated > 0.0) {
        return Err(Error::NoPopulatedSector);
    }
    Ok(snapshot
        .rows
        .iter()
        .zip(weights)
        .map(|(r, &w)| {
            if w > 0.0 {
                let s = r.sector.as_str();
                w * (bench[s] / populated) / selected[s]
            } else {
                0.0
            }
        })
        .collect())
}
