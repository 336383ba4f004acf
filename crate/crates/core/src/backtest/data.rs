//! Investment universe snapshots and daily total returns.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::parse_date;

/// One constituent of the universe at a given date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniverseRow {
    pub stock_id: String,
    pub cap_weight: f64,
    pub sector: String,
    pub peer_group: String,
    pub esg_rating: f64,
}

/// Universe at a review, with the ML score of each constituent when one is
/// available.
#[derive(Debug, Clone, PartialEq)]
pub struct UniverseSnapshot {
    pub review_date: NaiveDate,
    pub rows: Vec<UniverseRow>,
    pub scores: Vec<Option<i8>>,
}

impl UniverseSnapshot {
    pub fn new(review_date: NaiveDate, rows: Vec<UniverseRow>) -> Self {
        let scores = vec![None; rows.len()];
        UniverseSnapshot {
            review_date,
            rows,
            scores,
        }
    }

    pub fn with_scores(mut self, scores: Vec<Option<i8>>) -> Self {
        assert_eq!(scores.len(), self.rows.len());
        self.scores = scores;
        self
    }

    pub fn cap_weights(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.cap_weight).collect()
    }
}

const CAP_TOLERANCE: f64 = 1e-9;

fn validate_rows(date: NaiveDate, rows: &[UniverseRow]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for r in rows {
        if !seen.insert(r.stock_id.as_str()) {
            return Err(Error::InvalidUniverse(format!(
                "duplicate stock {} on {date}",
                r.stock_id
            )));
        }
        if !(r.cap_weight >= 0.0 && r.cap_weight.is_finite()) {
            return Err(Error::InvalidUniverse(format!(
                "bad cap weight for {} on {date}",
                r.stock_id
            )));
        }
        if !r.esg_rating.is_finite() {
            return Err(Error::InvalidUniverse(format!(
                "bad ESG rating for {} on {date}",
                r.stock_id
            )));
        }
    }
    let total: f64 = rows.iter().map(|r| r.cap_weight).sum();
    if (total - 1.0).abs() > CAP_TOLERANCE {
        return Err(Error::InvalidUniverse(format!(
            "cap weights on {date} sum to {total}"
        )));
    }
    Ok(())
}

/// Dated universe snapshots.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Universe {
    snapshots: BTreeMap<NaiveDate, Vec<UniverseRow>>,
}

impl Universe {
    /// Rows of each date are sorted by stock id; cap weights must sum to 1.
    pub fn new(snapshots: BTreeMap<NaiveDate, Vec<UniverseRow>>) -> Result<Self> {
        let mut snapshots = snapshots;
        for (date, rows) in &mut snapshots {
            rows.sort_by(|a, b| a.stock_id.cmp(&b.stock_id));
            validate_rows(*date, rows)?;
        }
        Ok(Universe { snapshots })
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.snapshots.keys().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// Latest snapshot dated on or before `date`.
    pub fn at(&self, date: NaiveDate) -> Option<(NaiveDate, &[UniverseRow])> {
        self.snapshots
            .range(..=date)
            .next_back()
            .map(|(d, rows)| (*d, rows.as_slice()))
    }

    /// Reads `date,stock_id,cap_weight,sector,peer_group,esg_rating`.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let ctx = path.display().to_string();
        let mut snapshots: BTreeMap<NaiveDate, Vec<UniverseRow>> = BTreeMap::new();
        for record in rdr.records() {
            let record = record?;
            if record.len() != 6 {
                return Err(Error::parse(&ctx, "expected 6 columns"));
            }
            let num = |i: usize, what: &str| -> Result<f64> {
                record[i]
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(&ctx, format!("bad {what} '{}'", &record[i])))
            };
            let date = parse_date(&record[0])?;
            snapshots.entry(date).or_default().push(UniverseRow {
                stock_id: record[1].to_string(),
                cap_weight: num(2, "cap_weight")?,
                sector: record[3].to_string(),
                peer_group: record[4].to_string(),
                esg_rating: num(5, "esg_rating")?,
            });
        }
        Universe::new(snapshots)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["date", "stock_id", "cap_weight", "sector", "peer_group", "esg_rating"])?;
        for (date, rows) in &self.snapshots {
            for r in rows {
                w.write_record([
                    date.to_string(),
                    r.stock_id.clone(),
                    r.cap_weight.to_string(),
                    r.sector.clone(),
                    r.peer_group.clone(),
                    r.esg_rating.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Dense daily total-return matrix; `NaN` marks a missing quote.
#[derive(Debug, Clone, Default)]
pub struct Prices {
    dates: Vec<NaiveDate>,
    stock_ids: Vec<String>,
    index: HashMap<String, usize>,
    /// Row-major `dates x stocks`.
    returns: Vec<f64>,
}

impl Prices {
    /// Builds the matrix from `(date, stock_id, daily total return)` triples.
    pub fn from_triples(triples: impl IntoIterator<Item = (NaiveDate, String, f64)>) -> Result<Self> {
        let triples: Vec<_> = triples.into_iter().collect();
        let mut dates: Vec<NaiveDate> = triples.iter().map(|t| t.0).collect();
        dates.sort();
        dates.dedup();
        let mut stock_ids: Vec<String> = triples.iter().map(|t| t.1.clone()).collect();
        stock_ids.sort();
        stock_ids.dedup();
        let index: HashMap<String, usize> = stock_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        let date_index: HashMap<NaiveDate, usize> =
            dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
        let n = stock_ids.len();
        let mut returns = vec![f64::NAN; dates.len() * n];
        for (date, id, r) in triples {
            if !r.is_finite() || r <= -1.0 {
                return Err(Error::parse(
                    format!("{date} {id}"),
                    format!("daily return {r} is not a valid total return"),
                ));
            }
            returns[date_index[&date] * n + index[&id]] = r;
        }
        Ok(Prices {
            dates,
            stock_ids,
            index,
            returns,
        })
    }

    /// Reads `date,stock_id,total_return_daily`.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let ctx = path.display().to_string();
        let mut triples = Vec::new();
        for record in rdr.records() {
            let record = record?;
            if record.len() != 3 {
                return Err(Error::parse(&ctx, "expected 3 columns"));
            }
            let r: f64 = record[2]
                .trim()
                .parse()
                .map_err(|_| Error::parse(&ctx, format!("bad return '{}'", &record[2])))?;
            triples.push((parse_date(&record[0])?, record[1].to_string(), r));
        }
        Prices::from_triples(triples)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["date", "stock_id", "total_return_daily"])?;
        for (di, date) in self.dates.iter().enumerate() {
            for (si, id) in self.stock_ids.iter().enumerate() {
                let r = self.returns[di * self.stock_ids.len() + si];
                if !r.is_nan() {
                    w.write_record([date.to_string(), id.clone(), r.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn stock_ids(&self) -> &[String] {
        &self.stock_ids
    }

    pub fn stock_index(&self, stock_id: &str) -> Option<usize> {
        self.index.get(stock_id).copied()
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.dates.last().copied()
    }

    /// Return of stock `si` on the `di`-th date, `None` when missing.
    pub fn get(&self, di: usize, si: usize) -> Option<f64> {
        let r = self.returns[di * self.stock_ids.len() + si];
        (!r.is_nan()).then_some(r)
    }
}

impl PartialEq for Prices {
    fn eq(&self, other: &Self) -> bool {
        self.dates == other.dates
            && self.stock_ids == other.stock_ids
            && self.returns.len() == other.returns.len()
            && self
                .returns
                .iter()
                .zip(&other.returns)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Universe and daily returns needed to run a backtest.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Market {
    pub universe: Universe,
    pub prices: Prices,
}
