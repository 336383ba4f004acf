//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! rejected. `auto` leaves a tunable parameter to its data-driven default.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use crate::aggregate::LossKind;
use crate::backtest::walk::WalkForwardConfig;
use crate::error::{Error, Result};
use crate::panel::parse_date;
use crate::rules::ZKind;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Search, aggregation and backtest parameters.
    pub walk: WalkForwardConfig,
    /// Share of the panel in the learning set of a standalone `learn`.
    pub learn_fraction: f64,
    pub features: Option<PathBuf>,
    pub returns: Option<PathBuf>,
    pub universe: Option<PathBuf>,
    pub prices: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Worker threads; 0 uses every available core.
    pub worker_count: usize,
    /// Overrides the seed of a synthetic spec when set.
    pub seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            walk: WalkForwardConfig::default(),
            learn_fraction: 0.4,
            features: None,
            returns: None,
            universe: None,
            prices: None,
            out_dir: None,
            worker_count: 0,
            seed: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for key '{key}'")))
}

fn parse_auto<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn parse_opt_date(key: &str, value: &str) -> Result<Option<NaiveDate>> {
    if value == "auto" {
        return Ok(None);
    }
    parse_date(value)
        .map(Some)
        .map_err(|_| Error::Config(format!("invalid date '{value}' for key '{key}'")))
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or("auto".to_string(), T::to_string)
}

fn show_path(v: &Option<PathBuf>) -> String {
    v.as_ref().map_or(String::new(), |p| p.display().to_string())
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let w = &mut self.walk;
        match key {
            "m" => w.search.m = parse(key, value)?,
            "alpha" => w.search.alpha = parse(key, value)?,
            "c_min" => w.search.c_min = parse(key, value)?,
            "c_max" => w.search.c_max = parse(key, value)?,
            "cp_max" => w.search.cp_max = parse(key, value)?,
            "branch_width" => w.search.branch_width = parse(key, value)?,
            "z_kind" => w.search.z_kind = value.parse::<ZKind>()?,
            "eta" => w.eta = parse_auto(key, value)?,
            "epsilon" => w.epsilon = parse_auto(key, value)?,
            "loss_kind" => w.loss_kind = value.parse::<LossKind>()?,
            "loss_cap" => w.loss_cap = parse(key, value)?,
            "best_in_class_x" => w.best_in_class_x = parse(key, value)?,
            "initial_years" => w.initial_years = parse(key, value)?,
            "horizon_months" => w.horizon_months = parse(key, value)?,
            "score_lag_days" => w.score_lag_days = parse(key, value)?,
            "design_fraction" => w.design_fraction = parse(key, value)?,
            "periods_per_year" => w.periods_per_year = parse(key, value)?,
            "risk_free" => w.risk_free = parse(key, value)?,
            "end_date" => w.end = parse_opt_date(key, value)?,
            "learn_fraction" => self.learn_fraction = parse(key, value)?,
            "features" => self.features = opt_path(value),
            "returns" => self.returns = opt_path(value),
            "universe" => self.universe = opt_path(value),
            "prices" => self.prices = opt_path(value),
            "out_dir" => self.out_dir = opt_path(value),
            "worker_count" => self.worker_count = parse(key, value)?,
            "seed" => self.seed = parse_auto(key, value)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split_once('#').map_or(line, |(l, _)| l).trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", n + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.walk.validate()?;
        if !(self.learn_fraction > 0.0 && self.learn_fraction < 1.0) {
            return Err(Error::Config(format!(
                "learn_fraction must lie in (0, 1), got {}",
                self.learn_fraction
            )));
        }
        if !(self.walk.loss_cap > 0.0) {
            return Err(Error::Config("loss_cap must be > 0".into()));
        }
        Ok(())
    }

    /// Canonical text form: every key, one per line, in a fixed order.
    pub fn to_text(&self) -> String {
        let w = &self.walk;
        let s = &w.search;
        let pairs: Vec<(&str, String)> = vec![
            ("m", s.m.to_string()),
            ("alpha", s.alpha.to_string()),
            ("c_min", s.c_min.to_string()),
            ("c_max", s.c_max.to_string()),
            ("cp_max", s.cp_max.to_string()),
            ("branch_width", s.branch_width.to_string()),
            ("z_kind", s.z_kind.to_string()),
            ("eta", show(&w.eta)),
            ("epsilon", show(&w.epsilon)),
            ("loss_kind", w.loss_kind.to_string()),
            ("loss_cap", w.loss_cap.to_string()),
            ("best_in_class_x", w.best_in_class_x.to_string()),
            ("initial_years", w.initial_years.to_string()),
            ("horizon_months", w.horizon_months.to_string()),
            ("score_lag_days", w.score_lag_days.to_string()),
            ("design_fraction", w.design_fraction.to_string()),
            ("periods_per_year", w.periods_per_year.to_string()),
            ("risk_free", w.risk_free.to_string()),
            ("end_date", show(&w.end)),
            ("learn_fraction", self.learn_fraction.to_string()),
            ("features", show_path(&self.features)),
            ("returns", show_path(&self.returns)),
            ("universe", show_path(&self.universe)),
            ("prices", show_path(&self.prices)),
            ("out_dir", show_path(&self.out_dir)),
            ("worker_count", self.worker_count.to_string()),
            ("seed", show(&self.seed)),
        ];
        pairs
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_comments_are_ignored() {
        let cfg = RunConfig::parse_str("# header\nm = 7   # modalities\n").unwrap();
        assert_eq!(cfg.walk.search.m, 7);
    }

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse_str(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn values_and_comments() {
        let cfg = RunConfig::parse_str(
            "# search\nm = 5\nalpha=0.1\n\neta = 0.25\nepsilon = auto\nend_date = 2016-03-31\nprices = data/prices.csv\n",
        )
        .unwrap();
        assert_eq!(cfg.walk.search.m, 5);
        assert_eq!(cfg.walk.search.alpha, 0.1);
        assert_eq!(cfg.walk.eta, Some(0.25));
        assert_eq!(cfg.walk.epsilon, None);
        assert_eq!(cfg.walk.end, NaiveDate::from_ymd_opt(2016, 3, 31));
        assert_eq!(cfg.prices, Some(PathBuf::from("data/prices.csv")));
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse_str("m = 5\nbogus_key = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus_key"));
        assert!(err.is_validation());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::parse_str("alpha = lots").unwrap_err().is_validation());
        assert!(RunConfig::parse_str("c_min = 0.6\nc_max = 0.5").unwrap_err().is_validation());
        assert!(RunConfig::parse_str("learn_fraction = 1.5").unwrap_err().is_validation());
        assert!(RunConfig::parse_str("just text").unwrap_err().is_validation());
    }
}
