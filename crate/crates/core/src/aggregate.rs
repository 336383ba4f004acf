//! Sleeping-expert exponentially weighted aggregation of rule predictions.
//!
//! Each rule of a covering set is an expert that only speaks on the feature
//! vectors it activates. The aggregate prediction is the weighted mean of the
//! active rules' predictions. After an outcome is observed, active rules are
//! reweighted by `exp(-eta * loss)` and rescaled so that the active block
//! keeps its total mass; sleeping rules keep their weight.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::Code;
use crate::rules::RuleSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `(prediction - outcome)^2`
    #[default]
    Squared,
    /// `|prediction - outcome|`
    Absolute,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared" => Ok(LossKind::Squared),
            "absolute" => Ok(LossKind::Absolute),
            other => Err(Error::Config(format!("unknown loss_kind '{other}'"))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Squared => "squared",
            LossKind::Absolute => "absolute",
        })
    }
}

impl LossKind {
    pub fn eval(self, prediction: f64, outcome: f64) -> f64 {
        match self {
            LossKind::Squared => (prediction - outcome).powi(2),
            LossKind::Absolute => (prediction - outcome).abs(),
        }
    }
}

/// Learning rate tuned for `t_expected` updates over `r` experts:
/// `sqrt(8 ln r / t_expected)`.
pub fn default_eta(r: usize, t_expected: usize) -> f64 {
    if r <= 1 || t_expected == 0 {
        return 0.0;
    }
    (8.0 * (r as f64).ln() / t_expected as f64).sqrt()
}

/// Maps an aggregate prediction to a score with a closed dead zone `[-eps, eps]`.
pub fn score(y_hat: f64, epsilon: f64) -> i8 {
    if y_hat > epsilon {
        1
    } else if y_hat < -epsilon {
        -1
    } else {
        0
    }
}

/// Sample standard deviation, 0 for fewer than two values.
pub fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Per-rule weights and aggregation hyper-parameters. Serializes as the
/// state checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationState {
    pub weights: Vec<f64>,
    pub eta: f64,
    pub step: u64,
    pub epsilon: f64,
    #[serde(default)]
    pub loss_kind: LossKind,
    #[serde(default = "default_loss_cap")]
    pub loss_cap: f64,
}

fn default_loss_cap() -> f64 {
    1.0
}

/// Outcome of a sequential pass over labeled rows.
#[derive(Debug, Clone, Default)]
pub struct Pass {
    /// Aggregate prediction made before each update.
    pub predictions: Vec<f64>,
    /// Rows activating no rule; neither predicted nor used for updates.
    pub skipped: usize,
}

impl AggregationState {
    /// Uniform weights `1/r`.
    pub fn new(r: usize, eta: f64, loss_kind: LossKind, loss_cap: f64, epsilon: f64) -> Result<Self> {
        if r == 0 {
            return Err(Error::InvalidParameter("aggregation needs at least one rule".into()));
        }
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::InvalidParameter(format!("eta must be finite and >= 0, got {eta}")));
        }
        if !(loss_cap > 0.0) {
            return Err(Error::InvalidParameter(format!("loss cap must be > 0, got {loss_cap}")));
        }
        if !(epsilon >= 0.0) {
            return Err(Error::InvalidParameter(format!("epsilon must be >= 0, got {epsilon}")));
        }
        Ok(AggregationState {
            weights: vec![1.0 / r as f64; r],
            eta,
            step: 0,
            epsilon,
            loss_kind,
            loss_cap,
        })
    }

    fn check_len(&self, ruleset: &RuleSet) -> Result<()> {
        if ruleset.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                got: ruleset.len(),
            });
        }
        Ok(())
    }

    /// Weighted mean of the predictions of the rules activated by `x`.
    pub fn predict(&self, ruleset: &RuleSet, x: &[Code]) -> Result<f64> {
        self.check_len(ruleset)?;
        let mut num = 0.0;
        let mut den = 0.0;
        for (rule, &w) in ruleset.rules.iter().zip(&self.weights) {
            if rule.activates(x) {
                num += w * rule.prediction;
                den += w;
            }
        }
        if den > 0.0 {
            Ok(num / den)
        } else if ruleset.rules.iter().any(|r| r.activates(x)) {
            // every active weight underflowed to zero: fall back to a plain mean
            let active: Vec<f64> = ruleset
                .rules
                .iter()
                .filter(|r| r.activates(x))
                .map(|r| r.prediction)
                .collect();
            Ok(active.iter().sum::<f64>() / active.len() as f64)
        } else {
            Err(Error::NoActiveRule)
        }
    }

    pub fn score(&self, ruleset: &RuleSet, x: &[Code]) -> Result<i8> {
        Ok(score(self.predict(ruleset, x)?, self.epsilon))
    }

    fn loss(&self, prediction: f64, outcome: f64) -> Result<f64> {
        let l = self.loss_kind.eval(prediction, outcome);
        if l.is_nan() {
            return Err(Error::NonFiniteLoss {
                prediction,
                outcome,
            });
        }
        Ok(l.min(self.loss_cap))
    }

    /// Applies one observed outcome.
    pub fn update(&mut self, ruleset: &RuleSet, x: &[Code], y: f64) -> Result<()> {
        self.check_len(ruleset)?;
        if !y.is_finite() {
            return Err(Error::NonFiniteLoss {
                prediction: f64::NAN,
                outcome: y,
            });
        }
        let mut losses = Vec::new();
        for (i, rule) in ruleset.rules.iter().enumerate() {
            if rule.activates(x) {
                losses.push((i, self.loss(rule.prediction, y)?));
            }
        }
        if losses.is_empty() {
            return Err(Error::NoActiveRule);
        }
        let min_loss = losses.iter().map(|&(_, l)| l).fold(f64::INFINITY, f64::min);
        let active_mass: f64 = losses.iter().map(|&(i, _)| self.weights[i]).sum();
        let factors: Vec<f64> = losses
            .iter()
            .map(|&(_, l)| (-self.eta * (l - min_loss)).exp())
            .collect();
        let reweighted: f64 = losses
            .iter()
            .zip(&factors)
            .map(|(&(i, _), f)| self.weights[i] * f)
            .sum();
        if active_mass > 0.0 && reweighted > 0.0 {
            let scale = active_mass / reweighted;
            for (&(i, _), f) in losses.iter().zip(&factors) {
                self.weights[i] *= f * scale;
            }
        }
        let total: f64 = self.weights.iter().sum();
        for w in &mut self.weights {
            *w /= total;
        }
        self.step += 1;
        Ok(())
    }

    /// Predicts then updates on each row in order, skipping rows that
    /// activate no rule.
    pub fn run<'a>(
        &mut self,
        ruleset: &RuleSet,
        rows: impl IntoIterator<Item = (&'a [Code], f64)>,
    ) -> Result<Pass> {
        let mut pass = Pass::default();
        for (x, y) in rows {
            match self.predict(ruleset, x) {
                Ok(p) => {
                    pass.predictions.push(p);
                    self.update(ruleset, x, y)?;
                }
                Err(Error::NoActiveRule) => pass.skipped += 1,
                Err(e) => return Err(e),
            }
        }
        Ok(pass)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::{Condition, Rule};
    use chrono::NaiveDate;

    fn ruleset(rules: &[(Condition, f64)]) -> RuleSet {
        RuleSet {
            rules: rules
                .iter()
                .map(|(c, p)| Rule::new(c.clone(), *p, 10, c.intervals().len(), 0.0))
                .collect(),
            learned_at: NaiveDate::from_ymd_opt(2012, 12, 31).unwrap(),
            feature_ids: vec!["a".into(), "b".into()],
        }
    }

    fn state(r: usize, eta: f64) -> AggregationState {
        AggregationState::new(r, eta, LossKind::Squared, 1.0, 0.0).unwrap()
    }

    #[test]
    fn single_active_rule_gives_its_prediction() {
        let rs = ruleset(&[
            (Condition::single(0, 0, 0).unwrap(), 0.05),
            (Condition::single(0, 1, 1).unwrap(), -0.02),
        ]);
        let mut st = state(2, 1.0);
        st.weights = vec![0.9, 0.1];
        assert_eq!(st.predict(&rs, &[1, 0]).unwrap(), -0.02);
    }

    #[test]
    fn convex_combination_examples() {
        let rs = ruleset(&[(Condition::full(), 0.02), (Condition::full(), -0.02)]);
        assert_eq!(state(2, 1.0).predict(&rs, &[0, 0]).unwrap(), 0.0);
        let rs = ruleset(&[(Condition::full(), 0.04), (Condition::full(), 0.0)]);
        let mut st = state(2, 1.0);
        st.weights = vec![0.75, 0.25];
        assert!((st.predict(&rs, &[0, 0]).unwrap() - 0.03).abs() < 1e-15);
    }

    #[test]
    fn no_active_rule_is_an_error() {
        let rs = ruleset(&[(Condition::single(0, 0, 0).unwrap(), 0.1)]);
        let mut st = state(1, 1.0);
        assert!(matches!(st.predict(&rs, &[1, 0]), Err(Error::NoActiveRule)));
        assert!(matches!(st.update(&rs, &[1, 0], 0.0), Err(Error::NoActiveRule)));
    }

    #[test]
    fn zero_eta_and_equal_losses_leave_weights_unchanged() {
        let rs = ruleset(&[
            (Condition::full(), 0.1),
            (Condition::full(), -0.3),
            (Condition::single(0, 5, 5).unwrap(), 0.0),
        ]);
        let mut st = state(3, 0.0);
        let before = st.weights.clone();
        st.update(&rs, &[0, 0], 0.2).unwrap();
        assert_eq!(st.weights, before);
        assert_eq!(st.step, 1);

        let rs = ruleset(&[
            (Condition::full(), 0.1),
            (Condition::full(), 0.3),
            (Condition::single(0, 5, 5).unwrap(), 0.0),
        ]);
        let mut st = state(3, 2.0);
        st.weights = vec![0.5, 0.3, 0.2];
        st.update(&rs, &[0, 0], 0.2).unwrap();
        for (a, b) in st.weights.iter().zip([0.5, 0.3, 0.2]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn exact_expert_takes_over_like_closed_form() {
        // Two always-active experts, the first always right: its weight after
        // t steps is 1 / (1 + exp(-eta * t * l2)).
        let rs = ruleset(&[(Condition::full(), 0.1), (Condition::full(), -0.1)]);
        let eta = 3.0;
        let l2 = 0.2f64 * 0.2;
        let mut st = state(2, eta);
        let mut last = st.weights[0];
        for t in 1..=200 {
            st.update(&rs, &[0, 0], 0.1).unwrap();
            let closed = 1.0 / (1.0 + (-eta * t as f64 * l2).exp());
            assert!((st.weights[0] - closed).abs() < 1e-12);
            assert!(st.weights[0] > last);
            last = st.weights[0];
        }
        assert!(st.weights[0] > 0.99);
    }

    #[test]
    fn sleeping_rule_keeps_weight() {
        let rs = ruleset(&[
            (Condition::full(), 0.1),
            (Condition::single(1, 0, 0).unwrap(), -0.05),
            (Condition::single(0, 9, 9).unwrap(), 0.5),
        ]);
        let mut st = state(3, 5.0);
        for t in 0..100 {
            let x = [(t % 3) as Code, (t % 2) as Code];
            st.update(&rs, &x, 0.01 * (t as f64).sin()).unwrap();
        }
        assert!((st.weights[2] - 1.0 / 3.0).abs() < 1e-12);
        assert!((st.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_outcome_is_rejected() {
        let rs = ruleset(&[(Condition::full(), 0.1)]);
        let mut st = state(1, 1.0);
        assert!(matches!(
            st.update(&rs, &[0, 0], f64::NAN),
            Err(Error::NonFiniteLoss { .. })
        ));
    }

    #[test]
    fn score_dead_zone() {
        assert_eq!(score(0.0, 0.01), 0);
        assert_eq!(score(0.01, 0.01), 0);
        assert_eq!(score(-0.01, 0.01), 0);
        assert_eq!(score(0.02, 0.01), 1);
        assert_eq!(score(-0.02, 0.01), -1);
    }

    #[test]
    fn default_eta_formula() {
        assert_eq!(default_eta(1, 100), 0.0);
        assert!((default_eta(20, 500) - (8.0 * 20f64.ln() / 500.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut st = state(4, 0.3);
        st.epsilon = 0.012;
        st.step = 7;
        let back = AggregationState::from_json(&st.to_json().unwrap()).unwrap();
        assert_eq!(back, st);
    }
}
