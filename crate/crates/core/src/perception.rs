//! Perception-model suites: per-(model, step) error distributions and the
//! linear invocation-cost model `cost(w) = w * upsilon`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{dims, Error, Result};

/// Distribution of `g_per(w, t) - s_t`, coordinate-wise independent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ErrorModel {
    Normal { mean: Vec<f64>, variance: Vec<f64> },
    Uniform { low: Vec<f64>, high: Vec<f64> },
    /// Bootstrap from recorded error vectors.
    Empirical { samples: Vec<Vec<f64>> },
    Degenerate { value: Vec<f64> },
}

impl ErrorModel {
    pub fn family(&self) -> &'static str {
        match self {
            ErrorModel::Normal { .. } => "normal",
            ErrorModel::Uniform { .. } => "uniform",
            ErrorModel::Empirical { .. } => "empirical",
            ErrorModel::Degenerate { .. } => "degenerate",
        }
    }

    /// Output dimension `p`, or `None` for an empirical model without samples.
    pub fn dim(&self) -> Option<usize> {
        match self {
            ErrorModel::Normal { mean, .. } => Some(mean.len()),
            ErrorModel::Uniform { low, .. } => Some(low.len()),
            ErrorModel::Empirical { samples } => samples.first().map(Vec::len),
            ErrorModel::Degenerate { value } => Some(value.len()),
        }
    }

    /// Elementwise mean and variance.
    pub fn moments(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            ErrorModel::Normal { mean, variance } => (mean.clone(), variance.clone()),
            ErrorModel::Uniform { low, high } => {
                let mean = low.iter().zip(high).map(|(a, b)| 0.5 * (a + b)).collect();
                let var = low.iter().zip(high).map(|(a, b)| (b - a) * (b - a) / 12.0).collect();
                (mean, var)
            }
            ErrorModel::Empirical { samples } => {
                let p = samples.first().map_or(0, Vec::len);
                let n = samples.len() as f64;
                let mut mean = vec![0.0; p];
                for s in samples {
                    for (m, v) in mean.iter_mut().zip(s) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n);
                let mut var = vec![0.0; p];
                for s in samples {
                    for ((acc, v), m) in var.iter_mut().zip(s).zip(&mean) {
                        *acc += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|v| *v /= n);
                (mean, var)
            }
            ErrorModel::Degenerate { value } => (value.clone(), vec![0.0; value.len()]),
        }
    }

    fn sample_into<R: Rng>(&self, rng: &mut R, out: &mut Vec<f64>) -> Result<()> {
        out.clear();
        match self {
            ErrorModel::Normal { mean, variance } => {
                for (m, v) in mean.iter().zip(variance) {
                    let d = Normal::new(*m, v.sqrt())
                        .map_err(|e| Error::InvalidArgument(format!("normal({m}, {v}): {e}")))?;
                    out.push(d.sample(rng));
                }
            }
            ErrorModel::Uniform { low, high } => {
                for (a, b) in low.iter().zip(high) {
                    out.push(a + (b - a) * rng.random::<f64>());
                }
            }
            ErrorModel::Empirical { samples } => {
                if samples.is_empty() {
                    return Err(Error::UnsupportedFamily("empirical model without samples".into()));
                }
                out.extend_from_slice(&samples[rng.random_range(0..samples.len())]);
            }
            ErrorModel::Degenerate { value } => out.extend_from_slice(value),
        }
        Ok(())
    }
}

/// The `W` available perception models over a horizon `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptionSuite {
    upsilon: f64,
    /// `models[w][t]`
    models: Vec<Vec<ErrorModel>>,
    moments: Vec<Vec<(Vec<f64>, Vec<f64>)>>,
}

/// One failed suite invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub model: Option<usize>,
    pub step: Option<usize>,
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (self.model, self.step) {
            (Some(w), Some(t)) => write!(f, "({w},{t},{}): {}", self.field, self.message),
            (Some(w), None) => write!(f, "(model {w},{}): {}", self.field, self.message),
            _ => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

/// A concrete draw of `g_per(w, t) - s_t` for every model and step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizedErrors {
    /// `errors[w][t]` is a `p`-vector.
    pub errors: Vec<Vec<Vec<f64>>>,
}

impl RealizedErrors {
    pub fn models(&self) -> usize {
        self.errors.len()
    }

    pub fn horizon(&self) -> usize {
        self.errors.first().map_or(0, Vec::len)
    }

    pub fn get(&self, w: usize, t: usize) -> &[f64] {
        &self.errors[w][t]
    }

    /// Stacks the errors selected by `choices` (one model per step).
    pub fn stacked(&self, choices: &[usize]) -> Vec<f64> {
        choices
            .iter()
            .enumerate()
            .flat_map(|(t, &w)| self.errors[w][t].iter().copied())
            .collect()
    }
}

impl PerceptionSuite {
    /// Builds a suite from `models[w][t]`. Shape must be rectangular; numeric
    /// invariants are reported by [`validate_suite`].
    pub fn new(upsilon: f64, models: Vec<Vec<ErrorModel>>) -> Result<Self> {
        if models.is_empty() {
            return Err(dims("suite needs at least one model"));
        }
        let h = models[0].len();
        if h == 0 {
            return Err(dims("suite horizon must be at least 1"));
        }
        if let Some(w) = models.iter().position(|row| row.len() != h) {
            return Err(dims(format!("model {w} has {} steps, expected {h}", models[w].len())));
        }
        let moments = models
            .iter()
            .map(|row| row.iter().map(ErrorModel::moments).collect())
            .collect();
        Ok(Self {
            upsilon,
            models,
            moments,
        })
    }

    /// Same distribution at every step for each model.
    pub fn time_invariant(upsilon: f64, models: Vec<ErrorModel>, horizon: usize) -> Result<Self> {
        Self::new(upsilon, models.into_iter().map(|m| vec![m; horizon]).collect())
    }

    pub fn upsilon(&self) -> f64 {
        self.upsilon
    }

    pub fn models(&self) -> usize {
        self.models.len()
    }

    pub fn horizon(&self) -> usize {
        self.models[0].len()
    }

    /// Output dimension, taken from model `(0, 0)`.
    pub fn perception_dim(&self) -> usize {
        self.moments[0][0].0.len()
    }

    pub fn error_model(&self, w: usize, t: usize) -> Result<&ErrorModel> {
        self.check_index(w, t)?;
        Ok(&self.models[w][t])
    }

    fn check_index(&self, w: usize, t: usize) -> Result<()> {
        if w >= self.models() {
            return Err(Error::IndexOutOfRange(format!("model {w} (W = {})", self.models())));
        }
        if t >= self.horizon() {
            return Err(Error::IndexOutOfRange(format!("step {t} (H = {})", self.horizon())));
        }
        Ok(())
    }

    /// `w * upsilon`.
    pub fn model_cost(&self, w: usize) -> Result<f64> {
        if w >= self.models() {
            return Err(Error::IndexOutOfRange(format!("model {w} (W = {})", self.models())));
        }
        Ok(w as f64 * self.upsilon)
    }

    /// Mean and elementwise variance of model `w` at step `t`.
    pub fn moments(&self, w: usize, t: usize) -> Result<(&[f64], &[f64])> {
        self.check_index(w, t)?;
        let (m, v) = &self.moments[w][t];
        Ok((m, v))
    }

    /// Perception cost of a choice sequence, `sum_t w_t * upsilon`.
    pub fn perception_cost(&self, choices: &[usize]) -> f64 {
        choices.iter().map(|&w| w as f64 * self.upsilon).sum()
    }

    /// Draws one error vector per (model, step), independently, from `seed`.
    pub fn sample_realized(&self, seed: u64) -> Result<RealizedErrors> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut buf = Vec::new();
        let mut errors = Vec::with_capacity(self.models());
        for row in &self.models {
            let mut per_step = Vec::with_capacity(row.len());
            for model in row {
                model.sample_into(&mut rng, &mut buf)?;
                per_step.push(buf.clone());
            }
            errors.push(per_step);
        }
        Ok(RealizedErrors { errors })
    }

    /// Checks realized errors against the suite's shape.
    pub fn check_realized(&self, realized: &RealizedErrors) -> Result<()> {
        let p = self.perception_dim();
        if realized.models() != self.models() || realized.horizon() != self.horizon() {
            return Err(dims(format!(
                "realized errors are {}x{}, suite is {}x{}",
                realized.models(),
                realized.horizon(),
                self.models(),
                self.horizon()
            )));
        }
        for row in &realized.errors {
            if row.len() != self.horizon() || row.iter().any(|e| e.len() != p) {
                return Err(dims("realized error vectors have the wrong shape"));
            }
        }
        Ok(())
    }
}

/// Reports every violated suite invariant; empty means valid.
pub fn validate_suite(suite: &PerceptionSuite) -> Vec<Violation> {
    let mut out = Vec::new();
    let violation = |model, step, field: &str, message: String| Violation {
        model,
        step,
        field: field.to_string(),
        message,
    };
    if !(suite.upsilon.is_finite() && suite.upsilon > 0.0) {
        out.push(violation(None, None, "upsilon", format!("must be finite and > 0, got {}", suite.upsilon)));
    }
    let p = suite.perception_dim();
    for (w, row) in suite.models.iter().enumerate() {
        for (t, model) in row.iter().enumerate() {
            let (w, t) = (Some(w), Some(t));
            match model.dim() {
                None => {
                    out.push(violation(w, t, "samples", "empirical model has no samples".into()));
                    continue;
                }
                Some(d) if d != p || d == 0 => {
                    out.push(violation(w, t, "dimension", format!("expected {p} > 0 entries, got {d}")));
                    continue;
                }
                _ => {}
            }
            match model {
                ErrorModel::Normal { mean, variance } if variance.len() != mean.len() => {
                    out.push(violation(w, t, "variance", "length differs from mean".into()));
                    continue;
                }
                ErrorModel::Uniform { low, high } => {
                    if high.len() != low.len() {
                        out.push(violation(w, t, "high", "length differs from low".into()));
                        continue;
                    }
                    if low.iter().zip(high).any(|(a, b)| a > b) {
                        out.push(violation(w, t, "high", "low exceeds high".into()));
                    }
                }
                ErrorModel::Empirical { samples } if samples.iter().any(|s| s.len() != p) => {
                    out.push(violation(w, t, "samples", "ragged sample vectors".into()));
                    continue;
                }
                _ => {}
            }
            let (mean, var) = model.moments();
            if mean.iter().any(|v| !v.is_finite()) {
                out.push(violation(w, t, "mean", "non-finite entry".into()));
            }
            if var.iter().any(|v| !v.is_finite() || *v < 0.0) {
                out.push(violation(w, t, "variance", "entries must be finite and >= 0".into()));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn normal(mean: f64, var: f64) -> ErrorModel {
        ErrorModel::Normal {
            mean: vec![mean],
            variance: vec![var],
        }
    }

    fn suite3() -> PerceptionSuite {
        PerceptionSuite::time_invariant(
            2.0,
            vec![
                normal(0.5, 0.04),
                ErrorModel::Uniform {
                    low: vec![-1.0],
                    high: vec![1.0],
                },
                ErrorModel::Degenerate { value: vec![0.0] },
                ErrorModel::Empirical {
                    samples: vec![vec![-1.0], vec![0.0], vec![4.0]],
                },
            ],
            6,
        )
        .unwrap()
    }

    #[test]
    fn model_costs() {
        let s = suite3();
        assert_eq!(s.model_cost(0).unwrap(), 0.0);
        assert_eq!(s.model_cost(3).unwrap(), 6.0);
        assert_eq!(s.model_cost(s.models() - 1).unwrap(), (s.models() - 1) as f64 * 2.0);
        assert!(matches!(s.model_cost(4), Err(Error::IndexOutOfRange(_))));
    }

    #[test]
    fn moments_per_family() {
        let s = suite3();
        assert_eq!(s.moments(0, 0).unwrap(), (&[0.5][..], &[0.04][..]));
        let (m, v) = s.moments(1, 3).unwrap();
        assert_eq!(m, &[0.0]);
        assert!((v[0] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.moments(2, 5).unwrap(), (&[0.0][..], &[0.0][..]));
        let (m, v) = s.moments(3, 0).unwrap();
        assert!((m[0] - 1.0).abs() < 1e-15);
        assert!((v[0] - 14.0 / 3.0).abs() < 1e-12);
        assert!(s.moments(0, 6).is_err());
    }

    #[test]
    fn uniform_moment_consistency() {
        let (m, v) = ErrorModel::Uniform {
            low: vec![-3.0, 2.0],
            high: vec![5.0, 2.5],
        }
        .moments();
        assert!((m[0] - 1.0).abs() <= 1e-12 && (m[1] - 2.25).abs() <= 1e-12);
        assert!((v[0] - 64.0 / 12.0).abs() <= 1e-12 && (v[1] - 0.25 / 12.0).abs() <= 1e-12);
    }

    #[test]
    fn degenerate_draws_are_constant() {
        let s = PerceptionSuite::time_invariant(1.0, vec![ErrorModel::Degenerate { value: vec![1.5, -2.0] }], 4)
            .unwrap();
        let r = s.sample_realized(9).unwrap();
        assert!(r.errors[0].iter().all(|e| e == &vec![1.5, -2.0]));
    }

    #[test]
    fn sampling_is_deterministic() {
        let s = suite3();
        assert_eq!(s.sample_realized(11).unwrap(), s.sample_realized(11).unwrap());
        assert_ne!(s.sample_realized(11).unwrap(), s.sample_realized(12).unwrap());
    }

    #[test]
    fn sample_moments_converge() {
        let n = 100_000;
        let s = PerceptionSuite::time_invariant(
            1.0,
            vec![
                ErrorModel::Uniform {
                    low: vec![-1.0],
                    high: vec![1.0],
                },
                normal(0.5, 0.04),
                ErrorModel::Empirical {
                    samples: vec![vec![-1.0], vec![0.0], vec![4.0]],
                },
            ],
            n,
        )
        .unwrap();
        let r = s.sample_realized(5).unwrap();
        for w in 0..3 {
            let (mean, var) = s.moments(w, 0).unwrap();
            let avg = r.errors[w].iter().map(|e| e[0]).sum::<f64>() / n as f64;
            let se = (var[0] / n as f64).sqrt();
            assert!((avg - mean[0]).abs() <= 3.0 * se, "model {w}: {avg} vs {}", mean[0]);
        }
        let avg_uniform = r.errors[0].iter().map(|e| e[0]).sum::<f64>() / n as f64;
        assert!(avg_uniform.abs() <= 0.01);
    }

    #[test]
    fn validation_reports() {
        assert!(validate_suite(&suite3()).is_empty());

        let mut models: Vec<Vec<ErrorModel>> = (0..3).map(|_| vec![normal(0.0, 1.0); 6]).collect();
        models[2][5] = normal(0.0, -0.1);
        let v = validate_suite(&PerceptionSuite::new(1.0, models).unwrap());
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].model, v[0].step, v[0].field.as_str()), (Some(2), Some(5), "variance"));

        let v = validate_suite(&PerceptionSuite::time_invariant(0.0, vec![normal(0.0, 1.0)], 2).unwrap());
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "upsilon");
    }

    #[test]
    fn empty_empirical_cannot_be_sampled() {
        let s = PerceptionSuite::time_invariant(1.0, vec![ErrorModel::Empirical { samples: vec![] }], 1).unwrap();
        assert!(matches!(s.sample_realized(0), Err(Error::UnsupportedFamily(_))));
        assert_eq!(validate_suite(&s).len(), 1);
    }

    #[test]
    fn ragged_suite_rejected() {
        assert!(PerceptionSuite::new(1.0, vec![vec![normal(0.0, 1.0)], vec![]]).is_err());
        assert!(PerceptionSuite::new(1.0, vec![]).is_err());
    }
}
