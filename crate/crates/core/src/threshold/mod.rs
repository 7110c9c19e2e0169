// SPDX-License-Identifier: MIT OR Apache-2.0

//! Connectivity thresholds.
//!
//! `τ_NS` is estimated per source from its sensitivity vector by one of the
//! registered [`ThresholdStrategy`] implementations:
//!
//! | name         | cut                                                     |
//! |--------------|---------------------------------------------------------|
//! | `pot`        | GPD tail fit above the `q0` quantile, risk `q` (default)|
//! | `percentile` | the `q0` quantile itself                                |
//! | `iqr`        | `Q3 + 1.5·IQR`                                          |
//!
//! `τ_SF` is always the mean flow score over the candidate layer.

mod gpd;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use gpd::{fit_gpd, gpd_loglik, GpdFit, XI_MAX, XI_MIN};

use crate::error::{GccError, Result};
use crate::registry::Registry;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotConfig {
    /// Quantile of the scores used as the initial threshold `u`.
    pub q0: f64,
    /// Tail probability the final threshold is set at.
    pub risk: f64,
    pub min_exceedances: usize,
}

impl Default for PotConfig {
    fn default() -> Self {
        Self {
            q0: 0.95,
            risk: 0.01,
            min_exceedances: 8,
        }
    }
}

impl PotConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.q0 > 0.0 && self.q0 < 1.0) {
            return Err(GccError::Config(format!(
                "q0 must be in (0, 1), got {}",
                self.q0
            )));
        }
        if !(self.risk > 0.0 && self.risk < 1.0) {
            return Err(GccError::Config(format!(
                "risk must be in (0, 1), got {}",
                self.risk
            )));
        }
        Ok(())
    }
}

/// Outcome of one threshold estimate, kept for the run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdDecision {
    pub strategy: String,
    pub tau: f64,
    /// Initial threshold (POT `u`, or the quartile cut for IQR).
    pub initial: f64,
    /// True when the GPD step could not run and `tau == initial`.
    pub fallback: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<GpdFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// A τ_NS estimator over one score vector.
pub trait ThresholdStrategy: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &'static str;
    fn threshold(&self, scores: &[f64]) -> ThresholdDecision;
}

/// Linear-interpolation quantile of already sorted values.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(scores: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = scores.iter().copied().filter(|s| s.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Peaks-over-threshold cut: `u = q0`-quantile, GPD on `{s − u : s > u}`,
/// then `τ = u + σ/ξ·((q·n/n_u)^(−ξ) − 1)` (`u + σ·ln(n_u/(q·n))` as `ξ → 0`).
/// Falls back to `τ = u` when the tail cannot be fitted.
pub fn pot_threshold(scores: &[f64], cfg: &PotConfig) -> ThresholdDecision {
    let v = sorted(scores);
    let strategy = "pot".to_string();
    if v.is_empty() {
        return ThresholdDecision {
            strategy,
            tau: 0.0,
            initial: 0.0,
            fallback: true,
            fit: None,
            note: Some("no finite scores".into()),
        };
    }
    let u = quantile_sorted(&v, cfg.q0);
    let exceed: Vec<f64> = v.iter().filter(|&&s| s > u).map(|s| s - u).collect();
    let fallback = |note: String| ThresholdDecision {
        strategy: strategy.clone(),
        tau: u,
        initial: u,
        fallback: true,
        fit: None,
        note: Some(note),
    };
    let mut fit = match fit_gpd(&exceed, cfg.min_exceedances) {
        Ok(fit) => fit,
        Err(e) => return fallback(e.to_string()),
    };
    fit.u = u;
    let n = v.len() as f64;
    let ratio = cfg.risk * n / fit.n_exceed as f64;
    let tail = if fit.xi.abs() < 1e-9 {
        -fit.sigma * ratio.ln()
    } else {
        fit.sigma / fit.xi * (ratio.powf(-fit.xi) - 1.0)
    };
    let tau = u + tail;
    if !tau.is_finite() {
        return fallback("non-finite tail quantile".into());
    }
    ThresholdDecision {
        strategy,
        // risk above the exceedance rate would put the cut below u
        tau: tau.max(u),
        initial: u,
        fallback: false,
        fit: Some(fit),
        note: None,
    }
}

/// Arithmetic mean of the flow scores of every candidate target.
pub fn mean_threshold(flow_scores: &[f64]) -> f64 {
    if flow_scores.is_empty() {
        return 0.0;
    }
    flow_scores.iter().sum::<f64>() / flow_scores.len() as f64
}

#[derive(Debug, Clone)]
pub struct PotStrategy(pub PotConfig);

impl ThresholdStrategy for PotStrategy {
    fn name(&self) -> &'static str {
        "pot"
    }

    fn threshold(&self, scores: &[f64]) -> ThresholdDecision {
        pot_threshold(scores, &self.0)
    }
}

/// The `q0` quantile without the GPD step.
#[derive(Debug, Clone)]
pub struct PercentileStrategy {
    pub q0: f64,
}

impl ThresholdStrategy for PercentileStrategy {
    fn name(&self) -> &'static str {
        "percentile"
    }

    fn threshold(&self, scores: &[f64]) -> ThresholdDecision {
        let v = sorted(scores);
        let tau = if v.is_empty() {
            0.0
        } else {
            quantile_sorted(&v, self.q0)
        };
        ThresholdDecision {
            strategy: self.name().into(),
            tau,
            initial: tau,
            fallback: false,
            fit: None,
            note: None,
        }
    }
}

/// Tukey fence `Q3 + 1.5·(Q3 − Q1)`.
#[derive(Debug, Clone, Default)]
pub struct IqrStrategy;

impl ThresholdStrategy for IqrStrategy {
    fn name(&self) -> &'static str {
        "iqr"
    }

    fn threshold(&self, scores: &[f64]) -> ThresholdDecision {
        let v = sorted(scores);
        let (q1, q3) = if v.is_empty() {
            (0.0, 0.0)
        } else {
            (quantile_sorted(&v, 0.25), quantile_sorted(&v, 0.75))
        };
        ThresholdDecision {
            strategy: self.name().into(),
            tau: q3 + 1.5 * (q3 - q1),
            initial: q3,
            fallback: false,
            fit: None,
            note: None,
        }
    }
}

pub type ThresholdFactory = dyn Fn(&PotConfig) -> Arc<dyn ThresholdStrategy> + Send + Sync;

/// Registry with the built-in `pot`, `percentile` and `iqr` strategies.
pub fn threshold_registry() -> Registry<ThresholdFactory> {
    let mut reg: Registry<ThresholdFactory> = Registry::new("threshold");
    reg.register(
        "pot",
        Arc::new(|c: &PotConfig| Arc::new(PotStrategy(*c)) as Arc<dyn ThresholdStrategy>),
    );
    reg.register(
        "percentile",
        Arc::new(|c: &PotConfig| {
            Arc::new(PercentileStrategy { q0: c.q0 }) as Arc<dyn ThresholdStrategy>
        }),
    );
    reg.register(
        "iqr",
        Arc::new(|_: &PotConfig| Arc::new(IqrStrategy) as Arc<dyn ThresholdStrategy>),
    );
    reg
}

/// Looks up `name` and instantiates it with `cfg`.
pub fn build_threshold(name: &str, cfg: &PotConfig) -> Result<Arc<dyn ThresholdStrategy>> {
    cfg.validate()?;
    Ok(threshold_registry().get(name)?(cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_equal_scores_fall_back() {
        let d = pot_threshold(&[0.3; 100], &PotConfig::default());
        assert!(d.fallback);
        assert_eq!(d.tau, 0.3);
    }

    #[test]
    fn small_vector_falls_back_to_percentile() {
        let scores: Vec<f64> = (0..32).map(|i| i as f64 / 31.0).collect();
        let d = pot_threshold(&scores, &PotConfig::default());
        assert!(d.fallback);
        let p = PercentileStrategy { q0: 0.95 }.threshold(&scores);
        assert_eq!(d.tau, p.tau);
    }

    #[test]
    fn mean_of_zero_and_one() {
        assert_eq!(mean_threshold(&[0.0, 1.0]), 0.5);
        assert_eq!(mean_threshold(&[0.25; 7]), 0.25);
    }

    #[test]
    fn iqr_fence() {
        let d = IqrStrategy.threshold(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        // Q1 = 2, Q3 = 4
        assert_eq!(d.tau, 7.0);
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile_sorted(&[0.0, 10.0], 0.25), 2.5);
        assert_eq!(quantile_sorted(&[5.0], 0.9), 5.0);
    }

    #[test]
    fn registry_builds_every_strategy() {
        let cfg = PotConfig::default();
        for name in threshold_registry().names() {
            assert_eq!(build_threshold(name, &cfg).unwrap().name(), name);
        }
        assert!(build_threshold("otsu", &cfg).is_err());
        let bad = PotConfig { q0: 1.0, ..cfg };
        assert!(build_threshold("pot", &bad).is_err());
    }
}
