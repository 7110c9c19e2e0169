// SPDX-License-Identifier: MIT OR Apache-2.0

//! Generalized Pareto fit by profile likelihood.
//!
//! With `θ = ξ / σ` the likelihood equations give `ξ(θ) = mean(ln(1 + θ·x))`
//! in closed form and `σ = ξ / θ`, so the log-likelihood collapses to a
//! one-dimensional function
//!
//! ```text
//! ℓ(θ) = −n·ln σ(θ) − n·(1 + ξ(θ))
//! ```
//!
//! which is maximized over the `θ` range that keeps `ξ ∈ [−0.5, 1.0]`:
//! a dense grid, then golden-section refinement around the best cell.
//! `θ = 0` is the exponential limit (`ξ = 0`, `σ = mean`).

use serde::{Deserialize, Serialize};

use crate::error::{GccError, Result};

pub const XI_MIN: f64 = -0.5;
pub const XI_MAX: f64 = 1.0;
const GRID_POINTS: usize = 2001;
const GOLDEN_ITERS: usize = 80;
const S_LIMIT: f64 = 512.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpdFit {
    pub sigma: f64,
    pub xi: f64,
    /// Initial threshold the exceedances were measured from.
    pub u: f64,
    pub n_exceed: usize,
    pub log_likelihood: f64,
}

struct Profile<'a> {
    xs: &'a [f64],
    x_max: f64,
    mean: f64,
}

impl Profile<'_> {
    fn theta(&self, s: f64) -> f64 {
        // s = ln(1 + θ·x_max), monotone in θ and well spread near the pole
        s.exp_m1() / self.x_max
    }

    /// (ξ, σ) for a given θ.
    fn params(&self, theta: f64) -> (f64, f64) {
        if (theta * self.x_max).abs() < 1e-12 {
            return (0.0, self.mean);
        }
        let xi = self.xs.iter().map(|&x| (theta * x).ln_1p()).sum::<f64>() / self.xs.len() as f64;
        (xi, xi / theta)
    }

    fn loglik(&self, theta: f64) -> f64 {
        let (xi, sigma) = self.params(theta);
        if !sigma.is_finite() || sigma <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let n = self.xs.len() as f64;
        -n * sigma.ln() - n * (1.0 + xi)
    }

    fn xi_at(&self, s: f64) -> f64 {
        self.params(self.theta(s)).0
    }

    /// `s` where ξ crosses `target`, bracketed in `[lo, hi]` (ξ is increasing).
    fn solve(&self, target: f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.xi_at(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Maximum-likelihood GPD fit to positive exceedances.
pub fn fit_gpd(exceedances: &[f64], min_exceedances: usize) -> Result<GpdFit> {
    let need = min_exceedances.max(2);
    if exceedances.len() < need {
        return Err(GccError::InsufficientTailData {
            got: exceedances.len(),
            need,
        });
    }
    if exceedances.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(GccError::Config(
            "exceedances must be finite and positive".into(),
        ));
    }
    let x_max = exceedances.iter().copied().fold(0.0, f64::max);
    let x_min = exceedances.iter().copied().fold(f64::INFINITY, f64::min);
    if x_max - x_min <= 1e-12 * x_max {
        return Err(GccError::InsufficientTailVariation);
    }
    let mean = exceedances.iter().sum::<f64>() / exceedances.len() as f64;
    let p = Profile {
        xs: exceedances,
        x_max,
        mean,
    };

    // ξ(s) is increasing; near the pole θ → −1/x_max only the largest
    // point diverges, so the lower end may never reach XI_MIN in f64
    let mut s_lo = -1.0;
    while p.xi_at(s_lo) > XI_MIN && s_lo > -S_LIMIT {
        s_lo *= 2.0;
    }
    let mut s_hi = 1.0;
    while p.xi_at(s_hi) < XI_MAX && s_hi < S_LIMIT {
        s_hi *= 2.0;
    }
    let s_lo = if p.xi_at(s_lo) > XI_MIN {
        s_lo
    } else {
        p.solve(XI_MIN, s_lo, 0.0)
    };
    let s_hi = if p.xi_at(s_hi) < XI_MAX {
        s_hi
    } else {
        p.solve(XI_MAX, 0.0, s_hi)
    };

    let step = (s_hi - s_lo) / (GRID_POINTS - 1) as f64;
    let grid = |i: usize| {
        if i == GRID_POINTS - 1 {
            s_hi
        } else {
            s_lo + step * i as f64
        }
    };
    let mut best = (0usize, f64::NEG_INFINITY);
    for i in 0..GRID_POINTS {
        let ll = p.loglik(p.theta(grid(i)));
        if ll > best.1 {
            best = (i, ll);
        }
    }
    let (mut a, mut b) = (
        grid(best.0.saturating_sub(1)),
        grid((best.0 + 1).min(GRID_POINTS - 1)),
    );
    let f = |s: f64| p.loglik(p.theta(s));
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..GOLDEN_ITERS {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    let mut s_best = grid(best.0);
    let mut ll_best = best.1;
    for (s, ll) in [(c, fc), (d, fd), (0.0, f(0.0))] {
        if ll > ll_best && (s_lo..=s_hi).contains(&s) {
            s_best = s;
            ll_best = ll;
        }
    }
    let (xi, sigma) = p.params(p.theta(s_best));
    Ok(GpdFit {
        sigma,
        xi: xi.clamp(XI_MIN, XI_MAX),
        u: 0.0,
        n_exceed: exceedances.len(),
        log_likelihood: ll_best,
    })
}

/// Direct GPD log-likelihood, used to cross-check the profile.
pub fn gpd_loglik(exceedances: &[f64], sigma: f64, xi: f64) -> f64 {
    if sigma <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let n = exceedances.len() as f64;
    if xi.abs() < 1e-12 {
        return -n * sigma.ln() - exceedances.iter().sum::<f64>() / sigma;
    }
    let mut acc = 0.0;
    for &x in exceedances {
        let t = 1.0 + xi * x / sigma;
        if t <= 0.0 {
            return f64::NEG_INFINITY;
        }
        acc += t.ln();
    }
    -n * sigma.ln() - (1.0 + 1.0 / xi) * acc
}
