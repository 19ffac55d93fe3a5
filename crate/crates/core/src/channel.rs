//! Nakagami-m V2V channel: mean received power, SNR distribution and the
//! resulting rate-selection probabilities.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gamma::{self, GammaError};

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("SNR argument must be non-negative, got {0}")]
    NegativeSnr(f64),
    #[error("invalid channel parameters: {0}")]
    InvalidParams(String),
    #[error("invalid rate table: {0}")]
    InvalidRateTable(String),
    #[error(transparent)]
    Gamma(#[from] GammaError),
}

/// One step of the piecewise-constant fading-index profile: `mu` applies
/// from `from_m` up to the next segment's start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuSegment {
    pub from_m: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuProfile {
    segments: Vec<MuSegment>,
}

impl MuProfile {
    pub fn new(mut segments: Vec<MuSegment>) -> Result<Self, ChannelError> {
        if segments.is_empty() {
            return Err(ChannelError::InvalidParams(
                "fading profile is empty".into(),
            ));
        }
        segments.sort_by(|a, b| a.from_m.total_cmp(&b.from_m));
        if segments[0].from_m > 0.0 {
            return Err(ChannelError::InvalidParams(
                "fading profile must start at 0 m".into(),
            ));
        }
        if segments.iter().any(|s| !(s.mu > 0.0) || !s.mu.is_finite()) {
            return Err(ChannelError::InvalidParams(
                "fading index must be positive".into(),
            ));
        }
        Ok(MuProfile { segments })
    }

    /// Measured highway values: μ = 0.74 on [90.5, 230.7) m and 0.84 from
    /// 230.7 m on (held beyond 588 m), with μ = 1 closer than 90.5 m.
    pub fn highway_default() -> Self {
        MuProfile {
            segments: vec![
                MuSegment {
                    from_m: 0.0,
                    mu: 1.0,
                },
                MuSegment {
                    from_m: 90.5,
                    mu: 0.74,
                },
                MuSegment {
                    from_m: 230.7,
                    mu: 0.84,
                },
            ],
        }
    }

    pub fn constant(mu: f64) -> Self {
        MuProfile {
            segments: vec![MuSegment { from_m: 0.0, mu }],
        }
    }

    pub fn segments(&self) -> &[MuSegment] {
        &self.segments
    }

    pub fn mu_at(&self, d: f64) -> f64 {
        let idx = self.segments.partition_point(|s| s.from_m <= d);
        self.segments[idx.saturating_sub(1)].mu
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Transmit power in W.
    pub pt: f64,
    pub gt: f64,
    pub gr: f64,
    /// Antenna heights in m.
    pub ht: f64,
    pub hr: f64,
    /// System loss factor.
    pub loss: f64,
    /// Path-loss exponent.
    pub alpha: f64,
    /// Thermal noise power in W.
    pub nr: f64,
    pub mu_profile: MuProfile,
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let positive = [
            ("transmit power", self.pt),
            ("tx gain", self.gt),
            ("rx gain", self.gr),
            ("tx antenna height", self.ht),
            ("rx antenna height", self.hr),
            ("system loss", self.loss),
            ("noise power", self.nr),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(ChannelError::InvalidParams(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.alpha >= 2.0) {
            return Err(ChannelError::InvalidParams(format!(
                "path-loss exponent must be at least 2, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    /// PHY rates in bit/s, strictly ascending.
    rates: Vec<f64>,
    /// Linear SNR thresholds, non-decreasing; the top band is unbounded.
    thresholds: Vec<f64>,
}

impl RateTable {
    pub fn new(rates: Vec<f64>, thresholds: Vec<f64>) -> Result<Self, ChannelError> {
        if rates.is_empty() || rates.len() != thresholds.len() {
            return Err(ChannelError::InvalidRateTable(format!(
                "{} rates vs {} thresholds",
                rates.len(),
                thresholds.len()
            )));
        }
        if rates.iter().any(|r| !(*r > 0.0)) || rates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ChannelError::InvalidRateTable(
                "rates must be positive and strictly ascending".into(),
            ));
        }
        if thresholds.iter().any(|v| !(*v >= 0.0)) || thresholds.windows(2).any(|w| w[0] > w[1]) {
            return Err(ChannelError::InvalidRateTable(
                "thresholds must be non-negative and ascending".into(),
            ));
        }
        Ok(RateTable { rates, thresholds })
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    /// Same rates, every threshold multiplied by `factor`.
    pub fn with_scaled_thresholds(&self, factor: f64) -> Result<Self, ChannelError> {
        RateTable::new(
            self.rates.clone(),
            self.thresholds.iter().map(|v| v * factor).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateDistribution {
    pub p_zero: f64,
    pub p: Vec<f64>,
    /// E(c) in bit/s.
    pub expected_rate: f64,
}

/// Which distance stands in for a whole link when evaluating E(c).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "distance_m", rename_all = "snake_case")]
pub enum RateDistanceMode {
    /// Separation when the prediction is made.
    PredictionTime,
    /// Separation halfway through the predicted window.
    WindowMidpoint,
    /// One representative distance for every link.
    FixedReference(f64),
}

/// Mean received power Ω in W at distance `d`.
pub fn mean_power(d: f64, params: &ChannelParams) -> Result<f64, ChannelError> {
    if !(d > 0.0) {
        return Err(ChannelError::NonPositiveDistance(d));
    }
    Ok(
        params.pt * params.gt * params.gr * params.ht.powi(2) * params.hr.powi(2)
            / (d.powf(params.alpha) * params.loss),
    )
}

pub fn mu_for_distance(d: f64, profile: &MuProfile) -> f64 {
    profile.mu_at(d)
}

/// `Pr(S/N_r ≤ x)` for given fading index, mean power and noise power.
pub fn snr_cdf_with(x: f64, mu: f64, omega: f64, nr: f64) -> Result<f64, ChannelError> {
    if !(x >= 0.0) {
        return Err(ChannelError::NegativeSnr(x));
    }
    Ok(1.0 - gamma::regularized_upper(mu, mu / omega * nr * x)?)
}

/// `Pr(S/N_r ≤ x)` at distance `d`.
pub fn snr_cdf(x: f64, d: f64, params: &ChannelParams) -> Result<f64, ChannelError> {
    let omega = mean_power(d, params)?;
    snr_cdf_with(x, mu_for_distance(d, &params.mu_profile), omega, params.nr)
}

/// Rate-selection probabilities for fading index `mu` and mean power `omega`.
pub fn rate_distribution_with(
    mu: f64,
    omega: f64,
    nr: f64,
    table: &RateTable,
) -> Result<RateDistribution, ChannelError> {
    // Q_k = Γ(μ, μ N_r v_k / Ω) / Γ(μ)
    let q: Vec<f64> = table
        .thresholds
        .iter()
        .map(|v| gamma::regularized_upper(mu, mu / omega * nr * v))
        .collect::<Result<_, _>>()?;
    let k = q.len();
    let p: Vec<f64> = (0..k)
        .map(|i| {
            if i + 1 < k {
                (q[i] - q[i + 1]).max(0.0)
            } else {
                q[i]
            }
        })
        .collect();
    let total: f64 = p.iter().sum();
    let expected_rate = p.iter().zip(&table.rates).map(|(p, c)| p * c).sum();
    Ok(RateDistribution {
        p_zero: (1.0 - total).max(0.0),
        p,
        expected_rate,
    })
}

pub fn rate_distribution(
    d: f64,
    params: &ChannelParams,
    table: &RateTable,
) -> Result<RateDistribution, ChannelError> {
    let omega = mean_power(d, params)?;
    rate_distribution_with(
        mu_for_distance(d, &params.mu_profile),
        omega,
        params.nr,
        table,
    )
}

pub fn expected_rate(
    d: f64,
    params: &ChannelParams,
    table: &RateTable,
) -> Result<f64, ChannelError> {
    Ok(rate_distribution(d, params, table)?.expected_rate)
}

/// Common factor on `base` thresholds that makes E(c) at distance `d`
/// equal `target` bit/s, found by bisection on a log scale. E(c) falls as
/// the factor grows, so the root is unique when it is bracketed.
pub fn calibrate_threshold_scale(
    d: f64,
    params: &ChannelParams,
    base: &RateTable,
    target: f64,
) -> Result<f64, ChannelError> {
    let at = |f: f64| -> Result<f64, ChannelError> {
        expected_rate(d, params, &base.with_scaled_thresholds(f)?)
    };
    let (mut lo, mut hi) = (1e-6f64, 1e6f64);
    if !(at(lo)? >= target && at(hi)? <= target) {
        return Err(ChannelError::InvalidParams(format!(
            "target rate {target} bit/s is not reachable by scaling the thresholds"
        )));
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if at(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-13 {
            break;
        }
    }
    Ok((lo * hi).sqrt())
}
