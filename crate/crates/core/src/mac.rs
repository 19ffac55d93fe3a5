//! Constant-window DCF model with RTS/CTS: per-slot success probability
//! under Poisson contention and the resulting pairwise MAC throughput.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Poisson tail mass below which the contention pmf is truncated.
const PMF_TAIL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum MacError {
    #[error("backoff window must be at least 1, got {0}")]
    InvalidWindow(f64),
    #[error("success probability needs at least one contender")]
    NoContenders,
    #[error("transmission probability must lie in (0, 1], got {0}")]
    InvalidZeta(f64),
    #[error("invalid MAC parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacParams {
    pub w: f64,
    /// Average packet length in bits.
    pub lp: f64,
    /// Durations in s.
    pub t_slot: f64,
    pub t_rts: f64,
    pub t_cts: f64,
    pub t_difs: f64,
    pub t_sifs: f64,
    pub t_ack: f64,
    /// Carrier-sense diameter in m.
    pub rcs: f64,
    /// Traffic density in vehicles per m.
    pub rho: f64,
}

impl MacParams {
    pub fn validate(&self) -> Result<(), MacError> {
        if !(self.w >= 1.0) {
            return Err(MacError::InvalidWindow(self.w));
        }
        let positive = [
            ("packet length", self.lp),
            ("slot time", self.t_slot),
            ("RTS time", self.t_rts),
            ("CTS time", self.t_cts),
            ("DIFS", self.t_difs),
            ("SIFS", self.t_sifs),
            ("ACK time", self.t_ack),
            ("carrier-sense range", self.rcs),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(MacError::InvalidParams(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.rho >= 0.0) || !self.rho.is_finite() {
            return Err(MacError::InvalidParams(format!(
                "density must be non-negative, got {}",
                self.rho
            )));
        }
        Ok(())
    }

    /// Slot occupied by a successful RTS/CTS/DATA/ACK exchange.
    pub fn success_time(&self, data_rate: f64) -> f64 {
        self.t_rts
            + self.t_sifs
            + self.t_cts
            + self.t_sifs
            + self.lp / data_rate
            + self.t_sifs
            + self.t_ack
            + self.t_difs
    }

    /// Slot wasted by an RTS collision.
    pub fn collision_time(&self) -> f64 {
        self.t_rts + self.t_difs
    }
}

/// `ζ = 2 / (W + 1)`.
pub fn transmission_prob(w: f64) -> Result<f64, MacError> {
    if !(w >= 1.0) {
        return Err(MacError::InvalidWindow(w));
    }
    Ok(2.0 / (w + 1.0))
}

/// Poisson pmf of the number of contenders with mean `rho·rcs`, truncated
/// once the remaining tail falls below 1e-12 and renormalized.
pub fn contention_pmf(rho: f64, rcs: f64) -> Vec<f64> {
    let lambda = (rho * rcs).max(0.0);
    if lambda == 0.0 {
        return vec![1.0];
    }
    let mut pmf = Vec::new();
    // log-space start keeps large means from underflowing e^{-λ}
    let mut log_term = -lambda;
    let mut cumulative = 0.0;
    let mut k = 0u32;
    loop {
        let term = log_term.exp();
        pmf.push(term);
        cumulative += term;
        if k as f64 > lambda && 1.0 - cumulative < PMF_TAIL {
            break;
        }
        k += 1;
        log_term += lambda.ln() - (k as f64).ln();
        if k > 100_000 {
            break;
        }
    }
    let total: f64 = pmf.iter().sum();
    pmf.iter_mut().for_each(|p| *p /= total);
    pmf
}

fn check_zeta(zeta: f64) -> Result<(), MacError> {
    if zeta > 0.0 && zeta <= 1.0 {
        Ok(())
    } else {
        Err(MacError::InvalidZeta(zeta))
    }
}

/// Probability that a busy slot carries exactly one transmission.
pub fn p_success(n: u32, zeta: f64) -> Result<f64, MacError> {
    check_zeta(zeta)?;
    match n {
        0 => Err(MacError::NoContenders),
        1 => Ok(1.0),
        _ if zeta == 1.0 => Ok(0.0),
        _ => {
            let n_f = n as f64;
            let idle = (1.0 - zeta).powi(n as i32);
            Ok(n_f * zeta * (1.0 - zeta).powi(n as i32 - 1) / (1.0 - idle))
        }
    }
}

/// Expected duration of a generic slot with `n` saturated contenders.
pub fn avg_slot_length(
    n: u32,
    zeta: f64,
    params: &MacParams,
    data_rate: f64,
) -> Result<f64, MacError> {
    let p_suc = p_success(n, zeta)?;
    let p_idle = (1.0 - zeta).powi(n as i32);
    let p_tr = 1.0 - p_idle;
    let p_s = p_tr * p_suc;
    let p_c = (p_tr - p_s).max(0.0);
    Ok(p_idle * params.t_slot
        + p_s * params.success_time(data_rate)
        + p_c * params.collision_time())
}

/// Per-slot throughput for a fixed contender count, in bit/s.
pub fn throughput_given(
    n: u32,
    zeta: f64,
    params: &MacParams,
    data_rate: f64,
) -> Result<f64, MacError> {
    let p_suc = p_success(n, zeta)?;
    let p_tr = 1.0 - (1.0 - zeta).powi(n as i32);
    let t = avg_slot_length(n, zeta, params, data_rate)?;
    Ok(p_suc * params.lp * p_tr / t)
}

/// MAC throughput between two vehicles, averaged over Poisson contention.
/// The pair itself always contends, so a draw of zero counts as one.
pub fn throughput(rho: f64, params: &MacParams, data_rate: f64) -> Result<f64, MacError> {
    params.validate()?;
    if !(data_rate > 0.0) {
        return Ok(0.0);
    }
    let zeta = transmission_prob(params.w)?;
    let pmf = contention_pmf(rho, params.rcs);
    let mut total = 0.0;
    for (n, f) in pmf.iter().enumerate() {
        let n_eff = (n as u32).max(1);
        total += f * throughput_given(n_eff, zeta, params, data_rate)?;
    }
    Ok(total)
}
