//! Remaining connection time of two vehicles under constant-velocity
//! extrapolation of their current kinematic snapshot.

use thiserror::Error;

use crate::mobility::{distance, VehicleState};

/// Relative slack allowed on the in-range precondition. Handoff instants
/// computed by the protocol sit exactly on the range boundary.
const RANGE_SLACK: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ConnectionError {
    #[error("vehicles are {distance:.3} m apart, outside the {range} m range")]
    OutOfRange { distance: f64, range: f64 },
    #[error("communication range must be positive, got {0}")]
    InvalidRange(f64),
}

/// Relative kinematics of vehicle `i` with respect to vehicle `j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicPair {
    pub dvx: f64,
    pub dvy: f64,
    pub ddx: f64,
    pub ddy: f64,
}

impl KinematicPair {
    pub fn between(i: &VehicleState, j: &VehicleState) -> Self {
        let (vix, viy) = i.velocity();
        let (vjx, vjy) = j.velocity();
        KinematicPair {
            dvx: vix - vjx,
            dvy: viy - vjy,
            ddx: i.x - j.x,
            ddy: i.y - j.y,
        }
    }

    /// `A = Δv·Δd`.
    pub fn a(&self) -> f64 {
        self.dvx * self.ddx + self.dvy * self.ddy
    }

    /// `B = |Δv|²`.
    pub fn b(&self) -> f64 {
        self.dvx * self.dvx + self.dvy * self.dvy
    }

    /// `Δv_y·Δd_x − Δv_x·Δd_y`.
    pub fn cross(&self) -> f64 {
        self.dvy * self.ddx - self.dvx * self.ddy
    }

    pub fn separation_sq(&self) -> f64 {
        self.ddx * self.ddx + self.ddy * self.ddy
    }

    /// Squared separation after `t` seconds.
    pub fn separation_sq_at(&self, t: f64) -> f64 {
        let x = self.ddx + self.dvx * t;
        let y = self.ddy + self.dvy * t;
        x * x + y * y
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConnectionPrediction {
    Finite(f64),
    /// Identical velocity vectors: the pair never separates.
    Unbounded,
}

impl ConnectionPrediction {
    pub fn is_unbounded(&self) -> bool {
        matches!(self, ConnectionPrediction::Unbounded)
    }

    pub fn finite(&self) -> Option<f64> {
        match *self {
            ConnectionPrediction::Finite(t) => Some(t),
            ConnectionPrediction::Unbounded => None,
        }
    }

    /// Seconds, with an unbounded link capped at `cap`.
    pub fn capped(&self, cap: f64) -> f64 {
        match *self {
            ConnectionPrediction::Finite(t) => t.min(cap),
            ConnectionPrediction::Unbounded => cap,
        }
    }

    /// Seconds, `f64::INFINITY` when unbounded.
    pub fn seconds(&self) -> f64 {
        self.capped(f64::INFINITY)
    }
}

/// Predicted time until vehicles `a` and `b`, currently within `range`,
/// drift out of range.
pub fn predict_connection_time(
    a: &VehicleState,
    b: &VehicleState,
    range: f64,
) -> Result<ConnectionPrediction, ConnectionError> {
    if !(range > 0.0) {
        return Err(ConnectionError::InvalidRange(range));
    }
    let d = distance(a, b);
    if d > range * (1.0 + RANGE_SLACK) {
        return Err(ConnectionError::OutOfRange { distance: d, range });
    }
    let pair = KinematicPair::between(a, b);
    let b_coef = pair.b();
    if b_coef == 0.0 {
        return Ok(ConnectionPrediction::Unbounded);
    }
    let a_coef = pair.a();
    let cross = pair.cross();
    let radicand = b_coef * range * range - cross * cross;
    debug_assert!(
        radicand >= -1e-6 * b_coef * range * range,
        "in-range pair with negative radicand"
    );
    let root = radicand.max(0.0).sqrt();
    // the second form avoids cancellation when the pair is separating fast
    let t = if a_coef <= 0.0 {
        (-a_coef + root) / b_coef
    } else {
        (range * range - pair.separation_sq()).max(0.0) / (a_coef + root)
    };
    Ok(ConnectionPrediction::Finite(t.max(0.0)))
}

/// Earliest `t ≥ 0` at which the pair is within `range`, or `None` if it
/// never is. Zero when already connected.
pub fn time_until_in_range(a: &VehicleState, b: &VehicleState, range: f64) -> Option<f64> {
    if distance(a, b) <= range {
        return Some(0.0);
    }
    let pair = KinematicPair::between(a, b);
    let b_coef = pair.b();
    let a_coef = pair.a();
    if b_coef == 0.0 || a_coef >= 0.0 {
        return None;
    }
    let radicand = b_coef * range * range - pair.cross().powi(2);
    if radicand < 0.0 {
        return None;
    }
    let root = radicand.sqrt();
    // smaller root of B t² + 2A t + (D² − R²) = 0, written without cancellation
    let t = (pair.separation_sq() - range * range) / (-a_coef + root);
    Some(t.max(0.0))
}
