//! Free mobility model on a bi-directional multi-lane ring highway.
//!
//! Speeds follow a bounded random walk; a rear vehicle that is within the
//! safety distance of the vehicle ahead in its lane is slowed to the front
//! vehicle's speed. Lanes are rings of `lane_length` metres so the vehicle
//! count never changes.

use std::io;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MobilityError {
    #[error("invalid mobility configuration: {0}")]
    InvalidConfig(String),
    #[error(
        "lane of {lane_length} m cannot hold a vehicle at the {safety_distance} m safety distance"
    )]
    LaneTooShort {
        lane_length: f64,
        safety_distance: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VehicleId(pub u32);

impl std::fmt::Display for VehicleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "v{}", self.0)
    }
}

/// Travel direction on a straight highway running along the x axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Heading {
    East,
    West,
}

impl Heading {
    /// Heading angle in radians (0 or π).
    pub fn angle(self) -> f64 {
        match self {
            Heading::East => 0.0,
            Heading::West => std::f64::consts::PI,
        }
    }

    /// Unit x component of the velocity. Kept exact instead of `cos(angle)`.
    pub fn sign(self) -> f64 {
        match self {
            Heading::East => 1.0,
            Heading::West => -1.0,
        }
    }

    pub fn opposite(self) -> Heading {
        match self {
            Heading::East => Heading::West,
            Heading::West => Heading::East,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: VehicleId,
    pub lane: u32,
    pub heading: Heading,
    pub x: f64,
    pub y: f64,
    /// Speed magnitude in m/s.
    pub speed: f64,
}

impl VehicleState {
    pub fn direction(&self) -> f64 {
        self.heading.angle()
    }

    pub fn velocity(&self) -> (f64, f64) {
        (self.heading.sign() * self.speed, 0.0)
    }

    /// Constant-velocity extrapolation by `dt` seconds (no ring wrap).
    pub fn advanced(&self, dt: f64) -> VehicleState {
        let (vx, vy) = self.velocity();
        VehicleState {
            x: self.x + vx * dt,
            y: self.y + vy * dt,
            ..*self
        }
    }
}

/// Euclidean distance between two vehicles in metres.
pub fn distance(a: &VehicleState, b: &VehicleState) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilityConfig {
    /// Minimum speed in m/s.
    pub v_min: f64,
    /// Maximum speed in m/s.
    pub v_max: f64,
    /// Safety distance SD in metres.
    pub safety_distance: f64,
    /// Time step in seconds.
    pub dt: f64,
    /// Acceleration magnitude in m/s².
    pub accel: f64,
    /// Ring length of each lane in metres.
    pub lane_length: f64,
    pub lane_width: f64,
    pub lanes_per_direction: u32,
    /// Vehicles per km in each direction of travel.
    pub density_per_km: f64,
}

impl MobilityConfig {
    pub fn validate(&self) -> Result<(), MobilityError> {
        let bad = |msg: &str| Err(MobilityError::InvalidConfig(msg.to_string()));
        if !(self.v_min > 0.0 && self.v_min < self.v_max) {
            return bad("require 0 < v_min < v_max");
        }
        if !(self.safety_distance > 0.0) {
            return bad("safety distance must be positive");
        }
        if !(self.dt > 0.0) {
            return bad("time step must be positive");
        }
        if !(self.accel >= 0.0) {
            return bad("acceleration magnitude must be non-negative");
        }
        if !(self.lane_width > 0.0) {
            return bad("lane width must be positive");
        }
        if self.lanes_per_direction == 0 {
            return bad("need at least one lane per direction");
        }
        if !(self.density_per_km >= 0.0) {
            return bad("density must be non-negative");
        }
        if !(self.lane_length >= self.safety_distance) {
            return Err(MobilityError::LaneTooShort {
                lane_length: self.lane_length,
                safety_distance: self.safety_distance,
            });
        }
        Ok(())
    }

    pub fn lane_count(&self) -> u32 {
        2 * self.lanes_per_direction
    }

    /// Lanes `0..lanes_per_direction` carry eastbound traffic, the rest westbound.
    pub fn lane_heading(&self, lane: u32) -> Heading {
        if lane < self.lanes_per_direction {
            Heading::East
        } else {
            Heading::West
        }
    }

    pub fn lane_y(&self, lane: u32) -> f64 {
        (lane as f64 + 0.5) * self.lane_width
    }

    /// Vehicles per direction requested by the density, before any
    /// truncation for lane capacity.
    pub fn vehicles_per_direction(&self) -> u32 {
        (self.density_per_km * self.lane_length / 1000.0).floor() as u32
    }
}

/// Position along the direction of travel, in `[0, lane_length)`.
fn forward_coord(v: &VehicleState, lane_length: f64) -> f64 {
    match v.heading {
        Heading::East => v.x.rem_euclid(lane_length),
        Heading::West => (-v.x).rem_euclid(lane_length),
    }
}

/// Place vehicles for a fresh scenario.
///
/// Per lane, consecutive gaps are `(1 + γ)·SD` and speeds
/// `v_min + γ·(v_max − v_min)` with independent `γ ~ U[0, 1]`. The lane's
/// share of the per-direction count is placed behind a random head position;
/// vehicles that would leave less than SD before the ring closes are dropped.
pub fn init_scenario<R: Rng + ?Sized>(
    config: &MobilityConfig,
    rng: &mut R,
) -> Result<Vec<VehicleState>, MobilityError> {
    config.validate()?;
    let per_direction = config.vehicles_per_direction();
    let lanes = config.lanes_per_direction;
    let mut fleet = Vec::new();
    let mut next_id = 0u32;

    for lane in 0..config.lane_count() {
        let heading = config.lane_heading(lane);
        let k = lane % lanes;
        // round-robin split of the direction's vehicles across its lanes
        let wanted = per_direction / lanes + u32::from(k < per_direction % lanes);
        if wanted == 0 {
            continue;
        }
        let head = rng.random_range(0.0..=1.0) * config.lane_length;
        let mut offset = 0.0;
        for i in 0..wanted {
            let speed_gamma: f64 = rng.random_range(0.0..=1.0);
            if i > 0 {
                let gap_gamma: f64 = rng.random_range(0.0..=1.0);
                offset += (1.0 + gap_gamma) * config.safety_distance;
                if config.lane_length - offset < config.safety_distance {
                    break;
                }
            }
            let along = (head - offset).rem_euclid(config.lane_length);
            let x = match heading {
                Heading::East => along,
                Heading::West => (-along).rem_euclid(config.lane_length),
            };
            fleet.push(VehicleState {
                id: VehicleId(next_id),
                lane,
                heading,
                x,
                y: config.lane_y(lane),
                speed: config.v_min + speed_gamma * (config.v_max - config.v_min),
            });
            next_id += 1;
        }
    }
    Ok(fleet)
}

/// Indices of one lane's vehicles sorted front to back, starting from the
/// vehicle with the largest free gap ahead, together with each vehicle's
/// gap to the vehicle in front.
fn lane_order(fleet: &[VehicleState], members: &[usize], lane_length: f64) -> Vec<(usize, f64)> {
    let mut by_pos: Vec<(usize, f64)> = members
        .iter()
        .map(|&i| (i, forward_coord(&fleet[i], lane_length)))
        .collect();
    by_pos.sort_by(|a, b| a.1.total_cmp(&b.1).then(fleet[a.0].id.cmp(&fleet[b.0].id)));
    let n = by_pos.len();
    let gaps: Vec<f64> = (0..n)
        .map(|j| {
            if n == 1 {
                lane_length
            } else {
                (by_pos[(j + 1) % n].1 - by_pos[j].1).rem_euclid(lane_length)
            }
        })
        .collect();
    let mut leader = 0;
    for j in 1..n {
        if gaps[j] > gaps[leader] {
            leader = j;
        }
    }
    (0..n)
        .map(|step| {
            let j = (leader + n - step) % n;
            (by_pos[j].0, gaps[j])
        })
        .collect()
}

/// Advance the fleet by one time step.
pub fn step<R: Rng + ?Sized>(
    fleet: &[VehicleState],
    config: &MobilityConfig,
    rng: &mut R,
) -> Vec<VehicleState> {
    let mut next = fleet.to_vec();
    for v in &mut next {
        let gamma: f64 = rng.random_range(-1.0..=1.0);
        v.speed = (v.speed + gamma * config.accel * config.dt).clamp(config.v_min, config.v_max);
    }

    let mut lanes: Vec<Vec<usize>> = vec![Vec::new(); config.lane_count() as usize];
    for (i, v) in next.iter().enumerate() {
        lanes[v.lane as usize].push(i);
    }
    for members in lanes.iter().filter(|m| m.len() > 1) {
        // gaps are measured at time t, before the move
        let order = lane_order(&next, members, config.lane_length);
        for w in order.windows(2) {
            let (front, _) = w[0];
            let (rear, rear_gap) = w[1];
            if rear_gap <= config.safety_distance {
                let cap = next[front].speed;
                if next[rear].speed > cap {
                    next[rear].speed = cap;
                }
            }
        }
    }

    for v in &mut next {
        v.x = (v.x + v.heading.sign() * v.speed * config.dt).rem_euclid(config.lane_length);
    }
    next
}

/// Shift x coordinates so that `center` sits at x = 0 and every other
/// vehicle is at its nearest ring image, giving a linear frame for
/// short-horizon geometry.
pub fn recentered(
    fleet: &[VehicleState],
    center: &VehicleState,
    lane_length: f64,
) -> Vec<VehicleState> {
    let half = lane_length / 2.0;
    fleet
        .iter()
        .map(|v| {
            let mut dx = (v.x - center.x).rem_euclid(lane_length);
            if dx >= half {
                dx -= lane_length;
            }
            VehicleState { x: dx, ..*v }
        })
        .collect()
}

/// Write a fleet snapshot as CSV (`id,lane,direction,x,y,speed`).
pub fn write_snapshot_csv<W: io::Write>(fleet: &[VehicleState], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "lane", "direction", "x", "y", "speed"])?;
    for v in fleet {
        w.write_record([
            v.id.0.to_string(),
            v.lane.to_string(),
            format!("{}", v.direction()),
            format!("{:.6}", v.x),
            format!("{:.6}", v.y),
            format!("{:.6}", v.speed),
        ])?;
    }
    w.flush()?;
    Ok(())
}
