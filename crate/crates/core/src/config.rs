//! Experiment configuration. The file is TOML written in the units used by
//! the simulation parameter table (km/h, km, dBm, KB, µs, Mbit); everything
//! is converted to SI when loaded.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cft::{FileSpec, ForwardingMode, ProtocolPolicy};
use crate::channel::{ChannelParams, MuProfile, MuSegment, RateDistanceMode, RateTable};
use crate::mac::MacParams;
use crate::mobility::MobilityConfig;

/// Shipped defaults.
pub const DEFAULT_CONFIG: &str = include_str!("../config/default.toml");

/// Bytes per Mbit.
pub const MBIT: f64 = 125_000.0;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("bad override `{0}`: expected key=value")]
    Override(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MobilitySection {
    pub v_min_kmh: f64,
    pub v_max_kmh: f64,
    pub accel_ms2: f64,
    pub dt_s: f64,
    pub lane_length_km: f64,
    pub lane_width_m: f64,
    pub lanes_per_direction: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub pt_w: f64,
    pub gt: f64,
    pub gr: f64,
    pub ht_m: f64,
    pub hr_m: f64,
    pub loss: f64,
    pub alpha: f64,
    pub noise_dbm: f64,
    pub mu_profile: Vec<MuSegment>,
    /// `prediction_time`, `window_midpoint` or `fixed_reference`.
    pub rate_distance: String,
    #[serde(default)]
    pub reference_distance_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesSection {
    pub rates_mbps: Vec<f64>,
    /// Linear SNR.
    pub thresholds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacSection {
    pub window: f64,
    pub packet_kb: f64,
    pub slot_us: f64,
    pub rts_us: f64,
    pub cts_us: f64,
    pub difs_us: f64,
    pub sifs_us: f64,
    pub ack_us: f64,
    /// Carrier-sense diameter as a multiple of the communication range.
    pub carrier_sense_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    /// Megabytes (10^6 bytes).
    pub fragment_mb: f64,
    pub willingness: f64,
    pub same_direction_only: bool,
    pub require_contact: bool,
    pub head_downloads: bool,
    pub forwarding: ForwardingMode,
    #[serde(default)]
    pub max_hops: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub densities: Vec<f64>,
    pub ranges_m: Vec<f64>,
    pub safety_distances_m: Vec<f64>,
    /// SD used by the figures that fix it.
    pub reference_safety_distance_m: f64,
    /// Range used by the transfer experiments.
    pub transfer_range_m: f64,
    pub file_sizes_mbit: Vec<f64>,
    pub seeds: u32,
    pub base_seed: u64,
    pub warmup_steps: u32,
    pub snapshots: u32,
    pub snapshot_interval_steps: u32,
    pub run_duration_s: f64,
    pub requests_per_seed: u32,
    pub success_threshold: f64,
    pub volume_max_mbit: f64,
    pub volume_resolution_mbit: f64,
}

/// The configuration as written, in the units of the TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub mobility: MobilitySection,
    pub channel: ChannelSection,
    pub rates: RatesSection,
    pub mac: MacSection,
    pub protocol: ProtocolSection,
    pub experiment: ExperimentSection,
}

/// Fully resolved configuration in SI units.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Density and safety distance are set per grid point.
    pub mobility: MobilityConfig,
    pub channel: ChannelParams,
    pub rates: RateTable,
    pub rate_mode: RateDistanceMode,
    /// `rcs` and `rho` are set per grid point.
    pub mac: MacParams,
    pub carrier_sense_factor: f64,
    pub policy: ProtocolPolicy,
    /// Fragment size in bytes.
    pub fragment_bytes: u64,
    /// Vehicles per km per direction.
    pub densities: Vec<f64>,
    pub ranges: Vec<f64>,
    pub safety_distances: Vec<f64>,
    pub reference_safety_distance: f64,
    pub transfer_range: f64,
    /// File sizes in bytes.
    pub file_sizes: Vec<u64>,
    pub seeds: u32,
    pub base_seed: u64,
    pub warmup_steps: u32,
    pub snapshots: u32,
    pub snapshot_interval_steps: u32,
    pub run_duration: f64,
    pub requests_per_seed: u32,
    pub success_threshold: f64,
    pub volume_max: u64,
    pub volume_resolution: u64,
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) / 1000.0
}

pub fn mbit_to_bytes(mbit: f64) -> u64 {
    (mbit * MBIT).round() as u64
}

pub fn bytes_to_mbit(bytes: u64) -> f64 {
    bytes as f64 / MBIT
}

fn parse_table(text: &str) -> Result<toml::Table, ConfigError> {
    text.parse::<toml::Table>()
        .map_err(|e| ConfigError::Syntax(e.to_string()))
}

/// Parse the right-hand side of an override as a TOML value, falling back
/// to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Apply `section.key=value` overrides to a parsed document.
pub fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> Result<(), ConfigError> {
    for item in overrides {
        let (path, raw) = item
            .split_once('=')
            .ok_or_else(|| ConfigError::Override(item.clone()))?;
        let keys: Vec<&str> = path.trim().split('.').collect();
        if keys.iter().any(|k| k.is_empty()) {
            return Err(ConfigError::Override(item.clone()));
        }
        let mut node = &mut *table;
        for k in &keys[..keys.len() - 1] {
            let entry = node
                .entry(k.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            node = entry.as_table_mut().ok_or_else(|| {
                ConfigError::Invalid(format!("`{k}` in `{path}` is not a section"))
            })?;
        }
        node.insert(keys[keys.len() - 1].to_string(), parse_value(raw.trim()));
    }
    Ok(())
}

impl RawConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table = parse_table(text)?;
        apply_overrides(&mut table, overrides)?;
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))
    }

    pub fn resolve(&self) -> Result<ExperimentConfig, ConfigError> {
        let invalid = |m: String| ConfigError::Invalid(m);
        let m = &self.mobility;
        let mobility = MobilityConfig {
            v_min: m.v_min_kmh / 3.6,
            v_max: m.v_max_kmh / 3.6,
            safety_distance: self.experiment.reference_safety_distance_m,
            dt: m.dt_s,
            accel: m.accel_ms2,
            lane_length: m.lane_length_km * 1000.0,
            lane_width: m.lane_width_m,
            lanes_per_direction: m.lanes_per_direction,
            density_per_km: self.experiment.densities.first().copied().unwrap_or(0.0),
        };
        mobility.validate().map_err(|e| invalid(e.to_string()))?;

        let c = &self.channel;
        let channel = ChannelParams {
            pt: c.pt_w,
            gt: c.gt,
            gr: c.gr,
            ht: c.ht_m,
            hr: c.hr_m,
            loss: c.loss,
            alpha: c.alpha,
            nr: dbm_to_watts(c.noise_dbm),
            mu_profile: MuProfile::new(c.mu_profile.clone()).map_err(|e| invalid(e.to_string()))?,
        };
        channel.validate().map_err(|e| invalid(e.to_string()))?;
        let rate_mode = match c.rate_distance.as_str() {
            "prediction_time" => RateDistanceMode::PredictionTime,
            "window_midpoint" => RateDistanceMode::WindowMidpoint,
            "fixed_reference" => {
                let d = c.reference_distance_m.ok_or_else(|| {
                    invalid("fixed_reference needs channel.reference_distance_m".into())
                })?;
                if !(d > 0.0) {
                    return Err(invalid(format!(
                        "reference distance must be positive, got {d}"
                    )));
                }
                RateDistanceMode::FixedReference(d)
            }
            other => return Err(invalid(format!("unknown rate_distance `{other}`"))),
        };
        let rates = RateTable::new(
            self.rates.rates_mbps.iter().map(|r| r * 1e6).collect(),
            self.rates.thresholds.clone(),
        )
        .map_err(|e| invalid(e.to_string()))?;

        let mc = &self.mac;
        let mac = MacParams {
            w: mc.window,
            lp: mc.packet_kb * 1024.0 * 8.0,
            t_slot: mc.slot_us * 1e-6,
            t_rts: mc.rts_us * 1e-6,
            t_cts: mc.cts_us * 1e-6,
            t_difs: mc.difs_us * 1e-6,
            t_sifs: mc.sifs_us * 1e-6,
            t_ack: mc.ack_us * 1e-6,
            rcs: 1.0,
            rho: 0.0,
        };
        mac.validate().map_err(|e| invalid(e.to_string()))?;
        if !(mc.carrier_sense_factor > 0.0) {
            return Err(invalid("carrier_sense_factor must be positive".into()));
        }

        let p = &self.protocol;
        if !(0.0..=1.0).contains(&p.willingness) {
            return Err(invalid(format!(
                "willingness must lie in [0, 1], got {}",
                p.willingness
            )));
        }
        let fragment_bytes = (p.fragment_mb * 1e6).round() as u64;
        FileSpec::new(0, fragment_bytes).map_err(|e| invalid(e.to_string()))?;
        let policy = ProtocolPolicy {
            willingness: p.willingness,
            same_direction_only: p.same_direction_only,
            require_contact: p.require_contact,
            max_hops: p.max_hops,
            head_downloads: p.head_downloads,
            forwarding: p.forwarding,
        };

        let e = &self.experiment;
        let positive_list = |name: &str, v: &[f64]| -> Result<(), ConfigError> {
            if v.is_empty() || v.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
                return Err(ConfigError::Invalid(format!(
                    "{name} must be a non-empty list of positive values"
                )));
            }
            Ok(())
        };
        positive_list("densities", &e.densities)?;
        positive_list("ranges_m", &e.ranges_m)?;
        positive_list("safety_distances_m", &e.safety_distances_m)?;
        positive_list("file_sizes_mbit", &e.file_sizes_mbit)?;
        if e.seeds == 0 {
            return Err(invalid("at least one seed is required".into()));
        }
        if e.snapshots == 0 || e.requests_per_seed == 0 {
            return Err(invalid(
                "snapshots and requests_per_seed must be positive".into(),
            ));
        }
        if !(e.run_duration_s > 0.0) {
            return Err(invalid("run_duration_s must be positive".into()));
        }
        if !(e.success_threshold > 0.0 && e.success_threshold <= 1.0) {
            return Err(invalid("success_threshold must lie in (0, 1]".into()));
        }
        if !(e.transfer_range_m > 0.0) || !(e.reference_safety_distance_m > 0.0) {
            return Err(invalid(
                "transfer range and reference SD must be positive".into(),
            ));
        }
        if !(e.volume_resolution_mbit > 0.0) || !(e.volume_max_mbit > e.volume_resolution_mbit) {
            return Err(invalid("volume search bounds are inconsistent".into()));
        }

        Ok(ExperimentConfig {
            mobility,
            channel,
            rates,
            rate_mode,
            mac,
            carrier_sense_factor: mc.carrier_sense_factor,
            policy,
            fragment_bytes,
            densities: e.densities.clone(),
            ranges: e.ranges_m.clone(),
            safety_distances: e.safety_distances_m.clone(),
            reference_safety_distance: e.reference_safety_distance_m,
            transfer_range: e.transfer_range_m,
            file_sizes: e
                .file_sizes_mbit
                .iter()
                .map(|v| mbit_to_bytes(*v))
                .collect(),
            seeds: e.seeds,
            base_seed: e.base_seed,
            warmup_steps: e.warmup_steps,
            snapshots: e.snapshots,
            snapshot_interval_steps: e.snapshot_interval_steps,
            run_duration: e.run_duration_s,
            requests_per_seed: e.requests_per_seed,
            success_threshold: e.success_threshold,
            volume_max: mbit_to_bytes(e.volume_max_mbit),
            volume_resolution: mbit_to_bytes(e.volume_resolution_mbit).max(1),
        })
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        RawConfig::from_toml(text, overrides)?.resolve()
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text, overrides)
    }

    pub fn default_config() -> Self {
        Self::from_toml(DEFAULT_CONFIG, &[]).expect("shipped config is valid")
    }

    /// Mobility settings for one grid point.
    pub fn mobility_at(&self, density: f64, safety_distance: f64) -> MobilityConfig {
        MobilityConfig {
            density_per_km: density,
            safety_distance,
            ..self.mobility.clone()
        }
    }

    /// MAC settings for one grid point.
    pub fn mac_at(&self, density: f64, range: f64) -> MacParams {
        MacParams {
            rcs: self.carrier_sense_factor * range,
            rho: density / 1000.0,
            ..self.mac.clone()
        }
    }

    /// Resolved values in SI units, one `key = value` per line.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let m = &self.mobility;
        let _ = writeln!(s, "mobility.v_min = {} m/s", m.v_min);
        let _ = writeln!(s, "mobility.v_max = {} m/s", m.v_max);
        let _ = writeln!(s, "mobility.accel = {} m/s^2", m.accel);
        let _ = writeln!(s, "mobility.dt = {} s", m.dt);
        let _ = writeln!(s, "mobility.lane_length = {} m", m.lane_length);
        let _ = writeln!(s, "mobility.lane_width = {} m", m.lane_width);
        let _ = writeln!(
            s,
            "mobility.lanes_per_direction = {}",
            m.lanes_per_direction
        );
        let c = &self.channel;
        let _ = writeln!(s, "channel.pt = {} W", c.pt);
        let _ = writeln!(s, "channel.gt = {}", c.gt);
        let _ = writeln!(s, "channel.gr = {}", c.gr);
        let _ = writeln!(s, "channel.ht = {} m", c.ht);
        let _ = writeln!(s, "channel.hr = {} m", c.hr);
        let _ = writeln!(s, "channel.loss = {}", c.loss);
        let _ = writeln!(s, "channel.alpha = {}", c.alpha);
        let _ = writeln!(s, "channel.nr = {:e} W", c.nr);
        for seg in c.mu_profile.segments() {
            let _ = writeln!(s, "channel.mu[from {} m] = {}", seg.from_m, seg.mu);
        }
        let _ = writeln!(s, "channel.rate_distance = {:?}", self.rate_mode);
        let _ = writeln!(s, "rates.rates = {:?} bit/s", self.rates.rates());
        let _ = writeln!(s, "rates.thresholds = {:?}", self.rates.thresholds());
        let mc = &self.mac;
        let _ = writeln!(s, "mac.w = {}", mc.w);
        let _ = writeln!(s, "mac.lp = {} bit", mc.lp);
        let _ = writeln!(s, "mac.t_slot = {:e} s", mc.t_slot);
        let _ = writeln!(s, "mac.t_rts = {:e} s", mc.t_rts);
        let _ = writeln!(s, "mac.t_cts = {:e} s", mc.t_cts);
        let _ = writeln!(s, "mac.t_difs = {:e} s", mc.t_difs);
        let _ = writeln!(s, "mac.t_sifs = {:e} s", mc.t_sifs);
        let _ = writeln!(s, "mac.t_ack = {:e} s", mc.t_ack);
        let _ = writeln!(s, "mac.rcs = {} x range", self.carrier_sense_factor);
        let _ = writeln!(s, "protocol.fragment = {} bytes", self.fragment_bytes);
        let _ = writeln!(s, "protocol.policy = {:?}", self.policy);
        let _ = writeln!(
            s,
            "experiment.densities = {:?} veh/km/direction",
            self.densities
        );
        let _ = writeln!(s, "experiment.ranges = {:?} m", self.ranges);
        let _ = writeln!(
            s,
            "experiment.safety_distances = {:?} m",
            self.safety_distances
        );
        let _ = writeln!(
            s,
            "experiment.reference_safety_distance = {} m",
            self.reference_safety_distance
        );
        let _ = writeln!(s, "experiment.transfer_range = {} m", self.transfer_range);
        let _ = writeln!(s, "experiment.file_sizes = {:?} bytes", self.file_sizes);
        let _ = writeln!(s, "experiment.seeds = {}", self.seeds);
        let _ = writeln!(s, "experiment.base_seed = {}", self.base_seed);
        let _ = writeln!(s, "experiment.warmup_steps = {}", self.warmup_steps);
        let _ = writeln!(s, "experiment.snapshots = {}", self.snapshots);
        let _ = writeln!(
            s,
            "experiment.snapshot_interval_steps = {}",
            self.snapshot_interval_steps
        );
        let _ = writeln!(s, "experiment.run_duration = {} s", self.run_duration);
        let _ = writeln!(
            s,
            "experiment.requests_per_seed = {}",
            self.requests_per_seed
        );
        let _ = writeln!(
            s,
            "experiment.success_threshold = {}",
            self.success_threshold
        );
        let _ = writeln!(s, "experiment.volume_max = {} bytes", self.volume_max);
        let _ = writeln!(
            s,
            "experiment.volume_resolution = {} bytes",
            self.volume_resolution
        );
        s
    }
}
