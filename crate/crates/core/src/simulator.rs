//! Seeded experiment engine: scenario generation, warm-up, pair sampling,
//! protocol runs and per-metric aggregation into CSV tables.

use std::fmt;
use std::io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cft::{self, CftError, FileSpec, LinkModels};
use crate::channel;
use crate::config::{bytes_to_mbit, ExperimentConfig};
use crate::connection::predict_connection_time;
use crate::mobility::{self, distance, Heading, MobilityError, VehicleId, VehicleState};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Mobility(#[from] MobilityError),
    #[error(transparent)]
    Protocol(#[from] CftError),
    #[error(transparent)]
    Channel(#[from] channel::ChannelError),
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    ConnectionTime,
    Throughput,
    Capability,
    MaxVolume,
    ClusterSize,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::ConnectionTime => "connection_time",
            Metric::Throughput => "throughput",
            Metric::Capability => "capability",
            Metric::MaxVolume => "max_volume",
            Metric::ClusterSize => "cluster_size",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Cft,
    Direct,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Cft => "cft",
            Scheme::Direct => "direct",
        })
    }
}

/// One grid point of a metric table.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub density: f64,
    pub range: f64,
    pub safety_distance: f64,
    pub file_bytes: Option<u64>,
    pub scheme: Option<Scheme>,
    /// Aggregate in the unit of the table's value column.
    pub value: f64,
    /// Per-seed (or per-run) values the aggregate is computed from.
    pub records: Vec<f64>,
    /// Fraction of successful runs, for transfer metrics.
    pub success_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricTable {
    pub metric: Metric,
    pub rows: Vec<Row>,
}

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

impl MetricTable {
    fn value_column(&self) -> &'static str {
        match self.metric {
            Metric::ConnectionTime => "avg_connection_time_s",
            Metric::Throughput => "avg_throughput_mbps",
            Metric::Capability => "avg_capability_mbit",
            Metric::MaxVolume => "max_volume_mbit",
            Metric::ClusterSize => "avg_cluster_size",
        }
    }

    pub fn header(&self) -> Vec<&'static str> {
        let mut h = vec!["density", "range_m", "safety_distance_m"];
        match self.metric {
            Metric::MaxVolume => h.push("scheme"),
            Metric::ClusterSize => h.push("file_mbit"),
            _ => {}
        }
        h.push(self.value_column());
        if matches!(self.metric, Metric::MaxVolume | Metric::ClusterSize) {
            h.push("success_rate");
        }
        h.push("records");
        h
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header())?;
        for r in &self.rows {
            let mut rec = vec![fmt6(r.density), fmt6(r.range), fmt6(r.safety_distance)];
            if let Some(s) = r.scheme {
                rec.push(s.to_string());
            }
            if let Some(b) = r.file_bytes {
                rec.push(fmt6(bytes_to_mbit(b)));
            }
            rec.push(fmt6(r.value));
            if let Some(s) = r.success_rate {
                rec.push(fmt6(s));
            }
            rec.push(r.records.len().to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| SimError::Csv(e.into()))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String, SimError> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv is utf-8"))
    }

    /// First row matching the given coordinates.
    pub fn find(&self, density: f64, range: f64) -> Option<&Row> {
        self.rows
            .iter()
            .find(|r| r.density == density && r.range == range)
    }

    /// One-line summaries for the CLI.
    pub fn summary_lines(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| {
                let mut s = format!(
                    "{} rho={} R={} SD={}",
                    self.metric.name(),
                    r.density,
                    r.range,
                    r.safety_distance
                );
                if let Some(sc) = r.scheme {
                    s.push_str(&format!(" scheme={sc}"));
                }
                if let Some(b) = r.file_bytes {
                    s.push_str(&format!(" file={}Mbit", bytes_to_mbit(b)));
                }
                s.push_str(&format!(" {}={:.3}", self.value_column(), r.value));
                if let Some(sr) = r.success_rate {
                    s.push_str(&format!(" success={sr:.3}"));
                }
                s
            })
            .collect()
    }
}

/// SplitMix64 finaliser.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of an independent stream keyed by `parts`.
pub fn stream_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(base), |acc, p| mix(acc ^ mix(*p)))
}

fn rng_for(base: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(base, parts))
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Fresh scenario advanced through the warm-up.
pub fn warmed_fleet<R: Rng + ?Sized>(
    mob: &mobility::MobilityConfig,
    warmup_steps: u32,
    rng: &mut R,
) -> Result<Vec<VehicleState>, SimError> {
    let mut fleet = mobility::init_scenario(mob, rng)?;
    for _ in 0..warmup_steps {
        fleet = mobility::step(&fleet, mob, rng);
    }
    Ok(fleet)
}

/// Fleet snapshots after warm-up for one (density, SD, seed).
pub fn snapshots(
    cfg: &ExperimentConfig,
    density: f64,
    sd: f64,
    seed: u32,
) -> Result<Vec<Vec<VehicleState>>, SimError> {
    let mob = cfg.mobility_at(density, sd);
    let mut rng = rng_for(
        cfg.base_seed,
        &[1, density.to_bits(), sd.to_bits(), seed as u64],
    );
    let mut fleet = warmed_fleet(&mob, cfg.warmup_steps, &mut rng)?;
    let mut out = Vec::with_capacity(cfg.snapshots as usize);
    for k in 0..cfg.snapshots {
        if k > 0 {
            for _ in 0..cfg.snapshot_interval_steps {
                fleet = mobility::step(&fleet, &mob, &mut rng);
            }
        }
        out.push(fleet.clone());
    }
    Ok(out)
}

/// Opposite-direction pairs within `range` on the ring, the second vehicle
/// moved to its nearest image of the first.
pub fn opposite_pairs(
    fleet: &[VehicleState],
    lane_length: f64,
    range: f64,
) -> Vec<(VehicleState, VehicleState)> {
    let mut out = Vec::new();
    for a in fleet.iter().filter(|v| v.heading == Heading::East) {
        for b in fleet.iter().filter(|v| v.heading == Heading::West) {
            let dx = (b.x - a.x + 0.5 * lane_length).rem_euclid(lane_length) - 0.5 * lane_length;
            let image = VehicleState { x: a.x + dx, ..*b };
            if distance(a, &image) <= range {
                out.push((*a, image));
            }
        }
    }
    out
}

/// Link models for one grid point.
pub fn models_at(cfg: &ExperimentConfig, density: f64, range: f64) -> Result<LinkModels, SimError> {
    Ok(LinkModels::new(
        cfg.channel.clone(),
        cfg.rates.clone(),
        cfg.rate_mode,
        cfg.mac_at(density, range),
        range,
        cfg.run_duration,
    )?)
}

/// Pair-sampled metrics. Each seed contributes the mean over its pairs.
fn pair_metric(
    cfg: &ExperimentConfig,
    metric: Metric,
    sds: &[f64],
) -> Result<MetricTable, SimError> {
    let file = FileSpec::new(0, cfg.fragment_bytes)?;
    let mut rows = Vec::new();
    for &sd in sds {
        for &density in &cfg.densities {
            let per_seed: Vec<Vec<Vec<VehicleState>>> = (0..cfg.seeds)
                .into_par_iter()
                .map(|seed| snapshots(cfg, density, sd, seed))
                .collect::<Result<_, _>>()?;
            for &range in &cfg.ranges {
                let models = models_at(cfg, density, range)?;
                let records: Vec<f64> = per_seed
                    .par_iter()
                    .map(|snaps| -> Result<f64, SimError> {
                        let mut samples = Vec::new();
                        for snap in snaps {
                            for (a, b) in opposite_pairs(snap, cfg.mobility.lane_length, range) {
                                let pred = predict_connection_time(&a, &b, range)
                                    .map_err(CftError::from)?;
                                let dt = pred.capped(cfg.run_duration);
                                let v = match metric {
                                    Metric::ConnectionTime => dt,
                                    Metric::Throughput => {
                                        let e_c = models.expected_rate(&a, &b, dt)?;
                                        models.mac_throughput(e_c)? / 1e6
                                    }
                                    _ => bytes_to_mbit(
                                        cft::link_budget(&a, &b, &file, &models)?.capacity,
                                    ),
                                };
                                samples.push(v);
                            }
                        }
                        Ok(mean(&samples))
                    })
                    .collect::<Result<_, _>>()?;
                rows.push(Row {
                    density,
                    range,
                    safety_distance: sd,
                    file_bytes: None,
                    scheme: None,
                    value: mean(&records),
                    records,
                    success_rate: None,
                });
            }
        }
    }
    Ok(MetricTable { metric, rows })
}

/// A request vehicle, a holder in its range, and the fleet recentred on the
/// request vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferScenario {
    pub fleet: Vec<VehicleState>,
    pub request: VehicleId,
    pub holder: Option<VehicleId>,
    /// Seed of the protocol's own random stream.
    pub protocol_seed: u64,
}

const MAX_REQUEST_DRAWS: usize = 10_000;

/// Request scenarios for one density, `requests_per_seed` per seed.
pub fn transfer_scenarios(
    cfg: &ExperimentConfig,
    density: f64,
    seed: u32,
) -> Result<Vec<TransferScenario>, SimError> {
    let sd = cfg.reference_safety_distance;
    let mob = cfg.mobility_at(density, sd);
    let range = cfg.transfer_range;
    let mut rng = rng_for(
        cfg.base_seed,
        &[2, density.to_bits(), sd.to_bits(), seed as u64],
    );
    let mut fleet = warmed_fleet(&mob, cfg.warmup_steps, &mut rng)?;
    let mut out = Vec::new();
    for k in 0..cfg.requests_per_seed {
        if k > 0 {
            for _ in 0..cfg.snapshot_interval_steps {
                fleet = mobility::step(&fleet, &mob, &mut rng);
            }
        }
        let protocol_seed = stream_seed(
            cfg.base_seed,
            &[3, density.to_bits(), seed as u64, k as u64],
        );
        let mut picked = None;
        for _ in 0..MAX_REQUEST_DRAWS {
            let req = fleet[rng.random_range(0..fleet.len())];
            let local = mobility::recentered(&fleet, &req, mob.lane_length);
            let req = VehicleState { x: 0.0, ..req };
            let holders: Vec<VehicleId> = local
                .iter()
                .filter(|v| v.heading != req.heading && distance(v, &req) <= range)
                .map(|v| v.id)
                .collect();
            if !holders.is_empty() {
                let h = holders[rng.random_range(0..holders.len())];
                picked = Some((local, req.id, h));
                break;
            }
        }
        out.push(match picked {
            Some((local, request, holder)) => TransferScenario {
                fleet: local,
                request,
                holder: Some(holder),
                protocol_seed,
            },
            None => TransferScenario {
                fleet: fleet.clone(),
                request: fleet[0].id,
                holder: None,
                protocol_seed,
            },
        });
    }
    Ok(out)
}

/// Runs one scheme on one scenario for one file.
pub fn run_scheme(
    sc: &TransferScenario,
    scheme: Scheme,
    file: &FileSpec,
    cfg: &ExperimentConfig,
    models: &LinkModels,
) -> Result<cft::TransferOutcome, SimError> {
    let holders: Vec<VehicleId> = sc.holder.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(sc.protocol_seed);
    Ok(match scheme {
        Scheme::Cft => cft::run_cft(
            sc.request,
            &sc.fleet,
            &holders,
            file,
            models,
            &cfg.policy,
            &mut rng,
        )?,
        Scheme::Direct => cft::run_direct_baseline(sc.request, &sc.fleet, &holders, file, models)?,
    })
}

/// Largest file (on the resolution grid) this scenario delivers, found by
/// bisection on success.
pub fn scenario_max_volume(
    sc: &TransferScenario,
    scheme: Scheme,
    cfg: &ExperimentConfig,
    models: &LinkModels,
) -> Result<u64, SimError> {
    let res = cfg.volume_resolution;
    let ok = |v: u64| -> Result<bool, SimError> {
        let file = FileSpec::new(v, cfg.fragment_bytes)?;
        Ok(run_scheme(sc, scheme, &file, cfg, models)?.succeeded())
    };
    if sc.holder.is_none() || !ok(res)? {
        return Ok(0);
    }
    let (mut lo, mut hi) = (1u64, cfg.volume_max / res);
    if ok(hi * res)? {
        return Ok(hi * res);
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid * res)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo * res)
}

/// Largest volume that at least `threshold` of the runs reach.
pub fn volume_quantile(per_run: &[f64], threshold: f64) -> f64 {
    if per_run.is_empty() {
        return 0.0;
    }
    let mut v = per_run.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    let k = ((threshold * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[k - 1]
}

fn all_scenarios(cfg: &ExperimentConfig, density: f64) -> Result<Vec<TransferScenario>, SimError> {
    let nested: Vec<Vec<TransferScenario>> = (0..cfg.seeds)
        .into_par_iter()
        .map(|seed| transfer_scenarios(cfg, density, seed))
        .collect::<Result<_, _>>()?;
    Ok(nested.into_iter().flatten().collect())
}

/// Maximum deliverable volume per density for both schemes.
pub fn max_transfer_volume(
    cfg: &ExperimentConfig,
    schemes: &[Scheme],
) -> Result<MetricTable, SimError> {
    let mut rows = Vec::new();
    for &density in &cfg.densities {
        let scenarios = all_scenarios(cfg, density)?;
        let models = models_at(cfg, density, cfg.transfer_range)?;
        for &scheme in schemes {
            let per_run: Vec<f64> = scenarios
                .par_iter()
                .map(|sc| scenario_max_volume(sc, scheme, cfg, &models).map(bytes_to_mbit))
                .collect::<Result<_, _>>()?;
            let value = volume_quantile(&per_run, cfg.success_threshold);
            let reached = per_run.iter().filter(|v| **v >= value).count() as f64
                / per_run.len().max(1) as f64;
            rows.push(Row {
                density,
                range: cfg.transfer_range,
                safety_distance: cfg.reference_safety_distance,
                file_bytes: None,
                scheme: Some(scheme),
                value,
                records: per_run,
                success_rate: Some(reached),
            });
        }
    }
    Ok(MetricTable {
        metric: Metric::MaxVolume,
        rows,
    })
}

/// Mean cluster size per (density, file size); runs without a cluster
/// count as zero.
pub fn cluster_size_profile(cfg: &ExperimentConfig) -> Result<MetricTable, SimError> {
    let mut rows = Vec::new();
    for &density in &cfg.densities {
        let scenarios = all_scenarios(cfg, density)?;
        let models = models_at(cfg, density, cfg.transfer_range)?;
        for &bytes in &cfg.file_sizes {
            let file = FileSpec::new(bytes, cfg.fragment_bytes)?;
            let outcomes: Vec<(f64, bool)> = scenarios
                .par_iter()
                .map(|sc| {
                    if sc.holder.is_none() {
                        return Ok((0.0, false));
                    }
                    let out = run_scheme(sc, Scheme::Cft, &file, cfg, &models)?;
                    Ok((out.n_c as f64, out.succeeded()))
                })
                .collect::<Result<_, SimError>>()?;
            let records: Vec<f64> = outcomes.iter().map(|o| o.0).collect();
            let successes = outcomes.iter().filter(|o| o.1).count() as f64;
            rows.push(Row {
                density,
                range: cfg.transfer_range,
                safety_distance: cfg.reference_safety_distance,
                file_bytes: Some(bytes),
                scheme: None,
                value: mean(&records),
                success_rate: Some(successes / records.len().max(1) as f64),
                records,
            });
        }
    }
    Ok(MetricTable {
        metric: Metric::ClusterSize,
        rows,
    })
}

/// Runs the sweep behind `metric` over the configured grid.
pub fn run_sweep(cfg: &ExperimentConfig, metric: Metric) -> Result<MetricTable, SimError> {
    match metric {
        Metric::ConnectionTime | Metric::Capability => {
            pair_metric(cfg, metric, &[cfg.reference_safety_distance])
        }
        Metric::Throughput => pair_metric(cfg, metric, &cfg.safety_distances),
        Metric::MaxVolume => max_transfer_volume(cfg, &[Scheme::Cft, Scheme::Direct]),
        Metric::ClusterSize => cluster_size_profile(cfg),
    }
}

/// E(c) and rate probabilities against distance, as CSV.
pub fn rate_curve_csv<W: io::Write>(
    cfg: &ExperimentConfig,
    distances: &[f64],
    out: W,
) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "distance_m".to_string(),
        "mu".to_string(),
        "p_zero".to_string(),
    ];
    for r in cfg.rates.rates() {
        header.push(format!("p_{}mbps", r / 1e6));
    }
    header.push("expected_rate_mbps".into());
    w.write_record(&header)?;
    for &d in distances {
        let dist = channel::rate_distribution(d, &cfg.channel, &cfg.rates)?;
        let mut rec = vec![
            fmt6(d),
            fmt6(channel::mu_for_distance(d, &cfg.channel.mu_profile)),
            format!("{:.9}", dist.p_zero),
        ];
        rec.extend(dist.p.iter().map(|p| format!("{p:.9}")));
        rec.push(fmt6(dist.expected_rate / 1e6));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| SimError::Csv(e.into()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig::from_toml(
            crate::config::DEFAULT_CONFIG,
            &[
                "experiment.seeds=2".into(),
                "experiment.densities=[5.0]".into(),
                "experiment.ranges_m=[250.0, 600.0]".into(),
                "experiment.warmup_steps=20".into(),
                "experiment.snapshots=2".into(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn stream_seeds_differ_by_key() {
        assert_ne!(stream_seed(1, &[1, 2]), stream_seed(1, &[2, 1]));
        assert_eq!(stream_seed(9, &[3]), stream_seed(9, &[3]));
    }

    #[test]
    fn pairs_use_nearest_image() {
        let east = VehicleState {
            id: VehicleId(0),
            lane: 0,
            heading: Heading::East,
            x: 10.0,
            y: 2.5,
            speed: 20.0,
        };
        let west = VehicleState {
            id: VehicleId(1),
            lane: 2,
            heading: Heading::West,
            x: 10_950.0,
            y: 12.5,
            speed: 20.0,
        };
        let pairs = opposite_pairs(&[east, west], 11_000.0, 250.0);
        assert_eq!(pairs.len(), 1);
        assert!((pairs[0].1.x - (-50.0)).abs() < 1e-9);
    }

    #[test]
    fn quantile_picks_order_statistic() {
        let v = [10.0, 40.0, 20.0, 30.0];
        assert_eq!(volume_quantile(&v, 0.5), 30.0);
        assert_eq!(volume_quantile(&v, 1.0), 10.0);
        assert_eq!(volume_quantile(&v, 0.01), 40.0);
    }

    #[test]
    fn aggregates_are_recomputable() {
        let cfg = small();
        let t = run_sweep(&cfg, Metric::ConnectionTime).unwrap();
        for r in &t.rows {
            assert_eq!(r.value, mean(&r.records));
            assert_eq!(r.records.len(), 2);
        }
    }

    #[test]
    fn csv_is_deterministic() {
        let cfg = small();
        let a = run_sweep(&cfg, Metric::Capability)
            .unwrap()
            .to_csv_string()
            .unwrap();
        let b = run_sweep(&cfg, Metric::Capability)
            .unwrap()
            .to_csv_string()
            .unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("density,range_m,safety_distance_m,avg_capability_mbit,records"));
    }
}
