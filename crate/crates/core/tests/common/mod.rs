//! Reference implementations shared by the oracle suites and the acceptance
//! report. Each one is written independently of the library code it checks.

#![allow(dead_code)]

use cft_core::cft::{
    build_cluster_from, direct_feasible, run_cft, run_direct_baseline, CftError, FileSpec,
    TransferMode, TransferOutcome,
};
use cft_core::config::ExperimentConfig;
use cft_core::mac::MacParams;
use cft_core::mobility::{distance, Heading, VehicleId, VehicleState};
use cft_core::simulator::{models_at, transfer_scenarios, TransferScenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_vehicle(rng: &mut ChaCha8Rng, id: u32) -> VehicleState {
    let lane = rng.random_range(0..4u32);
    VehicleState {
        id: VehicleId(id),
        lane,
        heading: if lane < 2 {
            Heading::East
        } else {
            Heading::West
        },
        x: rng.random_range(-300.0..300.0),
        y: 2.5 + 5.0 * lane as f64,
        speed: rng.random_range(60.0..=120.0) / 3.6,
    }
}

/// Exit time found by stepping the extrapolated trajectories until the pair
/// separates, then bisecting on the bracketing interval.
pub fn exit_time_by_bisection(a: &VehicleState, b: &VehicleState, range: f64) -> f64 {
    let out = |t: f64| distance(&a.advanced(t), &b.advanced(t)) > range;
    let mut hi = 1.0;
    while !out(hi) {
        hi *= 2.0;
        assert!(hi < 1e7, "pair never separates");
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if out(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-10 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Pearson statistic over threshold bins, merging sparse bins so every
/// expected count is at least 5. Returns (statistic, degrees of freedom).
pub fn chi_square(observed: &[u64], expected_p: &[f64], n: u64) -> (f64, usize) {
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for (o, p) in observed.iter().zip(expected_p) {
        acc.0 += *o as f64;
        acc.1 += p * n as f64;
        if acc.1 >= 5.0 {
            bins.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if acc.1 > 0.0 || acc.0 > 0.0 {
        match bins.last_mut() {
            Some(last) => {
                last.0 += acc.0;
                last.1 += acc.1;
            }
            None => bins.push(acc),
        }
    }
    let stat = bins.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    (stat, bins.len().saturating_sub(1))
}

pub struct SlotStats {
    pub busy: u64,
    pub successes: u64,
    pub mean_len: f64,
    pub len_sd: f64,
    pub payload_rate: f64,
}

/// Plays `slots` generic slots in which each of `n` saturated stations
/// transmits independently with probability `zeta`.
pub fn simulate_slots(
    n: u32,
    zeta: f64,
    p: &MacParams,
    rate: f64,
    slots: u64,
    seed: u64,
) -> SlotStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ts, tc) = (p.success_time(rate), p.collision_time());
    let (mut busy, mut successes) = (0u64, 0u64);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..slots {
        let senders = (0..n).filter(|_| rng.random::<f64>() < zeta).count();
        let len = match senders {
            0 => p.t_slot,
            1 => {
                busy += 1;
                successes += 1;
                ts
            }
            _ => {
                busy += 1;
                tc
            }
        };
        sum += len;
        sum_sq += len * len;
    }
    let mean = sum / slots as f64;
    let var = (sum_sq / slots as f64 - mean * mean).max(0.0);
    SlotStats {
        busy,
        successes,
        mean_len: mean,
        len_sd: var.sqrt(),
        payload_rate: successes as f64 * p.lp / sum,
    }
}

pub fn find(fleet: &[VehicleState], id: VehicleId) -> VehicleState {
    *fleet.iter().find(|v| v.id == id).expect("vehicle in fleet")
}

/// `count` scenarios with a holder, cycling through the density grid.
pub fn holder_scenarios(cfg: &ExperimentConfig, count: usize) -> Vec<(f64, TransferScenario)> {
    let mut out = Vec::new();
    let mut seed = 0u32;
    while out.len() < count {
        for &rho in &cfg.densities {
            for sc in transfer_scenarios(cfg, rho, seed).unwrap() {
                if sc.holder.is_some() && out.len() < count {
                    out.push((rho, sc));
                }
            }
        }
        seed += 1;
    }
    out
}

/// Checks that the plan's fragment ranges tile the file and respect each
/// member's whole-fragment budget.
pub fn check_partition(outcome: &TransferOutcome, file: &FileSpec) -> Result<(), String> {
    let (Some(cluster), Some(plan)) = (&outcome.cluster, &outcome.plan) else {
        return Ok(());
    };
    let mut ranges: Vec<_> = plan
        .assignments
        .iter()
        .map(|a| a.fragments.clone())
        .collect();
    ranges.sort_by_key(|r| r.start);
    let mut next = 0;
    for r in &ranges {
        if r.start != next || r.end <= r.start {
            return Err(format!("gap or overlap at fragment {next}"));
        }
        next = r.end;
    }
    if next != file.n_total() {
        return Err("fragments dropped".into());
    }
    if plan.assignments.iter().map(|a| a.bytes).sum::<u64>() != file.v_file {
        return Err("assigned bytes differ from the file size".into());
    }
    for a in &plan.assignments {
        let slot = cluster
            .schedule
            .iter()
            .find(|s| s.vehicle == a.vehicle && s.start == a.start)
            .ok_or("assignment without a service slot")?;
        if a.fragments.end - a.fragments.start > slot.budget.n_frags {
            return Err("assignment above the member budget".into());
        }
        if a.end > slot.start + slot.budget.delta_t + 1e-9 {
            return Err("fragment would straddle the window".into());
        }
    }
    Ok(())
}

#[derive(Debug, Default)]
pub struct InvariantTally {
    pub clustered: usize,
    pub direct: usize,
}

/// Runs both schemes on one scenario and checks dominance, short-circuit,
/// coverage, minimality and partition.
pub fn check_invariants(
    cfg: &ExperimentConfig,
    rho: f64,
    sc: &TransferScenario,
    file: &FileSpec,
    tally: &mut InvariantTally,
) -> Result<(), String> {
    let models = models_at(cfg, rho, cfg.transfer_range).unwrap();
    let holders = vec![sc.holder.unwrap()];
    let mut prng = ChaCha8Rng::seed_from_u64(sc.protocol_seed);
    let cft = run_cft(
        sc.request,
        &sc.fleet,
        &holders,
        file,
        &models,
        &cfg.policy,
        &mut prng,
    )
    .unwrap();
    let base = run_direct_baseline(sc.request, &sc.fleet, &holders, file, &models).unwrap();

    if cft.bytes_delivered < base.bytes_delivered {
        return Err(format!(
            "cft {} < direct {}",
            cft.bytes_delivered, base.bytes_delivered
        ));
    }
    if cft.succeeded() != (cft.bytes_delivered >= file.v_file) {
        return Err("success flag disagrees with delivered bytes".into());
    }

    let head = find(&sc.fleet, sc.request);
    let resource = find(&sc.fleet, sc.holder.unwrap());
    if direct_feasible(&head, &resource, file, &models).unwrap() {
        if cft.mode != TransferMode::Direct
            || cft.cluster.is_some()
            || cft.plan.is_some()
            || cft.n_c != 0
        {
            return Err("direct-feasible request built a cluster".into());
        }
        tally.direct += 1;
        return Ok(());
    }

    if let Some(cluster) = &cft.cluster {
        tally.clustered += 1;
        let frags: u64 = cluster.schedule.iter().map(|s| s.count).sum();
        if frags < file.n_total() {
            return Err("cluster does not cover the file".into());
        }
        if cluster.n_c != cluster.members.len() {
            return Err("n_c disagrees with the member list".into());
        }
        let shorter = &cluster.members[..cluster.n_c - 1];
        match build_cluster_from(
            &head,
            &resource,
            &sc.fleet,
            shorter,
            file,
            &models,
            &cfg.policy,
        ) {
            Err(CftError::InsufficientCapacity { .. }) => {}
            other => {
                return Err(format!(
                    "cluster of {} is not minimal: {other:?}",
                    cluster.n_c
                ))
            }
        }
        check_partition(&cft, file)?;
    }
    Ok(())
}
