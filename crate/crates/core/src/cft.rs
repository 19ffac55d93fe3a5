//! Cluster-based file transfer.
//!
//! A request vehicle that cannot pull a whole file from a passing resource
//! vehicle recruits same-direction neighbours into a linear cluster. The
//! resource serves members one after another as they come into its range,
//! each for as many whole fragments as its predicted window allows, and the
//! members then relay their fragments back to the request vehicle.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{self, ChannelError, ChannelParams, RateDistanceMode, RateTable};
use crate::connection::{predict_connection_time, time_until_in_range, ConnectionError};
use crate::mac::{self, MacError, MacParams};
use crate::mobility::{distance, VehicleId, VehicleState};

#[derive(Debug, Error, PartialEq)]
pub enum CftError {
    #[error("invalid file: {0}")]
    InvalidFile(String),
    #[error("no vehicle holding the file responded")]
    NoResource,
    #[error("vehicle {0} is not part of the fleet")]
    UnknownVehicle(VehicleId),
    #[error("fleet exhausted after recruiting {recruited} vehicles; {covered} of {needed} bytes covered")]
    InsufficientCapacity {
        recruited: usize,
        covered: u64,
        needed: u64,
    },
    #[error("cluster does not cover the file")]
    Uncovered,
    #[error(transparent)]
    Connection(#[from] ConnectionError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Mac(#[from] MacError),
    #[error("malformed run record: {0}")]
    BadRecord(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileSpec {
    pub v_file: u64,
    /// Fragment size in bytes.
    pub s: u64,
}

impl FileSpec {
    pub fn new(v_file: u64, s: u64) -> Result<Self, CftError> {
        if s == 0 {
            return Err(CftError::InvalidFile(
                "fragment size must be positive".into(),
            ));
        }
        Ok(FileSpec { v_file, s })
    }

    /// `N = ⌈V_file / s⌉`.
    pub fn n_total(&self) -> u64 {
        self.v_file.div_ceil(self.s)
    }

    /// Bytes carried by fragments `range` (0-based); the last one may be short.
    pub fn bytes_in(&self, range: &Range<u64>) -> u64 {
        let end = range.end.min(self.n_total());
        if range.start >= end {
            return 0;
        }
        (end * self.s).min(self.v_file) - range.start * self.s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    /// Predicted connection time in s, infinite for an unbounded link.
    pub delta_t: f64,
    /// E(c) in bit/s.
    pub e_c: f64,
    pub n_frags: u64,
    /// Whole-fragment capacity in bytes.
    pub capacity: u64,
    pub t0: f64,
    pub t_resid: f64,
}

impl LinkBudget {
    /// Airtime of one fragment.
    pub fn fragment_time(&self, file: &FileSpec) -> f64 {
        8.0 * file.s as f64 / self.e_c
    }
}

/// Channel, rate, MAC and range settings shared by every link evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkModels {
    pub channel: ChannelParams,
    pub rates: RateTable,
    pub rate_mode: RateDistanceMode,
    pub mac: MacParams,
    pub range: f64,
    /// Cap on connection windows, e.g. the remaining run time.
    pub horizon: f64,
    fixed_rate: Option<f64>,
    fixed_throughput: Option<f64>,
}

impl LinkModels {
    pub fn new(
        channel: ChannelParams,
        rates: RateTable,
        rate_mode: RateDistanceMode,
        mac: MacParams,
        range: f64,
        horizon: f64,
    ) -> Result<Self, CftError> {
        channel.validate()?;
        mac.validate()?;
        if !(range > 0.0) {
            return Err(ConnectionError::InvalidRange(range).into());
        }
        let fixed_rate = match rate_mode {
            RateDistanceMode::FixedReference(d) => {
                Some(channel::expected_rate(d, &channel, &rates)?)
            }
            _ => None,
        };
        let fixed_throughput = match fixed_rate {
            Some(r) => Some(mac::throughput(mac.rho, &mac, r)?),
            None => None,
        };
        Ok(LinkModels {
            channel,
            rates,
            rate_mode,
            mac,
            range,
            horizon,
            fixed_rate,
            fixed_throughput,
        })
    }

    /// E(c) for the link between `a` and `b` over a window of `window` s.
    pub fn expected_rate(
        &self,
        a: &VehicleState,
        b: &VehicleState,
        window: f64,
    ) -> Result<f64, CftError> {
        if let Some(r) = self.fixed_rate {
            return Ok(r);
        }
        let d = match self.rate_mode {
            RateDistanceMode::WindowMidpoint if window.is_finite() => {
                let half = 0.5 * window;
                distance(&a.advanced(half), &b.advanced(half))
            }
            _ => distance(a, b),
        };
        // co-located vehicles are evaluated one metre apart
        Ok(channel::expected_rate(
            d.max(1.0),
            &self.channel,
            &self.rates,
        )?)
    }

    /// MAC throughput for a link whose PHY rate is `data_rate`.
    pub fn mac_throughput(&self, data_rate: f64) -> Result<f64, CftError> {
        if let (Some(r), Some(thr)) = (self.fixed_rate, self.fixed_throughput) {
            if r == data_rate {
                return Ok(thr);
            }
        }
        Ok(mac::throughput(self.mac.rho, &self.mac, data_rate)?)
    }
}

/// Budget of the link between `i` and the resource `source`.
pub fn link_budget(
    i: &VehicleState,
    source: &VehicleState,
    file: &FileSpec,
    models: &LinkModels,
) -> Result<LinkBudget, CftError> {
    let prediction = predict_connection_time(i, source, models.range)?;
    let delta_t = prediction.capped(models.horizon);
    let e_c = models.expected_rate(i, source, delta_t)?;
    Ok(budget_from(delta_t, e_c, file))
}

/// Whole-fragment budget for a given window and rate.
pub fn budget_from(delta_t: f64, e_c: f64, file: &FileSpec) -> LinkBudget {
    if !(e_c > 0.0) || !(delta_t > 0.0) {
        return LinkBudget {
            delta_t: delta_t.max(0.0),
            e_c: e_c.max(0.0),
            n_frags: 0,
            capacity: 0,
            t0: 0.0,
            t_resid: delta_t.max(0.0),
        };
    }
    let bits = 8.0 * file.s as f64;
    let whole = (e_c * delta_t / bits).floor();
    if !whole.is_finite() || whole >= u64::MAX as f64 {
        return LinkBudget {
            delta_t,
            e_c,
            n_frags: u64::MAX,
            capacity: u64::MAX,
            t0: delta_t,
            t_resid: 0.0,
        };
    }
    let n_frags = whole as u64;
    let t0 = n_frags as f64 * bits / e_c;
    LinkBudget {
        delta_t,
        e_c,
        n_frags,
        capacity: n_frags.saturating_mul(file.s),
        t0,
        t_resid: (delta_t - t0).max(0.0),
    }
}

fn find(fleet: &[VehicleState], id: VehicleId) -> Result<&VehicleState, CftError> {
    fleet
        .iter()
        .find(|v| v.id == id)
        .ok_or(CftError::UnknownVehicle(id))
}

/// Responder with the largest capacity towards `request`; ties go to the
/// nearer vehicle, then to the smaller id.
pub fn select_resource(
    request: &VehicleState,
    responders: &[VehicleState],
    file: &FileSpec,
    models: &LinkModels,
) -> Result<VehicleId, CftError> {
    let mut best: Option<(u64, f64, VehicleId)> = None;
    for r in responders {
        let cap = link_budget(request, r, file, models)?.capacity;
        let d = distance(request, r);
        let better = match best {
            None => true,
            Some((bc, bd, bid)) => cap > bc || (cap == bc && (d < bd || (d == bd && r.id < bid))),
        };
        if better {
            best = Some((cap, d, r.id));
        }
    }
    best.map(|b| b.2).ok_or(CftError::NoResource)
}

pub fn direct_feasible(
    request: &VehicleState,
    resource: &VehicleState,
    file: &FileSpec,
    models: &LinkModels,
) -> Result<bool, CftError> {
    if file.v_file == 0 {
        return Ok(true);
    }
    Ok(link_budget(request, resource, file, models)?.capacity >= file.v_file)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForwardingMode {
    /// Store-and-forward along the recruitment tree.
    Relay,
    /// Store-and-forward where each hop goes to the cluster vehicle in range
    /// that is closest to the head and can take the whole batch.
    Greedy,
    /// Each member sends straight to the head.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolPolicy {
    /// Probability that a reached vehicle agrees to help.
    pub willingness: f64,
    /// Recruit only vehicles travelling the same way as the head.
    pub same_direction_only: bool,
    /// Skip candidates whose predicted path never meets the resource.
    pub require_contact: bool,
    pub max_hops: Option<u32>,
    /// The head downloads its own share when the resource serves it.
    pub head_downloads: bool,
    pub forwarding: ForwardingMode,
}

impl Default for ProtocolPolicy {
    fn default() -> Self {
        ProtocolPolicy {
            willingness: 1.0,
            same_direction_only: true,
            require_contact: true,
            max_hops: None,
            head_downloads: true,
            forwarding: ForwardingMode::Greedy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Recruit {
    pub id: VehicleId,
    /// Vehicle through which the request reached this one.
    pub parent: VehicleId,
    pub hop: u32,
}

/// Expanding-ring recruitment from `head`. Each ring is ordered by distance
/// to the resource, then id.
pub fn recruit<R: Rng + ?Sized>(
    head: &VehicleState,
    resource: &VehicleState,
    fleet: &[VehicleState],
    models: &LinkModels,
    policy: &ProtocolPolicy,
    rng: &mut R,
) -> Vec<Recruit> {
    let range = models.range;
    let mut seen: BTreeSet<VehicleId> = BTreeSet::from([head.id, resource.id]);
    let mut frontier: Vec<&VehicleState> = vec![head];
    let mut out = Vec::new();
    let mut hop = 0;
    while !frontier.is_empty() {
        hop += 1;
        if policy.max_hops.is_some_and(|m| hop > m) {
            break;
        }
        let mut ring: Vec<(&VehicleState, VehicleId)> = Vec::new();
        for v in fleet {
            if seen.contains(&v.id) {
                continue;
            }
            if policy.same_direction_only && v.heading != head.heading {
                continue;
            }
            let parent = frontier
                .iter()
                .filter(|f| distance(f, v) <= range)
                .min_by(|a, b| {
                    distance(a, v)
                        .total_cmp(&distance(b, v))
                        .then(a.id.cmp(&b.id))
                });
            if let Some(p) = parent {
                ring.push((v, p.id));
            }
        }
        ring.sort_by(|a, b| {
            distance(a.0, resource)
                .total_cmp(&distance(b.0, resource))
                .then(a.0.id.cmp(&b.0.id))
        });
        let mut next = Vec::new();
        for (v, parent) in ring {
            seen.insert(v.id);
            if policy.willingness < 1.0 && rng.random::<f64>() >= policy.willingness {
                continue;
            }
            if policy.require_contact && time_until_in_range(v, resource, range).is_none() {
                // still relays the request outward
                next.push(v);
                continue;
            }
            out.push(Recruit {
                id: v.id,
                parent,
                hop,
            });
            next.push(v);
        }
        frontier = next;
    }
    out
}

/// One slot of the resource's service order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceSlot {
    pub vehicle: VehicleId,
    /// Handoff instant, s after the snapshot.
    pub start: f64,
    pub budget: LinkBudget,
    /// Whole fragments sent in this slot.
    pub count: u64,
}

impl ServiceSlot {
    pub fn end(&self, file: &FileSpec) -> f64 {
        if self.count == 0 {
            self.start
        } else {
            self.start + self.count as f64 * self.budget.fragment_time(file)
        }
    }
}

/// Plays out the resource's handoffs on extrapolated trajectories: at each
/// handoff the nearest unserved participant in range is served for as many
/// whole fragments as its remaining window allows.
pub fn service_schedule(
    resource: &VehicleState,
    participants: &[VehicleState],
    file: &FileSpec,
    models: &LinkModels,
) -> Result<Vec<ServiceSlot>, CftError> {
    let mut slots = Vec::new();
    let mut served = vec![false; participants.len()];
    let mut remaining = file.n_total();
    let mut t = 0.0;
    let range = models.range;
    while remaining > 0 && t < models.horizon {
        let s_now = resource.advanced(t);
        let now: Vec<VehicleState> = participants.iter().map(|p| p.advanced(t)).collect();
        let pick = (0..now.len())
            .filter(|&k| !served[k] && distance(&now[k], &s_now) <= range)
            .min_by(|&a, &b| {
                distance(&now[a], &s_now)
                    .total_cmp(&distance(&now[b], &s_now))
                    .then(now[a].id.cmp(&now[b].id))
            });
        let Some(k) = pick else {
            let wait = (0..now.len())
                .filter(|&k| !served[k])
                .filter_map(|k| time_until_in_range(&now[k], &s_now, range))
                .min_by(f64::total_cmp);
            match wait {
                // nudge past the boundary so the entrant tests in range
                Some(w) => t += w.max(0.0) * (1.0 + 1e-12) + 1e-9,
                None => break,
            }
            continue;
        };
        served[k] = true;
        let mut local = models.clone();
        local.horizon = models.horizon - t;
        let budget = link_budget(&now[k], &s_now, file, &local)?;
        let count = budget.n_frags.min(remaining);
        let slot = ServiceSlot {
            vehicle: now[k].id,
            start: t,
            budget,
            count,
        };
        t = slot.end(file);
        remaining -= count;
        slots.push(slot);
    }
    Ok(slots)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub head: VehicleId,
    pub resource: VehicleId,
    /// Recruitment order.
    pub members: Vec<Recruit>,
    /// Resource handoffs in service order; may include the head.
    pub schedule: Vec<ServiceSlot>,
    pub n_c: usize,
}

impl Cluster {
    /// Bytes the schedule can carry: Σ s·count, the covered share of V_data.
    pub fn covered_bytes(&self, file: &FileSpec) -> u64 {
        let frags: u64 = self.schedule.iter().map(|s| s.count).sum();
        file.bytes_in(&(0..frags))
    }

    /// Budgeted capacity of every served vehicle.
    pub fn capacity(&self) -> u64 {
        self.schedule
            .iter()
            .map(|s| s.budget.capacity)
            .fold(0, u64::saturating_add)
    }

    pub fn member_ids(&self) -> Vec<VehicleId> {
        self.members.iter().map(|m| m.id).collect()
    }
}

fn participants_for(
    head: &VehicleState,
    recruits: &[Recruit],
    fleet: &[VehicleState],
    policy: &ProtocolPolicy,
) -> Result<Vec<VehicleState>, CftError> {
    let mut out = Vec::with_capacity(recruits.len() + 1);
    if policy.head_downloads {
        out.push(*head);
    }
    for r in recruits {
        out.push(*find(fleet, r.id)?);
    }
    Ok(out)
}

fn covers(schedule: &[ServiceSlot], file: &FileSpec) -> bool {
    schedule.iter().map(|s| s.count).sum::<u64>() >= file.n_total()
}

/// Smallest prefix of the recruitment order whose schedule covers the file.
pub fn build_cluster<R: Rng + ?Sized>(
    head: &VehicleState,
    resource: &VehicleState,
    fleet: &[VehicleState],
    file: &FileSpec,
    models: &LinkModels,
    policy: &ProtocolPolicy,
    rng: &mut R,
) -> Result<Cluster, CftError> {
    let recruits = recruit(head, resource, fleet, models, policy, rng);
    build_cluster_from(head, resource, fleet, &recruits, file, models, policy)
}

/// As [`build_cluster`] with a given recruitment order.
pub fn build_cluster_from(
    head: &VehicleState,
    resource: &VehicleState,
    fleet: &[VehicleState],
    recruits: &[Recruit],
    file: &FileSpec,
    models: &LinkModels,
    policy: &ProtocolPolicy,
) -> Result<Cluster, CftError> {
    let mut best_frags = 0;
    for n in 1..=recruits.len() {
        let participants = participants_for(head, &recruits[..n], fleet, policy)?;
        let schedule = service_schedule(resource, &participants, file, models)?;
        if covers(&schedule, file) {
            return Ok(Cluster {
                head: head.id,
                resource: resource.id,
                members: recruits[..n].to_vec(),
                schedule,
                n_c: n,
            });
        }
        best_frags = best_frags.max(schedule.iter().map(|s| s.count).sum::<u64>());
    }
    Err(CftError::InsufficientCapacity {
        recruited: recruits.len(),
        covered: file.bytes_in(&(0..best_frags)),
        needed: file.v_file,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub vehicle: VehicleId,
    /// 0-based fragment indices.
    pub fragments: Range<u64>,
    pub bytes: u64,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransferPlan {
    pub assignments: Vec<Assignment>,
}

impl TransferPlan {
    pub fn assigned_to(&self, id: VehicleId) -> u64 {
        self.assignments
            .iter()
            .filter(|a| a.vehicle == id)
            .map(|a| a.bytes)
            .sum()
    }

    pub fn download_end(&self) -> f64 {
        self.assignments.iter().map(|a| a.end).fold(0.0, f64::max)
    }
}

/// Contiguous fragment ranges in service order, each capped at the
/// vehicle's whole-fragment budget.
pub fn assign_fragments(cluster: &Cluster, file: &FileSpec) -> Result<TransferPlan, CftError> {
    let n = file.n_total();
    let mut next = 0;
    let mut assignments = Vec::new();
    for slot in &cluster.schedule {
        if next >= n {
            break;
        }
        let take = slot.budget.n_frags.min(n - next);
        if take == 0 {
            continue;
        }
        let fragments = next..next + take;
        next += take;
        let tau = slot.budget.fragment_time(file);
        assignments.push(Assignment {
            vehicle: slot.vehicle,
            bytes: file.bytes_in(&fragments),
            fragments,
            start: slot.start,
            end: slot.start + take as f64 * tau,
        });
    }
    if next < n {
        return Err(CftError::Uncovered);
    }
    Ok(TransferPlan { assignments })
}

/// Whether `member` can hand `assigned_bytes` to `head` before their link
/// breaks: ΔT·R_thr/8 ≥ bytes.
pub fn forwarding_feasible(
    member: &VehicleState,
    head: &VehicleState,
    assigned_bytes: u64,
    models: &LinkModels,
) -> Result<bool, CftError> {
    if assigned_bytes == 0 {
        return Ok(true);
    }
    let prediction = match predict_connection_time(member, head, models.range) {
        Ok(p) => p,
        Err(ConnectionError::OutOfRange { .. }) => return Ok(false),
        Err(e) => return Err(e.into()),
    };
    let Some(dt) = prediction.finite() else {
        return Ok(true);
    };
    let e_c = models.expected_rate(member, head, dt)?;
    let r_thr = models.mac_throughput(e_c)?;
    Ok(dt * r_thr / 8.0 >= assigned_bytes as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMode {
    Direct,
    Clustered,
    Failed,
}

impl fmt::Display for TransferMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransferMode::Direct => "direct",
            TransferMode::Clustered => "clustered",
            TransferMode::Failed => "failed",
        })
    }
}

impl FromStr for TransferMode {
    type Err = CftError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "direct" => Ok(TransferMode::Direct),
            "clustered" => Ok(TransferMode::Clustered),
            "failed" => Ok(TransferMode::Failed),
            other => Err(CftError::BadRecord(format!("unknown mode {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Timeline {
    /// Last fragment leaves the resource.
    pub download_s: f64,
    /// Last forwarded byte reaches the head.
    pub forwarding_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferOutcome {
    pub mode: TransferMode,
    pub bytes_delivered: u64,
    pub cluster: Option<Cluster>,
    pub plan: Option<TransferPlan>,
    pub timeline: Timeline,
    /// Vehicles recruited; zero when no cluster was needed.
    pub n_c: usize,
}

impl TransferOutcome {
    fn failed(n_c: usize) -> Self {
        TransferOutcome {
            mode: TransferMode::Failed,
            bytes_delivered: 0,
            cluster: None,
            plan: None,
            timeline: Timeline::default(),
            n_c,
        }
    }

    pub fn succeeded(&self) -> bool {
        self.mode != TransferMode::Failed
    }
}

fn responders(
    request: &VehicleState,
    fleet: &[VehicleState],
    holders: &[VehicleId],
    range: f64,
) -> Vec<VehicleState> {
    fleet
        .iter()
        .filter(|v| v.id != request.id && holders.contains(&v.id) && distance(v, request) <= range)
        .copied()
        .collect()
}

fn direct_outcome(budget: &LinkBudget, file: &FileSpec) -> TransferOutcome {
    let t = if file.v_file == 0 {
        0.0
    } else {
        file.n_total() as f64 * budget.fragment_time(file)
    };
    TransferOutcome {
        mode: TransferMode::Direct,
        bytes_delivered: file.v_file,
        cluster: None,
        plan: None,
        timeline: Timeline {
            download_s: t,
            forwarding_s: t,
        },
        n_c: 0,
    }
}

/// Moves every member's fragments to the head and returns the bytes that
/// arrive together with the time the last of them does.
pub fn forward_to_head(
    head: &VehicleState,
    cluster: &Cluster,
    plan: &TransferPlan,
    fleet: &[VehicleState],
    models: &LinkModels,
    mode: ForwardingMode,
) -> Result<(u64, f64), CftError> {
    let mut delivered = 0u64;
    let mut finish = 0.0f64;
    // load and ready time per vehicle
    let mut load: HashMap<VehicleId, u64> = HashMap::new();
    let mut ready: HashMap<VehicleId, f64> = HashMap::new();
    for a in &plan.assignments {
        if a.vehicle == head.id {
            delivered += a.bytes;
            finish = finish.max(a.end);
        } else {
            *load.entry(a.vehicle).or_default() += a.bytes;
            let r = ready.entry(a.vehicle).or_insert(0.0);
            *r = r.max(a.end);
        }
    }
    if mode == ForwardingMode::Greedy {
        return greedy_forward(head, cluster, load, ready, delivered, finish, fleet, models);
    }
    let parent_of: HashMap<VehicleId, VehicleId> =
        cluster.members.iter().map(|m| (m.id, m.parent)).collect();
    // deepest hops first so children hand over before their parents move on
    let mut order: Vec<&Recruit> = cluster.members.iter().collect();
    order.sort_by(|a, b| b.hop.cmp(&a.hop).then(a.id.cmp(&b.id)));
    for m in order {
        let bytes = load.get(&m.id).copied().unwrap_or(0);
        if bytes == 0 {
            continue;
        }
        let t = ready.get(&m.id).copied().unwrap_or(0.0);
        let target_id = match mode {
            ForwardingMode::Relay => parent_of[&m.id],
            ForwardingMode::Direct | ForwardingMode::Greedy => head.id,
        };
        let me = find(fleet, m.id)?.advanced(t);
        let target = if target_id == head.id {
            head.advanced(t)
        } else {
            find(fleet, target_id)?.advanced(t)
        };
        if !forwarding_feasible(&me, &target, bytes, models)? {
            continue;
        }
        let e_c = models.expected_rate(&me, &target, 0.0)?;
        let r_thr = models.mac_throughput(e_c)?;
        let done = t + 8.0 * bytes as f64 / r_thr;
        if target_id == head.id {
            delivered += bytes;
            finish = finish.max(done);
        } else {
            *load.entry(target_id).or_default() += bytes;
            let r = ready.entry(target_id).or_insert(0.0);
            *r = r.max(done);
        }
    }
    Ok((delivered, finish))
}

/// Greedy geographic store-and-forward. Batches leave in order of readiness;
/// a vehicle sends or receives one batch at a time.
#[allow(clippy::too_many_arguments)]
fn greedy_forward(
    head: &VehicleState,
    cluster: &Cluster,
    load: HashMap<VehicleId, u64>,
    ready: HashMap<VehicleId, f64>,
    mut delivered: u64,
    mut finish: f64,
    fleet: &[VehicleState],
    models: &LinkModels,
) -> Result<(u64, f64), CftError> {
    let mut nodes: Vec<VehicleState> = vec![*head];
    for m in &cluster.members {
        if m.id != head.id {
            nodes.push(*find(fleet, m.id)?);
        }
    }
    let mut batches: Vec<(f64, VehicleId, u64)> = load
        .iter()
        .filter(|(_, b)| **b > 0)
        .map(|(id, b)| (ready.get(id).copied().unwrap_or(0.0), *id, *b))
        .collect();
    batches.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut busy: HashMap<VehicleId, f64> = HashMap::new();
    let busy_at =
        |busy: &HashMap<VehicleId, f64>, id: VehicleId| busy.get(&id).copied().unwrap_or(0.0);
    for (ready_t, origin, bytes) in batches {
        let mut cur = origin;
        let mut t = ready_t;
        let mut visited = BTreeSet::from([origin]);
        while cur != head.id {
            let start = t.max(busy_at(&busy, cur));
            let me = find(fleet, cur)?.advanced(start);
            let goal = head.advanced(start);
            let own = distance(&me, &goal);
            let mut best: Option<(f64, VehicleId, VehicleState)> = None;
            for n in &nodes {
                if visited.contains(&n.id) {
                    continue;
                }
                let at = n.advanced(start.max(busy_at(&busy, n.id)));
                let progress = distance(&n.advanced(start), &goal);
                if progress >= own || distance(&me, &n.advanced(start)) > models.range {
                    continue;
                }
                let me_then = find(fleet, cur)?.advanced(start.max(busy_at(&busy, n.id)));
                if !forwarding_feasible(&me_then, &at, bytes, models)? {
                    continue;
                }
                let key = (progress, n.id);
                if best.as_ref().is_none_or(|b| (key.0, key.1) < (b.0, b.1)) {
                    best = Some((progress, n.id, at));
                }
            }
            let Some((_, next, target)) = best else {
                break;
            };
            let begin = start.max(busy_at(&busy, next));
            let me_then = find(fleet, cur)?.advanced(begin);
            let e_c = models.expected_rate(&me_then, &target, 0.0)?;
            let done = begin + 8.0 * bytes as f64 / models.mac_throughput(e_c)?;
            busy.insert(cur, done);
            busy.insert(next, done);
            visited.insert(next);
            cur = next;
            t = done;
        }
        if cur == head.id {
            delivered += bytes;
            finish = finish.max(t);
        }
    }
    Ok((delivered, finish))
}

/// The full protocol for one request.
#[allow(clippy::too_many_arguments)]
pub fn run_cft<R: Rng + ?Sized>(
    request: VehicleId,
    fleet: &[VehicleState],
    holders: &[VehicleId],
    file: &FileSpec,
    models: &LinkModels,
    policy: &ProtocolPolicy,
    rng: &mut R,
) -> Result<TransferOutcome, CftError> {
    let head = *find(fleet, request)?;
    let candidates = responders(&head, fleet, holders, models.range);
    if candidates.is_empty() {
        return Ok(TransferOutcome::failed(0));
    }
    let resource_id = select_resource(&head, &candidates, file, models)?;
    let resource = *find(fleet, resource_id)?;
    let direct = link_budget(&head, &resource, file, models)?;
    if file.v_file == 0 || direct.capacity >= file.v_file {
        return Ok(direct_outcome(&direct, file));
    }
    let cluster = match build_cluster(&head, &resource, fleet, file, models, policy, rng) {
        Ok(c) => c,
        Err(CftError::InsufficientCapacity { recruited, .. }) => {
            return Ok(TransferOutcome::failed(recruited))
        }
        Err(e) => return Err(e),
    };
    let plan = assign_fragments(&cluster, file)?;
    let (delivered, finish) =
        forward_to_head(&head, &cluster, &plan, fleet, models, policy.forwarding)?;
    let mode = if delivered >= file.v_file {
        TransferMode::Clustered
    } else {
        TransferMode::Failed
    };
    Ok(TransferOutcome {
        mode,
        bytes_delivered: delivered,
        n_c: cluster.n_c,
        timeline: Timeline {
            download_s: plan.download_end(),
            forwarding_s: finish,
        },
        cluster: Some(cluster),
        plan: Some(plan),
    })
}

/// Direct transfer only; a file that cannot finish over one link is not
/// attempted.
pub fn run_direct_baseline(
    request: VehicleId,
    fleet: &[VehicleState],
    holders: &[VehicleId],
    file: &FileSpec,
    models: &LinkModels,
) -> Result<TransferOutcome, CftError> {
    let head = *find(fleet, request)?;
    let candidates = responders(&head, fleet, holders, models.range);
    if candidates.is_empty() {
        return Ok(TransferOutcome::failed(0));
    }
    let resource_id = select_resource(&head, &candidates, file, models)?;
    let resource = *find(fleet, resource_id)?;
    let direct = link_budget(&head, &resource, file, models)?;
    if file.v_file == 0 || direct.capacity >= file.v_file {
        Ok(direct_outcome(&direct, file))
    } else {
        Ok(TransferOutcome::failed(0))
    }
}

/// One line per run: `seed=<u64> mode=<mode> n_c=<n> bytes=<b> download_s=<t> forwarding_s=<t>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub mode: TransferMode,
    pub n_c: usize,
    pub bytes: u64,
    pub download_s: f64,
    pub forwarding_s: f64,
}

impl RunRecord {
    pub fn new(seed: u64, outcome: &TransferOutcome) -> Self {
        RunRecord {
            seed,
            mode: outcome.mode,
            n_c: outcome.n_c,
            bytes: outcome.bytes_delivered,
            download_s: outcome.timeline.download_s,
            forwarding_s: outcome.timeline.forwarding_s,
        }
    }
}

impl fmt::Display for RunRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "seed={} mode={} n_c={} bytes={} download_s={:?} forwarding_s={:?}",
            self.seed, self.mode, self.n_c, self.bytes, self.download_s, self.forwarding_s
        )
    }
}

impl FromStr for RunRecord {
    type Err = CftError;
    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let fields: BTreeMap<&str, &str> = line
            .split_whitespace()
            .map(|kv| {
                kv.split_once('=')
                    .ok_or_else(|| CftError::BadRecord(kv.to_string()))
            })
            .collect::<Result<_, _>>()?;
        fn get<'a>(m: &BTreeMap<&str, &'a str>, k: &str) -> Result<&'a str, CftError> {
            m.get(k)
                .copied()
                .ok_or_else(|| CftError::BadRecord(format!("missing {k}")))
        }
        let bad = |k: &str| CftError::BadRecord(format!("bad {k}"));
        Ok(RunRecord {
            seed: get(&fields, "seed")?.parse().map_err(|_| bad("seed"))?,
            mode: get(&fields, "mode")?.parse()?,
            n_c: get(&fields, "n_c")?.parse().map_err(|_| bad("n_c"))?,
            bytes: get(&fields, "bytes")?.parse().map_err(|_| bad("bytes"))?,
            download_s: get(&fields, "download_s")?
                .parse()
                .map_err(|_| bad("download_s"))?,
            forwarding_s: get(&fields, "forwarding_s")?
                .parse()
                .map_err(|_| bad("forwarding_s"))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::MuProfile;
    use crate::mobility::Heading;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn car(id: u32, heading: Heading, x: f64, lane: u32, speed: f64) -> VehicleState {
        VehicleState {
            id: VehicleId(id),
            lane,
            heading,
            x,
            y: lane as f64 * 5.0 + 2.5,
            speed,
        }
    }

    /// Models whose E(c) is exactly 8 Mbit/s: every threshold is zero and
    /// the top rate is 8 Mbit/s.
    pub(crate) fn flat_models(range: f64) -> LinkModels {
        let channel = ChannelParams {
            pt: 0.2,
            gt: 1.0,
            gr: 1.0,
            ht: 1.0,
            hr: 1.0,
            loss: 1.0,
            alpha: 4.0,
            nr: 2.512e-13,
            mu_profile: MuProfile::highway_default(),
        };
        let rates = RateTable::new(vec![1e6, 8e6], vec![0.0, 0.0]).unwrap();
        let mac = MacParams {
            w: 32.0,
            lp: 4.2 * 1024.0 * 8.0,
            t_slot: 13e-6,
            t_rts: 53e-6,
            t_cts: 37e-6,
            t_difs: 32e-6,
            t_sifs: 53e-6,
            t_ack: 37e-6,
            rcs: 2.0 * range,
            rho: 0.005,
        };
        LinkModels::new(
            channel,
            rates,
            RateDistanceMode::PredictionTime,
            mac,
            range,
            f64::INFINITY,
        )
        .unwrap()
    }

    const MB: u64 = 1_000_000;

    #[test]
    fn budget_examples() {
        let file = FileSpec::new(100 * MB, MB).unwrap();
        let b = budget_from(10.0, 8e6, &file);
        assert_eq!(b.n_frags, 10);
        assert_eq!(b.capacity, 10 * MB);
        assert_eq!(b.t_resid, 0.0);
        let b = budget_from(10.5, 8e6, &file);
        assert_eq!(b.n_frags, 10);
        assert!((b.t_resid - 0.5).abs() < 1e-12);
    }

    #[test]
    fn file_fragments() {
        let f = FileSpec::new(2_500_000, MB).unwrap();
        assert_eq!(f.n_total(), 3);
        assert_eq!(f.bytes_in(&(0..3)), 2_500_000);
        assert_eq!(f.bytes_in(&(2..3)), 500_000);
        assert_eq!(f.bytes_in(&(0..1)), MB);
        assert!(FileSpec::new(10, 0).is_err());
        assert_eq!(FileSpec::new(0, MB).unwrap().n_total(), 0);
    }

    #[test]
    fn link_budget_uses_connection_time() {
        let m = flat_models(250.0);
        // head-on from the range edge at 25 m/s each: 10 s window
        let a = car(0, Heading::East, 0.0, 0, 25.0);
        let s = car(1, Heading::West, 250.0, 0, 25.0);
        let file = FileSpec::new(100 * MB, MB).unwrap();
        let b = link_budget(&a, &s, &file, &m).unwrap();
        assert!((b.delta_t - 10.0).abs() < 1e-9);
        assert_eq!(b.e_c, 8e6);
        assert!(b.n_frags == 10 || b.n_frags == 9);
        let far = car(2, Heading::West, 400.0, 0, 25.0);
        assert!(link_budget(&a, &far, &file, &m).is_err());
    }

    #[test]
    fn resource_selection() {
        let m = flat_models(250.0);
        let file = FileSpec::new(10 * MB, MB).unwrap();
        let r = car(0, Heading::East, 0.0, 0, 25.0);
        let lone = car(1, Heading::West, 100.0, 2, 25.0);
        assert_eq!(
            select_resource(&r, &[lone], &file, &m).unwrap(),
            VehicleId(1)
        );
        let twin = car(2, Heading::East, 200.0, 1, 25.0);
        assert_eq!(
            select_resource(&r, &[lone, twin], &file, &m).unwrap(),
            VehicleId(2)
        );
        assert_eq!(
            select_resource(&r, &[], &file, &m),
            Err(CftError::NoResource)
        );
    }

    #[test]
    fn direct_feasibility_edges() {
        let m = flat_models(250.0);
        let r = car(0, Heading::East, 0.0, 0, 25.0);
        let s = car(1, Heading::West, 200.0, 2, 25.0);
        let empty = FileSpec::new(0, MB).unwrap();
        assert!(direct_feasible(&r, &s, &empty, &m).unwrap());
        let twin = car(2, Heading::East, 100.0, 1, 25.0);
        let huge = FileSpec::new(u64::MAX / 2, MB).unwrap();
        assert!(direct_feasible(&r, &twin, &huge, &m).unwrap());
        let cap = link_budget(&r, &s, &empty, &m).unwrap().capacity;
        assert!(direct_feasible(&r, &s, &FileSpec::new(cap, MB).unwrap(), &m).unwrap());
        assert!(!direct_feasible(&r, &s, &FileSpec::new(cap + 1, MB).unwrap(), &m).unwrap());
    }

    #[test]
    fn forwarding_edges() {
        let m = flat_models(250.0);
        let a = car(0, Heading::East, 0.0, 0, 25.0);
        let b = car(1, Heading::East, 100.0, 1, 25.0);
        assert!(forwarding_feasible(&a, &b, 0, &m).unwrap());
        assert!(forwarding_feasible(&a, &b, u64::MAX, &m).unwrap());
        let far = car(2, Heading::East, 400.0, 1, 25.0);
        assert!(!forwarding_feasible(&a, &far, 1, &m).unwrap());
        let c = car(3, Heading::East, 0.0, 1, 35.0);
        // exact byte boundary of the window
        let dt = predict_connection_time(&a, &c, 250.0)
            .unwrap()
            .finite()
            .unwrap();
        let r_thr = m.mac_throughput(8e6).unwrap();
        let edge = (dt * r_thr / 8.0).floor() as u64;
        assert!(forwarding_feasible(&a, &c, edge, &m).unwrap());
        assert!(!forwarding_feasible(&a, &c, edge + 2, &m).unwrap());
    }

    /// Head eastbound, resource westbound just ahead, helpers behind the head.
    fn platoon(helpers: u32, spacing: f64) -> Vec<VehicleState> {
        let mut fleet = vec![
            car(0, Heading::East, 0.0, 0, 25.0),
            car(1, Heading::West, 200.0, 2, 25.0),
        ];
        for k in 0..helpers {
            fleet.push(car(
                10 + k,
                Heading::East,
                -spacing * (k + 1) as f64,
                k % 2,
                25.0,
            ));
        }
        fleet
    }

    #[test]
    fn recruitment_rings_and_order() {
        let m = flat_models(250.0);
        let fleet = platoon(4, 200.0);
        let policy = ProtocolPolicy::default();
        let rec = recruit(
            &fleet[0],
            &fleet[1],
            &fleet,
            &m,
            &policy,
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        let ids: Vec<u32> = rec.iter().map(|r| r.id.0).collect();
        assert_eq!(ids, vec![10, 11, 12, 13]);
        assert_eq!(rec[0].parent, VehicleId(0));
        assert_eq!(rec[1].parent, VehicleId(10));
        assert_eq!(
            rec.iter().map(|r| r.hop).collect::<Vec<_>>(),
            vec![1, 2, 3, 4]
        );
        let capped = ProtocolPolicy {
            max_hops: Some(2),
            ..policy
        };
        assert_eq!(
            recruit(
                &fleet[0],
                &fleet[1],
                &fleet,
                &m,
                &capped,
                &mut ChaCha8Rng::seed_from_u64(0)
            )
            .len(),
            2
        );
    }

    #[test]
    fn single_member_cluster() {
        let m = flat_models(250.0);
        let fleet = platoon(3, 200.0);
        let policy = ProtocolPolicy::default();
        let file = FileSpec::new(12 * MB, MB).unwrap();
        let direct = link_budget(&fleet[0], &fleet[1], &file, &m).unwrap();
        assert!(direct.capacity < file.v_file);
        let c = build_cluster(
            &fleet[0],
            &fleet[1],
            &fleet,
            &file,
            &m,
            &policy,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(c.n_c, 1);
        let plan = assign_fragments(&c, &file).unwrap();
        assert_eq!(plan.assignments[0].vehicle, VehicleId(0));
        assert_eq!(
            plan.assignments.iter().map(|a| a.bytes).sum::<u64>(),
            file.v_file
        );
    }

    #[test]
    fn contiguous_split() {
        let file = FileSpec::new(8 * MB, MB).unwrap();
        let slot = |id, n: u64, start| ServiceSlot {
            vehicle: VehicleId(id),
            start,
            budget: budget_from(n as f64 + 0.5, 8e6, &file),
            count: n,
        };
        let cluster = Cluster {
            head: VehicleId(0),
            resource: VehicleId(1),
            members: vec![],
            schedule: vec![slot(5, 3, 0.0), slot(6, 5, 3.0)],
            n_c: 2,
        };
        let plan = assign_fragments(&cluster, &file).unwrap();
        assert_eq!(plan.assignments[0].fragments, 0..3);
        assert_eq!(plan.assignments[1].fragments, 3..8);
        assert_eq!(plan.assignments[1].end, 8.0);
    }

    #[test]
    fn unbounded_resource_goes_direct() {
        let m = flat_models(250.0);
        let fleet = vec![
            car(0, Heading::East, 0.0, 0, 25.0),
            car(1, Heading::East, 100.0, 1, 25.0),
        ];
        let file = FileSpec::new(500 * MB, MB).unwrap();
        let out = run_cft(
            VehicleId(0),
            &fleet,
            &[VehicleId(1)],
            &file,
            &m,
            &ProtocolPolicy::default(),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(out.mode, TransferMode::Direct);
        assert_eq!(out.bytes_delivered, file.v_file);
        assert!(out.cluster.is_none());
    }

    #[test]
    fn nobody_holds_the_file() {
        let m = flat_models(250.0);
        let fleet = platoon(2, 100.0);
        let file = FileSpec::new(5 * MB, MB).unwrap();
        let out = run_cft(
            VehicleId(0),
            &fleet,
            &[],
            &file,
            &m,
            &ProtocolPolicy::default(),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(out.mode, TransferMode::Failed);
        assert_eq!(out.bytes_delivered, 0);
        let base = run_direct_baseline(VehicleId(0), &fleet, &[], &file, &m).unwrap();
        assert_eq!(base.bytes_delivered, 0);
    }

    #[test]
    fn baseline_discards_oversized_files() {
        let m = flat_models(250.0);
        let fleet = platoon(0, 100.0);
        let small = FileSpec::new(2 * MB, MB).unwrap();
        let big = FileSpec::new(200 * MB, MB).unwrap();
        assert_eq!(
            run_direct_baseline(VehicleId(0), &fleet, &[VehicleId(1)], &small, &m)
                .unwrap()
                .mode,
            TransferMode::Direct
        );
        let out = run_direct_baseline(VehicleId(0), &fleet, &[VehicleId(1)], &big, &m).unwrap();
        assert_eq!(out.mode, TransferMode::Failed);
        assert_eq!(out.bytes_delivered, 0);
    }

    #[test]
    fn record_round_trip() {
        let rec = RunRecord {
            seed: 7,
            mode: TransferMode::Clustered,
            n_c: 4,
            bytes: 123,
            download_s: 12.5,
            forwarding_s: 0.1 + 0.2,
        };
        let line = rec.to_string();
        assert_eq!(line.parse::<RunRecord>().unwrap(), rec);
        assert!("seed=1 mode=nope".parse::<RunRecord>().is_err());
    }
}
