//! Schedule validation, quality metrics, and a conservative worst-case
//! delay bound for Rate-Constrained traffic around a TT schedule.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::model::{transmission_time, Instance, LinkId, MessageId, Nanos, VirtualLinkSpec};
use crate::routing::{RouteTree, RoutingError, RoutingTable};
use crate::scheduler::TtSchedule;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("a {frame_ns} ns frame never fits between TT transmissions on link {link}; blocking is unbounded")]
    UnboundedBlocking { link: LinkId, frame_ns: Nanos },
    #[error("virtual link {id}: {reason}")]
    VirtualLink { id: u32, reason: String },
    #[error(transparent)]
    Routing(#[from] RoutingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintClass {
    Completeness,
    ContentionFree,
    Precedence,
    Release,
    Deadline,
    InCycleFit,
    SyncWindow,
    StrictPeriodicity,
}

impl ConstraintClass {
    pub const ALL: [ConstraintClass; 8] = [
        ConstraintClass::Completeness,
        ConstraintClass::ContentionFree,
        ConstraintClass::Precedence,
        ConstraintClass::Release,
        ConstraintClass::Deadline,
        ConstraintClass::InCycleFit,
        ConstraintClass::SyncWindow,
        ConstraintClass::StrictPeriodicity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ConstraintClass::Completeness => "completeness",
            ConstraintClass::ContentionFree => "contention_free",
            ConstraintClass::Precedence => "precedence",
            ConstraintClass::Release => "release",
            ConstraintClass::Deadline => "deadline",
            ConstraintClass::InCycleFit => "in_cycle_fit",
            ConstraintClass::SyncWindow => "sync_window",
            ConstraintClass::StrictPeriodicity => "strict_periodicity",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub class: ConstraintClass,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<MessageId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub link: Option<LinkId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cycle: Option<u64>,
    pub detail: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:", self.class.name())?;
        if let Some(m) = self.message {
            write!(f, " message {m}")?;
        }
        if let Some(l) = self.link {
            write!(f, " link {l}")?;
        }
        if let Some(c) = self.cycle {
            write!(f, " cycle {c}")?;
        }
        write!(f, " {}", self.detail)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClassResult {
    pub class: ConstraintClass,
    pub passed: bool,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub classes: Vec<ClassResult>,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    fn from_violations(violations: Vec<Violation>) -> Self {
        let classes = ConstraintClass::ALL
            .iter()
            .map(|&class| {
                let n = violations.iter().filter(|v| v.class == class).count();
                ClassResult { class, passed: n == 0, violations: n }
            })
            .collect();
        Self { classes, violations }
    }

    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, class: ConstraintClass) -> usize {
        self.violations.iter().filter(|v| v.class == class).count()
    }
}

/// Check a schedule against every constraint class by expanding each
/// message instance into its occurrences over the cluster cycle.
pub fn validate(schedule: &TtSchedule, instance: &Instance, trees: &[RouteTree]) -> ValidationReport {
    let cfg = &instance.config;
    let ic = cfg.integration_cycle_ns;
    let cycles = cfg.cycles_per_cluster();
    let tau = cfg.switch_delay_ns;
    let mut out = Vec::new();
    let mut push = |class, message, link, cycle, detail: String| {
        out.push(Violation { class, message, link, cycle, detail });
    };

    if schedule.integration_cycle_ns != ic || schedule.cluster_cycle_ns != cfg.cluster_cycle_ns {
        push(ConstraintClass::Completeness, None, None, None, "cycle structure differs from the instance".into());
    }

    let mut by_message: BTreeMap<MessageId, Vec<&crate::scheduler::Placement>> = BTreeMap::new();
    for p in &schedule.placements {
        by_message.entry(p.message).or_default().push(p);
    }
    for (&m, _) in by_message.iter() {
        if instance.message(m).is_none() {
            push(ConstraintClass::Completeness, Some(m), None, None, "placement of an unknown message".into());
        }
    }

    // per link: absolute occurrence intervals over the cluster cycle
    let mut occupancy: Vec<Vec<(Nanos, Nanos, MessageId)>> = vec![Vec::new(); instance.topology.links().len()];

    for (m, tree) in instance.messages.iter().zip(trees) {
        let id = Some(m.id);
        let period_cycles = m.period_ns / ic;
        let Some(first) = schedule.first_cycle(m.id) else {
            push(ConstraintClass::Completeness, id, None, None, "no first cycle assigned".into());
            continue;
        };
        if first >= period_cycles {
            push(
                ConstraintClass::StrictPeriodicity,
                id,
                None,
                Some(first),
                format!("first cycle {first} lies outside the first period of {period_cycles} cycles"),
            );
            continue;
        }
        let placed = by_message.get(&m.id).map(Vec::as_slice).unwrap_or(&[]);
        for p in placed {
            if tree.position(p.link).is_none() {
                push(ConstraintClass::Completeness, id, Some(p.link), None, "link is not on the route".into());
            }
        }
        let mut offsets: Vec<Option<(Nanos, Nanos)>> = Vec::with_capacity(tree.len());
        for &link in &tree.links {
            let matches: Vec<_> = placed.iter().filter(|p| p.link == link).collect();
            let p = match matches.as_slice() {
                [] => {
                    push(ConstraintClass::Completeness, id, Some(link), None, "instance not scheduled".into());
                    offsets.push(None);
                    continue;
                }
                [p] => p,
                _ => {
                    push(
                        ConstraintClass::StrictPeriodicity,
                        id,
                        Some(link),
                        None,
                        "more than one offset for one instance".into(),
                    );
                    matches[0]
                }
            };
            let bw = instance.topology.link(link).bandwidth_bps;
            let c = transmission_time(m.length_bits, bw).unwrap_or(Nanos::MAX);
            if p.duration_ns != c {
                push(
                    ConstraintClass::Completeness,
                    id,
                    Some(link),
                    None,
                    format!("duration {} ns differs from the transmission time {c} ns", p.duration_ns),
                );
            }
            if p.offset_ns < cfg.sync_window_ns {
                push(
                    ConstraintClass::SyncWindow,
                    id,
                    Some(link),
                    Some(first),
                    format!("offset {} ns lies inside the sync window", p.offset_ns),
                );
            }
            if p.offset_ns + c > ic {
                push(
                    ConstraintClass::InCycleFit,
                    id,
                    Some(link),
                    Some(first),
                    format!("ends at {} ns, after the cycle end", p.offset_ns + c),
                );
            }
            let mut cycle = first;
            while cycle < cycles {
                let start = cycle * ic + p.offset_ns;
                occupancy[link].push((start, start + c, m.id));
                cycle += period_cycles;
            }
            offsets.push(Some((p.offset_ns, c)));
        }

        let base = first * ic;
        for (k, parent) in tree.parents.iter().enumerate() {
            let Some((phi, _)) = offsets[k] else { continue };
            match parent {
                None => {
                    if base + phi < m.release_ns {
                        push(
                            ConstraintClass::Release,
                            id,
                            Some(tree.links[k]),
                            Some(first),
                            format!("starts at {} ns, before the release {} ns", base + phi, m.release_ns),
                        );
                    }
                }
                Some(p) => {
                    let Some((pphi, pc)) = offsets[*p] else { continue };
                    if phi < pphi + pc + tau {
                        push(
                            ConstraintClass::Precedence,
                            id,
                            Some(tree.links[k]),
                            Some(first),
                            format!("starts {} ns after its parent, needs {}", phi as i128 - pphi as i128, pc + tau),
                        );
                    }
                }
            }
        }
        for &(receiver, leaf) in &tree.leaves {
            let Some((phi, c)) = offsets[leaf] else { continue };
            if base + phi + c > m.deadline_ns {
                push(
                    ConstraintClass::Deadline,
                    id,
                    Some(tree.links[leaf]),
                    Some(first),
                    format!("reaches node {receiver} at {} ns, after the deadline {} ns", base + phi + c, m.deadline_ns),
                );
            }
        }
    }

    for (link, list) in occupancy.iter_mut().enumerate() {
        list.sort_unstable();
        let mut reach: Option<(Nanos, MessageId)> = None;
        for &(s, e, m) in list.iter() {
            if let Some((end, other)) = reach {
                if s < end {
                    push(
                        ConstraintClass::ContentionFree,
                        Some(m),
                        Some(link),
                        Some(s / ic),
                        format!("overlaps message {other}"),
                    );
                }
                if e > end {
                    reach = Some((e, m));
                }
            } else {
                reach = Some((e, m));
            }
        }
    }

    ValidationReport::from_violations(out)
}

/// TT busy intervals of one link within each of its integration cycles,
/// indexed by cycle.
fn busy_per_cycle(schedule: &TtSchedule, instance: &Instance, link: LinkId) -> Vec<Vec<(Nanos, Nanos)>> {
    let ic = schedule.integration_cycle_ns;
    let cycles = (schedule.cluster_cycle_ns / ic.max(1)).max(1);
    let mut out = vec![Vec::new(); cycles as usize];
    for p in schedule.placements.iter().filter(|p| p.link == link) {
        let (Some(first), Some(m)) = (schedule.first_cycle(p.message), instance.message(p.message)) else {
            continue;
        };
        let step = (m.period_ns / ic).max(1);
        let mut c = first;
        while c < cycles {
            out[c as usize].push((p.offset_ns, p.offset_ns + p.duration_ns));
            c += step;
        }
    }
    for list in &mut out {
        list.sort_unstable();
    }
    out
}

/// Shortest, over all links and integration cycles, of the longest TT-free
/// stretch between the end of the sync window and the end of the cycle.
pub fn critical_gap(schedule: &TtSchedule, instance: &Instance) -> Nanos {
    let ic = schedule.integration_cycle_ns;
    let sync = schedule.sync_window_ns;
    let mut best = ic.saturating_sub(sync);
    for link in 0..instance.topology.links().len() {
        for list in busy_per_cycle(schedule, instance, link) {
            if list.is_empty() {
                continue;
            }
            let mut longest = 0;
            let mut free_from = sync;
            for (s, e) in list {
                longest = longest.max(s.saturating_sub(free_from));
                free_from = free_from.max(e);
            }
            longest = longest.max(ic.saturating_sub(free_from));
            best = best.min(longest);
        }
    }
    best
}

/// TT occupancy of one link, repeating with `period_ns`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LinkTimeline {
    pub period_ns: Nanos,
    /// Sorted, disjoint, non-touching intervals within `[0, period_ns)`.
    pub busy: Vec<(Nanos, Nanos)>,
}

impl LinkTimeline {
    /// Intervals are clipped to the period and merged.
    pub fn new(period_ns: Nanos, mut intervals: Vec<(Nanos, Nanos)>) -> Self {
        intervals.retain(|&(s, e)| s < e && s < period_ns);
        for iv in &mut intervals {
            iv.1 = iv.1.min(period_ns);
        }
        intervals.sort_unstable();
        let mut busy: Vec<(Nanos, Nanos)> = Vec::with_capacity(intervals.len());
        for (s, e) in intervals {
            match busy.last_mut() {
                Some(last) if s <= last.1 => last.1 = last.1.max(e),
                _ => busy.push((s, e)),
            }
        }
        Self { period_ns, busy }
    }

    /// Everything TT occupies on `link` over the cluster cycle, sync windows included.
    pub fn of_link(schedule: &TtSchedule, instance: &Instance, link: LinkId) -> Self {
        let ic = schedule.integration_cycle_ns;
        let mut intervals = Vec::new();
        for (c, list) in busy_per_cycle(schedule, instance, link).into_iter().enumerate() {
            let base = c as Nanos * ic;
            if schedule.sync_window_ns > 0 {
                intervals.push((base, base + schedule.sync_window_ns));
            }
            intervals.extend(list.into_iter().map(|(s, e)| (base + s, base + e)));
        }
        Self::new(schedule.cluster_cycle_ns, intervals)
    }

    /// Can a frame of `frame_ns` start at `s`? The frame must end strictly
    /// before the next TT transmission begins.
    pub fn fits_at(&self, s: Nanos, frame_ns: Nanos) -> bool {
        let p = self.period_ns;
        let s = s % p;
        let need = frame_ns + 1;
        // unroll one period ahead so wrapping intervals are seen
        self.busy
            .iter()
            .flat_map(|&(a, b)| [(a, b), (a + p, b + p)])
            .all(|(a, b)| b <= s || a >= s + need)
            && need <= p
    }

    /// Earliest start at or after `t` where a frame of `frame_ns` fits.
    pub fn earliest_fit(&self, t: Nanos, frame_ns: Nanos) -> Option<Nanos> {
        let p = self.period_ns;
        if self.busy.is_empty() {
            return Some(t);
        }
        if self.fits_at(t, frame_ns) {
            return Some(t);
        }
        // otherwise the frame starts at the end of some busy interval within one period
        let phase = t % p;
        let base = t - phase;
        let mut best: Option<Nanos> = None;
        for &(_, b) in &self.busy {
            for cand in [base + b, base + b + p] {
                if cand > t && self.fits_at(cand, frame_ns) {
                    best = Some(best.map_or(cand, |x: Nanos| x.min(cand)));
                }
            }
        }
        best
    }
}

/// Worst waiting time of an RC frame of `frame_ns` over all arrival phases:
/// `max_t (s(t) - t)` where `s(t)` is the earliest timely-block start.
/// Only arrivals just before a frame would cross into TT traffic, or at
/// interval boundaries, can be maxima, so only those phases are evaluated.
pub fn tt_blocking(timeline: &LinkTimeline, frame_ns: Nanos) -> Option<Nanos> {
    let p = timeline.period_ns;
    if timeline.busy.is_empty() {
        return Some(0);
    }
    let mut worst = 0;
    for &(a, b) in &timeline.busy {
        for t in [(a + p - frame_ns % p) % p, a, b % p] {
            let s = timeline.earliest_fit(t, frame_ns)?;
            worst = worst.max(s - t);
        }
    }
    Some(worst)
}

/// A routed Rate-Constrained virtual link.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VirtualLink {
    pub id: u32,
    /// One link sequence per destination, all starting at the source.
    pub paths: Vec<Vec<LinkId>>,
    pub max_frame_bits: u64,
    pub bag_ns: Nanos,
}

impl VirtualLink {
    /// Distinct links of all paths, in first-use order.
    pub fn links(&self) -> Vec<LinkId> {
        let mut out: Vec<LinkId> = Vec::new();
        for l in self.paths.iter().flatten() {
            if !out.contains(l) {
                out.push(*l);
            }
        }
        out
    }
}

/// Resolve explicit routes as given and source/destination sets over
/// shortest paths.
pub fn resolve_virtual_links(
    instance: &Instance,
    table: &RoutingTable,
    specs: &[VirtualLinkSpec],
) -> Result<Vec<VirtualLink>, AnalysisError> {
    let topo = &instance.topology;
    specs
        .iter()
        .map(|vl| {
            let paths = match (&vl.route, vl.source) {
                (Some(route), _) => vec![route.clone()],
                (None, Some(source)) => vl
                    .destinations
                    .iter()
                    .map(|&d| table.path(topo, source, d))
                    .collect::<Result<_, _>>()?,
                (None, None) => {
                    return Err(AnalysisError::VirtualLink { id: vl.id, reason: "no route".into() })
                }
            };
            let slowest = paths
                .iter()
                .flatten()
                .map(|&l| topo.link(l).bandwidth_bps)
                .min()
                .unwrap_or(1);
            let frame = transmission_time(vl.max_frame_bits, slowest).unwrap_or(Nanos::MAX);
            if vl.bag_ns < frame {
                return Err(AnalysisError::VirtualLink {
                    id: vl.id,
                    reason: "bandwidth allocation gap is shorter than one frame".into(),
                });
            }
            Ok(VirtualLink { id: vl.id, paths, max_frame_bits: vl.max_frame_bits, bag_ns: vl.bag_ns })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HopDelay {
    pub link: LinkId,
    pub tt_blocking_ns: Nanos,
    pub rc_interference_ns: Nanos,
    pub transmission_ns: Nanos,
    pub hop_delay_ns: Nanos,
    pub total_ns: Nanos,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VirtualLinkDelay {
    pub id: u32,
    /// Largest sum of hop delays over the paths.
    pub bound_ns: Nanos,
    pub hops: Vec<HopDelay>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RcDelayReport {
    pub method: String,
    pub virtual_links: Vec<VirtualLinkDelay>,
}

impl RcDelayReport {
    pub const METHOD: &'static str = "conservative link-local bound";

    pub fn mean_bound_ns(&self) -> f64 {
        if self.virtual_links.is_empty() {
            return 0.0;
        }
        self.virtual_links.iter().map(|v| v.bound_ns as f64).sum::<f64>() / self.virtual_links.len() as f64
    }
}

/// Per hop: TT blocking of the own frame, one maximal frame of every other
/// virtual link on the same link, the own transmission, and the switch
/// delay unless the hop ends at the destination.
pub fn rc_worst_case_delay(
    schedule: &TtSchedule,
    instance: &Instance,
    virtual_links: &[VirtualLink],
) -> Result<RcDelayReport, AnalysisError> {
    let topo = &instance.topology;
    let tau = instance.config.switch_delay_ns;
    let mut sharing: BTreeMap<LinkId, Vec<usize>> = BTreeMap::new();
    for (k, vl) in virtual_links.iter().enumerate() {
        for l in vl.links() {
            sharing.entry(l).or_default().push(k);
        }
    }
    let mut timelines: BTreeMap<LinkId, LinkTimeline> = BTreeMap::new();
    let frame_on = |vl: &VirtualLink, link: LinkId| {
        transmission_time(vl.max_frame_bits, topo.link(link).bandwidth_bps).unwrap_or(Nanos::MAX)
    };
    let mut out = Vec::with_capacity(virtual_links.len());
    for (k, vl) in virtual_links.iter().enumerate() {
        let mut hops: BTreeMap<LinkId, HopDelay> = BTreeMap::new();
        let mut bound = 0;
        for path in &vl.paths {
            let mut sum = 0;
            for (h, &link) in path.iter().enumerate() {
                let hop = match hops.get(&link) {
                    Some(hop) => hop.clone(),
                    None => {
                        let timeline = timelines
                            .entry(link)
                            .or_insert_with(|| LinkTimeline::of_link(schedule, instance, link));
                        let own = frame_on(vl, link);
                        let blocking = tt_blocking(timeline, own)
                            .ok_or(AnalysisError::UnboundedBlocking { link, frame_ns: own })?;
                        let interference = sharing[&link]
                            .iter()
                            .filter(|&&o| o != k)
                            .map(|&o| frame_on(&virtual_links[o], link))
                            .sum();
                        let hop_delay = if h + 1 < path.len() { tau } else { 0 };
                        let hop = HopDelay {
                            link,
                            tt_blocking_ns: blocking,
                            rc_interference_ns: interference,
                            transmission_ns: own,
                            hop_delay_ns: hop_delay,
                            total_ns: blocking + interference + own + hop_delay,
                        };
                        hops.insert(link, hop.clone());
                        hop
                    }
                };
                sum += hop.total_ns;
            }
            bound = bound.max(sum);
        }
        let mut hops: Vec<HopDelay> = hops.into_values().collect();
        hops.sort_by_key(|h| vl.links().iter().position(|&l| l == h.link));
        out.push(VirtualLinkDelay { id: vl.id, bound_ns: bound, hops });
    }
    Ok(RcDelayReport { method: RcDelayReport::METHOD.into(), virtual_links: out })
}

#[cfg(test)]
mod tests;
