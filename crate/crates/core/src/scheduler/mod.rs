//! Link schedule creation as a project scheduling problem with unary
//! resources and generalized start-to-start time lags, plus a porosity
//! baseline that keeps reserved gaps free of TT traffic.
//!
//! Every message instance becomes one activity whose start time is the
//! offset of that instance inside each integration cycle it occupies. A
//! resource is one link in one integration cycle; an activity demands the
//! link in every cycle its message occurs in.

mod search;
mod sgs;
mod timeline;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::icap::{relative_window, transit_time, Assignment, AssignmentProblem};
use crate::model::{Instance, LinkId, MessageId, Nanos};
use crate::routing::RouteTree;

pub use search::{solve_makespan, solve_porosity};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchedulerError {
    #[error("message {message}: infeasible window ({reason})")]
    InfeasibleWindow { message: MessageId, reason: String },
    #[error(
        "no feasible schedule within budget; first violated deadline: message {message} on link {link} \
         cannot start in [{earliest_ns}, {latest_ns}] ns"
    )]
    NoFeasibleSchedule { message: MessageId, link: LinkId, earliest_ns: Nanos, latest_ns: Nanos },
    #[error(
        "porosity infeasible: link {link} in cycle {cycle} needs {load_ns} ns but the allowed blocks \
         hold {capacity_ns} ns; try a smaller reserved gap"
    )]
    InfeasiblePorosity { link: LinkId, cycle: u64, load_ns: Nanos, capacity_ns: Nanos },
    #[error("malformed project instance: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActivityKind {
    Start,
    End,
    Transmission { message: MessageId, link: LinkId },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Activity {
    pub kind: ActivityKind,
    pub duration_ns: Nanos,
    /// Unary resources demanded, as `link * cycles + cycle`.
    pub demands: Vec<usize>,
}

/// `start(to) >= start(from) + lag_ns`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TimeLag {
    pub from: usize,
    pub to: usize,
    pub lag_ns: i64,
}

/// Project scheduling instance. Activity 0 is the start dummy and the last
/// activity is the end dummy; both have zero duration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RcpspInstance {
    pub activities: Vec<Activity>,
    pub lags: Vec<TimeLag>,
    pub cycles: u64,
    pub link_count: usize,
    pub integration_cycle_ns: Nanos,
    pub cluster_cycle_ns: Nanos,
    pub sync_window_ns: Nanos,
    pub switch_delay_ns: Nanos,
    /// First-occurrence cycle of each message, in message order.
    pub first_cycles: Vec<(MessageId, u64)>,
}

impl RcpspInstance {
    pub fn end(&self) -> usize {
        self.activities.len() - 1
    }

    pub fn resource_count(&self) -> usize {
        self.link_count * self.cycles as usize
    }

    /// `(link, cycle)` of a resource id.
    pub fn resource(&self, id: usize) -> (LinkId, u64) {
        (id / self.cycles as usize, (id % self.cycles as usize) as u64)
    }
}

/// Translate routing and cycle assignment into the project instance.
pub fn build_rcpsp(
    instance: &Instance,
    trees: &[RouteTree],
    problem: &AssignmentProblem,
    assignment: &Assignment,
) -> Result<RcpspInstance, SchedulerError> {
    let cfg = &instance.config;
    let ic = cfg.integration_cycle_ns;
    let cycles = cfg.cycles_per_cluster();
    let tau = cfg.switch_delay_ns;
    let mut activities = vec![Activity { kind: ActivityKind::Start, duration_ns: 0, demands: vec![] }];
    let mut lags = Vec::new();
    let mut first_cycles = Vec::with_capacity(instance.messages.len());

    for ((m, tree), (item, &first)) in instance
        .messages
        .iter()
        .zip(trees)
        .zip(problem.items.iter().zip(&assignment.cycles))
    {
        debug_assert_eq!(item.message, m.id);
        first_cycles.push((m.id, first));
        let (rel_release, rel_deadline) = relative_window(m.release_ns, m.deadline_ns, first, ic);
        let window_err = |reason: String| SchedulerError::InfeasibleWindow { message: m.id, reason };
        if m.release_ns > first * ic + ic {
            return Err(window_err(format!("release lies after integration cycle {first}")));
        }
        let durations: Vec<Nanos> = item.loads.iter().map(|&(_, c)| c).collect();
        let transit = transit_time(tree, &durations, tau);
        if rel_release.max(cfg.sync_window_ns) + transit > rel_deadline {
            return Err(window_err(format!(
                "relative deadline {rel_deadline} ns is shorter than the earliest completion {} ns",
                rel_release.max(cfg.sync_window_ns) + transit
            )));
        }

        let base = activities.len();
        for (k, &(link, duration)) in item.loads.iter().enumerate() {
            debug_assert_eq!(link, tree.links[k]);
            let demands = (first..cycles)
                .step_by(item.period_cycles as usize)
                .map(|j| link * cycles as usize + j as usize)
                .collect();
            activities.push(Activity {
                kind: ActivityKind::Transmission { message: m.id, link },
                duration_ns: duration,
                demands,
            });
        }
        for (k, parent) in tree.parents.iter().enumerate() {
            match parent {
                None => lags.push(TimeLag { from: 0, to: base + k, lag_ns: rel_release as i64 }),
                Some(p) => lags.push(TimeLag {
                    from: base + p,
                    to: base + k,
                    lag_ns: (durations[*p] + tau) as i64,
                }),
            }
        }
        // completion by the relative deadline, once per receiver
        for &(_, leaf) in &tree.leaves {
            lags.push(TimeLag {
                from: base + leaf,
                to: 0,
                lag_ns: durations[leaf] as i64 - rel_deadline as i64,
            });
        }
    }
    let end = activities.len();
    for (i, a) in activities.iter().enumerate().skip(1) {
        lags.push(TimeLag { from: i, to: end, lag_ns: a.duration_ns as i64 });
    }
    activities.push(Activity { kind: ActivityKind::End, duration_ns: 0, demands: vec![] });

    Ok(RcpspInstance {
        activities,
        lags,
        cycles,
        link_count: instance.topology.links().len(),
        integration_cycle_ns: ic,
        cluster_cycle_ns: cfg.cluster_cycle_ns,
        sync_window_ns: cfg.sync_window_ns,
        switch_delay_ns: tau,
        first_cycles,
    })
}

/// Iteration-counted solver budget; the wall-clock cap only guards runaway runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SolverBudget {
    /// Schedule decodings.
    pub iterations: u64,
    #[serde(skip)]
    pub wall_clock: Option<Duration>,
    /// Unschedule-and-retry steps allowed per decoding.
    pub backtrack_limit: usize,
    /// Parallel evaluations; does not change the result.
    pub workers: usize,
}

impl Default for SolverBudget {
    fn default() -> Self {
        Self { iterations: 2_000, wall_clock: Some(Duration::from_secs(300)), backtrack_limit: 64, workers: 0 }
    }
}

/// Alternating TT-allowed blocks and reserved gaps after the sync window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapPolicy {
    pub block_ns: Nanos,
    pub gap_ns: Nanos,
}

impl GapPolicy {
    /// Blocks and gaps of one eighth of the integration cycle each.
    pub fn default_for(ic: Nanos) -> Self {
        Self { block_ns: ic / 8, gap_ns: ic / 8 }
    }

    /// Reserved gaps in `[sync, ic)`, clipped to the cycle end.
    pub fn reserved_gaps(&self, sync: Nanos, ic: Nanos) -> Vec<(Nanos, Nanos)> {
        let mut out = Vec::new();
        if self.gap_ns == 0 {
            return out;
        }
        let stride = self.block_ns + self.gap_ns;
        let mut start = sync + self.block_ns;
        while start < ic {
            out.push((start, (start + self.gap_ns).min(ic)));
            start += stride;
        }
        out
    }

    /// Total TT-allowed time in one cycle.
    pub fn capacity(&self, sync: Nanos, ic: Nanos) -> Nanos {
        let gaps: Nanos = self.reserved_gaps(sync, ic).iter().map(|(s, e)| e - s).sum();
        ic - sync - gaps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Objective {
    Makespan,
    Porosity { block_ns: Nanos, gap_ns: Nanos },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Placement {
    pub message: MessageId,
    pub link: LinkId,
    /// Offset inside every integration cycle the message occupies.
    pub offset_ns: Nanos,
    pub duration_ns: Nanos,
}

/// Strictly periodic TT schedule: one first cycle per message and one
/// cycle-relative offset per message instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TtSchedule {
    pub integration_cycle_ns: Nanos,
    pub cluster_cycle_ns: Nanos,
    pub sync_window_ns: Nanos,
    pub objective: Objective,
    /// Sorted by message id.
    pub first_cycles: Vec<(MessageId, u64)>,
    /// Sorted by message id, then link id.
    pub placements: Vec<Placement>,
    pub makespan_ns: Nanos,
    /// Smallest preserved reserved gap, for porosity schedules.
    pub min_preserved_gap_ns: Option<Nanos>,
    /// All lags and resource constraints of the project instance hold.
    pub valid: bool,
}

impl TtSchedule {
    pub fn first_cycle(&self, message: MessageId) -> Option<u64> {
        self.first_cycles
            .binary_search_by_key(&message, |&(m, _)| m)
            .ok()
            .map(|i| self.first_cycles[i].1)
    }

    pub fn placement(&self, message: MessageId, link: LinkId) -> Option<&Placement> {
        self.placements
            .binary_search_by_key(&(message, link), |p| (p.message, p.link))
            .ok()
            .map(|i| &self.placements[i])
    }

    /// Build from a start time per activity of `rcpsp` (dummies included).
    pub fn from_starts(rcpsp: &RcpspInstance, starts: &[Nanos], objective: Objective) -> Self {
        let mut placements: Vec<Placement> = rcpsp
            .activities
            .iter()
            .zip(starts)
            .filter_map(|(a, &s)| match a.kind {
                ActivityKind::Transmission { message, link } => {
                    Some(Placement { message, link, offset_ns: s, duration_ns: a.duration_ns })
                }
                _ => None,
            })
            .collect();
        placements.sort_by_key(|p| (p.message, p.link));
        let mut first_cycles = rcpsp.first_cycles.clone();
        first_cycles.sort_unstable();
        let mut schedule = Self {
            integration_cycle_ns: rcpsp.integration_cycle_ns,
            cluster_cycle_ns: rcpsp.cluster_cycle_ns,
            sync_window_ns: rcpsp.sync_window_ns,
            objective,
            first_cycles,
            placements,
            makespan_ns: 0,
            min_preserved_gap_ns: None,
            valid: check_starts(rcpsp, starts).is_ok(),
        };
        schedule.makespan_ns = makespan(&schedule);
        if let Objective::Porosity { block_ns, gap_ns } = objective {
            let policy = GapPolicy { block_ns, gap_ns };
            schedule.min_preserved_gap_ns = Some(search::min_preserved_gap(rcpsp, starts, &policy));
        }
        schedule
    }
}

/// Latest completion of any transmission inside its integration cycle; the
/// sync window when nothing is scheduled.
pub fn makespan(schedule: &TtSchedule) -> Nanos {
    schedule
        .placements
        .iter()
        .map(|p| p.offset_ns + p.duration_ns)
        .max()
        .unwrap_or(0)
        .max(schedule.sync_window_ns)
}

/// Check all time lags, unary resources, the sync window and in-cycle fit.
/// Returns the first violation found.
pub fn check_starts(rcpsp: &RcpspInstance, starts: &[Nanos]) -> Result<(), String> {
    if starts.len() != rcpsp.activities.len() {
        return Err("start vector length mismatch".into());
    }
    for lag in &rcpsp.lags {
        if (starts[lag.to] as i128) < starts[lag.from] as i128 + lag.lag_ns as i128 {
            return Err(format!("lag {} -> {} of {} ns violated", lag.from, lag.to, lag.lag_ns));
        }
    }
    let mut per_resource: Vec<Vec<(Nanos, Nanos)>> = vec![Vec::new(); rcpsp.resource_count()];
    for (i, a) in rcpsp.activities.iter().enumerate() {
        if let ActivityKind::Transmission { .. } = a.kind {
            if starts[i] < rcpsp.sync_window_ns {
                return Err(format!("activity {i} starts inside the sync window"));
            }
            if starts[i] + a.duration_ns > rcpsp.integration_cycle_ns {
                return Err(format!("activity {i} does not fit the integration cycle"));
            }
            for &r in &a.demands {
                per_resource[r].push((starts[i], starts[i] + a.duration_ns));
            }
        }
    }
    for (r, list) in per_resource.iter_mut().enumerate() {
        list.sort_unstable();
        for w in list.windows(2) {
            if w[1].0 < w[0].1 {
                let (link, cycle) = rcpsp.resource(r);
                return Err(format!("overlap on link {link} in cycle {cycle}"));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
