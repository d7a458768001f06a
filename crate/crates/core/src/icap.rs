//! Integration cycle assignment: choose the cycle of each message's first
//! occurrence so that the busiest (link, cycle) resource carries as little
//! transmission time as possible.
//!
//! Precedence, switch delays and in-cycle offsets are ignored here, so the
//! optimum plus the synchronization slot bounds every schedule from below.

use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::model::{Instance, LinkId, MessageId, Nanos};
use crate::routing::{message_instances, RouteTree};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IcapError {
    #[error("message {message}: {reason}")]
    Infeasible { message: MessageId, reason: String },
}

/// Per-message data of the assignment problem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignItem {
    pub message: MessageId,
    /// Period in integration cycles.
    pub period_cycles: u64,
    /// Allowed first-occurrence cycles, ascending.
    pub candidates: Vec<u64>,
    /// Transmission time on each link of the route.
    pub loads: Vec<(LinkId, Nanos)>,
}

impl AssignItem {
    /// Total transmission time this message puts on the network per cluster cycle.
    pub fn total_load(&self, cycles: u64) -> u128 {
        let per_occurrence: u128 = self.loads.iter().map(|&(_, c)| c as u128).sum();
        per_occurrence * u128::from(cycles / self.period_cycles)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentProblem {
    /// Integration cycles per cluster cycle.
    pub cycles: u64,
    pub link_count: usize,
    pub items: Vec<AssignItem>,
}

impl AssignmentProblem {
    pub fn resource_count(&self) -> usize {
        self.link_count * self.cycles as usize
    }

    /// Resources loaded by `item` when its first occurrence is in `cycle`.
    fn occupied<'s>(&self, item: &'s AssignItem, cycle: u64) -> impl Iterator<Item = (usize, Nanos)> + 's {
        let n = self.cycles as usize;
        let step = item.period_cycles as usize;
        item.loads.iter().flat_map(move |&(link, c)| {
            (cycle as usize..n).step_by(step).map(move |j| (link * n + j, c))
        })
    }

    /// Per-resource load of a complete assignment.
    pub fn resource_loads(&self, cycles: &[u64]) -> Vec<Nanos> {
        let mut loads = vec![0; self.resource_count()];
        for (item, &j) in self.items.iter().zip(cycles) {
            for (r, c) in self.occupied(item, j) {
                loads[r] += c;
            }
        }
        loads
    }

    /// Max resource load of a complete assignment.
    pub fn objective(&self, cycles: &[u64]) -> Nanos {
        self.resource_loads(cycles).into_iter().max().unwrap_or(0)
    }
}

/// Longest sender-to-receiver transit of a route: transmission times plus
/// one switch delay per intermediate node.
pub fn transit_time(tree: &RouteTree, durations: &[Nanos], switch_delay: Nanos) -> Nanos {
    let mut finish = vec![0; tree.len()];
    for i in 0..tree.len() {
        finish[i] = match tree.parents[i] {
            Some(p) => finish[p] + switch_delay + durations[i],
            None => durations[i],
        };
    }
    tree.leaves.iter().map(|&(_, i)| finish[i]).max().unwrap_or(0)
}

/// Relative release and deadline of a message whose first occurrence is in
/// cycle `cycle`, clamped to the cycle.
pub fn relative_window(release: Nanos, deadline: Nanos, cycle: u64, ic: Nanos) -> (Nanos, Nanos) {
    let start = cycle * ic;
    let r = release.saturating_sub(start).min(ic);
    let d = deadline.saturating_sub(start).min(ic);
    (r, d)
}

pub fn build_assignment_problem(
    instance: &Instance,
    trees: &[RouteTree],
) -> Result<AssignmentProblem, IcapError> {
    let cfg = &instance.config;
    let ic = cfg.integration_cycle_ns;
    let cycles = cfg.cycles_per_cluster();
    let all = message_instances(&instance.topology, &instance.messages, trees);
    let mut offset = 0;
    let mut items = Vec::with_capacity(instance.messages.len());
    for (m, tree) in instance.messages.iter().zip(trees) {
        let inst = &all[offset..offset + tree.len()];
        offset += tree.len();
        let durations: Vec<Nanos> = inst.iter().map(|i| i.transmission_ns).collect();
        let infeasible = |reason: String| IcapError::Infeasible { message: m.id, reason };
        if let Some(&longest) = durations.iter().max() {
            if longest > ic {
                return Err(infeasible(format!(
                    "transmission time {longest} ns exceeds the integration cycle"
                )));
            }
        }
        let transit = transit_time(tree, &durations, cfg.switch_delay_ns);
        let period_cycles = m.period_ns / ic;
        let candidates: Vec<u64> = (0..period_cycles)
            .filter(|&j| m.deadline_ns >= j * ic && m.release_ns <= j * ic + ic)
            .filter(|&j| {
                // the whole tree has to fit between release and deadline in this cycle
                let (r, d) = relative_window(m.release_ns, m.deadline_ns, j, ic);
                r.max(cfg.sync_window_ns) + transit <= d
            })
            .collect();
        if candidates.is_empty() {
            return Err(infeasible(format!(
                "no integration cycle fits the window [{}, {}] ns with a transit of {transit} ns",
                m.release_ns, m.deadline_ns
            )));
        }
        items.push(AssignItem {
            message: m.id,
            period_cycles,
            candidates,
            loads: inst.iter().map(|i| (i.link, i.transmission_ns)).collect(),
        });
    }
    Ok(AssignmentProblem { cycles, link_count: instance.topology.links().len(), items })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IcapMode {
    Exact,
    Heuristic,
}

impl IcapMode {
    /// Exact up to `threshold` messages, heuristic above.
    pub fn auto(messages: usize, threshold: usize) -> Self {
        if messages <= threshold {
            IcapMode::Exact
        } else {
            IcapMode::Heuristic
        }
    }
}

pub const DEFAULT_EXACT_THRESHOLD: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IcapBudget {
    /// Branch-and-bound nodes.
    pub max_nodes: u64,
    pub wall_clock: Option<Duration>,
}

impl Default for IcapBudget {
    fn default() -> Self {
        Self { max_nodes: 2_000_000, wall_clock: Some(Duration::from_secs(60)) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Assignment {
    /// First-occurrence cycle per item, in problem order.
    pub cycles: Vec<u64>,
    /// Max resource load.
    pub objective_ns: Nanos,
    /// Whether `objective_ns` is proven minimal.
    pub optimal: bool,
}

impl Assignment {
    pub fn cycle_of(&self, problem: &AssignmentProblem, message: MessageId) -> Option<u64> {
        problem.items.iter().position(|i| i.message == message).map(|p| self.cycles[p])
    }
}

/// Assignment objective plus the synchronization slot. Not tight: time lags
/// are ignored by the assignment.
pub fn lower_bound(assignment: &Assignment, sync_window: Nanos) -> Nanos {
    assignment.objective_ns + sync_window
}

pub fn solve_assignment(problem: &AssignmentProblem, mode: IcapMode, budget: IcapBudget) -> Assignment {
    let heuristic = solve_heuristic(problem);
    match mode {
        IcapMode::Heuristic => {
            let optimal = problem.items.is_empty();
            Assignment { optimal, ..heuristic }
        }
        IcapMode::Exact => BranchAndBound::new(problem, heuristic, budget).run(),
    }
}

/// Items sorted by decreasing total load, ties by problem order.
fn load_order(problem: &AssignmentProblem) -> Vec<usize> {
    let mut order: Vec<usize> = (0..problem.items.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(problem.items[i].total_load(problem.cycles)));
    order
}

/// Greedy placement of the heaviest messages first, then single-message
/// moves while they improve (max load, sum of squared loads).
fn solve_heuristic(problem: &AssignmentProblem) -> Assignment {
    let mut loads = vec![0 as Nanos; problem.resource_count()];
    let mut cycles = vec![0u64; problem.items.len()];
    for idx in load_order(problem) {
        let item = &problem.items[idx];
        let mut best: Option<(Nanos, u128, u64)> = None;
        for &j in &item.candidates {
            let mut peak = 0;
            let mut sum = 0u128;
            for (r, c) in problem.occupied(item, j) {
                let after = loads[r] + c;
                peak = peak.max(after);
                sum += after as u128;
            }
            let key = (peak, sum, j);
            if best.is_none_or(|b| key < b) {
                best = Some(key);
            }
        }
        let j = best.expect("non-empty candidate set").2;
        cycles[idx] = j;
        for (r, c) in problem.occupied(item, j) {
            loads[r] += c;
        }
    }

    let score = |loads: &[Nanos]| -> (Nanos, u128) {
        let peak = loads.iter().copied().max().unwrap_or(0);
        let sq = loads.iter().map(|&l| (l as u128) * (l as u128)).sum();
        (peak, sq)
    };
    let mut current = score(&loads);
    loop {
        let mut improved = false;
        for (idx, item) in problem.items.iter().enumerate() {
            let from = cycles[idx];
            for &to in &item.candidates {
                if to == from {
                    continue;
                }
                for (r, c) in problem.occupied(item, from) {
                    loads[r] -= c;
                }
                for (r, c) in problem.occupied(item, to) {
                    loads[r] += c;
                }
                let s = score(&loads);
                if s < current {
                    current = s;
                    cycles[idx] = to;
                    improved = true;
                    break;
                }
                for (r, c) in problem.occupied(item, to) {
                    loads[r] -= c;
                }
                for (r, c) in problem.occupied(item, from) {
                    loads[r] += c;
                }
            }
        }
        if !improved {
            break;
        }
    }
    Assignment { objective_ns: current.0, cycles, optimal: false }
}

struct BranchAndBound<'a> {
    problem: &'a AssignmentProblem,
    order: Vec<usize>,
    /// Remaining per-link load after depth k, averaged over the cluster.
    remaining: Vec<Vec<u128>>,
    loads: Vec<Nanos>,
    link_totals: Vec<u128>,
    cycles: Vec<u64>,
    best: Assignment,
    nodes: u64,
    budget: IcapBudget,
    started: Instant,
    exhausted: bool,
}

impl<'a> BranchAndBound<'a> {
    fn new(problem: &'a AssignmentProblem, incumbent: Assignment, budget: IcapBudget) -> Self {
        let order = load_order(problem);
        let mut remaining = vec![vec![0u128; problem.link_count]; order.len() + 1];
        for depth in (0..order.len()).rev() {
            remaining[depth] = remaining[depth + 1].clone();
            let item = &problem.items[order[depth]];
            let occ = u128::from(problem.cycles / item.period_cycles);
            for &(link, c) in &item.loads {
                remaining[depth][link] += c as u128 * occ;
            }
        }
        Self {
            problem,
            order,
            remaining,
            loads: vec![0; problem.resource_count()],
            link_totals: vec![0; problem.link_count],
            cycles: vec![0; problem.items.len()],
            best: incumbent,
            nodes: 0,
            budget,
            started: Instant::now(),
            exhausted: false,
        }
    }

    fn run(mut self) -> Assignment {
        if !self.problem.items.is_empty() && self.best.objective_ns > self.global_bound() {
            self.search(0, 0);
        }
        self.best.optimal = !self.exhausted;
        self.best
    }

    /// Averaging bound over the whole problem.
    fn global_bound(&self) -> Nanos {
        let n = u128::from(self.problem.cycles);
        let avg = self.remaining[0].iter().map(|&t| t.div_ceil(n)).max().unwrap_or(0);
        let single = self
            .problem
            .items
            .iter()
            .flat_map(|i| i.loads.iter().map(|&(_, c)| c))
            .max()
            .unwrap_or(0);
        (avg as Nanos).max(single)
    }

    fn bound(&self, depth: usize, peak: Nanos) -> Nanos {
        let n = u128::from(self.problem.cycles);
        let avg = self
            .link_totals
            .iter()
            .zip(&self.remaining[depth])
            .map(|(&a, &b)| (a + b).div_ceil(n))
            .max()
            .unwrap_or(0);
        peak.max(avg as Nanos)
    }

    fn out_of_budget(&mut self) -> bool {
        if self.exhausted {
            return true;
        }
        if self.nodes >= self.budget.max_nodes {
            self.exhausted = true;
        } else if self.nodes % 4096 == 0 {
            if let Some(limit) = self.budget.wall_clock {
                if self.started.elapsed() >= limit {
                    self.exhausted = true;
                }
            }
        }
        self.exhausted
    }

    fn search(&mut self, depth: usize, peak: Nanos) {
        if depth == self.order.len() {
            if peak < self.best.objective_ns {
                self.best = Assignment { cycles: self.cycles.clone(), objective_ns: peak, optimal: false };
            }
            return;
        }
        let idx = self.order[depth];
        let item = &self.problem.items[idx];
        // children ordered by the peak they produce
        let mut children: Vec<(Nanos, u64)> = item
            .candidates
            .iter()
            .map(|&j| {
                let p = self
                    .problem
                    .occupied(item, j)
                    .map(|(r, c)| self.loads[r] + c)
                    .max()
                    .unwrap_or(0);
                (p.max(peak), j)
            })
            .collect();
        children.sort_unstable();
        let occ = u128::from(self.problem.cycles / item.period_cycles);
        for (child_peak, j) in children {
            self.nodes += 1;
            if self.out_of_budget() {
                return;
            }
            if child_peak >= self.best.objective_ns {
                break;
            }
            for (r, c) in self.problem.occupied(item, j) {
                self.loads[r] += c;
            }
            for &(link, c) in &item.loads {
                self.link_totals[link] += c as u128 * occ;
            }
            self.cycles[idx] = j;
            if self.bound(depth + 1, child_peak) < self.best.objective_ns {
                self.search(depth + 1, child_peak);
            }
            for (r, c) in self.problem.occupied(item, j) {
                self.loads[r] -= c;
            }
            for &(link, c) in &item.loads {
                self.link_totals[link] -= c as u128 * occ;
            }
            if self.best.objective_ns <= self.global_bound() {
                return;
            }
        }
    }
}
