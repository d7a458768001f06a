//! Multi-start list scheduling followed by activity-list local search.
//!
//! Every evaluation draws its randomness from `(seed, round, slot)`, and a
//! round keeps the smallest `(objective, start vector)` key among its
//! evaluations, so the result does not depend on the number of workers.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::sgs::{Failure, Prepared};
use super::timeline::Timeline;
use super::{GapPolicy, Objective, RcpspInstance, SchedulerError, SolverBudget, TtSchedule};
use crate::model::Nanos;

const BATCH: u64 = 16;

/// Lexicographic incumbent key: porosity penalty, makespan, start vector.
type Key = (u64, Nanos, Vec<Nanos>);

#[derive(Clone)]
struct Candidate {
    key: Key,
    list: Vec<usize>,
    starts: Vec<Nanos>,
}

struct Search<'a> {
    prep: &'a Prepared,
    rcpsp: &'a RcpspInstance,
    blocked: Vec<(Nanos, Nanos)>,
    policy: Option<GapPolicy>,
    budget: SolverBudget,
    seed: u64,
}

fn rng_for(seed: u64, round: u64, slot: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(round.wrapping_mul(1 << 20).wrapping_add(slot));
    rng
}

impl Search<'_> {
    fn key(&self, starts: &[Nanos]) -> Key {
        let penalty = match &self.policy {
            Some(policy) => u64::MAX - min_gap_of(self.prep, self.rcpsp, starts, policy),
            None => 0,
        };
        (penalty, self.prep.makespan(starts), starts.to_vec())
    }

    /// Decode a list and justify while that improves the key.
    fn evaluate(&self, list: Vec<usize>, tl: &mut Timeline) -> Result<Candidate, Failure> {
        let starts = self.prep.decode(&list, self.budget.backtrack_limit, tl)?;
        let mut best = Candidate { key: self.key(&starts), list, starts };
        for _ in 0..4 {
            let Some((starts, list)) = self.prep.justify(&best.starts, tl) else { break };
            let key = self.key(&starts);
            if key.0 < best.key.0 || (key.0 == best.key.0 && key.1 < best.key.1) {
                best = Candidate { key, list, starts };
            } else {
                break;
            }
        }
        Ok(best)
    }

    /// Precedence-feasible list by priority: smallest relative deadline,
    /// then longest remaining path, then message id. With `rng`, the two
    /// rules are blended into a perturbed slack score.
    fn priority_list(&self, rng: Option<&mut ChaCha8Rng>) -> Vec<usize> {
        let prep = self.prep;
        let score: Vec<(u64, Reverse<u64>, u32, usize)> = match rng {
            None => (0..prep.n)
                .map(|a| (prep.deadline[a], Reverse(prep.tail[a]), prep.message[a], a))
                .collect(),
            Some(rng) => {
                let strength: f64 = rng.gen_range(0.05..0.6);
                (0..prep.n)
                    .map(|a| {
                        let slack = prep.deadline[a].saturating_sub(prep.tail[a]) as f64;
                        let noisy = slack * (1.0 + strength * (rng.gen::<f64>() - 0.5))
                            - strength * rng.gen::<f64>() * prep.tail[a] as f64;
                        ((noisy.max(0.0) * 16.0) as u64, Reverse(prep.tail[a]), prep.message[a], a)
                    })
                    .collect()
            }
        };
        let mut missing: Vec<usize> = prep.parents.iter().map(Vec::len).collect();
        let mut heap: BinaryHeap<Reverse<(u64, Reverse<u64>, u32, usize)>> =
            (0..prep.n).filter(|&a| missing[a] == 0).map(|a| Reverse(score[a])).collect();
        let mut list = Vec::with_capacity(prep.n);
        while let Some(Reverse((_, _, _, a))) = heap.pop() {
            list.push(a);
            for &(c, _) in &prep.children[a] {
                missing[c] -= 1;
                if missing[c] == 0 {
                    heap.push(Reverse(score[c]));
                }
            }
        }
        list
    }

    /// Shift a few activities to other positions allowed by precedence.
    fn neighbour(&self, list: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
        let prep = self.prep;
        let mut list = list.to_vec();
        if list.len() < 2 {
            return list;
        }
        let moves = rng.gen_range(1..=3);
        for _ in 0..moves {
            let mut pos = vec![0usize; prep.n];
            for (p, &a) in list.iter().enumerate() {
                pos[a] = p;
            }
            let i = rng.gen_range(0..list.len());
            let a = list[i];
            let lo = prep.parents[a].iter().map(|&(p, _)| pos[p] + 1).max().unwrap_or(0);
            let hi = prep.children[a].iter().map(|&(c, _)| pos[c] - 1).min().unwrap_or(list.len() - 1);
            if lo >= hi {
                continue;
            }
            let j = rng.gen_range(lo..=hi);
            list.remove(i);
            list.insert(j, a);
        }
        list
    }

    fn run(&self) -> Result<Candidate, SchedulerError> {
        let started = Instant::now();
        let out_of_time = || self.budget.wall_clock.is_some_and(|w| started.elapsed() >= w);
        let mut tl = Timeline::new(self.prep.resources, self.blocked.clone());
        let total = self.budget.iterations.max(1);

        let mut first_failure = None;
        let mut best = match self.evaluate(self.priority_list(None), &mut tl) {
            Ok(c) => Some(c),
            Err(f) => {
                first_failure = Some(f);
                None
            }
        };
        let mut used = 1;

        // perturbed restarts
        let restarts = (total / 4).max(1);
        let mut round = 0;
        while used < restarts && !out_of_time() {
            let slots = BATCH.min(restarts - used);
            let found = self.round(round, slots, |rng, tl| {
                let list = self.priority_list(Some(rng));
                self.evaluate(list, tl)
            });
            used += slots;
            round += 1;
            best = pick(best, found);
        }

        // local search around the incumbent
        if let Some(mut current) = best.clone() {
            while used < total && !out_of_time() {
                let slots = BATCH.min(total - used);
                let base = current.list.clone();
                let found = self.round(round, slots, |rng, tl| {
                    let list = self.neighbour(&base, rng);
                    self.evaluate(list, tl)
                });
                used += slots;
                round += 1;
                if let Some(c) = found {
                    if (c.key.0, c.key.1) <= (current.key.0, current.key.1) {
                        current = c.clone();
                    }
                    best = pick(best, Some(c));
                }
            }
        }

        best.ok_or_else(|| {
            let f = first_failure.expect("a failed search records its first failure");
            SchedulerError::NoFeasibleSchedule {
                message: self.prep.message[f.activity],
                link: self.prep.link[f.activity],
                earliest_ns: f.earliest,
                latest_ns: f.latest,
            }
        })
    }

    fn round<F>(&self, round: u64, slots: u64, eval: F) -> Option<Candidate>
    where
        F: Fn(&mut ChaCha8Rng, &mut Timeline) -> Result<Candidate, Failure> + Sync,
    {
        let results: Vec<Option<Candidate>> = (0..slots)
            .into_par_iter()
            .map_init(
                || Timeline::new(self.prep.resources, self.blocked.clone()),
                |tl, slot| {
                    let mut rng = rng_for(self.seed, round, slot);
                    eval(&mut rng, tl).ok()
                },
            )
            .collect();
        results.into_iter().fold(None, pick)
    }
}

fn pick(a: Option<Candidate>, b: Option<Candidate>) -> Option<Candidate> {
    match (a, b) {
        (Some(a), Some(b)) => Some(if b.key < a.key { b } else { a }),
        (a, b) => a.or(b),
    }
}

fn full_starts(prep: &Prepared, starts: &[Nanos]) -> Vec<Nanos> {
    let end: Nanos = starts.iter().zip(&prep.duration).map(|(s, p)| s + p).max().unwrap_or(0);
    let mut out = Vec::with_capacity(starts.len() + 2);
    out.push(0);
    out.extend_from_slice(starts);
    out.push(end);
    out
}

fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    if workers == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Minimize the makespan of the TT traffic.
pub fn solve_makespan(rcpsp: &RcpspInstance, budget: SolverBudget, seed: u64) -> Result<TtSchedule, SchedulerError> {
    let prep = Prepared::new(rcpsp)?;
    let blocked = if rcpsp.sync_window_ns > 0 { vec![(0, rcpsp.sync_window_ns)] } else { vec![] };
    let search = Search { prep: &prep, rcpsp, blocked, policy: None, budget, seed };
    let best = with_workers(budget.workers, || search.run())?;
    Ok(TtSchedule::from_starts(rcpsp, &full_starts(&prep, &best.starts), Objective::Makespan))
}

/// Keep TT transmissions inside the allowed blocks of `policy` and maximize
/// the shortest preserved reserved gap, then minimize the makespan.
pub fn solve_porosity(
    rcpsp: &RcpspInstance,
    policy: GapPolicy,
    budget: SolverBudget,
    seed: u64,
) -> Result<TtSchedule, SchedulerError> {
    let prep = Prepared::new(rcpsp)?;
    let ic = rcpsp.integration_cycle_ns;
    let sync = rcpsp.sync_window_ns;
    let gaps = policy.reserved_gaps(sync, ic);
    let capacity = policy.capacity(sync, ic);
    let mut load = vec![0 as Nanos; rcpsp.resource_count()];
    for a in 0..prep.n {
        for &r in &prep.demands[a] {
            load[r] += prep.duration[a];
        }
    }
    for a in 0..prep.n {
        if prep.duration[a] > policy.block_ns {
            let (link, cycle) = rcpsp.resource(prep.demands[a][0]);
            return Err(SchedulerError::InfeasiblePorosity {
                link,
                cycle,
                load_ns: prep.duration[a],
                capacity_ns: policy.block_ns,
            });
        }
    }
    if let Some((r, &l)) = load.iter().enumerate().find(|(_, &l)| l > capacity) {
        let (link, cycle) = rcpsp.resource(r);
        return Err(SchedulerError::InfeasiblePorosity { link, cycle, load_ns: l, capacity_ns: capacity });
    }
    let mut blocked = Vec::with_capacity(gaps.len() + 1);
    if sync > 0 {
        blocked.push((0, sync));
    }
    blocked.extend(gaps);
    let search = Search { prep: &prep, rcpsp, blocked, policy: Some(policy), budget, seed };
    let best = with_workers(budget.workers, || search.run())?;
    let objective = Objective::Porosity { block_ns: policy.block_ns, gap_ns: policy.gap_ns };
    Ok(TtSchedule::from_starts(rcpsp, &full_starts(&prep, &best.starts), objective))
}

fn min_gap_of(prep: &Prepared, rcpsp: &RcpspInstance, starts: &[Nanos], policy: &GapPolicy) -> Nanos {
    let mut busy: Vec<Vec<(Nanos, Nanos)>> = vec![Vec::new(); prep.resources];
    for a in 0..prep.n {
        for &r in &prep.demands[a] {
            busy[r].push((starts[a], starts[a] + prep.duration[a]));
        }
    }
    preserved_gap(&busy, policy, rcpsp.sync_window_ns, rcpsp.integration_cycle_ns)
}

/// Shortest preserved reserved gap of a full start vector (dummies included).
pub(crate) fn min_preserved_gap(rcpsp: &RcpspInstance, starts: &[Nanos], policy: &GapPolicy) -> Nanos {
    let mut busy: Vec<Vec<(Nanos, Nanos)>> = vec![Vec::new(); rcpsp.resource_count()];
    for (a, &s) in rcpsp.activities.iter().zip(starts) {
        for &r in &a.demands {
            busy[r].push((s, s + a.duration_ns));
        }
    }
    preserved_gap(&busy, policy, rcpsp.sync_window_ns, rcpsp.integration_cycle_ns)
}

/// For every reserved gap on every used resource, the TT-free stretch that
/// contains it; the minimum over all of them.
fn preserved_gap(busy: &[Vec<(Nanos, Nanos)>], policy: &GapPolicy, sync: Nanos, ic: Nanos) -> Nanos {
    let gaps = policy.reserved_gaps(sync, ic);
    let mut best = ic - sync;
    for list in busy.iter().filter(|l| !l.is_empty()) {
        for &(gs, ge) in &gaps {
            let left = list.iter().filter(|&&(_, e)| e <= gs).map(|&(_, e)| e).max().unwrap_or(sync);
            let right = list.iter().filter(|&&(s, _)| s >= ge).map(|&(s, _)| s).min().unwrap_or(ic);
            best = best.min(right.saturating_sub(left));
        }
    }
    best
}
