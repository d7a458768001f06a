//! Serial schedule generation over activity lists, with bounded
//! backtracking on deadline conflicts and forward-backward justification.

use std::collections::{BTreeMap, BTreeSet};

use super::timeline::Timeline;
use super::{ActivityKind, RcpspInstance, SchedulerError};
use crate::model::{LinkId, MessageId, Nanos};

/// Solver view of a project instance: real activities only, indexed from 0.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    pub n: usize,
    pub duration: Vec<Nanos>,
    pub demands: Vec<Vec<usize>>,
    pub parents: Vec<Vec<(usize, Nanos)>>,
    pub children: Vec<Vec<(usize, Nanos)>>,
    /// Static earliest start: sync window, release lags and predecessor chains.
    pub es: Vec<Nanos>,
    /// Static latest start: deadlines, cycle end and successor chains.
    pub ls: Vec<Nanos>,
    /// Start-to-completion length of the subtree hanging off each activity.
    pub tail: Vec<Nanos>,
    /// Relative deadline of the activity's message, for priorities.
    pub deadline: Vec<Nanos>,
    pub message: Vec<MessageId>,
    pub link: Vec<LinkId>,
    pub resources: usize,
    pub sync: Nanos,
}

/// Why a decoding failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Failure {
    pub activity: usize,
    pub earliest: Nanos,
    pub latest: Nanos,
}

impl Prepared {
    pub(crate) fn new(rcpsp: &RcpspInstance) -> Result<Self, SchedulerError> {
        let end = rcpsp.end();
        let n = end - 1;
        let ic = rcpsp.integration_cycle_ns;
        let sync = rcpsp.sync_window_ns;
        let mut duration = Vec::with_capacity(n);
        let mut demands = Vec::with_capacity(n);
        let mut message = Vec::with_capacity(n);
        let mut link = Vec::with_capacity(n);
        for a in &rcpsp.activities[1..end] {
            match a.kind {
                ActivityKind::Transmission { message: m, link: l } => {
                    message.push(m);
                    link.push(l);
                }
                _ => return Err(SchedulerError::Malformed("dummy activity inside the project".into())),
            }
            if a.duration_ns > ic {
                return Err(SchedulerError::Malformed("activity longer than the integration cycle".into()));
            }
            duration.push(a.duration_ns);
            demands.push(a.demands.clone());
        }
        let mut es = vec![sync; n];
        let mut ls: Vec<i128> = duration.iter().map(|&p| (ic - p) as i128).collect();
        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        let mut deadline = vec![ic; n];
        for lag in &rcpsp.lags {
            let (f, t, l) = (lag.from, lag.to, lag.lag_ns);
            if t == end || f == end {
                continue;
            }
            if f == 0 && t == 0 {
                continue;
            }
            if f == 0 {
                if l > 0 {
                    es[t - 1] = es[t - 1].max(l as Nanos);
                }
            } else if t == 0 {
                // start(f) <= -l
                ls[f - 1] = ls[f - 1].min(-(l as i128));
            } else if l < 0 {
                return Err(SchedulerError::Malformed(format!("negative lag between activities {f} and {t}")));
            } else {
                parents[t - 1].push((f - 1, l as Nanos));
                children[f - 1].push((t - 1, l as Nanos));
            }
        }

        // topological order (Kahn, smallest index first)
        let mut indeg: Vec<usize> = parents.iter().map(Vec::len).collect();
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut topo = Vec::with_capacity(n);
        while let Some(i) = ready.pop_first() {
            topo.push(i);
            for &(c, _) in &children[i] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if topo.len() != n {
            return Err(SchedulerError::Malformed("positive time lags form a cycle".into()));
        }
        for &i in &topo {
            for &(c, l) in &children[i] {
                es[c] = es[c].max(es[i] + l);
            }
        }
        let mut tail = duration.clone();
        for &i in topo.iter().rev() {
            for &(c, l) in &children[i] {
                ls[i] = ls[i].min(ls[c] - l as i128);
                tail[i] = tail[i].max(l + tail[c]);
            }
        }
        // a message's relative deadline is the tightest completion bound of its leaves
        let mut per_message: BTreeMap<MessageId, Nanos> = BTreeMap::new();
        for lag in &rcpsp.lags {
            if lag.to == 0 && lag.from != 0 && lag.from != end {
                let f = lag.from - 1;
                let d = (duration[f] as i128 - lag.lag_ns as i128).max(0) as Nanos;
                let e = per_message.entry(message[f]).or_insert(ic);
                *e = (*e).min(d);
            }
        }
        for (j, m) in message.iter().enumerate() {
            if let Some(&d) = per_message.get(m) {
                deadline[j] = d;
            }
        }
        let ls = ls.into_iter().map(|v| v.max(-1)).collect::<Vec<i128>>();
        let mut ls_out = Vec::with_capacity(n);
        for (i, v) in ls.into_iter().enumerate() {
            if v < es[i] as i128 {
                return Err(SchedulerError::NoFeasibleSchedule {
                    message: message[i],
                    link: link[i],
                    earliest_ns: es[i],
                    latest_ns: v.max(0) as Nanos,
                });
            }
            ls_out.push(v as Nanos);
        }
        Ok(Self {
            n,
            duration,
            demands,
            parents,
            children,
            es,
            ls: ls_out,
            tail,
            deadline,
            message,
            link,
            resources: rcpsp.resource_count(),
            sync,
        })
    }

    pub(crate) fn makespan(&self, starts: &[Nanos]) -> Nanos {
        starts.iter().zip(&self.duration).map(|(s, p)| s + p).max().unwrap_or(0).max(self.sync)
    }

    fn dynamic_es(&self, a: usize, starts: &[Option<Nanos>]) -> Nanos {
        self.parents[a]
            .iter()
            .map(|&(p, l)| starts[p].expect("parent placed before child") + l)
            .fold(self.es[a], Nanos::max)
    }

    /// Serial schedule generation: place activities in list order at their
    /// earliest feasible start. On a missed latest start, the conflicting
    /// activity with the latest deadline is unscheduled (with its placed
    /// descendants) and placed again after the current one.
    pub(crate) fn decode(
        &self,
        list: &[usize],
        backtrack_limit: usize,
        tl: &mut Timeline,
    ) -> Result<Vec<Nanos>, Failure> {
        tl.clear();
        let mut pos = vec![0usize; self.n];
        for (p, &a) in list.iter().enumerate() {
            pos[a] = p;
        }
        let mut starts: Vec<Option<Nanos>> = vec![None; self.n];
        let mut pending: BTreeSet<usize> = BTreeSet::new();
        let mut cursor = 0;
        let mut backtracks = 0;
        loop {
            let p = if let Some(p) = pending.pop_first() {
                p
            } else if cursor < list.len() {
                cursor += 1;
                cursor - 1
            } else {
                break;
            };
            let a = list[p];
            loop {
                let lo = self.dynamic_es(a, &starts);
                let hi = self.ls[a];
                if let Some(s) = tl.earliest(&self.demands[a], lo, hi, self.duration[a]) {
                    tl.insert(&self.demands[a], s, self.duration[a], a);
                    starts[a] = Some(s);
                    break;
                }
                let failure = Failure { activity: a, earliest: lo, latest: hi };
                if backtracks >= backtrack_limit || lo > hi {
                    return Err(failure);
                }
                let blockers = tl.occupants(&self.demands[a], lo, hi + self.duration[a]);
                let Some(&victim) = blockers.iter().max_by_key(|&&b| (self.ls[b], pos[b])) else {
                    return Err(failure);
                };
                backtracks += 1;
                let mut stack = vec![victim];
                while let Some(v) = stack.pop() {
                    if let Some(s) = starts[v].take() {
                        tl.remove(&self.demands[v], s, v);
                        pending.insert(pos[v]);
                        stack.extend(self.children[v].iter().map(|&(c, _)| c));
                    }
                }
            }
        }
        Ok(starts.into_iter().map(|s| s.expect("all activities placed")).collect())
    }

    /// Right-justify against the current makespan, then left-justify again.
    /// Returns the new starts and the activity list of the final pass.
    pub(crate) fn justify(&self, starts: &[Nanos], tl: &mut Timeline) -> Option<(Vec<Nanos>, Vec<usize>)> {
        let cmax = self.makespan(starts);
        let mut order: Vec<usize> = (0..self.n).collect();
        order.sort_by_key(|&a| (std::cmp::Reverse(starts[a] + self.duration[a]), std::cmp::Reverse(starts[a]), a));
        tl.clear();
        let mut back: Vec<Option<Nanos>> = vec![None; self.n];
        for &a in &order {
            let mut hi = self.ls[a].min(cmax.checked_sub(self.duration[a])?);
            for &(c, l) in &self.children[a] {
                hi = hi.min(back[c].expect("children finish later").checked_sub(l)?);
            }
            let s = tl.latest(&self.demands[a], self.es[a], hi, self.duration[a])?;
            tl.insert(&self.demands[a], s, self.duration[a], a);
            back[a] = Some(s);
        }
        let back: Vec<Nanos> = back.into_iter().map(Option::unwrap).collect();
        let mut order: Vec<usize> = (0..self.n).collect();
        order.sort_by_key(|&a| (back[a], a));
        tl.clear();
        let mut fwd: Vec<Option<Nanos>> = vec![None; self.n];
        for &a in &order {
            let lo = self.dynamic_es(a, &fwd);
            let s = tl.earliest(&self.demands[a], lo, self.ls[a], self.duration[a])?;
            tl.insert(&self.demands[a], s, self.duration[a], a);
            fwd[a] = Some(s);
        }
        let fwd: Vec<Nanos> = fwd.into_iter().map(Option::unwrap).collect();
        Some((fwd, order))
    }
}
