//! Occupancy of unary resources on a single cycle-relative time axis.

use crate::model::Nanos;

/// Busy intervals of every resource, plus windows blocked on all of them.
#[derive(Debug, Clone)]
pub(crate) struct Timeline {
    busy: Vec<Vec<(Nanos, Nanos, usize)>>,
    /// Sorted, disjoint, shared by all resources.
    blocked: Vec<(Nanos, Nanos)>,
}

impl Timeline {
    pub(crate) fn new(resources: usize, blocked: Vec<(Nanos, Nanos)>) -> Self {
        Self { busy: vec![Vec::new(); resources], blocked }
    }

    pub(crate) fn clear(&mut self) {
        for r in &mut self.busy {
            r.clear();
        }
    }

    fn overlap_in(list: &[(Nanos, Nanos, usize)], start: Nanos, end: Nanos) -> Option<(Nanos, Nanos)> {
        // last interval starting before `end`
        let idx = list.partition_point(|&(s, _, _)| s < end);
        if idx == 0 {
            return None;
        }
        let (s, e, _) = list[idx - 1];
        (e > start).then_some((s, e))
    }

    fn blocked_overlap(&self, start: Nanos, end: Nanos) -> Option<(Nanos, Nanos)> {
        let idx = self.blocked.partition_point(|&(s, _)| s < end);
        if idx == 0 {
            return None;
        }
        let (s, e) = self.blocked[idx - 1];
        (e > start).then_some((s, e))
    }

    /// Earliest start in `[lo, hi]` where `[start, start + duration)` is free
    /// on every resource in `resources`.
    pub(crate) fn earliest(&self, resources: &[usize], lo: Nanos, hi: Nanos, duration: Nanos) -> Option<Nanos> {
        let mut t = lo;
        'outer: loop {
            if t > hi {
                return None;
            }
            let end = t + duration;
            if let Some((_, e)) = self.blocked_overlap(t, end.max(t + 1)) {
                t = e;
                continue;
            }
            if duration > 0 {
                for &r in resources {
                    if let Some((_, e)) = Self::overlap_in(&self.busy[r], t, end) {
                        t = e;
                        continue 'outer;
                    }
                }
            }
            return Some(t);
        }
    }

    /// Latest start in `[lo, hi]` with the same freedom condition.
    pub(crate) fn latest(&self, resources: &[usize], lo: Nanos, hi: Nanos, duration: Nanos) -> Option<Nanos> {
        let mut t = hi;
        'outer: loop {
            if t < lo {
                return None;
            }
            let end = t + duration;
            if let Some((s, _)) = self.blocked_overlap(t, end.max(t + 1)) {
                t = s.checked_sub(duration.max(1))?;
                continue;
            }
            if duration > 0 {
                for &r in resources {
                    if let Some((s, _)) = Self::overlap_in(&self.busy[r], t, end) {
                        t = s.checked_sub(duration)?;
                        continue 'outer;
                    }
                }
            }
            return Some(t);
        }
    }

    pub(crate) fn insert(&mut self, resources: &[usize], start: Nanos, duration: Nanos, activity: usize) {
        if duration == 0 {
            return;
        }
        for &r in resources {
            let list = &mut self.busy[r];
            let idx = list.partition_point(|&(s, _, _)| s < start);
            list.insert(idx, (start, start + duration, activity));
        }
    }

    pub(crate) fn remove(&mut self, resources: &[usize], start: Nanos, activity: usize) {
        for &r in resources {
            let list = &mut self.busy[r];
            if let Some(idx) = list.iter().position(|&(s, _, a)| s == start && a == activity) {
                list.remove(idx);
            }
        }
    }

    /// Activities on `resources` whose intervals intersect `[start, end)`.
    pub(crate) fn occupants(&self, resources: &[usize], start: Nanos, end: Nanos) -> Vec<usize> {
        let mut out = Vec::new();
        for &r in resources {
            for &(s, e, a) in &self.busy[r] {
                if s < end && e > start && !out.contains(&a) {
                    out.push(a);
                }
            }
        }
        out
    }
}
