use super::*;
use crate::icap::{build_assignment_problem, solve_assignment, IcapBudget, IcapMode};
use crate::model::{ConfigOverrides, Instance, MessageSpec, NodeKind};
use crate::routing::tests::{figure_four, topo};
use crate::routing::{all_pairs_shortest_paths, route_all, ShortestPathRouting};

fn pipeline(instance: &Instance) -> (Vec<RouteTree>, RcpspInstance) {
    let table = all_pairs_shortest_paths(&instance.topology).unwrap();
    let trees = route_all(&instance.topology, &instance.messages, &ShortestPathRouting { table: &table }).unwrap();
    let problem = build_assignment_problem(instance, &trees).unwrap();
    let assignment = solve_assignment(&problem, IcapMode::Exact, IcapBudget::default());
    let rcpsp = build_rcpsp(instance, &trees, &problem, &assignment).unwrap();
    (trees, rcpsp)
}

fn overrides(ic: Nanos, sync: Nanos) -> ConfigOverrides {
    ConfigOverrides { integration_cycle_ns: Some(ic), sync_window_ns: Some(sync), ..Default::default() }
}

/// Hand-built single-resource instance: one activity per `(duration, release)`.
fn one_link(jobs: &[(Nanos, Nanos)], ic: Nanos, sync: Nanos) -> RcpspInstance {
    let mut activities = vec![Activity { kind: ActivityKind::Start, duration_ns: 0, demands: vec![] }];
    let mut lags = Vec::new();
    for (k, &(p, r)) in jobs.iter().enumerate() {
        activities.push(Activity {
            kind: ActivityKind::Transmission { message: k as MessageId, link: 0 },
            duration_ns: p,
            demands: vec![0],
        });
        lags.push(TimeLag { from: 0, to: k + 1, lag_ns: r as i64 });
    }
    let end = activities.len();
    for k in 1..end {
        lags.push(TimeLag { from: k, to: end, lag_ns: activities[k].duration_ns as i64 });
    }
    activities.push(Activity { kind: ActivityKind::End, duration_ns: 0, demands: vec![] });
    RcpspInstance {
        activities,
        lags,
        cycles: 1,
        link_count: 1,
        integration_cycle_ns: ic,
        cluster_cycle_ns: ic,
        sync_window_ns: sync,
        switch_delay_ns: 1000,
        first_cycles: (0..jobs.len() as MessageId).map(|m| (m, 0)).collect(),
    }
}

/// Best completion over every processing order, each order packed left.
fn permutation_oracle(jobs: &[(Nanos, Nanos)], sync: Nanos) -> Nanos {
    fn rec(jobs: &[(Nanos, Nanos)], used: &mut Vec<bool>, t: Nanos, best: &mut Nanos) {
        if used.iter().all(|&u| u) {
            *best = (*best).min(t);
            return;
        }
        for i in 0..jobs.len() {
            if !used[i] {
                used[i] = true;
                let (p, r) = jobs[i];
                rec(jobs, used, t.max(r) + p, best);
                used[i] = false;
            }
        }
    }
    let mut best = Nanos::MAX;
    rec(jobs, &mut vec![false; jobs.len()], sync, &mut best);
    best
}

#[test]
fn figure_four_lags() {
    let t = figure_four();
    let m = MessageSpec {
        id: 1,
        period_ns: 10_000_000,
        length_bits: 672,
        release_ns: 10_000,
        deadline_ns: 4_500_000,
        sender: 0,
        receivers: vec![4, 5],
    };
    let inst = Instance::new(t, vec![m], overrides(10_000_000, 0), vec![]).unwrap();
    let (trees, rcpsp) = pipeline(&inst);
    assert_eq!(rcpsp.activities.len(), 7);
    assert!(rcpsp.activities[1..6].iter().all(|a| a.duration_ns == 67_200));

    let tree = &trees[0];
    let root = tree.roots().next().unwrap();
    let release: Vec<_> = rcpsp.lags.iter().filter(|l| l.from == 0).collect();
    assert_eq!(release.len(), 1);
    assert_eq!((release[0].to, release[0].lag_ns), (1 + root, 10_000));

    let precedence: Vec<_> = rcpsp.lags.iter().filter(|l| l.from > 0 && l.to > 0 && l.to < 6).collect();
    assert_eq!(precedence.len(), 4);
    assert!(precedence.iter().all(|l| l.lag_ns == 68_200));

    let mut deadline: Vec<_> = rcpsp.lags.iter().filter(|l| l.to == 0).map(|l| (l.from, l.lag_ns)).collect();
    deadline.sort_unstable();
    let mut expected: Vec<_> = tree.leaves.iter().map(|&(_, k)| (1 + k, 67_200 - 4_500_000)).collect();
    expected.sort_unstable();
    assert_eq!(deadline, expected);
    let into_q = inst.topology.link_between(3, 4).unwrap();
    let into_u = inst.topology.link_between(3, 5).unwrap();
    let leaf_links: Vec<_> = expected.iter().map(|&(a, _)| rcpsp.activities[a].kind).collect();
    assert!(leaf_links.contains(&ActivityKind::Transmission { message: 1, link: into_q }));
    assert!(leaf_links.contains(&ActivityKind::Transmission { message: 1, link: into_u }));

    let s = solve_makespan(&rcpsp, SolverBudget::default(), 0).unwrap();
    assert!(s.valid);
    // four hops, three switch traversals
    assert_eq!(s.makespan_ns, 10_000 + 3 * 68_200 + 67_200);
}

#[test]
fn single_hop_has_only_dummy_lags() {
    let t = topo(&[(0, NodeKind::Endpoint), (1, NodeKind::Endpoint)], &[(0, 1)]);
    let m = MessageSpec {
        id: 7,
        period_ns: 1_000_000,
        length_bits: 672,
        release_ns: 0,
        deadline_ns: 1_000_000,
        sender: 0,
        receivers: vec![1],
    };
    let inst = Instance::new(t, vec![m], overrides(1_000_000, 0), vec![]).unwrap();
    let (_, rcpsp) = pipeline(&inst);
    assert_eq!(rcpsp.activities.len(), 3);
    assert!(rcpsp.lags.iter().all(|l| l.from == 0 || l.to == 0 || l.to == rcpsp.end()));
}

#[test]
fn cluster_period_message_demands_its_cycle_only() {
    let t = topo(&[(0, NodeKind::Endpoint), (1, NodeKind::Endpoint)], &[(0, 1)]);
    let ic = 1_000_000;
    let fast = MessageSpec {
        id: 0,
        period_ns: ic,
        length_bits: 672,
        release_ns: 0,
        deadline_ns: ic,
        sender: 0,
        receivers: vec![1],
    };
    let slow = MessageSpec { id: 1, period_ns: 4 * ic, release_ns: 2 * ic, deadline_ns: 3 * ic, ..fast.clone() };
    let inst = Instance::new(t, vec![fast, slow], overrides(ic, 0), vec![]).unwrap();
    let (_, rcpsp) = pipeline(&inst);
    assert_eq!(rcpsp.cycles, 4);
    let link = inst.topology.link_between(0, 1).unwrap();
    let slow_act = rcpsp
        .activities
        .iter()
        .find(|a| a.kind == ActivityKind::Transmission { message: 1, link })
        .unwrap();
    assert_eq!(slow_act.demands, vec![link * 4 + 2]);
    let fast_act = &rcpsp.activities[1];
    assert_eq!(fast_act.demands.len(), 4);
}

#[test]
fn one_activity_starts_at_zero() {
    let r = one_link(&[(67_200, 0)], 1_000_000, 0);
    let s = solve_makespan(&r, SolverBudget::default(), 0).unwrap();
    assert_eq!(s.placements[0].offset_ns, 0);
    assert_eq!(s.makespan_ns, 67_200);
}

#[test]
fn chain_waits_for_switch_delay() {
    let t = topo(
        &[(0, NodeKind::Endpoint), (1, NodeKind::Redistribution), (2, NodeKind::Endpoint)],
        &[(0, 1), (1, 2)],
    );
    let m = MessageSpec {
        id: 0,
        period_ns: 1_000_000,
        length_bits: 672,
        release_ns: 0,
        deadline_ns: 1_000_000,
        sender: 0,
        receivers: vec![2],
    };
    let inst = Instance::new(t, vec![m], overrides(1_000_000, 0), vec![]).unwrap();
    let (_, rcpsp) = pipeline(&inst);
    let s = solve_makespan(&rcpsp, SolverBudget::default(), 0).unwrap();
    let first = s.placement(0, inst.topology.link_between(0, 1).unwrap()).unwrap();
    let second = s.placement(0, inst.topology.link_between(1, 2).unwrap()).unwrap();
    assert_eq!(first.offset_ns, 0);
    assert_eq!(second.offset_ns, 67_200 + 1000);
    assert_eq!(s.makespan_ns, 2 * 67_200 + 1000);
}

#[test]
fn shared_link_packs_back_to_back() {
    let jobs = [(5_000, 0), (7_000, 0), (3_000, 0), (11_000, 0), (2_000, 0)];
    let sync = 672;
    let r = one_link(&jobs, 100_000, sync);
    let s = solve_makespan(&r, SolverBudget::default(), 3).unwrap();
    assert!(s.valid);
    assert_eq!(s.makespan_ns, 28_000 + sync);
    assert_eq!(s.makespan_ns, permutation_oracle(&jobs, sync));
}

#[test]
fn releases_match_permutation_oracle() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for case in 0..50 {
        let n = rng.gen_range(1..=6);
        let jobs: Vec<(Nanos, Nanos)> =
            (0..n).map(|_| (rng.gen_range(1..=20) * 500, rng.gen_range(0..=40) * 500)).collect();
        let r = one_link(&jobs, 200_000, 1_000);
        let s = solve_makespan(&r, SolverBudget { iterations: 400, ..Default::default() }, case).unwrap();
        assert!(s.valid);
        assert_eq!(s.makespan_ns, permutation_oracle(&jobs, 1_000), "case {case}: {jobs:?}");
    }
}

#[test]
fn same_seed_same_schedule() {
    let jobs = [(5_000, 1_000), (7_000, 0), (3_000, 9_000), (11_000, 0)];
    let r = one_link(&jobs, 100_000, 0);
    let budget = SolverBudget { iterations: 200, workers: 3, ..Default::default() };
    let a = solve_makespan(&r, budget, 5).unwrap();
    let b = solve_makespan(&r, SolverBudget { workers: 1, ..budget }, 5).unwrap();
    assert_eq!(a, b);
}

#[test]
fn porosity_empty_keeps_every_gap() {
    let r = one_link(&[], 800_000, 0);
    let policy = GapPolicy::default_for(800_000);
    let s = solve_porosity(&r, policy, SolverBudget::default(), 0).unwrap();
    assert!(s.placements.is_empty());
    assert_eq!(s.min_preserved_gap_ns, Some(800_000));
}

#[test]
fn porosity_single_activity_stays_in_first_block() {
    let policy = GapPolicy { block_ns: 100_000, gap_ns: 50_000 };
    let r = one_link(&[(30_000, 0)], 1_000_000, 0);
    let s = solve_porosity(&r, policy, SolverBudget::default(), 0).unwrap();
    assert_eq!(s.placements[0].offset_ns, 0);
    assert!(s.min_preserved_gap_ns.unwrap() >= 50_000);
}

#[test]
fn porosity_pushes_overflow_past_the_gap() {
    let policy = GapPolicy { block_ns: 100_000, gap_ns: 50_000 };
    let r = one_link(&[(60_000, 0), (60_000, 0)], 1_000_000, 0);
    let s = solve_porosity(&r, policy, SolverBudget::default(), 0).unwrap();
    let mut offsets: Vec<_> = s.placements.iter().map(|p| p.offset_ns).collect();
    offsets.sort_unstable();
    assert_eq!(offsets[0], 0);
    assert!(offsets[1] >= 150_000);
    for p in &s.placements {
        assert!(p.offset_ns + p.duration_ns <= 100_000 || p.offset_ns >= 150_000);
    }
}

#[test]
fn porosity_rejects_overload() {
    let policy = GapPolicy { block_ns: 100_000, gap_ns: 100_000 };
    let r = one_link(&[(90_000, 0), (90_000, 0), (90_000, 0)], 400_000, 0);
    let err = solve_porosity(&r, policy, SolverBudget::default(), 0).unwrap_err();
    assert!(matches!(err, SchedulerError::InfeasiblePorosity { .. }));
}

#[test]
fn empty_schedule_makespan_is_sync() {
    let r = one_link(&[], 100_000, 672);
    let s = solve_makespan(&r, SolverBudget::default(), 0).unwrap();
    assert_eq!(makespan(&s), 672);
}

#[test]
fn deadline_forces_order() {
    // the long job would go first by release, but the short one must finish by 4 us
    let mut r = one_link(&[(10_000, 0), (3_000, 1_000)], 100_000, 0);
    r.lags.push(TimeLag { from: 2, to: 0, lag_ns: 3_000 - 4_000 });
    let s = solve_makespan(&r, SolverBudget::default(), 0).unwrap();
    assert!(s.valid);
    assert_eq!(s.placements[1].offset_ns, 1_000);
    assert_eq!(s.makespan_ns, 14_000);
}

#[test]
fn check_starts_flags_overlap() {
    let r = one_link(&[(5_000, 0), (5_000, 0)], 100_000, 0);
    assert!(check_starts(&r, &[0, 0, 5_000, 10_000]).is_ok());
    assert!(check_starts(&r, &[0, 0, 4_999, 10_000]).unwrap_err().contains("overlap"));
}
