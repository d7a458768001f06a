use super::*;
use crate::model::{ConfigOverrides, MessageSpec, NodeKind};
use crate::pipeline::{run, PipelineOptions};
use crate::routing::all_pairs_shortest_paths;
use crate::routing::tests::topo;
use crate::scheduler::{Objective, Placement};

/// Worst waiting time by walking every arrival phase at 1 ns.
fn dense_blocking(period: Nanos, busy: &[(Nanos, Nanos)], frame: Nanos) -> Option<Nanos> {
    let n = 3 * period as usize;
    let mut occupied = vec![false; n];
    for &(a, b) in busy {
        for k in 0..3 {
            for t in a..b {
                occupied[(t + k * period) as usize] = true;
            }
        }
    }
    // prefix counts of occupied nanoseconds
    let mut prefix = vec![0u32; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + occupied[i] as u32;
    }
    let need = frame as usize + 1;
    let mut next_fit = vec![usize::MAX; n + 1];
    for s in (0..n).rev() {
        let fits = s + need <= n && prefix[s + need] == prefix[s];
        next_fit[s] = if fits { s } else { next_fit[s + 1] };
    }
    let mut worst = 0;
    for t in 0..period as usize {
        let s = next_fit[t];
        if s == usize::MAX {
            return None;
        }
        worst = worst.max((s - t) as Nanos);
    }
    Some(worst)
}

#[test]
fn blocking_without_tt_is_zero() {
    assert_eq!(tt_blocking(&LinkTimeline::new(10_000_000, vec![]), 10_000), Some(0));
}

#[test]
fn blocking_after_one_busy_block() {
    let tl = LinkTimeline::new(10_000_000, vec![(0, 100_000)]);
    assert_eq!(tt_blocking(&tl, 10_000), Some(110_000));
    assert_eq!(dense_blocking(10_000_000, &[(0, 100_000)], 10_000), Some(110_000));
}

#[test]
fn blocking_unbounded_when_no_gap_fits() {
    let tl = LinkTimeline::new(1_000, vec![(0, 400), (405, 1_000)]);
    assert_eq!(tt_blocking(&tl, 10), None);
    assert_eq!(dense_blocking(1_000, &[(0, 400), (405, 1_000)], 10), None);
}

#[test]
fn blocking_matches_dense_enumeration() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    for case in 0..200 {
        let period = rng.gen_range(50..400);
        let k = rng.gen_range(0..=5);
        let busy: Vec<(Nanos, Nanos)> = (0..k)
            .map(|_| {
                let a = rng.gen_range(0..period);
                (a, (a + rng.gen_range(1..period / 4 + 2)).min(period))
            })
            .collect();
        let frame = rng.gen_range(1..period / 3 + 2);
        let tl = LinkTimeline::new(period, busy.clone());
        assert_eq!(tt_blocking(&tl, frame), dense_blocking(period, &tl.busy, frame), "case {case}: {busy:?} f={frame}");
    }
}

#[test]
fn more_tt_never_lowers_blocking() {
    let base = LinkTimeline::new(1_000, vec![(0, 100), (500, 550)]);
    let more = LinkTimeline::new(1_000, vec![(0, 100), (500, 550), (300, 360)]);
    assert!(tt_blocking(&more, 40).unwrap() >= tt_blocking(&base, 40).unwrap());
}

fn line() -> Instance {
    let t = topo(
        &[(0, NodeKind::Endpoint), (1, NodeKind::Redistribution), (2, NodeKind::Endpoint), (3, NodeKind::Endpoint)],
        &[(0, 1), (1, 2), (1, 3)],
    );
    let m = MessageSpec {
        id: 0,
        period_ns: 1_000_000,
        length_bits: 672,
        release_ns: 0,
        deadline_ns: 1_000_000,
        sender: 0,
        receivers: vec![2, 3],
    };
    let o = ConfigOverrides { integration_cycle_ns: Some(1_000_000), sync_window_ns: Some(0), ..Default::default() };
    Instance::new(t, vec![m], o, vec![]).unwrap()
}

fn empty_schedule(inst: &Instance) -> TtSchedule {
    TtSchedule {
        integration_cycle_ns: inst.config.integration_cycle_ns,
        cluster_cycle_ns: inst.config.cluster_cycle_ns,
        sync_window_ns: inst.config.sync_window_ns,
        objective: Objective::Makespan,
        first_cycles: vec![],
        placements: vec![],
        makespan_ns: inst.config.sync_window_ns,
        min_preserved_gap_ns: None,
        valid: true,
    }
}

#[test]
fn solved_schedule_validates() {
    let inst = line();
    let (prepared, schedule) = run(&inst, &PipelineOptions::default()).unwrap();
    let report = validate(&schedule, &inst, &prepared.trees);
    assert!(report.passed(), "{:?}", report.violations);
    assert_eq!(report.classes.len(), 8);
    assert_eq!(critical_gap(&schedule, &inst), 1_000_000 - schedule.makespan_ns);
}

#[test]
fn precedence_off_by_one_is_caught() {
    let inst = line();
    let (prepared, mut schedule) = run(&inst, &PipelineOptions::default()).unwrap();
    let second = inst.topology.link_between(1, 2).unwrap();
    let p = schedule.placements.iter_mut().find(|p| p.link == second).unwrap();
    assert_eq!(p.offset_ns, 67_200 + 1_000);
    p.offset_ns -= 1;
    let report = validate(&schedule, &inst, &prepared.trees);
    assert_eq!(report.count(ConstraintClass::Precedence), 1);
    assert!(!report.passed());
}

#[test]
fn overlapping_occurrences_are_caught() {
    let t = topo(&[(0, NodeKind::Endpoint), (1, NodeKind::Endpoint)], &[(0, 1)]);
    let m = |id| MessageSpec {
        id,
        period_ns: 1_000_000,
        length_bits: 672,
        release_ns: 0,
        deadline_ns: 1_000_000,
        sender: 0,
        receivers: vec![1],
    };
    let o = ConfigOverrides { integration_cycle_ns: Some(1_000_000), sync_window_ns: Some(0), ..Default::default() };
    let inst = Instance::new(t, vec![m(0), m(1)], o, vec![]).unwrap();
    let (prepared, mut schedule) = run(&inst, &PipelineOptions::default()).unwrap();
    for p in &mut schedule.placements {
        p.offset_ns = 100;
    }
    let report = validate(&schedule, &inst, &prepared.trees);
    assert_eq!(report.count(ConstraintClass::ContentionFree), 1);
    assert_eq!(report.violations[0].cycle, Some(0));
}

#[test]
fn missing_and_misplaced_instances() {
    let inst = line();
    let (prepared, mut schedule) = run(&inst, &PipelineOptions::default()).unwrap();
    schedule.placements.pop();
    schedule.placements[0].offset_ns = 999_990;
    let report = validate(&schedule, &inst, &prepared.trees);
    assert_eq!(report.count(ConstraintClass::Completeness), 1);
    assert_eq!(report.count(ConstraintClass::InCycleFit), 1);
}

#[test]
fn critical_gap_of_empty_schedule() {
    let mut inst = line();
    inst.config.sync_window_ns = 672;
    let s = TtSchedule { sync_window_ns: 672, ..empty_schedule(&inst) };
    assert_eq!(critical_gap(&s, &inst), 1_000_000 - 672);
}

#[test]
fn critical_gap_after_six_of_ten() {
    let t = topo(&[(0, NodeKind::Endpoint), (1, NodeKind::Endpoint)], &[(0, 1)]);
    let inst = Instance::new(
        t,
        vec![],
        ConfigOverrides { integration_cycle_ns: Some(10_000_000), sync_window_ns: Some(0), ..Default::default() },
        vec![],
    )
    .unwrap();
    let mut inst = inst;
    inst.messages.push(MessageSpec {
        id: 0,
        period_ns: 10_000_000,
        length_bits: 12_240,
        release_ns: 0,
        deadline_ns: 10_000_000,
        sender: 0,
        receivers: vec![1],
    });
    let mut s = empty_schedule(&inst);
    s.first_cycles = vec![(0, 0)];
    s.placements = vec![Placement { message: 0, link: 0, offset_ns: 5_000_000, duration_ns: 1_000_000 }];
    assert_eq!(critical_gap(&s, &inst), 5_000_000);
    s.placements.push(Placement { message: 0, link: 1, offset_ns: 0, duration_ns: 6_000_000 });
    assert_eq!(critical_gap(&s, &inst), 4_000_000);
}

fn vl(id: u32, route: Vec<LinkId>) -> VirtualLinkSpec {
    VirtualLinkSpec { id, route: Some(route), source: None, destinations: vec![], max_frame_bits: 4_000, bag_ns: 2_000_000 }
}

#[test]
fn unloaded_two_hop_bound() {
    let inst = line();
    let table = all_pairs_shortest_paths(&inst.topology).unwrap();
    let route = table.path(&inst.topology, 0, 2).unwrap();
    let vls = resolve_virtual_links(&inst, &table, &[vl(1, route)]).unwrap();
    let report = rc_worst_case_delay(&empty_schedule(&inst), &inst, &vls).unwrap();
    let frame = transmission_time(4_000, 10_000_000).unwrap();
    assert_eq!(report.virtual_links[0].bound_ns, 2 * frame + 1_000);
    assert_eq!(report.method, "conservative link-local bound");
}

#[test]
fn sharing_adds_one_frame() {
    let inst = line();
    let table = all_pairs_shortest_paths(&inst.topology).unwrap();
    let route = table.path(&inst.topology, 0, 2).unwrap();
    let solo = resolve_virtual_links(&inst, &table, &[vl(1, route.clone())]).unwrap();
    let pair = resolve_virtual_links(&inst, &table, &[vl(1, route.clone()), vl(2, route.clone())]).unwrap();
    let s = empty_schedule(&inst);
    let a = rc_worst_case_delay(&s, &inst, &solo).unwrap();
    let b = rc_worst_case_delay(&s, &inst, &pair).unwrap();
    let frame = transmission_time(4_000, 10_000_000).unwrap();
    // one competing frame on each of the two shared links
    assert_eq!(b.virtual_links[0].bound_ns, a.virtual_links[0].bound_ns + 2 * frame);
    assert_eq!(b.virtual_links[1].bound_ns, b.virtual_links[0].bound_ns);
}

#[test]
fn tt_traffic_raises_the_bound() {
    let inst = line();
    let table = all_pairs_shortest_paths(&inst.topology).unwrap();
    let route = table.path(&inst.topology, 0, 2).unwrap();
    let vls = resolve_virtual_links(&inst, &table, &[vl(1, route)]).unwrap();
    let (_, schedule) = run(&inst, &PipelineOptions::default()).unwrap();
    let loaded = rc_worst_case_delay(&schedule, &inst, &vls).unwrap();
    let empty = rc_worst_case_delay(&empty_schedule(&inst), &inst, &vls).unwrap();
    assert!(loaded.virtual_links[0].bound_ns > empty.virtual_links[0].bound_ns);
    let hop = &loaded.virtual_links[0].hops[0];
    assert_eq!(hop.tt_blocking_ns, 67_200 + hop.transmission_ns);
}

#[test]
fn short_bag_is_rejected() {
    let inst = line();
    let table = all_pairs_shortest_paths(&inst.topology).unwrap();
    let mut spec = vl(1, table.path(&inst.topology, 0, 2).unwrap());
    spec.bag_ns = 10;
    assert!(resolve_virtual_links(&inst, &table, &[spec]).is_err());
}
