//! Seeded benchmark generation: random topologies, TT message sets and
//! Rate-Constrained virtual links.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::icap::relative_window;
use crate::model::{
    transmission_time, wire_bits, ConfigOverrides, Instance, Link, MessageSpec, ModelError, Nanos, NetworkTopology,
    Node, NodeId, NodeKind, VirtualLinkSpec, FRAME_OVERHEAD_OCTETS, MAX_FRAME_BITS, MIN_SWITCH_DELAY_NS,
    SYNC_FRAME_BITS,
};
use crate::routing::{all_pairs_shortest_paths, RoutingTable};

/// Largest payload whose frame stays within [`MAX_FRAME_BITS`].
pub const MAX_PAYLOAD_OCTETS: u64 = MAX_FRAME_BITS / 8 - FRAME_OVERHEAD_OCTETS;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeneratorError {
    #[error("invalid generator configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyKind {
    Star,
    /// Hub switch, spoke switches, endpoints on the spokes.
    Snowflake,
    BarabasiAlbertTree,
    /// A Barabasi-Albert tree with extra switch-to-switch links.
    RandomRedundant,
}

impl TopologyKind {
    pub const ALL: [TopologyKind; 4] =
        [TopologyKind::Star, TopologyKind::Snowflake, TopologyKind::BarabasiAlbertTree, TopologyKind::RandomRedundant];

    pub fn parse(s: &str) -> Result<Self, GeneratorError> {
        match s {
            "star" => Ok(Self::Star),
            "snowflake" => Ok(Self::Snowflake),
            "barabasi-albert-tree" => Ok(Self::BarabasiAlbertTree),
            "random-with-redundant-links" | "random-redundant" => Ok(Self::RandomRedundant),
            other => Err(GeneratorError::Config(format!("unknown topology kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// `None` draws one of the four kinds per instance.
    pub topology: Option<TopologyKind>,
    pub endpoints: usize,
    pub messages: usize,
    pub bandwidth_bps: u64,
    pub payload_min_octets: u64,
    pub payload_max_octets: u64,
    /// Periods are `2^n * 3^m * ic` with `n` up to this and `m` in {0, 1}.
    pub max_period_exponent: u32,
    /// Defaults to 1000 ns per message.
    pub integration_cycle_ns: Option<Nanos>,
    pub switch_delay_ns: Nanos,
    /// Release and deadline are moved off cycle boundaries by up to
    /// `ic / jitter_divisor`.
    pub jitter_divisor: u64,
    /// Extra switch-to-switch edges, as a fraction of the node count.
    pub redundancy: f64,
    pub virtual_links: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            topology: None,
            endpoints: 20,
            messages: 20,
            bandwidth_bps: 1_000_000_000,
            payload_min_octets: 46,
            payload_max_octets: 256,
            max_period_exponent: 0,
            integration_cycle_ns: None,
            switch_delay_ns: MIN_SWITCH_DELAY_NS,
            jitter_divisor: 50,
            redundancy: 0.2,
            virtual_links: 0,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn integration_cycle(&self) -> Nanos {
        self.integration_cycle_ns.unwrap_or(1_000 * self.messages.max(1) as Nanos)
    }

    fn check(&self) -> Result<(), GeneratorError> {
        let bad = |s: &str| Err(GeneratorError::Config(s.into()));
        if self.endpoints < 2 {
            return bad("at least two endpoints are needed");
        }
        if self.bandwidth_bps == 0 {
            return bad("bandwidth must be positive");
        }
        if self.payload_min_octets > self.payload_max_octets || self.payload_max_octets > MAX_PAYLOAD_OCTETS {
            return bad("payload range must lie within 0..=1492 octets");
        }
        if self.jitter_divisor == 0 {
            return bad("jitter divisor must be positive");
        }
        if !(0.0..=10.0).contains(&self.redundancy) {
            return bad("redundancy fraction out of range");
        }
        Ok(())
    }
}

/// Undirected edge list over `0..node_count` to a topology with both link
/// directions. Nodes in `endpoints` become endpoints.
fn build(node_count: usize, endpoints: &BTreeSet<usize>, edges: &[(usize, usize)], bw: u64) -> NetworkTopology {
    // switches first, then endpoints, both in index order
    let mut order: Vec<usize> = (0..node_count).filter(|i| !endpoints.contains(i)).collect();
    order.extend(endpoints.iter().copied());
    let mut id = vec![0 as NodeId; node_count];
    for (k, &i) in order.iter().enumerate() {
        id[i] = k as NodeId;
    }
    let mut nodes: Vec<Node> = order
        .iter()
        .map(|&i| Node {
            id: id[i],
            kind: if endpoints.contains(&i) { NodeKind::Endpoint } else { NodeKind::Redistribution },
        })
        .collect();
    nodes.sort_by_key(|n| n.id);
    let mut links = Vec::with_capacity(edges.len() * 2);
    let mut sorted: Vec<(NodeId, NodeId)> =
        edges.iter().map(|&(a, b)| (id[a].min(id[b]), id[a].max(id[b]))).collect();
    sorted.sort_unstable();
    for (a, b) in sorted {
        links.push(Link { source: a, destination: b, bandwidth_bps: bw });
        links.push(Link { source: b, destination: a, bandwidth_bps: bw });
    }
    NetworkTopology::new(nodes, links).expect("generated topologies are well formed")
}

fn star(endpoints: usize, bw: u64) -> NetworkTopology {
    let edges: Vec<_> = (1..=endpoints).map(|e| (0, e)).collect();
    build(endpoints + 1, &(1..=endpoints).collect(), &edges, bw)
}

fn snowflake(endpoints: usize, bw: u64) -> NetworkTopology {
    let spokes = ((endpoints as f64).sqrt().round() as usize).min(endpoints / 2);
    if spokes < 2 {
        return star(endpoints, bw);
    }
    let mut edges: Vec<_> = (1..=spokes).map(|s| (0, s)).collect();
    let first = spokes + 1;
    for e in 0..endpoints {
        edges.push((1 + e % spokes, first + e));
    }
    build(first + endpoints, &(first..first + endpoints).collect(), &edges, bw)
}

/// Preferential-attachment tree grown until it has `endpoints` leaves,
/// with degree-2 nodes contracted away. Returns node count, leaves, edges.
fn ba_tree(endpoints: usize, rng: &mut ChaCha8Rng) -> (usize, BTreeSet<usize>, Vec<(usize, usize)>) {
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::from([1]), BTreeSet::from([0])];
    let leaves = |adj: &Vec<BTreeSet<usize>>| adj.iter().filter(|a| a.len() == 1).count();
    while leaves(&adj) < endpoints {
        let total: usize = adj.iter().map(BTreeSet::len).sum();
        let mut pick = rng.gen_range(0..total);
        let mut target = 0;
        for (i, a) in adj.iter().enumerate() {
            if pick < a.len() {
                target = i;
                break;
            }
            pick -= a.len();
        }
        let new = adj.len();
        adj.push(BTreeSet::from([target]));
        adj[target].insert(new);
    }
    // contract degree-2 nodes
    let mut alive = vec![true; adj.len()];
    loop {
        let Some(v) = (0..adj.len()).find(|&v| alive[v] && adj[v].len() == 2) else { break };
        let ends: Vec<usize> = adj[v].iter().copied().collect();
        let (a, b) = (ends[0], ends[1]);
        adj[a].remove(&v);
        adj[b].remove(&v);
        adj[a].insert(b);
        adj[b].insert(a);
        adj[v].clear();
        alive[v] = false;
    }
    let kept: Vec<usize> = (0..adj.len()).filter(|&v| alive[v]).collect();
    let mut index = vec![usize::MAX; adj.len()];
    for (k, &v) in kept.iter().enumerate() {
        index[v] = k;
    }
    let mut edges = Vec::new();
    for &v in &kept {
        for &u in &adj[v] {
            if v < u {
                edges.push((index[v], index[u]));
            }
        }
    }
    let leaf_set = kept.iter().filter(|&&v| adj[v].len() == 1).map(|&v| index[v]).collect();
    (kept.len(), leaf_set, edges)
}

/// Build a topology of `kind` from the configuration and a random stream.
pub fn generate_topology(
    kind: TopologyKind,
    config: &GeneratorConfig,
    rng: &mut ChaCha8Rng,
) -> Result<NetworkTopology, GeneratorError> {
    config.check()?;
    let bw = config.bandwidth_bps;
    let e = config.endpoints;
    Ok(match kind {
        TopologyKind::Star => star(e, bw),
        TopologyKind::Snowflake => snowflake(e, bw),
        TopologyKind::BarabasiAlbertTree => {
            let (n, leaves, edges) = ba_tree(e, rng);
            build(n, &leaves, &edges, bw)
        }
        TopologyKind::RandomRedundant => {
            let (n, leaves, mut edges) = ba_tree(e, rng);
            let switches: Vec<usize> = (0..n).filter(|v| !leaves.contains(v)).collect();
            let present: BTreeSet<(usize, usize)> = edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
            let mut missing: Vec<(usize, usize)> = Vec::new();
            for (i, &a) in switches.iter().enumerate() {
                for &b in &switches[i + 1..] {
                    if !present.contains(&(a, b)) {
                        missing.push((a, b));
                    }
                }
            }
            let extra = (config.redundancy * n as f64).ceil() as usize;
            missing.shuffle(rng);
            edges.extend(missing.into_iter().take(extra));
            build(n, &leaves, &edges, bw)
        }
    })
}

fn geometric_receivers(rng: &mut ChaCha8Rng, cap: usize) -> usize {
    let mut k = 1;
    while k < cap && rng.gen_bool(0.5) {
        k += 1;
    }
    k
}

/// Transit of a message over the tree given by `table`: the longest
/// sender-to-receiver chain of transmissions and switch delays.
fn transit(topology: &NetworkTopology, table: &RoutingTable, m: &MessageSpec, tau: Nanos) -> Option<(Nanos, Nanos)> {
    let mut longest = 0;
    let mut widest = 0;
    for &r in &m.receivers {
        let path = table.path(topology, m.sender, r).ok()?;
        let mut t = 0;
        for (k, &l) in path.iter().enumerate() {
            let c = transmission_time(m.length_bits, topology.link(l).bandwidth_bps).ok()?;
            widest = widest.max(c);
            t += c + if k + 1 < path.len() { tau } else { 0 };
        }
        longest = longest.max(t);
    }
    Some((longest, widest))
}

/// Random TT messages over the endpoints of `topology`. Every message gets
/// at least one integration cycle where its whole route fits its window.
pub fn generate_messages(
    topology: &NetworkTopology,
    config: &GeneratorConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<MessageSpec>, GeneratorError> {
    config.check()?;
    let table = all_pairs_shortest_paths(topology).map_err(|e| GeneratorError::Config(e.to_string()))?;
    let endpoints: Vec<NodeId> = topology.endpoints().collect();
    if endpoints.len() < 2 {
        return Err(GeneratorError::Config("topology has fewer than two endpoints".into()));
    }
    let ic = config.integration_cycle();
    let tau = config.switch_delay_ns;
    let sync = topology.min_bandwidth().map_or(Ok(0), |bw| transmission_time(SYNC_FRAME_BITS, bw))?;
    let jitter = ic / config.jitter_divisor;
    let mut out = Vec::with_capacity(config.messages);
    for id in 0..config.messages as u32 {
        let mut chosen = None;
        for attempt in 0..200 {
            let sender = *endpoints.choose(rng).expect("endpoints");
            let others: Vec<NodeId> = endpoints.iter().copied().filter(|&e| e != sender).collect();
            // later attempts fall back to unicast
            let cap = if attempt < 100 { others.len() } else { 1 };
            let k = geometric_receivers(rng, cap);
            let mut receivers: Vec<NodeId> = others.choose_multiple(rng, k).copied().collect();
            receivers.sort_unstable();
            let payload = rng.gen_range(config.payload_min_octets..=config.payload_max_octets);
            let n = rng.gen_range(0..=config.max_period_exponent);
            let m3 = rng.gen_range(0..=1u32);
            let period_cycles = 2u64.pow(n) * 3u64.pow(m3);
            let mut m = MessageSpec {
                id,
                period_ns: period_cycles * ic,
                length_bits: wire_bits(payload),
                release_ns: 0,
                deadline_ns: period_cycles * ic,
                sender,
                receivers,
            };
            let Some((need, widest)) = transit(topology, &table, &m, tau) else { continue };
            if widest > ic || sync + need > ic {
                continue;
            }
            // window over whole cycles, moved inwards by a little jitter
            let first = rng.gen_range(0..period_cycles);
            let last = rng.gen_range(first..period_cycles);
            let r = first * ic + if jitter > 0 { rng.gen_range(0..=jitter) } else { 0 };
            let d = (last + 1) * ic - if jitter > 0 { rng.gen_range(0..=jitter) } else { 0 };
            m.release_ns = r;
            m.deadline_ns = d;
            let fits = (first..=last).any(|j| {
                let (rr, dd) = relative_window(r, d, j, ic);
                rr.max(sync) + need <= dd
            });
            if !fits {
                // whole period as window instead
                m.release_ns = 0;
                m.deadline_ns = m.period_ns;
            }
            chosen = Some(m);
            break;
        }
        match chosen {
            Some(m) => out.push(m),
            None => {
                return Err(GeneratorError::Config(format!(
                    "message {id} does not fit the {ic} ns integration cycle; use a longer cycle"
                )))
            }
        }
    }
    Ok(out)
}

/// Random virtual links between endpoints, frames over the full Ethernet
/// range, gaps from 1 to 128 ms in powers of two.
pub fn generate_virtual_links(topology: &NetworkTopology, count: usize, rng: &mut ChaCha8Rng) -> Vec<VirtualLinkSpec> {
    let endpoints: Vec<NodeId> = topology.endpoints().collect();
    if endpoints.len() < 2 {
        return Vec::new();
    }
    (0..count as u32)
        .map(|id| {
            let source = *endpoints.choose(rng).expect("endpoints");
            let others: Vec<NodeId> = endpoints.iter().copied().filter(|&e| e != source).collect();
            let k = geometric_receivers(rng, others.len());
            let mut destinations: Vec<NodeId> = others.choose_multiple(rng, k).copied().collect();
            destinations.sort_unstable();
            let payload = rng.gen_range(46..=MAX_PAYLOAD_OCTETS);
            VirtualLinkSpec {
                id,
                route: None,
                source: Some(source),
                destinations,
                max_frame_bits: wire_bits(payload),
                bag_ns: 1_000_000 << rng.gen_range(0..=7),
            }
        })
        .collect()
}

/// A whole instance from `config.seed`.
pub fn generate_instance(config: &GeneratorConfig) -> Result<Instance, GeneratorError> {
    config.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let kind = match config.topology {
        Some(k) => k,
        None => *TopologyKind::ALL.choose(&mut rng).expect("kinds"),
    };
    let topology = generate_topology(kind, config, &mut rng)?;
    let messages = generate_messages(&topology, config, &mut rng)?;
    let virtual_links = generate_virtual_links(&topology, config.virtual_links, &mut rng);
    let overrides = ConfigOverrides {
        integration_cycle_ns: Some(config.integration_cycle()),
        switch_delay_ns: Some(config.switch_delay_ns),
        ..Default::default()
    };
    Ok(Instance::new(topology, messages, overrides, virtual_links)?)
}

/// Approximation of an industrial network: 6 switches on a ring with a
/// cross link, 59 endpoints, 1018 messages with periods from 12.5 ms to
/// 1 s and up to 42 receivers. Not the original instance.
pub fn industrial_like(seed: u64) -> Result<Instance, GeneratorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let switches = 6;
    let endpoints = 59;
    let bw = 100_000_000;
    let mut edges: Vec<(usize, usize)> = (0..switches).map(|s| (s, (s + 1) % switches)).collect();
    edges.push((0, 3));
    for e in 0..endpoints {
        edges.push((e % switches, switches + e));
    }
    let topology = build(switches + endpoints, &(switches..switches + endpoints).collect(), &edges, bw);
    let ids: Vec<NodeId> = topology.endpoints().collect();
    let ic: Nanos = 12_500_000;
    let periods = [1u64, 2, 4, 8, 16, 80];
    let messages = (0..1018u32)
        .map(|id| {
            let sender = *ids.choose(&mut rng).expect("endpoints");
            let others: Vec<NodeId> = ids.iter().copied().filter(|&e| e != sender).collect();
            let mut k = 1;
            while k < 42 && rng.gen_bool(0.7) {
                k += 1;
            }
            let mut receivers: Vec<NodeId> = others.choose_multiple(&mut rng, k).copied().collect();
            receivers.sort_unstable();
            let useful_bits = rng.gen_range(12..=9224u64);
            let payload = useful_bits.div_ceil(8).max(46);
            let period = periods.choose(&mut rng).expect("periods") * ic;
            MessageSpec {
                id,
                period_ns: period,
                length_bits: wire_bits(payload),
                release_ns: 0,
                deadline_ns: period,
                sender,
                receivers,
            }
        })
        .collect();
    let overrides = ConfigOverrides { integration_cycle_ns: Some(ic), ..Default::default() };
    Ok(Instance::new(topology, messages, overrides, vec![])?)
}

/// Bottleneck load of one instance: the busiest link-cycle resource of a
/// balanced assignment over the integration cycle.
pub fn utilization(lower_bound_ns: Nanos, sync_ns: Nanos, ic: Nanos) -> f64 {
    lower_bound_ns.saturating_sub(sync_ns) as f64 / ic as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn undirected_edges(t: &NetworkTopology) -> usize {
        t.physical_link_count()
    }

    #[test]
    fn star_with_four_endpoints() {
        let cfg = GeneratorConfig { endpoints: 4, ..Default::default() };
        let t = generate_topology(TopologyKind::Star, &cfg, &mut rng(0)).unwrap();
        assert_eq!(t.nodes().len(), 5);
        assert_eq!(t.links().len(), 8);
        assert_eq!(t.nodes().iter().filter(|n| n.kind == NodeKind::Redistribution).count(), 1);
    }

    #[test]
    fn same_seed_same_topology() {
        let cfg = GeneratorConfig::default();
        for kind in TopologyKind::ALL {
            let a = generate_topology(kind, &cfg, &mut rng(9)).unwrap();
            let b = generate_topology(kind, &cfg, &mut rng(9)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn ba_trees_have_no_degree_two_nodes() {
        let cfg = GeneratorConfig::default();
        for seed in 0..100 {
            let t = generate_topology(TopologyKind::BarabasiAlbertTree, &cfg, &mut rng(seed)).unwrap();
            assert_eq!(t.endpoints().count(), 20);
            assert_eq!(undirected_edges(&t), t.nodes().len() - 1);
            for n in t.nodes() {
                let degree = t.outgoing(n.id).count();
                assert_ne!(degree, 2, "seed {seed}");
                assert_eq!(n.kind == NodeKind::Endpoint, degree == 1);
            }
            all_pairs_shortest_paths(&t).unwrap();
        }
    }

    #[test]
    fn redundant_variant_adds_cycles() {
        let cfg = GeneratorConfig::default();
        let mut more = 0;
        for seed in 0..20 {
            let t = generate_topology(TopologyKind::RandomRedundant, &cfg, &mut rng(seed)).unwrap();
            assert_eq!(t.endpoints().count(), 20);
            all_pairs_shortest_paths(&t).unwrap();
            more += (undirected_edges(&t) > t.nodes().len() - 1) as usize;
        }
        assert!(more > 10);
    }

    #[test]
    fn snowflake_is_a_star_of_stars() {
        let cfg = GeneratorConfig::default();
        let t = generate_topology(TopologyKind::Snowflake, &cfg, &mut rng(0)).unwrap();
        assert_eq!(t.endpoints().count(), 20);
        let hub = t.outgoing(0).count();
        assert_eq!(hub, 4);
        assert_eq!(undirected_edges(&t), t.nodes().len() - 1);
    }

    #[test]
    fn default_cycle_is_a_thousand_ns_per_message() {
        let cfg = GeneratorConfig { messages: 20, ..Default::default() };
        assert_eq!(cfg.integration_cycle(), 20_000);
        let inst = generate_instance(&cfg).unwrap();
        assert_eq!(inst.config.integration_cycle_ns, 20_000);
    }

    #[test]
    fn generated_messages_satisfy_the_model() {
        for seed in 0..1000 {
            let cfg = GeneratorConfig { messages: 10, seed, ..Default::default() };
            let inst = generate_instance(&cfg).unwrap();
            for m in &inst.messages {
                assert!(m.release_ns < m.deadline_ns && m.deadline_ns <= m.period_ns);
                let cycles = m.period_ns / inst.config.integration_cycle_ns;
                assert!(cycles.is_power_of_two() || (cycles % 3 == 0 && (cycles / 3).is_power_of_two()));
                assert!(m.length_bits >= 672 && m.length_bits <= (256 + 38) * 8);
            }
        }
    }

    #[test]
    fn virtual_links_fit_the_largest_frame() {
        assert_eq!(wire_bits(MAX_PAYLOAD_OCTETS), MAX_FRAME_BITS);
        for seed in 0..200 {
            let cfg = GeneratorConfig { messages: 10, virtual_links: 10, seed, ..Default::default() };
            let inst = generate_instance(&cfg).unwrap();
            assert!(inst.virtual_links.iter().all(|v| v.max_frame_bits <= MAX_FRAME_BITS));
        }
    }

    #[test]
    fn minimal_payload_wire_length() {
        assert_eq!(wire_bits(46), 672);
    }

    #[test]
    fn industrial_shape() {
        let inst = industrial_like(1).unwrap();
        assert_eq!(inst.messages.len(), 1018);
        assert_eq!(inst.topology.endpoints().count(), 59);
        assert_eq!(inst.topology.nodes().len(), 65);
        assert!(inst.messages.iter().all(|m| (1..=42).contains(&m.receivers.len())));
    }
}
