//! Domain types for TTEthernet networks and Time-Triggered messages.
//!
//! All times are integer nanoseconds and all lengths are bits on the wire.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = u32;
pub type MessageId = u32;
/// Index of a directed link in [`NetworkTopology::links`].
pub type LinkId = usize;
/// Nanoseconds.
pub type Nanos = u64;

/// Longest frame a TT message may carry, preamble and interframe gap included.
pub const MAX_FRAME_BITS: u64 = 1530 * 8;

/// Wire overhead added to a payload: 18 octets of header and FCS, 8 octets
/// of preamble and start-of-frame delimiter, and a 12 octet interframe gap.
/// A minimal 46 octet payload becomes a 672 bit message.
pub const FRAME_OVERHEAD_OCTETS: u64 = 38;

/// Length of the minimal frame, used to size the default synchronization slot.
pub const SYNC_FRAME_BITS: u64 = 672;

pub const MIN_SWITCH_DELAY_NS: Nanos = 1_000;
pub const MAX_SWITCH_DELAY_NS: Nanos = 2_400;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("message {message}: {reason}")]
    InvalidMessage { message: MessageId, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Endpoint,
    Redistribution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub source: NodeId,
    pub destination: NodeId,
    pub bandwidth_bps: u64,
}

/// Nodes and directed links. Both directions of a physical link are
/// separate entries and are scheduled independently.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkTopology {
    nodes: Vec<Node>,
    links: Vec<Link>,
    node_index: HashMap<NodeId, usize>,
    link_index: HashMap<(NodeId, NodeId), LinkId>,
}

impl NetworkTopology {
    /// Checks the structural invariants: known endpoints, no self loops or
    /// duplicates, positive bandwidths, and a reverse link for every link.
    ///
    /// Connectivity is left to the routing stage so that an unreachable
    /// pair is reported with the pair that failed.
    pub fn new(nodes: Vec<Node>, links: Vec<Link>) -> Result<Self, ModelError> {
        let mut node_index = HashMap::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            if node_index.insert(node.id, i).is_some() {
                return Err(ModelError::InvalidTopology(format!("duplicate node id {}", node.id)));
            }
        }
        let mut link_index = HashMap::with_capacity(links.len());
        for (i, link) in links.iter().enumerate() {
            for end in [link.source, link.destination] {
                if !node_index.contains_key(&end) {
                    return Err(ModelError::InvalidTopology(format!(
                        "link {i} references unknown node {end}"
                    )));
                }
            }
            if link.source == link.destination {
                return Err(ModelError::InvalidTopology(format!(
                    "link {i} is a self-loop on node {}",
                    link.source
                )));
            }
            if link.bandwidth_bps == 0 {
                return Err(ModelError::InvalidConfig(format!("link {i} has zero bandwidth")));
            }
            if link_index.insert((link.source, link.destination), i).is_some() {
                return Err(ModelError::InvalidTopology(format!(
                    "duplicate link {} -> {}",
                    link.source, link.destination
                )));
            }
        }
        for link in &links {
            if !link_index.contains_key(&(link.destination, link.source)) {
                return Err(ModelError::InvalidTopology(format!(
                    "link {} -> {} has no reverse direction",
                    link.source, link.destination
                )));
            }
        }
        Ok(Self { nodes, links, node_index, link_index })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id]
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.node_index.get(&id).map(|&i| &self.nodes[i])
    }

    /// Position of a node in [`Self::nodes`].
    pub fn node_position(&self, id: NodeId) -> Option<usize> {
        self.node_index.get(&id).copied()
    }

    pub fn link_between(&self, source: NodeId, destination: NodeId) -> Option<LinkId> {
        self.link_index.get(&(source, destination)).copied()
    }

    pub fn is_endpoint(&self, id: NodeId) -> bool {
        matches!(self.node(id), Some(Node { kind: NodeKind::Endpoint, .. }))
    }

    pub fn endpoints(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Endpoint).map(|n| n.id)
    }

    /// Outgoing links of `node`, in link-id order.
    pub fn outgoing(&self, node: NodeId) -> impl Iterator<Item = (LinkId, &Link)> + '_ {
        self.links.iter().enumerate().filter(move |(_, l)| l.source == node)
    }

    pub fn min_bandwidth(&self) -> Option<u64> {
        self.links.iter().map(|l| l.bandwidth_bps).min()
    }

    /// Number of physical (bidirectional) connections.
    pub fn physical_link_count(&self) -> usize {
        self.links.len() / 2
    }
}

/// One Time-Triggered message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MessageSpec {
    pub id: MessageId,
    pub period_ns: Nanos,
    /// Bits on the wire, headers and interframe gap included.
    pub length_bits: u64,
    pub release_ns: Nanos,
    pub deadline_ns: Nanos,
    pub sender: NodeId,
    pub receivers: Vec<NodeId>,
}

impl MessageSpec {
    /// Checks the invariants that do not depend on routing.
    pub fn check(&self, topology: &NetworkTopology) -> Result<(), ModelError> {
        let err = |reason: String| ModelError::InvalidMessage { message: self.id, reason };
        if self.period_ns == 0 {
            return Err(err("period must be positive".into()));
        }
        if self.release_ns > self.deadline_ns {
            return Err(err("release exceeds deadline".into()));
        }
        if self.deadline_ns > self.period_ns {
            return Err(err("deadline exceeds period".into()));
        }
        if self.length_bits > MAX_FRAME_BITS {
            return Err(err(format!(
                "length {} bits exceeds the maximal frame of {MAX_FRAME_BITS} bits",
                self.length_bits
            )));
        }
        if !topology.is_endpoint(self.sender) {
            return Err(err(format!("sender {} is not an endpoint", self.sender)));
        }
        if self.receivers.is_empty() {
            return Err(err("receiver set is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for &r in &self.receivers {
            if !topology.is_endpoint(r) {
                return Err(err(format!("receiver {r} is not an endpoint")));
            }
            if r == self.sender {
                return Err(err("sender is among its own receivers".into()));
            }
            if !seen.insert(r) {
                return Err(err(format!("receiver {r} listed twice")));
            }
        }
        Ok(())
    }
}

/// Cycle structure and per-hop constants shared by all stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub integration_cycle_ns: Nanos,
    pub cluster_cycle_ns: Nanos,
    pub switch_delay_ns: Nanos,
    /// Reserved for the synchronization frame at the start of every
    /// integration cycle on every link.
    pub sync_window_ns: Nanos,
}

impl ScheduleConfig {
    pub fn new(
        integration_cycle_ns: Nanos,
        cluster_cycle_ns: Nanos,
        switch_delay_ns: Nanos,
        sync_window_ns: Nanos,
        check_switch_delay_range: bool,
    ) -> Result<Self, ModelError> {
        if integration_cycle_ns == 0 {
            return Err(ModelError::InvalidConfig("integration cycle must be positive".into()));
        }
        if cluster_cycle_ns == 0 || cluster_cycle_ns % integration_cycle_ns != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "integration cycle {integration_cycle_ns} ns does not divide cluster cycle {cluster_cycle_ns} ns"
            )));
        }
        if check_switch_delay_range
            && !(MIN_SWITCH_DELAY_NS..=MAX_SWITCH_DELAY_NS).contains(&switch_delay_ns)
        {
            return Err(ModelError::InvalidConfig(format!(
                "switch delay {switch_delay_ns} ns outside [{MIN_SWITCH_DELAY_NS}, {MAX_SWITCH_DELAY_NS}] ns"
            )));
        }
        if sync_window_ns >= integration_cycle_ns {
            return Err(ModelError::InvalidConfig(format!(
                "sync window {sync_window_ns} ns does not fit the integration cycle"
            )));
        }
        Ok(Self { integration_cycle_ns, cluster_cycle_ns, switch_delay_ns, sync_window_ns })
    }

    /// Integration cycles per cluster cycle.
    pub fn cycles_per_cluster(&self) -> u64 {
        self.cluster_cycle_ns / self.integration_cycle_ns
    }
}

/// `ceil(length * 1e9 / bandwidth)` nanoseconds.
pub fn transmission_time(length_bits: u64, bandwidth_bps: u64) -> Result<Nanos, ModelError> {
    if bandwidth_bps == 0 {
        return Err(ModelError::InvalidConfig("bandwidth must be positive".into()));
    }
    let num = u128::from(length_bits) * 1_000_000_000;
    let bw = u128::from(bandwidth_bps);
    Ok(num.div_ceil(bw) as Nanos)
}

pub fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

pub fn lcm(a: u64, b: u64) -> Option<u64> {
    if a == 0 || b == 0 {
        return Some(0);
    }
    (a / gcd(a, b)).checked_mul(b)
}

/// Integration cycle (gcd of periods) and cluster cycle (lcm of periods).
pub fn derive_cycles(periods: &[Nanos]) -> Result<(Nanos, Nanos), ModelError> {
    if periods.is_empty() {
        return Err(ModelError::InvalidInput("period list is empty".into()));
    }
    if periods.contains(&0) {
        return Err(ModelError::InvalidInput("periods must be positive".into()));
    }
    let ic = periods.iter().copied().fold(0, gcd);
    let cc = periods
        .iter()
        .try_fold(1u64, |acc, &p| lcm(acc, p))
        .ok_or_else(|| ModelError::InvalidInput("cluster cycle overflows 64 bits".into()))?;
    Ok((ic, cc))
}

/// Wire length of a frame carrying `payload_octets` of payload.
pub fn wire_bits(payload_octets: u64) -> u64 {
    (payload_octets + FRAME_OVERHEAD_OCTETS) * 8
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeKind::Endpoint => f.write_str("endpoint"),
            NodeKind::Redistribution => f.write_str("redistribution"),
        }
    }
}

/// Optional overrides of the derived cycle structure.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integration_cycle_ns: Option<Nanos>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switch_delay_ns: Option<Nanos>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sync_window_ns: Option<Nanos>,
    /// Accept a switch delay outside the usual 1 to 2.4 us range.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub allow_any_switch_delay: bool,
}

/// A Rate-Constrained virtual link as described in an instance file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VirtualLinkSpec {
    pub id: u32,
    /// Explicit route as link indices; mutually exclusive with `source`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route: Option<Vec<LinkId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub destinations: Vec<NodeId>,
    pub max_frame_bits: u64,
    pub bag_ns: Nanos,
}

/// A complete, validated problem instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub topology: NetworkTopology,
    pub messages: Vec<MessageSpec>,
    pub overrides: ConfigOverrides,
    pub virtual_links: Vec<VirtualLinkSpec>,
    pub config: ScheduleConfig,
}

impl Instance {
    /// Resolves the cycle structure and checks every routing-independent
    /// invariant. Messages are kept in the given order; ids must be unique.
    pub fn new(
        topology: NetworkTopology,
        messages: Vec<MessageSpec>,
        overrides: ConfigOverrides,
        virtual_links: Vec<VirtualLinkSpec>,
    ) -> Result<Self, ModelError> {
        let mut ids = BTreeSet::new();
        for m in &messages {
            if !ids.insert(m.id) {
                return Err(ModelError::InvalidInput(format!("duplicate message id {}", m.id)));
            }
            m.check(&topology)?;
        }
        let periods: Vec<Nanos> = messages.iter().map(|m| m.period_ns).collect();
        let (ic, cc) = match (derive_cycles(&periods), overrides.integration_cycle_ns) {
            (Ok((derived_ic, cc)), Some(ic)) => {
                if ic == 0 || derived_ic % ic != 0 {
                    return Err(ModelError::InvalidConfig(format!(
                        "integration cycle {ic} ns does not divide every message period"
                    )));
                }
                (ic, cc)
            }
            (Ok(cycles), None) => cycles,
            (Err(_), Some(ic)) => (ic, ic),
            (Err(_), None) => {
                return Err(ModelError::InvalidConfig(
                    "an instance without messages needs an explicit integration cycle".into(),
                ))
            }
        };
        let switch_delay = overrides.switch_delay_ns.unwrap_or(MIN_SWITCH_DELAY_NS);
        let sync = match overrides.sync_window_ns {
            Some(s) => s,
            None => match topology.min_bandwidth() {
                Some(bw) => transmission_time(SYNC_FRAME_BITS, bw)?,
                None => 0,
            },
        };
        let config =
            ScheduleConfig::new(ic, cc, switch_delay, sync, !overrides.allow_any_switch_delay)?;
        for m in &messages {
            if m.period_ns % ic != 0 {
                return Err(ModelError::InvalidMessage {
                    message: m.id,
                    reason: "period is not a multiple of the integration cycle".into(),
                });
            }
        }
        for vl in &virtual_links {
            check_virtual_link(vl, &topology)?;
        }
        Ok(Self { topology, messages, overrides, virtual_links, config })
    }

    pub fn message(&self, id: MessageId) -> Option<&MessageSpec> {
        self.messages.iter().find(|m| m.id == id)
    }
}

fn check_virtual_link(vl: &VirtualLinkSpec, topology: &NetworkTopology) -> Result<(), ModelError> {
    let bad = |why: String| ModelError::InvalidInput(format!("virtual link {}: {why}", vl.id));
    match (&vl.route, vl.source) {
        (Some(route), None) => {
            if route.is_empty() {
                return Err(bad("route is empty".into()));
            }
            for w in route.windows(2) {
                let (a, b) = (w[0], w[1]);
                if a >= topology.links().len() || b >= topology.links().len() {
                    return Err(bad("route references an unknown link".into()));
                }
                if topology.link(a).destination != topology.link(b).source {
                    return Err(bad(format!("links {a} and {b} are not consecutive")));
                }
            }
            if route[0] >= topology.links().len() {
                return Err(bad("route references an unknown link".into()));
            }
            if !vl.destinations.is_empty() {
                return Err(bad("give either a route or source and destinations".into()));
            }
        }
        (None, Some(source)) => {
            if topology.node(source).is_none() {
                return Err(bad(format!("unknown source node {source}")));
            }
            if vl.destinations.is_empty() {
                return Err(bad("destination set is empty".into()));
            }
            for d in &vl.destinations {
                if topology.node(*d).is_none() || *d == source {
                    return Err(bad(format!("invalid destination {d}")));
                }
            }
        }
        _ => return Err(bad("give either a route or source and destinations".into())),
    }
    if vl.max_frame_bits == 0 || vl.max_frame_bits > MAX_FRAME_BITS {
        return Err(bad(format!("max frame of {} bits is out of range", vl.max_frame_bits)));
    }
    let slowest = topology.min_bandwidth().unwrap_or(1);
    if vl.bag_ns < transmission_time(vl.max_frame_bits, slowest)? {
        return Err(bad("bandwidth allocation gap is shorter than one frame".into()));
    }
    Ok(())
}
