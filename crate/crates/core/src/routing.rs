//! Shortest-path routing and expansion of messages into message instances.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::model::{transmission_time, LinkId, MessageId, MessageSpec, Nanos, NetworkTopology, NodeId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RoutingError {
    #[error("node {to} is unreachable from node {from}")]
    Unreachable { from: NodeId, to: NodeId },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
}

const UNREACHABLE: u32 = u32::MAX;

/// All-pairs hop distances plus the deterministic path choice.
///
/// Paths are read from a per-source predecessor matrix: the predecessor of
/// `v` on the path from `s` is the smallest-id neighbour `u` with
/// `dist(s, u) + 1 == dist(s, v)`. All paths from one source therefore form
/// a single shortest-path tree, which keeps multicast routes tree-shaped.
#[derive(Debug, Clone)]
pub struct RoutingTable {
    ids: Vec<NodeId>,
    dist: Vec<u32>,
    /// Position of the predecessor node, per (source, target).
    pred: Vec<Option<u32>>,
    /// Position of the first hop, per (source, target).
    next: Vec<Option<u32>>,
}

impl RoutingTable {
    fn n(&self) -> usize {
        self.ids.len()
    }

    fn pos(&self, topology: &NetworkTopology, id: NodeId) -> Result<usize, RoutingError> {
        topology.node_position(id).ok_or(RoutingError::UnknownNode(id))
    }

    /// Hop count between two nodes, if reachable.
    pub fn distance(&self, topology: &NetworkTopology, a: NodeId, b: NodeId) -> Option<u32> {
        let (i, j) = (topology.node_position(a)?, topology.node_position(b)?);
        let d = self.dist[i * self.n() + j];
        (d != UNREACHABLE).then_some(d)
    }

    /// First node after `a` on the path to `b`.
    pub fn next_hop(&self, topology: &NetworkTopology, a: NodeId, b: NodeId) -> Option<NodeId> {
        let (i, j) = (topology.node_position(a)?, topology.node_position(b)?);
        self.next[i * self.n() + j].map(|p| self.ids[p as usize])
    }

    /// Links from `from` to `to`, in travel order.
    pub fn path(
        &self,
        topology: &NetworkTopology,
        from: NodeId,
        to: NodeId,
    ) -> Result<Vec<LinkId>, RoutingError> {
        let s = self.pos(topology, from)?;
        let t = self.pos(topology, to)?;
        let n = self.n();
        if self.dist[s * n + t] == UNREACHABLE {
            return Err(RoutingError::Unreachable { from, to });
        }
        let mut links = Vec::with_capacity(self.dist[s * n + t] as usize);
        let mut v = t;
        while v != s {
            let u = self.pred[s * n + v].expect("reachable node has a predecessor") as usize;
            let link = topology
                .link_between(self.ids[u], self.ids[v])
                .expect("predecessor is joined by a link");
            links.push(link);
            v = u;
        }
        links.reverse();
        Ok(links)
    }
}

/// Floyd-Warshall over unit link weights.
pub fn all_pairs_shortest_paths(topology: &NetworkTopology) -> Result<RoutingTable, RoutingError> {
    let ids: Vec<NodeId> = topology.nodes().iter().map(|n| n.id).collect();
    let n = ids.len();
    let mut dist = vec![UNREACHABLE; n * n];
    for i in 0..n {
        dist[i * n + i] = 0;
    }
    let pos = |id: NodeId| topology.node_position(id).expect("validated topology");
    for link in topology.links() {
        dist[pos(link.source) * n + pos(link.destination)] = 1;
    }
    for k in 0..n {
        for i in 0..n {
            let ik = dist[i * n + k];
            if ik == UNREACHABLE {
                continue;
            }
            for j in 0..n {
                let kj = dist[k * n + j];
                if kj != UNREACHABLE && ik + kj < dist[i * n + j] {
                    dist[i * n + j] = ik + kj;
                }
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            if dist[i * n + j] == UNREACHABLE {
                return Err(RoutingError::Unreachable { from: ids[i], to: ids[j] });
            }
        }
    }

    // incoming neighbours of each node, sorted by node id
    let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); n];
    for link in topology.links() {
        incoming[pos(link.destination)].push(pos(link.source));
    }
    for list in &mut incoming {
        list.sort_by_key(|&u| ids[u]);
    }

    let mut pred = vec![None; n * n];
    for s in 0..n {
        for v in 0..n {
            if v == s {
                continue;
            }
            let want = dist[s * n + v] - 1;
            pred[s * n + v] =
                incoming[v].iter().find(|&&u| dist[s * n + u] == want).map(|&u| u as u32);
        }
    }
    let mut next = vec![None; n * n];
    for s in 0..n {
        for t in 0..n {
            if t == s {
                continue;
            }
            let mut v = t;
            loop {
                let u = pred[s * n + v].unwrap() as usize;
                if u == s {
                    break;
                }
                v = u;
            }
            next[s * n + t] = Some(v as u32);
        }
    }
    Ok(RoutingTable { ids, dist, pred, next })
}

/// Multicast route of one message: a tree of links rooted at the sender.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RouteTree {
    pub message: MessageId,
    pub sender: NodeId,
    /// Tree links; every link comes after its parent.
    pub links: Vec<LinkId>,
    /// Index into `links` of each link's parent, `None` for links leaving the sender.
    pub parents: Vec<Option<usize>>,
    /// Receiver and the index of the last link before it.
    pub leaves: Vec<(NodeId, usize)>,
}

impl RouteTree {
    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn position(&self, link: LinkId) -> Option<usize> {
        self.links.iter().position(|&l| l == link)
    }

    /// Indices of the links leaving the sender.
    pub fn roots(&self) -> impl Iterator<Item = usize> + '_ {
        self.parents.iter().enumerate().filter(|(_, p)| p.is_none()).map(|(i, _)| i)
    }

    /// Sender-to-receiver link sequence for `receiver`.
    pub fn path_to(&self, receiver: NodeId) -> Option<Vec<LinkId>> {
        let &(_, mut idx) = self.leaves.iter().find(|(r, _)| *r == receiver)?;
        let mut path = vec![self.links[idx]];
        while let Some(p) = self.parents[idx] {
            path.push(self.links[p]);
            idx = p;
        }
        path.reverse();
        Some(path)
    }
}

/// A way of turning a message into a route tree.
pub trait RoutingStrategy {
    fn route(&self, topology: &NetworkTopology, message: &MessageSpec) -> Result<RouteTree, RoutingError>;
}

/// Minimal hop-count routing read from a [`RoutingTable`].
pub struct ShortestPathRouting<'a> {
    pub table: &'a RoutingTable,
}

impl RoutingStrategy for ShortestPathRouting<'_> {
    fn route(&self, topology: &NetworkTopology, message: &MessageSpec) -> Result<RouteTree, RoutingError> {
        route_message(topology, message, self.table)
    }
}

/// Union of the sender-to-receiver shortest paths, merged on shared links.
pub fn route_message(
    topology: &NetworkTopology,
    message: &MessageSpec,
    table: &RoutingTable,
) -> Result<RouteTree, RoutingError> {
    if topology.node(message.sender).is_none() {
        return Err(RoutingError::UnknownNode(message.sender));
    }
    let mut index: BTreeMap<LinkId, usize> = BTreeMap::new();
    let mut links = Vec::new();
    let mut parents = Vec::new();
    let mut leaves = Vec::with_capacity(message.receivers.len());
    for &receiver in &message.receivers {
        let path = table.path(topology, message.sender, receiver)?;
        let mut parent = None;
        for link in path {
            let idx = *index.entry(link).or_insert_with(|| {
                links.push(link);
                parents.push(parent);
                links.len() - 1
            });
            debug_assert_eq!(parents[idx], parent, "paths from one source form a tree");
            parent = Some(idx);
        }
        if let Some(last) = parent {
            leaves.push((receiver, last));
        }
    }
    Ok(RouteTree { message: message.id, sender: message.sender, links, parents, leaves })
}

/// Route every message with `strategy`, in message order.
pub fn route_all(
    topology: &NetworkTopology,
    messages: &[MessageSpec],
    strategy: &dyn RoutingStrategy,
) -> Result<Vec<RouteTree>, RoutingError> {
    messages.iter().map(|m| strategy.route(topology, m)).collect()
}

/// One transmission of a message on one link of its route.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MessageInstance {
    pub message: MessageId,
    pub link: LinkId,
    pub transmission_ns: Nanos,
}

/// One entry per (message, link on its tree), in route order.
pub fn message_instances(
    topology: &NetworkTopology,
    messages: &[MessageSpec],
    trees: &[RouteTree],
) -> Vec<MessageInstance> {
    let mut out = Vec::new();
    for (message, tree) in messages.iter().zip(trees) {
        for &link in &tree.links {
            let bw = topology.link(link).bandwidth_bps;
            out.push(MessageInstance {
                message: message.id,
                link,
                transmission_ns: transmission_time(message.length_bits, bw)
                    .expect("validated bandwidth"),
            });
        }
    }
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model::{Link, Node, NodeKind};

    pub(crate) fn topo(nodes: &[(NodeId, NodeKind)], edges: &[(NodeId, NodeId)]) -> NetworkTopology {
        let nodes = nodes.iter().map(|&(id, kind)| Node { id, kind }).collect();
        let mut links = Vec::new();
        for &(a, b) in edges {
            links.push(Link { source: a, destination: b, bandwidth_bps: 10_000_000 });
            links.push(Link { source: b, destination: a, bandwidth_bps: 10_000_000 });
        }
        NetworkTopology::new(nodes, links).unwrap()
    }

    fn msg(sender: NodeId, receivers: &[NodeId]) -> MessageSpec {
        MessageSpec {
            id: 1,
            period_ns: 10_000_000,
            length_bits: 672,
            release_ns: 0,
            deadline_ns: 10_000_000,
            sender,
            receivers: receivers.to_vec(),
        }
    }

    use NodeKind::{Endpoint as E, Redistribution as R};

    #[test]
    fn line_distance() {
        let t = topo(&[(0, E), (1, R), (2, E)], &[(0, 1), (1, 2)]);
        let table = all_pairs_shortest_paths(&t).unwrap();
        assert_eq!(table.distance(&t, 0, 2), Some(2));
        assert_eq!(table.next_hop(&t, 0, 2), Some(1));
        let path = table.path(&t, 0, 2).unwrap();
        assert_eq!(path.len(), 2);
        assert_eq!(t.link(path[0]).destination, 1);
    }

    #[test]
    fn triangle_takes_direct_link() {
        let t = topo(&[(0, R), (1, R), (2, R)], &[(0, 1), (1, 2), (2, 0)]);
        let table = all_pairs_shortest_paths(&t).unwrap();
        assert_eq!(table.distance(&t, 0, 2), Some(1));
        assert_eq!(table.path(&t, 0, 2).unwrap(), vec![t.link_between(0, 2).unwrap()]);
    }

    #[test]
    fn ties_go_to_smallest_intermediate_id() {
        // a=0, b=1, c=2, d=3
        let t = topo(&[(0, E), (1, R), (2, R), (3, E)], &[(0, 2), (0, 1), (2, 3), (1, 3)]);
        let table = all_pairs_shortest_paths(&t).unwrap();
        let path = table.path(&t, 0, 3).unwrap();
        assert_eq!(t.link(path[0]).destination, 1);
        assert_eq!(table.next_hop(&t, 0, 3), Some(1));
    }

    #[test]
    fn disconnected_topology_names_the_pair() {
        let t = topo(&[(0, E), (1, E), (2, E), (3, E)], &[(0, 1), (2, 3)]);
        let err = all_pairs_shortest_paths(&t).unwrap_err();
        assert_eq!(err, RoutingError::Unreachable { from: 0, to: 2 });
    }

    pub(crate) fn figure_four() -> NetworkTopology {
        // e_l=0 -> e_m=1 -> e_o=2 -> e_p=3 -> {e_q=4, e_u=5}
        topo(
            &[(0, E), (1, R), (2, R), (3, R), (4, E), (5, E)],
            &[(0, 1), (1, 2), (2, 3), (3, 4), (3, 5)],
        )
    }

    #[test]
    fn figure_four_route_has_five_instances() {
        let t = figure_four();
        let table = all_pairs_shortest_paths(&t).unwrap();
        let m = msg(0, &[4, 5]);
        let tree = route_message(&t, &m, &table).unwrap();
        assert_eq!(tree.len(), 5);
        assert_eq!(tree.roots().count(), 1);
        let into_q = t.link_between(3, 4).unwrap();
        let into_u = t.link_between(3, 5).unwrap();
        let leaf_links: Vec<_> = tree.leaves.iter().map(|&(_, i)| tree.links[i]).collect();
        assert_eq!(leaf_links, vec![into_q, into_u]);
        // both branches hang off the link into e_p
        let into_p = tree.position(t.link_between(2, 3).unwrap()).unwrap();
        for &(_, leaf) in &tree.leaves {
            assert_eq!(tree.parents[leaf], Some(into_p));
        }
        let inst = message_instances(&t, &[m], &[tree]);
        assert_eq!(inst.len(), 5);
        assert!(inst.iter().all(|i| i.transmission_ns == 67_200));
    }

    #[test]
    fn single_hop_unicast() {
        let t = topo(&[(0, E), (1, E)], &[(0, 1)]);
        let table = all_pairs_shortest_paths(&t).unwrap();
        let tree = route_message(&t, &msg(0, &[1]), &table).unwrap();
        assert_eq!(tree.links, vec![t.link_between(0, 1).unwrap()]);
    }

    #[test]
    fn shared_first_link_is_merged() {
        // s=0 - sw=1 - {x=2, y=3}, plus a detour sw 4 joining 0 and 2
        let t = topo(
            &[(0, E), (1, R), (2, E), (3, E), (4, R)],
            &[(0, 1), (1, 2), (1, 3), (0, 4), (4, 2)],
        );
        let table = all_pairs_shortest_paths(&t).unwrap();
        let tree = route_message(&t, &msg(0, &[2, 3]), &table).unwrap();
        let first = t.link_between(0, 1).unwrap();
        assert_eq!(tree.links.iter().filter(|&&l| l == first).count(), 1);
        assert_eq!(tree.len(), 3);
        assert_eq!(tree.path_to(3).unwrap()[0], first);
    }

    #[test]
    fn two_hop_unicast_has_two_instances() {
        let t = topo(&[(0, E), (1, R), (2, E)], &[(0, 1), (1, 2)]);
        let table = all_pairs_shortest_paths(&t).unwrap();
        let m = msg(0, &[2]);
        let tree = route_message(&t, &m, &table).unwrap();
        assert_eq!(message_instances(&t, &[m], &[tree]).len(), 2);
    }
}
