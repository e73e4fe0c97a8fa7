use std::collections::HashMap;
use std::ops::Range;

use crate::error::{Error, Result};

/// Dense adjacency view of the layered pipeline.
///
/// Nodes are indexed `0..n` in `(layer, id)` order and edges `0..e` in
/// `(from, to)` order, so every node's out-edges form one contiguous range
/// and successors are listed by ascending id.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    ids: Vec<u32>,
    layer: Vec<usize>,
    index: HashMap<u32, usize>,
    layers: Vec<Range<usize>>,
    edge_from: Vec<usize>,
    edge_to: Vec<usize>,
    out_offsets: Vec<usize>,
    in_edges: Vec<Vec<usize>>,
}

impl Topology {
    /// `nodes` is `(id, layer)`, `links` is `(from_id, to_id)`. Callers are
    /// expected to have validated ids and layering.
    pub fn build(nodes: &[(u32, usize)], links: &[(u32, u32)], depth: usize) -> Result<Self> {
        let mut order: Vec<(usize, u32)> = nodes.iter().map(|&(id, h)| (h, id)).collect();
        order.sort_unstable();
        let ids: Vec<u32> = order.iter().map(|&(_, id)| id).collect();
        let layer: Vec<usize> = order.iter().map(|&(h, _)| h).collect();
        let index: HashMap<u32, usize> = ids.iter().enumerate().map(|(k, &id)| (id, k)).collect();

        let mut layers = Vec::with_capacity(depth + 1);
        let mut start = 0;
        for h in 0..=depth {
            let end = start + layer[start..].iter().take_while(|&&l| l == h).count();
            layers.push(start..end);
            start = end;
        }

        let mut edges = Vec::with_capacity(links.len());
        for &(from, to) in links {
            let f = *index.get(&from).ok_or(Error::UnknownNode(from))?;
            let t = *index.get(&to).ok_or(Error::UnknownNode(to))?;
            edges.push((f, t));
        }
        edges.sort_unstable();
        edges.dedup();

        let n = ids.len();
        let mut out_offsets = vec![0usize; n + 1];
        for &(f, _) in &edges {
            out_offsets[f + 1] += 1;
        }
        for k in 0..n {
            out_offsets[k + 1] += out_offsets[k];
        }
        let mut in_edges = vec![Vec::new(); n];
        for (e, &(_, t)) in edges.iter().enumerate() {
            in_edges[t].push(e);
        }

        Ok(Self {
            ids,
            layer,
            index,
            layers,
            edge_from: edges.iter().map(|e| e.0).collect(),
            edge_to: edges.iter().map(|e| e.1).collect(),
            out_offsets,
            in_edges,
        })
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_from.len()
    }

    /// Number of sub-model layers `H` (EDs are layer 0).
    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn id(&self, node: usize) -> u32 {
        self.ids[node]
    }

    pub fn layer(&self, node: usize) -> usize {
        self.layer[node]
    }

    pub fn index_of(&self, id: u32) -> Result<usize> {
        self.index.get(&id).copied().ok_or(Error::UnknownNode(id))
    }

    pub fn layer_nodes(&self, h: usize) -> Range<usize> {
        self.layers[h].clone()
    }

    /// Edge indices leaving `node`, ordered by successor id.
    pub fn out_edges(&self, node: usize) -> Range<usize> {
        self.out_offsets[node]..self.out_offsets[node + 1]
    }

    /// Edge indices entering `node`, ordered by predecessor.
    pub fn in_edges(&self, node: usize) -> &[usize] {
        &self.in_edges[node]
    }

    pub fn edge_from(&self, e: usize) -> usize {
        self.edge_from[e]
    }

    pub fn edge_to(&self, e: usize) -> usize {
        self.edge_to[e]
    }

    /// Successor set `L(i)` as node indices.
    pub fn successors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.out_edges(node).map(move |e| self.edge_to[e])
    }

    /// Predecessor set `V(j)` as node indices.
    pub fn predecessors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.in_edges[node].iter().map(move |&e| self.edge_from[e])
    }

    pub fn out_offsets(&self) -> &[usize] {
        &self.out_offsets
    }

    /// Successor ids of the node with id `id`.
    pub fn successor_ids(&self, id: u32) -> Result<Vec<u32>> {
        let i = self.index_of(id)?;
        Ok(self.successors(i).map(|j| self.ids[j]).collect())
    }

    /// Predecessor ids of the node with id `id`.
    pub fn predecessor_ids(&self, id: u32) -> Result<Vec<u32>> {
        let j = self.index_of(id)?;
        Ok(self.predecessors(j).map(|i| self.ids[i]).collect())
    }

    /// Edge index of `from -> to`, if linked.
    pub fn edge_between(&self, from: usize, to: usize) -> Option<usize> {
        self.out_edges(from).find(|&e| self.edge_to[e] == to)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_lookups() {
        let t = Topology::build(&[(7, 0), (3, 1)], &[(7, 3)], 1).unwrap();
        assert_eq!(t.successor_ids(7).unwrap(), vec![3]);
        assert_eq!(t.predecessor_ids(3).unwrap(), vec![7]);
        assert!(matches!(t.successor_ids(99), Err(Error::UnknownNode(99))));
    }

    #[test]
    fn diamond_predecessors() {
        let nodes = [(0, 0), (1, 1), (2, 1), (3, 2)];
        let links = [(0, 1), (0, 2), (1, 3), (2, 3)];
        let t = Topology::build(&nodes, &links, 2).unwrap();
        assert_eq!(t.predecessor_ids(3).unwrap().len(), 2);
        assert_eq!(t.out_edges(t.index_of(0).unwrap()).len(), 2);
        assert_eq!(t.layer_nodes(1), 1..3);
    }

    #[test]
    fn successors_sorted_by_id() {
        let nodes = [(10, 0), (5, 1), (2, 1), (9, 1)];
        let links = [(10, 9), (10, 2), (10, 5)];
        let t = Topology::build(&nodes, &links, 1).unwrap();
        assert_eq!(t.successor_ids(10).unwrap(), vec![2, 5, 9]);
    }
}
