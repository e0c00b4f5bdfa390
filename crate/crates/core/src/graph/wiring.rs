//! Residual-stream wiring at module × position granularity.
//!
//! Every destination module reads one or more *slots*: a pre-activation
//! residual input formed by summing the outputs of its upstream nodes at a
//! single source position. Attention heads read one query slot at their own
//! position and one key and one value slot per attended position; MLPs and
//! logits read a single slot at their own position. Each (source, slot) pair
//! is one graph edge, and edges are numbered slot by slot, which gives the
//! canonical edge order shared by graphs, score tables and interventions.

use std::ops::Range;

use super::node::{EdgeKind, NodeId};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Slot {
    pub dst: NodeId,
    pub kind: EdgeKind,
    /// Position whose residual stream feeds this slot.
    pub src_pos: usize,
    /// Edge indices of the incoming edges, in source order.
    pub edges: Range<usize>,
}

#[derive(Clone, Debug)]
pub struct Wiring {
    pub n_layers: usize,
    pub n_heads: usize,
    pub seq_len: usize,
    pub slots: Vec<Slot>,
    /// Per edge: (source node, slot index).
    pub edges: Vec<(NodeId, usize)>,
    /// Per edge: dense index of the source node.
    pub edge_src: Vec<usize>,
    head_base: Vec<usize>,
    mlp_slot: Vec<usize>,
    logits_slot: Vec<usize>,
}

impl Wiring {
    pub fn new(n_layers: usize, n_heads: usize, seq_len: usize) -> Self {
        let mut wiring = Wiring {
            n_layers,
            n_heads,
            seq_len,
            slots: Vec::new(),
            edges: Vec::new(),
            edge_src: Vec::new(),
            head_base: Vec::with_capacity(n_layers * n_heads * seq_len),
            mlp_slot: Vec::with_capacity(n_layers * seq_len),
            logits_slot: Vec::with_capacity(seq_len),
        };
        for layer in 0..n_layers {
            for head in 0..n_heads {
                for pos in 0..seq_len {
                    let dst = NodeId::head(layer, head, pos);
                    wiring.head_base.push(wiring.slots.len());
                    wiring.push_slot(dst, EdgeKind::Q, pos, layer, false);
                    for src_pos in 0..=pos {
                        wiring.push_slot(dst, EdgeKind::K, src_pos, layer, false);
                    }
                    for src_pos in 0..=pos {
                        wiring.push_slot(dst, EdgeKind::V, src_pos, layer, false);
                    }
                }
            }
            for pos in 0..seq_len {
                wiring.mlp_slot.push(wiring.slots.len());
                wiring.push_slot(NodeId::mlp(layer, pos), EdgeKind::Flow, pos, layer, true);
            }
        }
        for pos in 0..seq_len {
            wiring.logits_slot.push(wiring.slots.len());
            wiring.push_slot(
                NodeId::logits(n_layers, pos),
                EdgeKind::Flow,
                pos,
                n_layers,
                false,
            );
        }
        wiring
    }

    /// Upstream nodes whose output reaches a reader at `layer` through the
    /// residual stream at `pos`. MLPs also see their own layer's heads.
    pub fn sources(&self, layer: usize, pos: usize, include_same_layer_heads: bool) -> Vec<NodeId> {
        let mut out = vec![NodeId::input(pos)];
        for l in 0..layer {
            out.extend((0..self.n_heads).map(|h| NodeId::head(l, h, pos)));
            out.push(NodeId::mlp(l, pos));
        }
        if include_same_layer_heads {
            out.extend((0..self.n_heads).map(|h| NodeId::head(layer, h, pos)));
        }
        out
    }

    fn push_slot(&mut self, dst: NodeId, kind: EdgeKind, src_pos: usize, layer: usize, same: bool) {
        let slot_idx = self.slots.len();
        let start = self.edges.len();
        for src in self.sources(layer, src_pos, same) {
            self.edge_src.push(self.node_index(&src));
            self.edges.push((src, slot_idx));
        }
        self.slots.push(Slot {
            dst,
            kind,
            src_pos,
            edges: start..self.edges.len(),
        });
    }

    pub fn n_nodes(&self) -> usize {
        self.seq_len * (2 + self.n_layers * (self.n_heads + 1))
    }

    /// Dense node index: inputs, then per layer the heads and MLP, then logits.
    pub fn node_index(&self, node: &NodeId) -> usize {
        let t = self.seq_len;
        let per_layer = self.n_heads + 1;
        match node.kind {
            super::NodeKind::Input => node.position,
            super::NodeKind::AttnHead => {
                t + (node.layer as usize * per_layer + node.head.unwrap_or(0)) * t + node.position
            }
            super::NodeKind::Mlp => {
                t + (node.layer as usize * per_layer + self.n_heads) * t + node.position
            }
            super::NodeKind::Logits => t + self.n_layers * per_layer * t + node.position,
        }
    }

    pub fn node_at(&self, index: usize) -> NodeId {
        let t = self.seq_len;
        if index < t {
            return NodeId::input(index);
        }
        let rest = index - t;
        let block = rest / t;
        let pos = rest % t;
        let per_layer = self.n_heads + 1;
        if block >= self.n_layers * per_layer {
            return NodeId::logits(self.n_layers, pos);
        }
        let layer = block / per_layer;
        let within = block % per_layer;
        if within == self.n_heads {
            NodeId::mlp(layer, pos)
        } else {
            NodeId::head(layer, within, pos)
        }
    }

    /// All nodes in dense-index order.
    pub fn nodes(&self) -> Vec<NodeId> {
        (0..self.n_nodes()).map(|i| self.node_at(i)).collect()
    }

    pub fn q_slot(&self, layer: usize, head: usize, pos: usize) -> usize {
        self.head_base[(layer * self.n_heads + head) * self.seq_len + pos]
    }

    /// Key slot of query position `pos` reading position `src_pos <= pos`.
    pub fn k_slot(&self, layer: usize, head: usize, pos: usize, src_pos: usize) -> usize {
        self.q_slot(layer, head, pos) + 1 + src_pos
    }

    pub fn v_slot(&self, layer: usize, head: usize, pos: usize, src_pos: usize) -> usize {
        self.q_slot(layer, head, pos) + 2 + pos + src_pos
    }

    pub fn mlp_slot(&self, layer: usize, pos: usize) -> usize {
        self.mlp_slot[layer * self.seq_len + pos]
    }

    pub fn logits_slot(&self, pos: usize) -> usize {
        self.logits_slot[pos]
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }
}
