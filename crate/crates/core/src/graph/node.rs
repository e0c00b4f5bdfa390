use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    Input,
    AttnHead,
    Mlp,
    Logits,
}

/// One module output at one token position.
///
/// Ordering is by `(layer, kind, head, position)`, which is a topological
/// order of the graph and the basis of every deterministic tie-break.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId {
    pub layer: i32,
    pub kind: NodeKind,
    pub head: Option<usize>,
    pub position: usize,
}

impl NodeId {
    pub fn input(position: usize) -> Self {
        Self {
            layer: -1,
            kind: NodeKind::Input,
            head: None,
            position,
        }
    }

    pub fn head(layer: usize, head: usize, position: usize) -> Self {
        Self {
            layer: layer as i32,
            kind: NodeKind::AttnHead,
            head: Some(head),
            position,
        }
    }

    pub fn mlp(layer: usize, position: usize) -> Self {
        Self {
            layer: layer as i32,
            kind: NodeKind::Mlp,
            head: None,
            position,
        }
    }

    /// Logits sit one layer past the last transformer block.
    pub fn logits(n_layers: usize, position: usize) -> Self {
        Self {
            layer: n_layers as i32,
            kind: NodeKind::Logits,
            head: None,
            position,
        }
    }

    pub fn module(&self) -> ModuleId {
        match self.kind {
            NodeKind::Input => ModuleId::Input,
            NodeKind::AttnHead => ModuleId::Head {
                layer: self.layer as usize,
                head: self.head.unwrap_or(0),
            },
            NodeKind::Mlp => ModuleId::Mlp {
                layer: self.layer as usize,
            },
            NodeKind::Logits => ModuleId::Logits,
        }
    }

    pub fn is_sentinel(&self) -> bool {
        matches!(self.kind, NodeKind::Input | NodeKind::Logits)
    }

    fn is_well_formed(&self) -> bool {
        match self.kind {
            NodeKind::Input => self.layer == -1 && self.head.is_none(),
            NodeKind::AttnHead => self.layer >= 0 && self.head.is_some(),
            NodeKind::Mlp => self.layer >= 0 && self.head.is_none(),
            NodeKind::Logits => self.layer >= 1 && self.head.is_none(),
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            NodeKind::Input => write!(f, "input@{}", self.position),
            NodeKind::AttnHead => write!(
                f,
                "a{}.h{}@{}",
                self.layer,
                self.head.unwrap_or(0),
                self.position
            ),
            NodeKind::Mlp => write!(f, "m{}@{}", self.layer, self.position),
            NodeKind::Logits => write!(f, "logits{}@{}", self.layer, self.position),
        }
    }
}

impl FromStr for NodeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || Error::parse("node id", format!("malformed node id {s:?}"));
        let (module, pos) = s.split_once('@').ok_or_else(bad)?;
        let position: usize = pos.parse().map_err(|_| bad())?;
        let node = if module == "input" {
            NodeId::input(position)
        } else if let Some(rest) = module.strip_prefix("logits") {
            let layer: usize = rest.parse().map_err(|_| bad())?;
            NodeId::logits(layer, position)
        } else if let Some(rest) = module.strip_prefix('a') {
            let (l, h) = rest.split_once(".h").ok_or_else(bad)?;
            NodeId::head(
                l.parse().map_err(|_| bad())?,
                h.parse().map_err(|_| bad())?,
                position,
            )
        } else if let Some(rest) = module.strip_prefix('m') {
            NodeId::mlp(rest.parse().map_err(|_| bad())?, position)
        } else {
            return Err(bad());
        };
        if !node.is_well_formed() {
            return Err(bad());
        }
        Ok(node)
    }
}

impl Serialize for NodeId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A component with positions marginalised out. Logits carry no layer so
/// that models of different depth still share the readout identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModuleId {
    Input,
    Head { layer: usize, head: usize },
    Mlp { layer: usize },
    Logits,
}

impl fmt::Display for ModuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModuleId::Input => write!(f, "input"),
            ModuleId::Head { layer, head } => write!(f, "a{layer}.h{head}"),
            ModuleId::Mlp { layer } => write!(f, "m{layer}"),
            ModuleId::Logits => write!(f, "logits"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeKind {
    Q,
    K,
    V,
    Flow,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 4] = [EdgeKind::Q, EdgeKind::K, EdgeKind::V, EdgeKind::Flow];

    pub fn as_str(&self) -> &'static str {
        match self {
            EdgeKind::Q => "Q",
            EdgeKind::K => "K",
            EdgeKind::V => "V",
            EdgeKind::Flow => "Flow",
        }
    }
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
