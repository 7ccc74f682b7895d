//! Forward-only feature pyramids: classic top-down FPN, the skipped
//! variant where every lower level fuses directly with the top level, and
//! an optional bottom-up PAN stage, followed by 5-channel detection heads.
//!
//! Graphs are built through [`GraphBuilder`], which infers channel counts
//! and spatial levels node by node and rejects inconsistent wiring.

pub mod fmap;
pub mod ops;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

pub use fmap::FeatureMap;
pub use ops::Conv;

use crate::error::{Error, Result};
use crate::rng::DetRng;

/// Channels of every detection head: four box logits and one score logit.
pub const HEAD_CHANNELS: usize = 5;

/// Backbone input ids, strides 8, 16, 32.
pub const BACKBONE_IDS: [&str; 3] = ["B3", "B4", "B5"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PyramidMode {
    Fpn,
    Sfpn,
}

impl fmt::Display for PyramidMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PyramidMode::Fpn => "fpn",
            PyramidMode::Sfpn => "sfpn",
        })
    }
}

impl FromStr for PyramidMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fpn" => Ok(PyramidMode::Fpn),
            "sfpn" => Ok(PyramidMode::Sfpn),
            other => Err(format!("unknown pyramid mode `{other}` (expected fpn or sfpn)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Input,
    Lateral1x1Conv,
    DownsampleConvS2,
    UpscaleNn2x,
    ConcatFuse,
    BlockStandin,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeOp {
    /// A backbone feature supplied by the caller.
    Input {
        channels: usize,
        level: u32,
    },
    Lateral1x1Conv(Conv),
    DownsampleConvS2(Conv),
    UpscaleNn2x,
    ConcatFuse,
    /// 1x1 convolution standing in for a CSP-style block.
    BlockStandin(Conv),
}

impl NodeOp {
    pub fn kind(&self) -> OpKind {
        match self {
            NodeOp::Input { .. } => OpKind::Input,
            NodeOp::Lateral1x1Conv(_) => OpKind::Lateral1x1Conv,
            NodeOp::DownsampleConvS2(_) => OpKind::DownsampleConvS2,
            NodeOp::UpscaleNn2x => OpKind::UpscaleNn2x,
            NodeOp::ConcatFuse => OpKind::ConcatFuse,
            NodeOp::BlockStandin(_) => OpKind::BlockStandin,
        }
    }

    pub fn weights(&self) -> &[f32] {
        match self {
            NodeOp::Lateral1x1Conv(c) | NodeOp::DownsampleConvS2(c) | NodeOp::BlockStandin(c) => c.weights(),
            _ => &[],
        }
    }
}

/// Inferred output shape of a node: channel count and pyramid level,
/// where level `k` has `1 / 2^k` the resolution of level 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeShape {
    pub channels: usize,
    pub level: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub op: NodeOp,
    pub inputs: Vec<usize>,
    pub shape: NodeShape,
}

/// Incremental, validating graph constructor. Nodes can only reference
/// nodes added before them, so every built graph is acyclic and already
/// in topological order.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn lookup(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn add(&mut self, id: &str, op: NodeOp, inputs: &[&str]) -> Result<usize> {
        let reject = |reason: String| Error::Topology { node: id.to_string(), reason };
        if self.lookup(id).is_some() {
            return Err(reject("duplicate node id".into()));
        }
        let mut idx = Vec::with_capacity(inputs.len());
        for name in inputs {
            idx.push(self.lookup(name).ok_or_else(|| reject(format!("input `{name}` is not defined earlier")))?);
        }
        let shapes: Vec<NodeShape> = idx.iter().map(|&i| self.nodes[i].shape).collect();
        let single = || -> Result<NodeShape> {
            match shapes.as_slice() {
                [s] => Ok(*s),
                _ => Err(reject(format!("expects exactly one input, got {}", shapes.len()))),
            }
        };
        let conv_in = |conv: &Conv, s: NodeShape| -> Result<()> {
            if conv.in_channels() != s.channels {
                return Err(reject(format!(
                    "convolution expects {} input channels, upstream provides {}",
                    conv.in_channels(),
                    s.channels
                )));
            }
            Ok(())
        };
        let shape = match &op {
            NodeOp::Input { channels, level } => {
                if !inputs.is_empty() {
                    return Err(reject("input nodes take no inputs".into()));
                }
                if *channels == 0 {
                    return Err(reject("input has zero channels".into()));
                }
                NodeShape { channels: *channels, level: *level }
            }
            NodeOp::Lateral1x1Conv(conv) | NodeOp::BlockStandin(conv) => {
                let s = single()?;
                conv_in(conv, s)?;
                NodeShape { channels: conv.out_channels(), level: s.level }
            }
            NodeOp::DownsampleConvS2(conv) => {
                let s = single()?;
                conv_in(conv, s)?;
                NodeShape { channels: conv.out_channels(), level: s.level + 1 }
            }
            NodeOp::UpscaleNn2x => {
                let s = single()?;
                if s.level == 0 {
                    return Err(reject("cannot upscale above level 0".into()));
                }
                NodeShape { channels: s.channels, level: s.level - 1 }
            }
            NodeOp::ConcatFuse => {
                if shapes.len() < 2 {
                    return Err(reject("concatenation needs at least two inputs".into()));
                }
                if shapes.iter().any(|s| s.level != shapes[0].level) {
                    return Err(reject("concatenated inputs differ in resolution".into()));
                }
                NodeShape { channels: shapes.iter().map(|s| s.channels).sum(), level: shapes[0].level }
            }
        };
        self.nodes.push(Node { id: id.to_string(), op, inputs: idx, shape });
        Ok(self.nodes.len() - 1)
    }

    pub fn finish(self, backbone: [&str; 3], features: [&str; 3], heads: [&str; 3]) -> Result<TopologyGraph> {
        let resolve = |name: &str| self.lookup(name).ok_or_else(|| Error::UnknownNode(name.to_string()));
        let backbone_inputs = [resolve(backbone[0])?, resolve(backbone[1])?, resolve(backbone[2])?];
        let features = [resolve(features[0])?, resolve(features[1])?, resolve(features[2])?];
        let outputs = [resolve(heads[0])?, resolve(heads[1])?, resolve(heads[2])?];
        for (k, &i) in backbone_inputs.iter().enumerate() {
            let node = &self.nodes[i];
            if node.op.kind() != OpKind::Input || node.shape.level != k as u32 {
                return Err(Error::Topology {
                    node: node.id.clone(),
                    reason: format!("backbone input {k} must be an input node at level {k}"),
                });
            }
        }
        for (k, &i) in outputs.iter().enumerate() {
            let node = &self.nodes[i];
            if node.shape.level != k as u32 {
                return Err(Error::Topology {
                    node: node.id.clone(),
                    reason: format!("output {k} must sit at level {k}, found level {}", node.shape.level),
                });
            }
        }
        Ok(TopologyGraph { nodes: self.nodes, backbone_inputs, features, outputs })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopologyGraph {
    nodes: Vec<Node>,
    backbone_inputs: [usize; 3],
    features: [usize; 3],
    outputs: [usize; 3],
}

/// Construction parameters for the standard pyramids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PyramidConfig {
    pub mode: PyramidMode,
    pub with_pan: bool,
    /// Channel widths of B3, B4, B5; every internal level keeps its width.
    pub channels: [usize; 3],
}

/// Wires an FPN or SFPN (optionally followed by PAN) with heads, drawing
/// all weights from `rng`.
///
/// * FPN: `P4 = fuse(L4, up(P5))`, `P3 = fuse(L3, up(P4))`.
/// * SFPN: `P4 = fuse(L4, up(P5))`, `P3 = fuse(L3, up(up(P5)))`.
/// * PAN: `N4 = fuse(down(P3), P4)`, `N5 = fuse(down(N4), P5)`; the
///   stride-8 output stays `P3`.
///
/// `fuse` is channel concatenation followed by a 1x1 block stand-in.
pub fn build_topology(config: &PyramidConfig, rng: &mut DetRng) -> Result<TopologyGraph> {
    let [c3, c4, c5] = config.channels;
    if let Some(k) = config.channels.iter().position(|&c| c == 0) {
        return Err(Error::Topology { node: BACKBONE_IDS[k].into(), reason: "zero channel width".into() });
    }
    let mut g = GraphBuilder::new();
    g.add("B3", NodeOp::Input { channels: c3, level: 0 }, &[])?;
    g.add("B4", NodeOp::Input { channels: c4, level: 1 }, &[])?;
    g.add("B5", NodeOp::Input { channels: c5, level: 2 }, &[])?;

    let mut conv1 = |i, o| Conv::random(rng, i, o, 1);
    g.add("P5", NodeOp::Lateral1x1Conv(conv1(c5, c5)), &["B5"])?;
    g.add("L4", NodeOp::Lateral1x1Conv(conv1(c4, c4)), &["B4"])?;
    g.add("L3", NodeOp::Lateral1x1Conv(conv1(c3, c3)), &["B3"])?;

    g.add("U5", NodeOp::UpscaleNn2x, &["P5"])?;
    g.add("C4", NodeOp::ConcatFuse, &["L4", "U5"])?;
    g.add("P4", NodeOp::BlockStandin(conv1(c4 + c5, c4)), &["C4"])?;

    match config.mode {
        PyramidMode::Fpn => {
            g.add("U4", NodeOp::UpscaleNn2x, &["P4"])?;
            g.add("C3", NodeOp::ConcatFuse, &["L3", "U4"])?;
            g.add("P3", NodeOp::BlockStandin(conv1(c3 + c4, c3)), &["C3"])?;
        }
        PyramidMode::Sfpn => {
            g.add("U5x4", NodeOp::UpscaleNn2x, &["U5"])?;
            g.add("C3", NodeOp::ConcatFuse, &["L3", "U5x4"])?;
            g.add("P3", NodeOp::BlockStandin(conv1(c3 + c5, c3)), &["C3"])?;
        }
    }

    let features = if config.with_pan {
        g.add("D3", NodeOp::DownsampleConvS2(Conv::random(rng, c3, c3, 3)), &["P3"])?;
        g.add("C4n", NodeOp::ConcatFuse, &["D3", "P4"])?;
        g.add("N4", NodeOp::BlockStandin(Conv::random(rng, c3 + c4, c4, 1)), &["C4n"])?;
        g.add("D4", NodeOp::DownsampleConvS2(Conv::random(rng, c4, c4, 3)), &["N4"])?;
        g.add("C5n", NodeOp::ConcatFuse, &["D4", "P5"])?;
        g.add("N5", NodeOp::BlockStandin(Conv::random(rng, c4 + c5, c5, 1)), &["C5n"])?;
        ["P3", "N4", "N5"]
    } else {
        ["P3", "P4", "P5"]
    };

    g.add("H3", NodeOp::Lateral1x1Conv(Conv::random(rng, c3, HEAD_CHANNELS, 1)), &[features[0]])?;
    g.add("H4", NodeOp::Lateral1x1Conv(Conv::random(rng, c4, HEAD_CHANNELS, 1)), &[features[1]])?;
    g.add("H5", NodeOp::Lateral1x1Conv(Conv::random(rng, c5, HEAD_CHANNELS, 1)), &[features[2]])?;
    g.finish(BACKBONE_IDS, features, ["H3", "H4", "H5"])
}

impl TopologyGraph {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: &str) -> Result<&Node> {
        self.nodes.iter().find(|n| n.id == id).ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    fn index_of(&self, id: &str) -> Result<usize> {
        self.nodes.iter().position(|n| n.id == id).ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    /// Ids of the three pyramid features feeding the heads.
    pub fn feature_ids(&self) -> [&str; 3] {
        self.features.map(|i| self.nodes[i].id.as_str())
    }

    pub fn output_ids(&self) -> [&str; 3] {
        self.outputs.map(|i| self.nodes[i].id.as_str())
    }

    pub fn backbone_channels(&self) -> [usize; 3] {
        self.backbone_inputs.map(|i| self.nodes[i].shape.channels)
    }

    /// Backbone inputs from which `id` is reachable.
    pub fn dependency_set(&self, id: &str) -> Result<BTreeSet<String>> {
        let start = self.index_of(id)?;
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            if std::mem::replace(&mut seen[i], true) {
                continue;
            }
            stack.extend(self.nodes[i].inputs.iter().copied());
        }
        Ok(self.backbone_inputs.iter().filter(|&&b| seen[b]).map(|&b| self.nodes[b].id.clone()).collect())
    }

    /// Sum of squares of every convolution weight (biases excluded).
    pub fn weights_sq_norm(&self) -> f64 {
        self.nodes.iter().flat_map(|n| n.op.weights()).map(|&w| (w as f64) * (w as f64)).sum()
    }

    fn check_inputs(&self, feats: &[FeatureMap; 3]) -> Result<()> {
        let (rows, cols) = (feats[0].rows(), feats[0].cols());
        for (k, (f, &i)) in feats.iter().zip(&self.backbone_inputs).enumerate() {
            let node = &self.nodes[i];
            let scale = 1usize << k;
            let fail = |reason: String| Err(Error::Shape { node: node.id.clone(), reason });
            if f.channels() != node.shape.channels {
                return fail(format!("expected {} channels, got {}", node.shape.channels, f.channels()));
            }
            if f.rows() == 0 || f.cols() == 0 || f.rows() * scale != rows || f.cols() * scale != cols {
                return fail(format!(
                    "spatial size {}x{} breaks the 4:2:1 ratio against B3 {rows}x{cols}",
                    f.rows(),
                    f.cols()
                ));
            }
        }
        Ok(())
    }

    /// Evaluates every node in order and returns all intermediate maps.
    pub fn evaluate(&self, feats: &[FeatureMap; 3]) -> Result<Vec<FeatureMap>> {
        self.check_inputs(feats)?;
        let mut values: Vec<FeatureMap> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let arg = |k: usize| &values[node.inputs[k]];
            let shape_err = |reason: String| Error::Shape { node: node.id.clone(), reason };
            let value = match &node.op {
                NodeOp::Input { .. } => {
                    let k = self
                        .backbone_inputs
                        .iter()
                        .position(|&b| b == i)
                        .ok_or_else(|| shape_err("input node is not bound to a backbone feature".into()))?;
                    feats[k].clone()
                }
                NodeOp::Lateral1x1Conv(conv) | NodeOp::BlockStandin(conv) => conv.apply_1x1(arg(0)),
                NodeOp::DownsampleConvS2(conv) => conv.apply_3x3_s2(arg(0)),
                NodeOp::UpscaleNn2x => ops::upscale_nn_2x(arg(0)),
                NodeOp::ConcatFuse => {
                    let parts: Vec<&FeatureMap> = node.inputs.iter().map(|&j| &values[j]).collect();
                    let (r, c) = (parts[0].rows(), parts[0].cols());
                    if let Some(p) = parts.iter().find(|p| p.rows() != r || p.cols() != c) {
                        return Err(shape_err(format!("cannot concatenate {r}x{c} with {}x{}", p.rows(), p.cols())));
                    }
                    ops::concat(&parts)
                }
            };
            let expected_rows = feats[0].rows() >> node.shape.level;
            if value.channels() != node.shape.channels || value.rows() != expected_rows {
                return Err(shape_err(format!(
                    "produced {}x{}x{}, expected {} rows and {} channels",
                    value.rows(),
                    value.cols(),
                    value.channels(),
                    expected_rows,
                    node.shape.channels
                )));
            }
            values.push(value);
        }
        Ok(values)
    }

    /// The three 5-channel head outputs, strides 8, 16, 32.
    pub fn forward(&self, feats: &[FeatureMap; 3]) -> Result<[FeatureMap; 3]> {
        let mut values = self.evaluate(feats)?;
        let take =
            |values: &mut Vec<FeatureMap>, i: usize| std::mem::replace(&mut values[i], FeatureMap::zeros(0, 0, 0));
        Ok([take(&mut values, self.outputs[0]), take(&mut values, self.outputs[1]), take(&mut values, self.outputs[2])])
    }
}
