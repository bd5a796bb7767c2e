//! Declarative network graphs.
//!
//! A [`NetworkSpec`] is an ordered list of named [`LayerSpec`] nodes whose
//! `inputs` reference producer layers by name. The same spec drives
//! execution ([`execute`]) and static analysis ([`crate::analyze`]).
//!
//! Specs serialise to JSON. Each layer is an object with `name`, `kind`,
//! `inputs`, an optional `block` (the table row it aggregates under), and the
//! kind-specific fields flattened alongside, e.g.
//!
//! ```json
//! {"name": "conv2_1/3x3", "block": "conv2_1", "kind": "conv",
//!  "in_channels": 24, "out_channels": 24, "kernel_h": 3, "kernel_w": 3,
//!  "stride": 1, "pad": 1, "has_bias": false, "groups": 1,
//!  "inputs": ["conv2_1/1x1/relu"]}
//! ```

mod blocks;
mod exec;
mod pvanet;
mod weights;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detect::DetectorConfig;
use crate::error::{Error, Result};
use crate::tensor::{pool_output_size, ConvSpec, DeconvSpec, PoolSpec, RoiPoolSpec, Shape};

pub use blocks::{build_crelu_block, build_inception_block, CReluBlockSpec, InceptionBlockSpec, Residual};
pub use exec::{backward, execute, execute_targets, forward, Gradients, Trace};
pub use pvanet::{
    build_mini_pvanet, build_pvanet, build_pvanet_detector, build_rcnn_head, build_rpn_head, rcnn_layers,
    rpn_layers, MiniPvanetConfig, RcnnHeadConfig, RpnHeadConfig, BN_EPS, BN_MOMENTUM,
};
pub use weights::{Param, ParamRole, WeightStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    /// Graph input; `height`/`width` are nominal sizes used as defaults by analysis.
    Input {
        channels: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        height: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        width: Option<usize>,
    },
    Conv(ConvSpec),
    MaxPool(PoolSpec),
    DeconvBilinear(DeconvSpec),
    Relu,
    Negate,
    Concat,
    ScaleShift {
        channels: usize,
    },
    BatchNorm {
        channels: usize,
        eps: f64,
        momentum: f64,
    },
    FullyConnected {
        in_features: usize,
        out_features: usize,
        #[serde(default)]
        has_bias: bool,
    },
    /// Inputs: feature map, then RoIs as an `(R, 4, 1, 1)` tensor of image coordinates.
    RoiPool(RoiPoolSpec),
    Softmax,
    EltwiseAdd,
    /// Channels `start..end` of the input.
    SliceChannels {
        start: usize,
        end: usize,
    },
}

/// Description of one learnable or statistic tensor owned by a layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub role: ParamRole,
}

impl LayerKind {
    pub fn type_name(&self) -> &'static str {
        match self {
            LayerKind::Input { .. } => "input",
            LayerKind::Conv(_) => "conv",
            LayerKind::MaxPool(_) => "max_pool",
            LayerKind::DeconvBilinear(_) => "deconv_bilinear",
            LayerKind::Relu => "relu",
            LayerKind::Negate => "negate",
            LayerKind::Concat => "concat",
            LayerKind::ScaleShift { .. } => "scale_shift",
            LayerKind::BatchNorm { .. } => "batchnorm",
            LayerKind::FullyConnected { .. } => "fully_connected",
            LayerKind::RoiPool(_) => "roi_pool",
            LayerKind::Softmax => "softmax",
            LayerKind::EltwiseAdd => "eltwise_add",
            LayerKind::SliceChannels { .. } => "slice_channels",
        }
    }

    fn arity_ok(&self, n: usize) -> bool {
        match self {
            LayerKind::Input { .. } => n == 0,
            LayerKind::Concat => n >= 1,
            LayerKind::EltwiseAdd | LayerKind::RoiPool(_) => n == 2,
            _ => n == 1,
        }
    }

    /// Parameters this layer reads from a weight store. Fixed bilinear
    /// deconvolution kernels are generated, not stored.
    pub fn params(&self, layer: &str) -> Vec<ParamSpec> {
        let p = |suffix: &str, dims: Vec<usize>, role| ParamSpec {
            name: format!("{layer}.{suffix}"),
            dims,
            role,
        };
        match self {
            LayerKind::Conv(c) => {
                let mut v = vec![p("weight", c.weight_dims().to_vec(), ParamRole::Trainable)];
                if c.has_bias {
                    v.push(p("bias", vec![c.out_channels], ParamRole::Trainable));
                }
                v
            }
            LayerKind::ScaleShift { channels } => vec![
                p("scale", vec![*channels], ParamRole::Trainable),
                p("shift", vec![*channels], ParamRole::Trainable),
            ],
            LayerKind::BatchNorm { channels, .. } => vec![
                p("mean", vec![*channels], ParamRole::Statistic),
                p("var", vec![*channels], ParamRole::Statistic),
            ],
            LayerKind::FullyConnected {
                in_features,
                out_features,
                has_bias,
            } => {
                let mut v = vec![p("weight", vec![*out_features, *in_features], ParamRole::Trainable)];
                if *has_bias {
                    v.push(p("bias", vec![*out_features], ParamRole::Trainable));
                }
                v
            }
            _ => Vec::new(),
        }
    }

    /// Output channel count from input channel counts.
    pub fn output_channels(&self, inputs: &[usize]) -> std::result::Result<usize, String> {
        let one = || inputs.first().copied().ok_or_else(|| "missing input".to_string());
        let expect = |want: usize, what: &str| -> std::result::Result<(), String> {
            let got = one()?;
            if got == want {
                Ok(())
            } else {
                Err(format!("{what} expects {want} input channels, producer has {got}"))
            }
        };
        match self {
            LayerKind::Input { channels, .. } => Ok(*channels),
            LayerKind::Conv(c) => {
                c.validate().map_err(|e| e.to_string())?;
                expect(c.in_channels, "conv")?;
                Ok(c.out_channels)
            }
            LayerKind::DeconvBilinear(d) => {
                expect(d.channels, "deconv")?;
                Ok(d.channels)
            }
            LayerKind::ScaleShift { channels } => {
                expect(*channels, "scale_shift")?;
                Ok(*channels)
            }
            LayerKind::BatchNorm { channels, .. } => {
                expect(*channels, "batchnorm")?;
                Ok(*channels)
            }
            LayerKind::Concat => Ok(inputs.iter().sum()),
            LayerKind::EltwiseAdd => {
                if inputs.len() == 2 && inputs[0] != inputs[1] {
                    return Err(format!("eltwise_add operands have {} and {} channels", inputs[0], inputs[1]));
                }
                one()
            }
            LayerKind::FullyConnected { out_features, .. } => Ok(*out_features),
            LayerKind::RoiPool(_) => {
                if inputs.len() == 2 && inputs[1] != 4 {
                    return Err(format!("roi input must have 4 channels, has {}", inputs[1]));
                }
                one()
            }
            LayerKind::SliceChannels { start, end } => {
                let c = one()?;
                if start >= end || *end > c {
                    return Err(format!("slice {start}..{end} outside 0..{c}"));
                }
                Ok(end - start)
            }
            LayerKind::MaxPool(_) | LayerKind::Relu | LayerKind::Negate | LayerKind::Softmax => one(),
        }
    }

    /// Output shape from input shapes, using the same size formulas as the kernels.
    pub fn output_shape(&self, inputs: &[Shape]) -> std::result::Result<Shape, String> {
        let channels = self.output_channels(&inputs.iter().map(|s| s.c).collect::<Vec<_>>())?;
        let first = inputs.first().copied();
        match self {
            LayerKind::Input { .. } => Err("input shapes are supplied, not inferred".into()),
            LayerKind::Conv(c) => {
                let s = first.unwrap();
                let (h, w) = c.output_hw(s.h, s.w).map_err(|e| e.to_string())?;
                Ok(Shape::new(s.n, channels, h, w))
            }
            LayerKind::MaxPool(p) => {
                let s = first.unwrap();
                let h = pool_output_size(s.h, p).map_err(|e| e.to_string())?;
                let w = pool_output_size(s.w, p).map_err(|e| e.to_string())?;
                Ok(Shape::new(s.n, channels, h, w))
            }
            LayerKind::DeconvBilinear(d) => {
                let s = first.unwrap();
                let h = d.output_size(s.h).map_err(|e| e.to_string())?;
                let w = d.output_size(s.w).map_err(|e| e.to_string())?;
                Ok(Shape::new(s.n, channels, h, w))
            }
            LayerKind::Concat | LayerKind::EltwiseAdd => {
                let s = first.unwrap();
                for o in inputs {
                    if (o.n, o.h, o.w) != (s.n, s.h, s.w) {
                        return Err(format!(
                            "operand spatial/batch dims {}x{} (n={}) differ from {}x{} (n={})",
                            o.h, o.w, o.n, s.h, s.w, s.n
                        ));
                    }
                }
                Ok(Shape::new(s.n, channels, s.h, s.w))
            }
            LayerKind::FullyConnected { in_features, .. } => {
                let s = first.unwrap();
                let d = s.c * s.h * s.w;
                if d != *in_features {
                    return Err(format!("input flattens to {d} features, layer expects {in_features}"));
                }
                Ok(Shape::new(s.n, channels, 1, 1))
            }
            LayerKind::RoiPool(r) => {
                let rois = inputs[1];
                Ok(Shape::new(rois.n, channels, r.pooled_h, r.pooled_w))
            }
            LayerKind::Relu
            | LayerKind::Negate
            | LayerKind::Softmax
            | LayerKind::ScaleShift { .. }
            | LayerKind::BatchNorm { .. }
            | LayerKind::SliceChannels { .. } => {
                let s = first.unwrap();
                Ok(Shape::new(s.n, channels, s.h, s.w))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    /// Row of the cost table this layer aggregates under; defaults to `name`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<String>,
    #[serde(flatten)]
    pub kind: LayerKind,
    #[serde(default)]
    pub inputs: Vec<String>,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind, inputs: &[&str]) -> Self {
        LayerSpec {
            name: name.into(),
            block: None,
            kind,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn in_block(mut self, block: impl Into<String>) -> Self {
        self.block = Some(block.into());
        self
    }

    pub fn group(&self) -> &str {
        self.block.as_deref().unwrap_or(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector: Option<DetectorConfig>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub layer: Option<String>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.layer {
            Some(l) => write!(f, "layer `{l}`: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

fn diag(layer: Option<&str>, message: impl Into<String>) -> Diagnostic {
    Diagnostic {
        layer: layer.map(str::to_string),
        message: message.into(),
    }
}

impl NetworkSpec {
    pub fn new(name: impl Into<String>) -> Self {
        NetworkSpec {
            name: name.into(),
            layers: Vec::new(),
            outputs: Vec::new(),
            detector: None,
        }
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn layer_mut(&mut self, name: &str) -> Option<&mut LayerSpec> {
        self.layers.iter_mut().find(|l| l.name == name)
    }

    pub fn index(&self) -> HashMap<&str, usize> {
        self.layers.iter().enumerate().map(|(i, l)| (l.name.as_str(), i)).collect()
    }

    /// Input layers in declaration order.
    pub fn input_layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().filter(|l| matches!(l.kind, LayerKind::Input { .. }))
    }

    /// Nominal input shapes (batch 1) for inputs that declare their size.
    pub fn nominal_input_shapes(&self) -> BTreeMap<String, Shape> {
        self.input_layers()
            .filter_map(|l| match l.kind {
                LayerKind::Input {
                    channels,
                    height: Some(h),
                    width: Some(w),
                } => Some((l.name.clone(), Shape::new(1, channels, h, w))),
                _ => None,
            })
            .collect()
    }

    /// Layer indices in a topological order (stable with respect to declaration order).
    pub fn topo_order(&self) -> Result<Vec<usize>> {
        let index = self.index();
        let mut indegree = vec![0usize; self.layers.len()];
        let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); self.layers.len()];
        for (i, l) in self.layers.iter().enumerate() {
            for inp in &l.inputs {
                let &p = index
                    .get(inp.as_str())
                    .ok_or_else(|| Error::Spec(format!("layer `{}` consumes unknown `{inp}`", l.name)))?;
                indegree[i] += 1;
                consumers[p].push(i);
            }
        }
        let mut queue: VecDeque<usize> = (0..self.layers.len()).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(self.layers.len());
        while let Some(i) = queue.pop_front() {
            order.push(i);
            for &c in &consumers[i] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
        if order.len() != self.layers.len() {
            let stuck: Vec<&str> = (0..self.layers.len())
                .filter(|&i| indegree[i] > 0)
                .map(|i| self.layers[i].name.as_str())
                .collect();
            return Err(Error::Spec(format!("cycle through layers {stuck:?}")));
        }
        Ok(order)
    }

    /// Structural checks: unique names, known inputs, arity, acyclicity,
    /// channel agreement, declared outputs.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let mut seen = HashMap::new();
        for l in &self.layers {
            if seen.insert(l.name.as_str(), ()).is_some() {
                out.push(diag(Some(&l.name), "duplicate layer name"));
            }
        }
        let index = self.index();
        let mut dangling = false;
        for l in &self.layers {
            if !l.kind.arity_ok(l.inputs.len()) {
                out.push(diag(
                    Some(&l.name),
                    format!("{} layer cannot take {} inputs", l.kind.type_name(), l.inputs.len()),
                ));
            }
            for inp in &l.inputs {
                if inp == &l.name {
                    out.push(diag(Some(&l.name), "cycle: layer consumes itself"));
                } else if !index.contains_key(inp.as_str()) {
                    dangling = true;
                    out.push(diag(Some(&l.name), format!("input `{inp}` does not exist")));
                }
            }
        }
        for o in &self.outputs {
            if !index.contains_key(o.as_str()) {
                out.push(diag(None, format!("declared output `{o}` is not produced")));
            }
        }
        if dangling {
            return out;
        }
        let order = match self.topo_order() {
            Ok(o) => o,
            Err(e) => {
                if !out.iter().any(|d| d.message.starts_with("cycle")) {
                    out.push(diag(None, e.to_string()));
                }
                return out;
            }
        };
        let mut channels: Vec<Option<usize>> = vec![None; self.layers.len()];
        for i in order {
            let l = &self.layers[i];
            let ins: Option<Vec<usize>> = l.inputs.iter().map(|n| channels[index[n.as_str()]]).collect();
            let Some(ins) = ins else { continue };
            if !l.kind.arity_ok(ins.len()) {
                continue;
            }
            match l.kind.output_channels(&ins) {
                Ok(c) => channels[i] = Some(c),
                Err(m) => out.push(diag(Some(&l.name), format!("channel mismatch: {m}"))),
            }
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let d = self.validate();
        if d.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(d))
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}

pub fn save_spec(net: &NetworkSpec, path: impl AsRef<Path>) -> Result<()> {
    net.save(path)
}

pub fn load_spec(path: impl AsRef<Path>) -> Result<NetworkSpec> {
    NetworkSpec::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> NetworkSpec {
        let mut net = NetworkSpec::new("tiny");
        net.layers.push(LayerSpec::new(
            "data",
            LayerKind::Input {
                channels: 3,
                height: Some(8),
                width: Some(8),
            },
            &[],
        ));
        net.layers.push(LayerSpec::new("conv", LayerKind::Conv(ConvSpec::new(3, 4, 3, 1, 1)), &["data"]));
        net.layers.push(LayerSpec::new("relu", LayerKind::Relu, &["conv"]));
        net.outputs.push("relu".into());
        net
    }

    #[test]
    fn valid_tiny_net() {
        assert!(tiny().validate().is_empty());
    }

    #[test]
    fn self_loop_is_a_cycle() {
        let mut net = tiny();
        net.layers[2].inputs = vec!["relu".into()];
        let d = net.validate();
        assert!(d.iter().any(|d| d.message.contains("cycle")), "{d:?}");
    }

    #[test]
    fn longer_cycle_detected() {
        let mut net = tiny();
        net.layers[1].inputs = vec!["relu".into()];
        let d = net.validate();
        assert!(d.iter().any(|d| d.message.contains("cycle")), "{d:?}");
    }

    #[test]
    fn dangling_and_channel_errors() {
        let mut net = tiny();
        net.layers[2].inputs = vec!["nope".into()];
        assert!(net.validate().iter().any(|d| d.message.contains("does not exist")));
        let mut net = tiny();
        net.layers[1].kind = LayerKind::Conv(ConvSpec::new(5, 4, 3, 1, 1));
        let d = net.validate();
        assert!(d.iter().any(|d| d.message.contains("channel mismatch")), "{d:?}");
        let mut net = tiny();
        net.outputs.push("ghost".into());
        assert!(!net.validate().is_empty());
    }

    #[test]
    fn json_parse_error_has_position() {
        let err = NetworkSpec::from_json("{\"name\": \"x\",\n \"layers\": [{\"name\": 3}]}").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn json_round_trip() {
        let net = tiny();
        let back = NetworkSpec::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(back, net);
    }
}
