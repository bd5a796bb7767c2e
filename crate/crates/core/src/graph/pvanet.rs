//! The full PVANET feature extractor plus its RPN and R-CNN heads.

use super::blocks::{build_crelu_block, build_inception_block, BlockBuilder, CReluBlockSpec, InceptionBlockSpec, Residual};
use super::{LayerKind, LayerSpec, NetworkSpec};
use crate::detect::DetectorConfig;
use crate::tensor::{ConvSpec, DeconvSpec, PoolSpec, RoiPoolSpec};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.99;

/// Nominal input size of the cost table.
pub const NOMINAL_HEIGHT: usize = 1056;
pub const NOMINAL_WIDTH: usize = 640;

fn input(name: &str, channels: usize, h: Option<usize>, w: Option<usize>) -> LayerSpec {
    LayerSpec::new(
        name,
        LayerKind::Input {
            channels,
            height: h,
            width: w,
        },
        &[],
    )
}

fn crelu(name: &str, input: &str, in_c: usize, pre: usize, mid: usize, post: usize, stride: usize, residual: Residual) -> Vec<LayerSpec> {
    build_crelu_block(&CReluBlockSpec {
        name: name.into(),
        input: input.into(),
        in_channels: in_c,
        pre_channels: Some(pre),
        mid_kernel: 3,
        mid_channels: mid,
        post_channels: Some(post),
        stride,
        residual,
    })
    .expect("static block spec")
}

#[allow(clippy::too_many_arguments)]
fn inception(
    name: &str,
    input: &str,
    in_c: usize,
    b1: usize,
    b3: (usize, usize),
    b5: (usize, usize, usize),
    pool: Option<usize>,
    out: usize,
) -> Vec<LayerSpec> {
    let stride = if pool.is_some() { 2 } else { 1 };
    build_inception_block(&InceptionBlockSpec {
        name: name.into(),
        input: input.into(),
        in_channels: in_c,
        b1x1: b1,
        b3x3: b3,
        b5x5: b5,
        bpool: pool,
        out_channels: out,
        stride,
        residual: if in_c == out && stride == 1 {
            Residual::Identity
        } else {
            Residual::Projection
        },
    })
    .expect("static block spec")
}

fn backbone_layers() -> Vec<LayerSpec> {
    let mut layers = vec![input("data", 3, Some(NOMINAL_HEIGHT), Some(NOMINAL_WIDTH))];
    layers.extend(
        build_crelu_block(&CReluBlockSpec {
            name: "conv1_1".into(),
            input: "data".into(),
            in_channels: 3,
            pre_channels: None,
            mid_kernel: 7,
            mid_channels: 16,
            post_channels: None,
            stride: 2,
            residual: Residual::None,
        })
        .expect("static block spec"),
    );
    layers.push(LayerSpec::new("pool1_1", LayerKind::MaxPool(PoolSpec::pvanet()), &["conv1_1"]));

    layers.extend(crelu("conv2_1", "pool1_1", 32, 24, 24, 64, 1, Residual::Projection));
    layers.extend(crelu("conv2_2", "conv2_1", 64, 24, 24, 64, 1, Residual::Identity));
    layers.extend(crelu("conv2_3", "conv2_2", 64, 24, 24, 64, 1, Residual::Identity));

    layers.extend(crelu("conv3_1", "conv2_3", 64, 48, 48, 128, 2, Residual::Projection));
    layers.extend(crelu("conv3_2", "conv3_1", 128, 48, 48, 128, 1, Residual::Identity));
    layers.extend(crelu("conv3_3", "conv3_2", 128, 48, 48, 128, 1, Residual::Identity));
    layers.extend(crelu("conv3_4", "conv3_3", 128, 48, 48, 128, 1, Residual::Identity));

    layers.extend(inception("conv4_1", "conv3_4", 128, 64, (48, 128), (24, 48, 48), Some(128), 256));
    layers.extend(inception("conv4_2", "conv4_1", 256, 64, (64, 128), (24, 48, 48), None, 256));
    layers.extend(inception("conv4_3", "conv4_2", 256, 64, (64, 128), (24, 48, 48), None, 256));
    layers.extend(inception("conv4_4", "conv4_3", 256, 64, (64, 128), (24, 48, 48), None, 256));

    layers.extend(inception("conv5_1", "conv4_4", 256, 64, (96, 192), (32, 64, 64), Some(128), 384));
    layers.extend(inception("conv5_2", "conv5_1", 384, 64, (96, 192), (32, 64, 64), None, 384));
    layers.extend(inception("conv5_3", "conv5_2", 384, 64, (96, 192), (32, 64, 64), None, 384));
    layers.extend(inception("conv5_4", "conv5_3", 384, 64, (96, 192), (32, 64, 64), None, 384));

    layers.push(LayerSpec::new("downscale", LayerKind::MaxPool(PoolSpec::pvanet()), &["conv3_4"]));
    layers.push(LayerSpec::new(
        "upscale",
        LayerKind::DeconvBilinear(DeconvSpec::upsample2x(384)),
        &["conv5_4"],
    ));
    layers.push(LayerSpec::new("concat", LayerKind::Concat, &["downscale", "conv4_4", "upscale"]));
    let mut b = BlockBuilder::new("convf");
    b.conv_unit("conv", "concat", ConvSpec::new(768, 512, 1, 1, 0), true);
    layers.extend(b.finish());
    layers
}

/// The feature-extraction network at its nominal 1056x640 input.
/// Declared outputs: `convf` and `conv4_4`.
pub fn build_pvanet() -> NetworkSpec {
    NetworkSpec {
        name: "pvanet".into(),
        layers: backbone_layers(),
        outputs: vec!["convf".into(), "conv4_4".into()],
        detector: None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpnHeadConfig {
    pub feature_channels: usize,
    /// Only the leading channels of the feature map feed the RPN.
    pub used_channels: usize,
    pub conv_channels: usize,
    pub anchors: usize,
}

impl Default for RpnHeadConfig {
    fn default() -> Self {
        RpnHeadConfig {
            feature_channels: 512,
            used_channels: 128,
            conv_channels: 384,
            anchors: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RcnnHeadConfig {
    pub feature_channels: usize,
    pub pooled: usize,
    pub spatial_scale: f64,
    /// Widths of the hidden fully-connected layers (`fc6`, `fc7`, ...).
    pub hidden: Vec<usize>,
    /// Including background.
    pub num_classes: usize,
}

impl Default for RcnnHeadConfig {
    fn default() -> Self {
        RcnnHeadConfig {
            feature_channels: 512,
            pooled: 6,
            spatial_scale: 1.0 / 16.0,
            hidden: vec![4096, 4096],
            num_classes: 21,
        }
    }
}

/// `slice(0..used) -> 3x3 conv + ReLU -> 1x1 conv` split into
/// `rpn_cls_score` (2 per anchor: background block then foreground block)
/// and `rpn_bbox_pred` (4 per anchor).
pub fn rpn_layers(feature: &str, cfg: &RpnHeadConfig) -> Vec<LayerSpec> {
    let scores = 2 * cfg.anchors;
    let total = 6 * cfg.anchors;
    let g = |l: LayerSpec| l.in_block("rpn");
    vec![
        g(LayerSpec::new(
            "rpn_input",
            LayerKind::SliceChannels {
                start: 0,
                end: cfg.used_channels,
            },
            &[feature],
        )),
        g(LayerSpec::new(
            "rpn_conv1",
            LayerKind::Conv(ConvSpec::new(cfg.used_channels, cfg.conv_channels, 3, 1, 1).with_bias()),
            &["rpn_input"],
        )),
        g(LayerSpec::new("rpn_relu1", LayerKind::Relu, &["rpn_conv1"])),
        g(LayerSpec::new(
            "rpn_out",
            LayerKind::Conv(ConvSpec::new(cfg.conv_channels, total, 1, 1, 0).with_bias()),
            &["rpn_relu1"],
        )),
        g(LayerSpec::new(
            "rpn_cls_score",
            LayerKind::SliceChannels { start: 0, end: scores },
            &["rpn_out"],
        )),
        g(LayerSpec::new(
            "rpn_bbox_pred",
            LayerKind::SliceChannels { start: scores, end: total },
            &["rpn_out"],
        )),
    ]
}

/// RoI pooling over all feature channels, hidden FC layers with ReLU, then a
/// predictor split into `cls_score`/`cls_prob` and `bbox_pred`.
pub fn rcnn_layers(feature: &str, rois: &str, cfg: &RcnnHeadConfig) -> Vec<LayerSpec> {
    let mut layers = vec![LayerSpec::new(
        "roi_pool",
        LayerKind::RoiPool(RoiPoolSpec::new(cfg.pooled, cfg.spatial_scale)),
        &[feature, rois],
    )];
    let mut prev = "roi_pool".to_string();
    let mut width = cfg.feature_channels * cfg.pooled * cfg.pooled;
    for (i, &h) in cfg.hidden.iter().enumerate() {
        let name = format!("fc{}", 6 + i);
        layers.push(LayerSpec::new(
            &name,
            LayerKind::FullyConnected {
                in_features: width,
                out_features: h,
                has_bias: true,
            },
            &[&prev],
        ));
        let relu = format!("{name}/relu");
        layers.push(LayerSpec::new(&relu, LayerKind::Relu, &[&name]).in_block(&name));
        prev = relu;
        width = h;
    }
    let k = cfg.num_classes;
    let p = |l: LayerSpec| l.in_block("predictor");
    layers.push(p(LayerSpec::new(
        "rcnn_out",
        LayerKind::FullyConnected {
            in_features: width,
            out_features: 5 * k,
            has_bias: true,
        },
        &[&prev],
    )));
    layers.push(p(LayerSpec::new("cls_score", LayerKind::SliceChannels { start: 0, end: k }, &["rcnn_out"])));
    layers.push(p(LayerSpec::new(
        "bbox_pred",
        LayerKind::SliceChannels { start: k, end: 5 * k },
        &["rcnn_out"],
    )));
    layers.push(p(LayerSpec::new("cls_prob", LayerKind::Softmax, &["cls_score"])));
    layers
}

/// RPN head as a standalone fragment fed by a `convf` input (66x40 nominal).
pub fn build_rpn_head() -> NetworkSpec {
    let cfg = RpnHeadConfig::default();
    let mut layers = vec![input("convf", cfg.feature_channels, Some(66), Some(40))];
    layers.extend(rpn_layers("convf", &cfg));
    NetworkSpec {
        name: "rpn".into(),
        layers,
        outputs: vec!["rpn_cls_score".into(), "rpn_bbox_pred".into()],
        detector: None,
    }
}

/// R-CNN head fragment fed by `convf` and `rois` inputs.
pub fn build_rcnn_head() -> NetworkSpec {
    build_rcnn_head_with(&RcnnHeadConfig::default())
}

pub(crate) fn build_rcnn_head_with(cfg: &RcnnHeadConfig) -> NetworkSpec {
    let mut layers = vec![
        input("convf", cfg.feature_channels, Some(66), Some(40)),
        input("rois", 4, Some(1), Some(1)),
    ];
    layers.extend(rcnn_layers("convf", "rois", cfg));
    NetworkSpec {
        name: "rcnn".into(),
        layers,
        outputs: vec!["cls_prob".into(), "bbox_pred".into()],
        detector: None,
    }
}

/// Backbone, RPN and R-CNN in one graph, with detector metadata for inference.
pub fn build_pvanet_detector() -> NetworkSpec {
    let mut layers = backbone_layers();
    layers.push(input("rois", 4, Some(1), Some(1)));
    layers.extend(rpn_layers("convf", &RpnHeadConfig::default()));
    layers.extend(rcnn_layers("convf", "rois", &RcnnHeadConfig::default()));
    NetworkSpec {
        name: "pvanet_detector".into(),
        layers,
        outputs: vec![
            "rpn_cls_score".into(),
            "rpn_bbox_pred".into(),
            "cls_prob".into(),
            "bbox_pred".into(),
        ],
        detector: Some(DetectorConfig::default()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiniPvanetConfig {
    pub input_size: usize,
    pub num_classes: usize,
}

impl Default for MiniPvanetConfig {
    fn default() -> Self {
        MiniPvanetConfig {
            input_size: 32,
            num_classes: 4,
        }
    }
}

/// Three-block miniature of the backbone with channels divided by 8 (input
/// size a multiple of 8):
/// conv1_1 (7x7 C.ReLU), conv2_1 (C.ReLU, projection), conv4_1 (stride-2
/// Inception, projection), then a fully-connected classifier `logits`.
pub fn build_mini_pvanet(cfg: &MiniPvanetConfig) -> NetworkSpec {
    let mut layers = vec![input("data", 3, Some(cfg.input_size), Some(cfg.input_size))];
    layers.extend(
        build_crelu_block(&CReluBlockSpec {
            name: "conv1_1".into(),
            input: "data".into(),
            in_channels: 3,
            pre_channels: None,
            mid_kernel: 7,
            mid_channels: 2,
            post_channels: None,
            stride: 2,
            residual: Residual::None,
        })
        .expect("static block spec"),
    );
    layers.push(LayerSpec::new("pool1_1", LayerKind::MaxPool(PoolSpec::pvanet()), &["conv1_1"]));
    layers.extend(crelu("conv2_1", "pool1_1", 4, 3, 3, 8, 1, Residual::Projection));
    layers.extend(inception("conv4_1", "conv2_1", 8, 8, (6, 16), (3, 6, 6), Some(16), 32));
    let spatial = cfg.input_size / 8;
    layers.push(LayerSpec::new(
        "logits",
        LayerKind::FullyConnected {
            in_features: 32 * spatial * spatial,
            out_features: cfg.num_classes,
            has_bias: true,
        },
        &["conv4_1"],
    ));
    NetworkSpec {
        name: "mini_pvanet".into(),
        layers,
        outputs: vec!["logits".into()],
        detector: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pvanet_validates() {
        let net = build_pvanet();
        assert_eq!(net.validate(), vec![]);
        assert!(build_pvanet_detector().validate().is_empty());
        assert!(build_rpn_head().validate().is_empty());
        assert!(build_rcnn_head().validate().is_empty());
        assert!(build_mini_pvanet(&MiniPvanetConfig::default()).validate().is_empty());
    }

    #[test]
    fn convf_sees_768_channels() {
        let net = build_pvanet();
        match &net.layer("convf/conv").unwrap().kind {
            LayerKind::Conv(c) => assert_eq!(c.in_channels, 128 + 256 + 384),
            k => panic!("{k:?}"),
        }
    }

    #[test]
    fn projections_exactly_where_expected() {
        let net = build_pvanet();
        let proj: Vec<&str> = net
            .layers
            .iter()
            .filter(|l| l.name.ends_with("/proj"))
            .map(|l| l.group())
            .collect();
        assert_eq!(proj, vec!["conv2_1", "conv3_1", "conv4_1", "conv5_1"]);
    }

    #[test]
    fn head_weight_arithmetic() {
        let w = |net: &NetworkSpec| -> usize {
            net.layers
                .iter()
                .map(|l| match &l.kind {
                    LayerKind::Conv(c) => c.weight_count(),
                    LayerKind::FullyConnected {
                        in_features,
                        out_features,
                        ..
                    } => in_features * out_features,
                    _ => 0,
                })
                .sum()
        };
        assert_eq!(w(&build_rpn_head()), 499_968);
        assert_eq!(w(&build_rcnn_head()), 92_704_768);
        match &build_rpn_head().layer("rpn_out").unwrap().kind {
            LayerKind::Conv(c) => assert_eq!(c.out_channels, 150),
            _ => unreachable!(),
        }
    }

    #[test]
    fn json_round_trip_of_full_network() {
        let net = build_pvanet_detector();
        let back = NetworkSpec::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(back, net);
    }
}
