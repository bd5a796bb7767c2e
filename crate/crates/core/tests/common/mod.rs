//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use pvanet::detect::BBox;
use pvanet::graph::{LayerKind, LayerSpec, NetworkSpec};
use pvanet::tensor::ConvSpec;
use pvanet::{Shape, Tensor};

pub fn input(name: &str, channels: usize) -> LayerSpec {
    LayerSpec::new(
        name,
        LayerKind::Input {
            channels,
            height: None,
            width: None,
        },
        &[],
    )
}

pub fn net(name: &str, layers: Vec<LayerSpec>, outputs: &[&str]) -> NetworkSpec {
    let mut n = NetworkSpec::new(name);
    n.layers = layers;
    n.outputs = outputs.iter().map(|s| s.to_string()).collect();
    n
}

/// Chain of modules, each concatenating 1x1, 3x3 and 5x5 convolutions of
/// its input with channel shares 1/2, 1/4, 1/4.
pub fn three_branch_chain(modules: usize) -> NetworkSpec {
    let mut layers = vec![input("x", 8)];
    let mut cur = "x".to_string();
    for m in 0..modules {
        let names = [1, 3, 5].map(|k| format!("m{m}_{k}x{k}"));
        for (k, (name, c)) in [1usize, 3, 5].into_iter().zip(names.iter().zip([4, 2, 2])) {
            layers.push(LayerSpec::new(name, LayerKind::Conv(ConvSpec::new(8, c, k, 1, k / 2)), &[&cur]));
        }
        let c = format!("m{m}");
        layers.push(LayerSpec::new(&c, LayerKind::Concat, &[&names[0], &names[1], &names[2]]));
        cur = c;
    }
    net("chain", layers, &[&cur])
}

fn int(v: usize) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

/// Receptive-field distribution at `target` by enumerating every
/// input-to-target path: each path's size is `1 + sum (k - 1) * jump` over its
/// windows (jump = product of strides before the window; a stride-s
/// upsampling window of k taps spans `ceil(k / s)` inputs and divides the
/// jump), and its weight is the product of channel shares at concatenations
/// and 1/2 at element-wise sums.
pub fn rf_by_paths(net: &NetworkSpec, target: &str) -> BTreeMap<u64, BigRational> {
    let idx: HashMap<&str, usize> = net.layers.iter().enumerate().map(|(i, l)| (l.name.as_str(), i)).collect();
    // Channel counts in declaration order (the graph is declared topologically).
    let mut ch = vec![0usize; net.layers.len()];
    for (i, l) in net.layers.iter().enumerate() {
        let ins: Vec<usize> = l.inputs.iter().map(|n| ch[idx[n.as_str()]]).collect();
        ch[i] = l.kind.output_channels(&ins).unwrap();
    }
    // Walk backwards from the target, collecting reversed paths with weights.
    let mut paths: Vec<(Vec<usize>, BigRational)> = Vec::new();
    let mut stack = vec![(vec![idx[target]], BigRational::one())];
    while let Some((path, w)) = stack.pop() {
        let l = &net.layers[*path.last().unwrap()];
        if l.inputs.is_empty() {
            paths.push((path, w));
            continue;
        }
        let total: usize = l.inputs.iter().map(|n| ch[idx[n.as_str()]]).sum();
        for n in &l.inputs {
            let j = idx[n.as_str()];
            let share = match l.kind {
                LayerKind::Concat => BigRational::new(BigInt::from(ch[j]), BigInt::from(total)),
                LayerKind::EltwiseAdd => BigRational::new(BigInt::from(1), BigInt::from(l.inputs.len())),
                _ => BigRational::one(),
            };
            let mut p = path.clone();
            p.push(j);
            stack.push((p, &w * share));
        }
    }
    let mut dist: BTreeMap<u64, BigRational> = BTreeMap::new();
    for (path, w) in paths {
        let mut jump = BigRational::one();
        let mut rf = BigRational::one();
        for &i in path.iter().rev() {
            match &net.layers[i].kind {
                LayerKind::Conv(c) => {
                    rf += int(c.kernel_h.max(c.kernel_w) - 1) * &jump;
                    jump *= int(c.stride);
                }
                LayerKind::MaxPool(p) => {
                    rf += int(p.kernel - 1) * &jump;
                    jump *= int(p.stride);
                }
                LayerKind::DeconvBilinear(d) => {
                    rf += int(d.kernel.div_ceil(d.stride) - 1) * &jump;
                    jump /= int(d.stride);
                }
                _ => {}
            }
        }
        assert!(rf.is_integer(), "fractional receptive field on a path");
        let e = dist.entry(rf.to_integer().try_into().unwrap()).or_insert_with(BigRational::zero);
        *e += w;
    }
    dist.retain(|_, v| !v.is_zero());
    dist
}

fn iou_ref(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let area = |b: &BBox| (b.x2 - b.x1) * (b.y2 - b.y1);
    let union = area(a) + area(b) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Definition-level NMS: walk boxes from highest score (lower index first on
/// ties); keep a box iff no already-kept box overlaps it by more than `thr`.
pub fn nms_reference(boxes: &[BBox], scores: &[f64], thr: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| iou_ref(&boxes[k], &boxes[i]) <= thr) {
            kept.push(i);
        }
    }
    kept
}

/// Direct six-loop convolution, zero padding, no bias.
pub fn conv_naive(x: &Tensor<f64>, w: &[f64], c: &ConvSpec) -> Tensor<f64> {
    let s = x.shape();
    let (kh, kw) = (c.kernel_h, c.kernel_w);
    let oh = (s.h + 2 * c.pad - kh) / c.stride + 1;
    let ow = (s.w + 2 * c.pad - kw) / c.stride + 1;
    Tensor::from_fn(Shape::new(s.n, c.out_channels, oh, ow), |n, o, y, xx| {
        let mut acc = 0.0;
        for i in 0..c.in_channels {
            for dy in 0..kh {
                for dx in 0..kw {
                    let iy = (y * c.stride + dy) as isize - c.pad as isize;
                    let ix = (xx * c.stride + dx) as isize - c.pad as isize;
                    if iy >= 0 && ix >= 0 && (iy as usize) < s.h && (ix as usize) < s.w {
                        acc += x.at(n, i, iy as usize, ix as usize) * w[((o * c.in_channels + i) * kh + dy) * kw + dx];
                    }
                }
            }
        }
        acc
    })
}
