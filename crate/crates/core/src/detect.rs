//! Detection post-processing: anchors, box coding, NMS, proposal selection,
//! per-class detection and bounding-box voting.
//!
//! Boxes use the continuous area convention: width is `x2 - x1`, with no
//! `+1` pixel term.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Largest log-scale a decoded box may grow by (a 1000/16 ratio).
pub const MAX_LOG_SCALE: f64 = 4.135_166_556_742_356; // ln(1000 / 16)

/// Axis-aligned box in image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BBox { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x1 + 0.5 * self.width(), self.y1 + 0.5 * self.height())
    }

    /// Clip to `[0, width] x [0, height]`, keeping `x2 >= x1` and `y2 >= y1`.
    pub fn clip(&self, image_h: f64, image_w: f64) -> BBox {
        let x1 = self.x1.clamp(0.0, image_w);
        let y1 = self.y1.clamp(0.0, image_h);
        BBox {
            x1,
            y1,
            x2: self.x2.clamp(x1, image_w),
            y2: self.y2.clamp(y1, image_h),
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Base anchors centred at the origin plus the stride at which they tile.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub base: Vec<BBox>,
    pub stride: f64,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    /// Anchors for every position of an `h x w` feature map, ordered
    /// position-major (`(y * w + x) * A + a`). Each cell's anchors are
    /// centred on the cell centre.
    pub fn grid(&self, h: usize, w: usize) -> Vec<BBox> {
        let mut out = Vec::with_capacity(h * w * self.base.len());
        for y in 0..h {
            for x in 0..w {
                let cx = (x as f64 + 0.5) * self.stride;
                let cy = (y as f64 + 0.5) * self.stride;
                out.extend(
                    self.base
                        .iter()
                        .map(|b| BBox::new(b.x1 + cx, b.y1 + cy, b.x2 + cx, b.y2 + cy)),
                );
            }
        }
        out
    }
}

pub const DEFAULT_SCALES: [f64; 5] = [3.0, 6.0, 9.0, 16.0, 25.0];
pub const DEFAULT_RATIOS: [f64; 5] = [0.5, 0.667, 1.0, 1.5, 2.0];

/// Anchor `(scale s, ratio r)` has width `s*stride*sqrt(r)` and height
/// `s*stride/sqrt(r)`, so its area is `(s*stride)^2` and width/height is `r`.
/// Ordered ratio-major.
pub fn generate_anchors(scales: &[f64], ratios: &[f64], stride: f64) -> AnchorSet {
    let mut base = Vec::with_capacity(scales.len() * ratios.len());
    for &r in ratios {
        for &s in scales {
            let w = s * stride * r.sqrt();
            let h = s * stride / r.sqrt();
            base.push(BBox::new(-w / 2.0, -h / 2.0, w / 2.0, h / 2.0));
        }
    }
    AnchorSet { base, stride }
}

/// Regression target `(dx, dy, dw, dh)` taking `anchor` to `target`.
pub fn encode(anchor: &BBox, target: &BBox) -> [f64; 4] {
    let (ax, ay) = anchor.center();
    let (tx, ty) = target.center();
    [
        (tx - ax) / anchor.width(),
        (ty - ay) / anchor.height(),
        (target.width() / anchor.width()).ln(),
        (target.height() / anchor.height()).ln(),
    ]
}

/// Applies deltas to one box (unclipped). `None` for non-finite deltas.
pub fn decode(anchor: &BBox, d: [f64; 4]) -> Option<BBox> {
    if d.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let (cx, cy) = anchor.center();
    let (w, h) = (anchor.width(), anchor.height());
    let ncx = cx + d[0] * w;
    let ncy = cy + d[1] * h;
    let nw = w * d[2].min(MAX_LOG_SCALE).exp();
    let nh = h * d[3].min(MAX_LOG_SCALE).exp();
    Some(BBox::new(ncx - nw / 2.0, ncy - nh / 2.0, ncx + nw / 2.0, ncy + nh / 2.0))
}

/// Decodes and clips to the image. Boxes with non-finite deltas are dropped
/// (`None`); the count of rejected boxes is the number of `None`s.
pub fn decode_boxes(anchors: &[BBox], deltas: &[[f64; 4]], image_size: (usize, usize)) -> Vec<Option<BBox>> {
    let (h, w) = (image_size.0 as f64, image_size.1 as f64);
    anchors
        .iter()
        .zip(deltas)
        .map(|(a, d)| decode(a, *d).map(|b| b.clip(h, w)))
        .collect()
}

fn score_order(scores: &[f64]) -> Vec<usize> {
    let key = |s: f64| if s.is_nan() { f64::NEG_INFINITY } else { s };
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Stable sort keeps lower indices first among ties.
    order.sort_by(|&a, &b| key(scores[b]).total_cmp(&key(scores[a])));
    order
}

/// Greedy non-maximum suppression. Returns kept indices in descending score
/// order; ties go to the lower index; a box is suppressed when its IoU with a
/// kept box exceeds `iou_threshold`.
pub fn nms(boxes: &[BBox], scores: &[f64], iou_threshold: f64) -> Vec<usize> {
    assert_eq!(boxes.len(), scores.len(), "nms: boxes and scores differ in length");
    let order = score_order(scores);
    let mut suppressed = vec![false; boxes.len()];
    let mut keep = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for &j in &order[pos + 1..] {
            if !suppressed[j] && iou(&boxes[i], &boxes[j]) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    keep
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProposalConfig {
    pub pre_nms_top_n: usize,
    pub post_nms_top_n: usize,
    pub nms_threshold: f64,
    /// Boxes narrower or shorter than this (pixels) are discarded before
    /// ranking. Zero disables the filter.
    pub min_size: f64,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig {
            pre_nms_top_n: 12000,
            post_nms_top_n: 200,
            nms_threshold: 0.4,
            min_size: 0.0,
        }
    }
}

/// RPN outputs to ranked proposals.
///
/// `scores` is `(1, 2A, H, W)` with background logits in channels `0..A` and
/// foreground logits in `A..2A`; `deltas` is `(1, 4A, H, W)` with anchor `a`
/// in channels `4a..4a+4`.
pub fn propose(
    scores: &Tensor<f32>,
    deltas: &Tensor<f32>,
    anchors: &AnchorSet,
    image_size: (usize, usize),
    cfg: &ProposalConfig,
) -> Result<Vec<(BBox, f64)>> {
    let a = anchors.len();
    let ss = scores.shape();
    let ds = deltas.shape();
    if ss.n != 1 || ss.c != 2 * a || ds.c != 4 * a || (ds.n, ds.h, ds.w) != (ss.n, ss.h, ss.w) {
        return Err(Error::shape(
            "propose",
            format!("{a} anchors need scores (1, {}, H, W) and deltas (1, {}, H, W); got {ss:?} and {ds:?}", 2 * a, 4 * a),
        ));
    }
    let (h, w) = (ss.h, ss.w);
    let grid = anchors.grid(h, w);
    let mut fg = Vec::with_capacity(grid.len());
    let mut d = Vec::with_capacity(grid.len());
    for y in 0..h {
        for x in 0..w {
            for k in 0..a {
                let bg = scores.at(0, k, y, x) as f64;
                let f = scores.at(0, a + k, y, x) as f64;
                fg.push(1.0 / (1.0 + (bg - f).exp()));
                d.push([0, 1, 2, 3].map(|j| deltas.at(0, 4 * k + j, y, x) as f64));
            }
        }
    }
    let decoded = decode_boxes(&grid, &d, image_size);
    let mut boxes = Vec::new();
    let mut kept_scores = Vec::new();
    for (b, s) in decoded.into_iter().zip(fg) {
        let Some(b) = b else { continue };
        if !s.is_finite() || b.width() < cfg.min_size || b.height() < cfg.min_size {
            continue;
        }
        boxes.push(b);
        kept_scores.push(s);
    }
    let mut order = score_order(&kept_scores);
    order.truncate(cfg.pre_nms_top_n);
    let top_boxes: Vec<BBox> = order.iter().map(|&i| boxes[i]).collect();
    let top_scores: Vec<f64> = order.iter().map(|&i| kept_scores[i]).collect();
    let mut keep = nms(&top_boxes, &top_scores, cfg.nms_threshold);
    keep.truncate(cfg.post_nms_top_n);
    Ok(keep.into_iter().map(|i| (top_boxes[i], top_scores[i])).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifyConfig {
    /// Class probabilities at or below this are dropped before NMS.
    pub score_threshold: f64,
    pub nms_threshold: f64,
    /// Refine each kept box by voting over same-class candidates.
    pub voting: bool,
    pub vote_iou: f64,
    /// Voting weight is `score^vote_power`.
    pub vote_power: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig {
            score_threshold: 0.05,
            nms_threshold: 0.4,
            voting: false,
            vote_iou: 0.5,
            vote_power: 1.0,
        }
    }
}

/// Per-class decoding, thresholding and NMS over R-CNN outputs.
///
/// `probs` is `(R, K, 1, 1)` class probabilities (class 0 is background) and
/// `deltas` is `(R, 4K, 1, 1)`. Detections come out grouped by class, each
/// group in descending score order.
pub fn classify_rois(
    probs: &Tensor<f32>,
    deltas: &Tensor<f32>,
    rois: &[BBox],
    image_size: (usize, usize),
    cfg: &ClassifyConfig,
) -> Result<Vec<Detection>> {
    let ps = probs.shape();
    let ds = deltas.shape();
    let k = ps.c;
    if ps.n != rois.len() || ds.n != rois.len() || ds.c != 4 * k || ps.plane() != 1 || ds.plane() != 1 {
        return Err(Error::shape(
            "classify_rois",
            format!("{} rois with probs {ps:?} and deltas {ds:?}", rois.len()),
        ));
    }
    let (ih, iw) = (image_size.0 as f64, image_size.1 as f64);
    let mut out = Vec::new();
    for c in 1..k {
        let mut boxes = Vec::new();
        let mut scores = Vec::new();
        for (r, roi) in rois.iter().enumerate() {
            let s = probs.data()[r * k + c] as f64;
            if !(s > cfg.score_threshold) {
                continue;
            }
            let d = [0, 1, 2, 3].map(|j| deltas.data()[r * 4 * k + 4 * c + j] as f64);
            if let Some(b) = decode(roi, d) {
                boxes.push(b.clip(ih, iw));
                scores.push(s);
            }
        }
        let candidates: Vec<(BBox, f64)> = boxes.iter().copied().zip(scores.iter().copied()).collect();
        for i in nms(&boxes, &scores, cfg.nms_threshold) {
            let bbox = if cfg.voting {
                bbox_vote(&boxes[i], &candidates, cfg.vote_iou, cfg.vote_power)
            } else {
                boxes[i]
            };
            out.push(Detection {
                bbox,
                class_id: c,
                score: scores[i],
            });
        }
    }
    Ok(out)
}

/// Score-weighted average of every candidate whose IoU with `kept` is at
/// least `iou_threshold` (weights `score^power`). Returns `kept` unchanged if
/// nothing qualifies.
pub fn bbox_vote(kept: &BBox, candidates: &[(BBox, f64)], iou_threshold: f64, power: f64) -> BBox {
    let mut acc = [0.0; 4];
    let mut total = 0.0;
    for (b, s) in candidates {
        if iou(kept, b) >= iou_threshold {
            let wgt = s.powf(power);
            for (a, v) in acc.iter_mut().zip(b.as_array()) {
                *a += wgt * v;
            }
            total += wgt;
        }
    }
    if total <= 0.0 || !total.is_finite() {
        return *kept;
    }
    BBox::new(acc[0] / total, acc[1] / total, acc[2] / total, acc[3] / total)
}

/// One `class_id score x1 y1 x2 y2` line per detection, four decimals.
pub fn format_detections(dets: &[Detection]) -> String {
    let mut s = String::new();
    for d in dets {
        let b = d.bbox;
        let _ = writeln!(
            s,
            "{} {:.4} {:.4} {:.4} {:.4} {:.4}",
            d.class_id, d.score, b.x1, b.y1, b.x2, b.y2
        );
    }
    s
}

/// Where a detector graph keeps its pieces and how its outputs are decoded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub image_input: String,
    pub rois_input: String,
    pub rpn_scores: String,
    pub rpn_deltas: String,
    pub cls_prob: String,
    pub bbox_pred: String,
    pub feature_stride: f64,
    pub anchor_scales: Vec<f64>,
    pub anchor_ratios: Vec<f64>,
    /// Including background.
    pub num_classes: usize,
    /// Images are padded right/bottom to a multiple of this.
    pub pad_multiple: usize,
    /// Per-channel RGB means subtracted during preprocessing.
    pub pixel_means: [f64; 3],
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            image_input: "data".into(),
            rois_input: "rois".into(),
            rpn_scores: "rpn_cls_score".into(),
            rpn_deltas: "rpn_bbox_pred".into(),
            cls_prob: "cls_prob".into(),
            bbox_pred: "bbox_pred".into(),
            feature_stride: 16.0,
            anchor_scales: DEFAULT_SCALES.to_vec(),
            anchor_ratios: DEFAULT_RATIOS.to_vec(),
            num_classes: 21,
            pad_multiple: 32,
            pixel_means: [0.0; 3],
        }
    }
}

impl DetectorConfig {
    pub fn anchors(&self) -> AnchorSet {
        generate_anchors(&self.anchor_scales, &self.anchor_ratios, self.feature_stride)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2)
    }

    #[test]
    fn iou_cases() {
        assert_eq!(iou(&b(0., 0., 10., 10.), &b(0., 0., 10., 10.)), 1.0);
        assert_eq!(iou(&b(0., 0., 10., 10.), &b(20., 0., 30., 10.)), 0.0);
        assert!((iou(&b(0., 0., 10., 10.), &b(5., 0., 15., 10.)) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(iou(&b(1., 1., 1., 1.), &b(1., 1., 1., 1.)), 0.0);
    }

    #[test]
    fn anchor_geometry() {
        let a = generate_anchors(&DEFAULT_SCALES, &DEFAULT_RATIOS, 16.0);
        assert_eq!(a.len(), 25);
        let sq = a.base[2 * 5];
        assert!((sq.width() - 48.0).abs() < 1e-12 && (sq.height() - 48.0).abs() < 1e-12);
        for (i, anchor) in a.base.iter().enumerate() {
            let s = DEFAULT_SCALES[i % 5];
            let r = DEFAULT_RATIOS[i / 5];
            let area = (s * 16.0).powi(2);
            assert!((anchor.area() / area - 1.0).abs() < 1e-6);
            assert!((anchor.width() / anchor.height() - r).abs() < 1e-6);
            assert_eq!(anchor.center(), (0.0, 0.0));
        }
        let g = a.grid(2, 3);
        assert_eq!(g.len(), 2 * 3 * 25);
        assert_eq!(g[(3 + 2) * 25 + 12].center(), (2.5 * 16.0, 1.5 * 16.0));
    }

    #[test]
    fn decode_identity_and_doubling() {
        let a = b(10., 20., 30., 60.);
        assert_eq!(decode(&a, [0.0; 4]).unwrap(), a);
        let d = decode(&a, [0.0, 0.0, 2f64.ln(), 2f64.ln()]).unwrap();
        assert!((d.width() - 40.0).abs() < 1e-12 && (d.height() - 80.0).abs() < 1e-12);
        assert_eq!(d.center(), a.center());
        let out = decode_boxes(&[a, a], &[[f64::NAN, 0., 0., 0.], [0.; 4]], (50, 50));
        assert_eq!(out[0], None);
        assert_eq!(out[1], Some(b(10., 20., 30., 50.)));
    }

    #[test]
    fn nms_basics() {
        let x = b(0., 0., 10., 10.);
        assert_eq!(nms(&[x, x], &[0.5, 0.5], 0.4), vec![0]);
        let boxes = [x, b(20., 0., 30., 10.), b(40., 0., 50., 10.)];
        assert_eq!(nms(&boxes, &[0.1, 0.9, 0.5], 0.4), vec![1, 2, 0]);
        // IoU exactly at the threshold is not suppressed.
        assert_eq!(nms(&[x, b(5., 0., 15., 10.)], &[1.0, 0.5], 1.0 / 3.0), vec![0, 1]);
    }

    #[test]
    fn propose_single_peak_ranks_first() {
        let anchors = generate_anchors(&[1.0], &[1.0], 16.0);
        let (h, w) = (4, 5);
        let mut scores = Tensor::<f32>::zeros(Shape::new(1, 2, h, w));
        let peak = (2, 3);
        for y in 0..h {
            for x in 0..w {
                let i = scores.index(0, 1, y, x);
                scores.data_mut()[i] = if (y, x) == peak { 5.0 } else { -1.0 };
            }
        }
        let deltas = Tensor::zeros(Shape::new(1, 4, h, w));
        let props = propose(&scores, &deltas, &anchors, (64, 80), &ProposalConfig::default()).unwrap();
        assert_eq!(props.len(), h * w);
        assert_eq!(props[0].0, b(48., 32., 64., 48.));
    }

    #[test]
    fn propose_caps_and_tie_breaks() {
        let anchors = generate_anchors(&[1.0], &[1.0], 16.0);
        let (h, w) = (20, 20);
        let scores = Tensor::<f32>::zeros(Shape::new(1, 2, h, w));
        let deltas = Tensor::zeros(Shape::new(1, 4, h, w));
        let props = propose(&scores, &deltas, &anchors, (320, 320), &ProposalConfig::default()).unwrap();
        assert_eq!(props.len(), 200);
        let expected: Vec<BBox> = anchors.grid(h, w).into_iter().take(200).collect();
        assert_eq!(props.iter().map(|p| p.0).collect::<Vec<_>>(), expected);
    }

    fn one_hot_probs(rows: &[Vec<f32>]) -> Tensor<f32> {
        let k = rows[0].len();
        Tensor::new(Shape::new(rows.len(), k, 1, 1), rows.concat()).unwrap()
    }

    #[test]
    fn classify_background_and_single_class() {
        let rois = [b(0., 0., 10., 10.)];
        let mut bg = vec![0.0f32; 21];
        bg[0] = 1.0;
        let deltas = Tensor::zeros(Shape::new(1, 84, 1, 1));
        let cfg = ClassifyConfig::default();
        assert!(classify_rois(&one_hot_probs(&[bg]), &deltas, &rois, (20, 20), &cfg).unwrap().is_empty());
        let mut p = vec![0.005f32; 21];
        p[7] = 0.9;
        let dets = classify_rois(&one_hot_probs(&[p]), &deltas, &rois, (20, 20), &cfg).unwrap();
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].class_id, 7);
        assert_eq!(dets[0].bbox, rois[0]);
    }

    #[test]
    fn voting_examples() {
        let k = b(0., 0., 10., 10.);
        assert_eq!(bbox_vote(&k, &[(k, 0.7)], 0.5, 1.0), k);
        assert_eq!(bbox_vote(&k, &[(k, 0.7), (k, 0.1)], 0.5, 1.0), k);
        let v = bbox_vote(&k, &[(k, 1.0), (b(2., 0., 12., 10.), 1.0)], 0.5, 1.0);
        assert_eq!(v, b(1., 0., 11., 10.));
        assert_eq!(bbox_vote(&k, &[(b(50., 50., 60., 60.), 1.0)], 0.5, 1.0), k);
    }

    #[test]
    fn detection_lines() {
        let d = Detection {
            bbox: b(0., 0., 8., 8.),
            class_id: 1,
            score: 0.880_797,
        };
        assert_eq!(format_detections(&[d]), "1 0.8808 0.0000 0.0000 8.0000 8.0000\n");
    }
}
