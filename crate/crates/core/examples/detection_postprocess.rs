//! Anchors, box regression, greedy NMS and bounding-box voting on a small
//! hand-made scene.

use pvanet::detect::{bbox_vote, decode, encode, generate_anchors, iou, nms, BBox, DEFAULT_RATIOS, DEFAULT_SCALES};

fn main() {
    let anchors = generate_anchors(&DEFAULT_SCALES, &DEFAULT_RATIOS, 16.0);
    println!("{} anchors per cell; first three at the origin cell:", anchors.len());
    for a in anchors.grid(1, 1).iter().take(3) {
        println!("  {:?}", a.as_array());
    }

    let anchor = BBox::new(0.0, 0.0, 63.0, 31.0);
    let target = BBox::new(10.0, 4.0, 80.0, 40.0);
    let d = encode(&anchor, &target);
    println!("deltas {d:.4?} decode back to {:?}", decode(&anchor, d).map(|b| b.as_array()));

    let boxes = [
        BBox::new(10.0, 10.0, 50.0, 50.0),
        BBox::new(12.0, 12.0, 52.0, 52.0),
        BBox::new(100.0, 100.0, 140.0, 150.0),
        BBox::new(11.0, 9.0, 49.0, 51.0),
    ];
    let scores = [0.9, 0.8, 0.7, 0.6];
    let keep = nms(&boxes, &scores, 0.4);
    println!("IoU(0, 1) = {:.3}; NMS at 0.4 keeps {keep:?}", iou(&boxes[0], &boxes[1]));
    let candidates: Vec<(BBox, f64)> = boxes.iter().copied().zip(scores).collect();
    for &k in &keep {
        println!("  box {k} voted to {:?}", bbox_vote(&boxes[k], &candidates, 0.5, 1.0).as_array());
    }
}
