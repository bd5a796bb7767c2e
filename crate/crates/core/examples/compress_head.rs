//! Truncated-SVD compression of the R-CNN head (fc6 / fc7 at rank 512) on
//! randomly initialised weights, through the same path as `pvanet compress`.

use pvanet::cli::{cmd_compress, CompressArgs};
use pvanet::graph::{build_rcnn_head, WeightStore};

fn main() -> pvanet::Result<()> {
    let dir = std::env::temp_dir().join("pvanet-compress-example");
    std::fs::create_dir_all(&dir)?;
    let net = build_rcnn_head();
    let spec = dir.join("rcnn.json");
    net.save(&spec)?;
    let weights_in = dir.join("rcnn.pvaw");
    WeightStore::<f32>::init(&net, 1).save(&weights_in)?;
    let report = cmd_compress(&CompressArgs {
        spec: spec.display().to_string(),
        weights_in,
        weights_out: dir.join("rcnn_svd.pvaw"),
        spec_out: Some(dir.join("rcnn_svd.json")),
        k1: 512,
        k2: 512,
    })?;
    print!("{report}");
    println!("(random Gaussian weights have a flat spectrum, so the relative error is large;");
    println!(" trained layers concentrate their energy in the leading singular values)");
    Ok(())
}
