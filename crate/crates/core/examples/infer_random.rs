//! End-to-end detection on a synthetic PPM with randomly initialised
//! weights: resize, pad, backbone, RPN, proposals, R-CNN head, NMS, voting.

use pvanet::cli::{cmd_infer, InferArgs};

fn main() -> pvanet::Result<()> {
    let dir = std::env::temp_dir().join("pvanet-infer-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("gradient.ppm");
    let (w, h) = (96u32, 64u32);
    let img = image::RgbImage::from_fn(w, h, |x, y| image::Rgb([(x * 2) as u8, (y * 3) as u8, ((x + y) % 256) as u8]));
    img.save_with_format(&path, image::ImageFormat::Pnm).map_err(|e| pvanet::Error::Format(e.to_string()))?;

    let out = cmd_infer(&InferArgs {
        spec: "pvanet-detector".into(),
        weights: None,
        random_weights: Some(7),
        input: path,
        shorter_edge: 320,
        proposals: 200,
        pre_nms: 12000,
        nms: 0.4,
        score_threshold: 0.05,
        voting: true,
        means: Some(vec![102.9801, 115.9465, 122.7717]),
        dump_dir: Some(dir.clone()),
    })?;
    let lines: Vec<&str> = out.lines().collect();
    println!("{}", lines[0]);
    println!("{} detections (class score x1 y1 x2 y2), first few:", lines.len() - 1);
    for l in lines.iter().skip(1).take(5) {
        println!("  {l}");
    }
    println!("tensor dumps in {}", dir.display());
    Ok(())
}
