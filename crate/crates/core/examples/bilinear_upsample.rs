//! Fixed bilinear 2x upsampling (channel-wise transposed convolution).

use pvanet::tensor::{bilinear_kernel, deconv2d_bilinear, DeconvSpec};
use pvanet::{Shape, Tensor};

fn main() -> pvanet::Result<()> {
    println!("4x4 kernel (row-major): {:?}", bilinear_kernel(4));
    let spec = DeconvSpec {
        channels: 1,
        kernel: 4,
        stride: 2,
        pad: 1,
    };
    let ramp = Tensor::from_fn(Shape::new(1, 1, 4, 5), |_, _, _, w| w as f64);
    let up = deconv2d_bilinear(&ramp, &spec)?;
    println!("ramp row {:?}\n  -> interior row {:?}", &ramp.data()[..5], &up.data()[30..40]);
    let flat = Tensor::full(Shape::new(1, 1, 4, 4), 3.0f64);
    let up = deconv2d_bilinear(&flat, &spec)?;
    for r in 0..8 {
        println!("  {:?}", &up.data()[r * 8..r * 8 + 8]);
    }
    Ok(())
}
