//! Builds a C.ReLU block and a stride-2 Inception block, runs them on the
//! CPU, and checks their gradients against central differences.

use std::collections::HashMap;

use pvanet::graph::{
    build_crelu_block, build_inception_block, execute, CReluBlockSpec, InceptionBlockSpec, LayerKind, LayerSpec,
    NetworkSpec, Residual, WeightStore,
};
use pvanet::sched::grad_check;
use pvanet::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn net_with(name: &str, in_c: usize, layers: Vec<LayerSpec>) -> NetworkSpec {
    let mut net = NetworkSpec::new(name);
    let input = LayerKind::Input {
        channels: in_c,
        height: None,
        width: None,
    };
    net.layers.push(LayerSpec::new("x", input, &[]));
    let last = layers.last().expect("non-empty block").name.clone();
    net.layers.extend(layers);
    net.outputs = vec![last];
    net
}

fn main() -> pvanet::Result<()> {
    let crelu = net_with(
        "crelu",
        4,
        build_crelu_block(&CReluBlockSpec {
            name: "conv2_1".into(),
            input: "x".into(),
            in_channels: 4,
            pre_channels: Some(3),
            mid_kernel: 3,
            mid_channels: 3,
            post_channels: Some(8),
            stride: 1,
            residual: Residual::Projection,
        })?,
    );
    let inception = net_with(
        "inception",
        8,
        build_inception_block(&InceptionBlockSpec {
            name: "conv4_1".into(),
            input: "x".into(),
            in_channels: 8,
            b1x1: 8,
            b3x3: (6, 16),
            b5x5: (3, 6, 6),
            bpool: Some(16),
            out_channels: 32,
            stride: 2,
            residual: Residual::Projection,
        })?,
    );
    for (net, c) in [(&crelu, 4), (&inception, 8)] {
        // Random values keep ReLU and max pooling away from their kinks.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::from_fn(Shape::new(2, c, 8, 8), |_, _, _, _| rng.random_range(-1.0..1.0f32));
        let w = WeightStore::<f32>::init(net, 3);
        let out = execute(net, &w, &HashMap::from([("x".to_string(), x.clone())]))?;
        let (name, y) = out.iter().next().expect("one output");
        println!("{}: {} layers, {name} -> {:?}", net.name, net.layers.len(), y.shape());

        let report = grad_check(net, &w.cast(), &HashMap::from([("x".to_string(), x.cast())]), 1e-5)?;
        println!(
            "  gradient check over {} entries: max relative error {:.2e} at {}",
            report.checked, report.max_rel_error, report.worst
        );
    }
    Ok(())
}
