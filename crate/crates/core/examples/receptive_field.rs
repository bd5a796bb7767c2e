//! Receptive-field distributions: a chain of three-branch modules
//! (1x1 / 3x3 / 5x5 with channel fractions 1/2, 1/4, 1/4) and every layer of
//! PVANET.

use pvanet::analyze::{receptive_field_distribution, receptive_fields};
use pvanet::graph::{build_pvanet, LayerKind, LayerSpec, NetworkSpec};
use pvanet::tensor::ConvSpec;

/// `modules` stacked blocks, each concatenating 1x1, 3x3 and 5x5 branches.
fn three_branch_chain(modules: usize) -> NetworkSpec {
    let mut net = NetworkSpec::new("chain");
    let input = LayerKind::Input {
        channels: 8,
        height: None,
        width: None,
    };
    net.layers.push(LayerSpec::new("x", input, &[]));
    let mut cur = "x".to_string();
    for m in 0..modules {
        let names = [1, 3, 5].map(|k| format!("m{m}_{k}x{k}"));
        for (k, (name, c)) in [1, 3, 5].into_iter().zip(names.iter().zip([4, 2, 2])) {
            net.layers.push(LayerSpec::new(name, LayerKind::Conv(ConvSpec::new(8, c, k, 1, k / 2)), &[&cur]));
        }
        let c = format!("m{m}");
        net.layers.push(LayerSpec::new(&c, LayerKind::Concat, &[&names[0], &names[1], &names[2]]));
        cur = c;
    }
    net.outputs = vec![cur];
    net
}

fn main() -> pvanet::Result<()> {
    for m in 1..=3 {
        let net = three_branch_chain(m);
        let d = receptive_field_distribution(&net, &net.outputs[0])?;
        let atoms: Vec<String> = d.atoms_view().iter().map(|a| format!("{}:{}", a.size, a.fraction)).collect();
        println!("{m} module(s): {{{}}}", atoms.join(", "));
    }
    println!();
    let net = build_pvanet();
    let all = receptive_fields(&net)?;
    for l in &net.layers {
        if let Some(Some(d)) = all.get(&l.name) {
            if l.block.is_none() || l.block.as_deref() == Some(l.name.as_str()) {
                println!("{:<10} mean {:>8.2}  max {:>4}  jump {}", l.name, d.mean(), d.max_rf, d.jump);
            }
        }
    }
    Ok(())
}
