//! Trains the miniature network on the synthetic quadrant task with a fixed
//! and a plateau learning rate and compares the two traces.

use pvanet::cli::{toy_setup, PolicyArg, TrainToyArgs};
use pvanet::graph::WeightStore;
use pvanet::sched::{accuracy, toy_train, Event};

fn main() -> pvanet::Result<()> {
    for policy in [PolicyArg::Fixed, PolicyArg::Plateau] {
        let args = TrainToyArgs {
            seed: 0,
            iters: 2000,
            batch_size: 20,
            lr: 0.01,
            lr_policy: policy,
            momentum: 0.9,
            factor: 0.3165,
            window: 100,
            threshold: 1e-3,
            min_lr: 1e-4,
            samples: 200,
            size: 16,
            noise: 0.1,
            trace_out: None,
            weights_out: None,
        };
        let (net, data, cfg) = toy_setup(&args)?;
        let out = toy_train(&net, WeightStore::init(&net, args.seed), &data, &cfg)?;
        let decays: Vec<usize> = out.trace.iter().filter(|r| r.event != Event::None).map(|r| r.iter).collect();
        let last = out.trace.last().expect("at least one iteration");
        println!(
            "{policy:?}: {} iterations, final ema {:.2e}, lr {:.2e}, events at {decays:?}, accuracy {:.3}",
            out.trace.len(),
            last.ema,
            last.lr,
            accuracy(&net, &out.weights, &data)?
        );
    }
    Ok(())
}
