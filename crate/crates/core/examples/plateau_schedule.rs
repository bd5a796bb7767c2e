//! The plateau scheduler on scripted loss streams.

use pvanet::sched::{Event, PlateauConfig, PlateauScheduler};

fn run(name: &str, cfg: PlateauConfig, losses: impl Iterator<Item = f64>) -> pvanet::Result<()> {
    let mut s = PlateauScheduler::new(cfg);
    let mut events = Vec::new();
    for (i, loss) in losses.enumerate() {
        let (lr, e) = s.observe(loss)?;
        if e != Event::None {
            events.push(format!("{}@{} lr={lr:.3e}", e, i + 1));
        }
        if e == Event::Terminated {
            break;
        }
    }
    println!("{name}: {}", if events.is_empty() { "no decays".into() } else { events.join(", ") });
    Ok(())
}

fn main() -> pvanet::Result<()> {
    let small = PlateauConfig {
        window: 5,
        ..PlateauConfig::default()
    };
    run("constant loss, window 5", small.clone(), std::iter::repeat(1.0).take(30))?;
    run("decreasing loss", small, (0..300).map(|i| 0.99f64.powi(i)))?;
    run("constant loss until termination", PlateauConfig::default(), std::iter::repeat(1.0).take(10_000))?;
    Ok(())
}
