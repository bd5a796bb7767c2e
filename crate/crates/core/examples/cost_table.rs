//! Parameter / MAC table for the PVANET feature extractor and the cost of
//! the detection heads, at the nominal 1056x640 input and at a smaller one.

use pvanet::cli::{cmd_analyze, AnalyzeArgs, Format};

fn main() -> pvanet::Result<()> {
    for (spec, input) in [("pvanet", (1056, 640)), ("pvanet-detector", (1056, 640)), ("pvanet", (640, 416))] {
        let report = cmd_analyze(&AnalyzeArgs {
            spec: spec.into(),
            input,
            proposals: vec![200, 300],
            format: Format::Table,
        })?;
        println!("{report}");
    }
    Ok(())
}
