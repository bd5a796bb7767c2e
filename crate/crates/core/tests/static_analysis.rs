//! Cost and receptive-field analysis must never run a tensor kernel. This
//! file holds a single test so the process-wide kernel counter is not
//! disturbed by other tests running concurrently.

use pvanet::analyze::{analyze, receptive_fields};
use pvanet::cli::{cmd_analyze, AnalyzeArgs, Format};
use pvanet::graph::{build_pvanet, build_pvanet_detector};
use pvanet::tensor::kernel_invocations;

#[test]
fn analysis_executes_no_kernels() {
    let before = kernel_invocations();
    let net = build_pvanet_detector();
    analyze(&net, &net.nominal_input_shapes(), &[200, 300]).unwrap();
    receptive_fields(&build_pvanet()).unwrap();
    for format in [Format::Table, Format::Json] {
        cmd_analyze(&AnalyzeArgs {
            spec: "pvanet-detector".into(),
            input: (1056, 640),
            proposals: vec![200, 300],
            format,
        })
        .unwrap();
    }
    assert_eq!(kernel_invocations(), before);

    // The counter does move when something is executed.
    let x = pvanet::Tensor::<f32>::zeros(pvanet::Shape::new(1, 1, 2, 2));
    pvanet::tensor::relu(&x);
    assert!(kernel_invocations() > before);
}
