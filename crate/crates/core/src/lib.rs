//! PVANET: a thin-but-deep feature extractor for object detection.
//!
//! The crate builds the network from a declarative [`graph::NetworkSpec`],
//! reproduces its parameter / MAC cost model and receptive-field profile
//! statically ([`analyze`]), runs it on the CPU ([`graph::execute`]), and
//! provides the detection machinery around it: anchors, proposal decoding,
//! NMS, bounding-box voting ([`detect`]), truncated-SVD compression of the
//! R-CNN fully-connected layers ([`compress`]), and plateau-based learning
//! rate scheduling with a small trainer ([`sched`]).
//!
//! The `pvanet` binary exposes the same functionality on the command line
//! (see [`cli`]).

pub mod analyze;
pub mod cli;
pub mod compress;
pub mod detect;
pub mod error;
pub mod graph;
pub mod sched;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
