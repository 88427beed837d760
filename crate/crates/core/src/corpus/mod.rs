//! Parallel-corpus ingestion, KEEP-label remapping, synthetic error
//! generation, and batching.

mod batch;
mod parallel;
mod synth;

pub use batch::{make_batch, Batch};
pub use parallel::{parse_parallel, parse_parallel_str, remap_labels, write_parallel, Example, ParallelCorpus};
pub use synth::synthesize_errors;
