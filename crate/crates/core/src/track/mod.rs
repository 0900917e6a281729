//! Invariant update subspaces, block decompositions and per-epoch traces.

mod frame;
mod trace;

pub use frame::{
    block_decompose, closed_form_small_block, deeper_subspaces, rho, small_update_subspace, BlockDecomp, LayerFrame,
    SmallUpdate, SubspaceFrame,
};
pub use trace::{
    write_svals_csv, write_trace_csv, LayerTrace, TraceRecord, TraceRow, Tracker, TRACE_HEADER, TRACE_VALUES,
};
