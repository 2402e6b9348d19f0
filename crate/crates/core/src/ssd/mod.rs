//! State-space-duality sequence layer.

mod block;
mod scan;

pub use block::{
    ssd_block_backward, ssd_block_forward, SsdBlockConfig, SsdBlockTape, SsdLayerParams, SsdStack,
    SsdStackTape,
};
pub use scan::{
    ssd_chunked_scan, ssd_dual_quadratic, ssd_recurrence, ssd_scan_backward, ScanGrad, ScanInputs,
};
