//! Per-thread execution counters for the layer kernels.
//!
//! Every kernel bumps these as it runs so that analytic operation counts can
//! be checked against what the code actually executed.

use std::cell::Cell;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExecCounts {
    pub macs_forward: u64,
    pub macs_backward_input: u64,
    pub macs_backward_weight: u64,
    pub macs_update: u64,
    /// Forward passes through a shared trunk.
    pub trunk_passes: u64,
}

impl ExecCounts {
    pub fn macs_backward(&self) -> u64 {
        self.macs_backward_input + self.macs_backward_weight
    }
}

thread_local! {
    static COUNTS: Cell<ExecCounts> = Cell::new(ExecCounts::default());
}

pub fn reset() {
    COUNTS.with(|c| c.set(ExecCounts::default()));
}

pub fn snapshot() -> ExecCounts {
    COUNTS.with(|c| c.get())
}

fn bump(f: impl FnOnce(&mut ExecCounts)) {
    COUNTS.with(|c| {
        let mut v = c.get();
        f(&mut v);
        c.set(v);
    });
}

pub(crate) fn add_forward(n: u64) {
    bump(|c| c.macs_forward += n);
}

pub(crate) fn add_backward(input: u64, weight: u64) {
    bump(|c| {
        c.macs_backward_input += input;
        c.macs_backward_weight += weight;
    });
}

pub(crate) fn add_update(n: u64) {
    bump(|c| c.macs_update += n);
}

pub(crate) fn add_trunk_pass() {
    bump(|c| c.trunk_passes += 1);
}
