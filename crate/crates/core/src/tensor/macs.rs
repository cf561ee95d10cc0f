//! Per-thread multiply-accumulate counters incremented by the convolution and
//! matrix-product kernels as their loops execute.

use std::cell::Cell;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MacCounts {
    pub conv: u64,
    pub depthwise: u64,
    pub pointwise: u64,
    pub matmul: u64,
}

impl MacCounts {
    pub fn convolution_total(&self) -> u64 {
        self.conv + self.depthwise + self.pointwise
    }

    pub fn total(&self) -> u64 {
        self.convolution_total() + self.matmul
    }
}

thread_local! {
    static COUNTS: Cell<MacCounts> = Cell::new(MacCounts::default());
}

pub fn reset() {
    COUNTS.with(|c| c.set(MacCounts::default()));
}

pub fn snapshot() -> MacCounts {
    COUNTS.with(|c| c.get())
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Kind {
    Conv,
    Depthwise,
    Pointwise,
    Matmul,
}

#[inline]
pub(crate) fn add(kind: Kind, n: usize) {
    COUNTS.with(|c| {
        let mut m = c.get();
        let n = n as u64;
        match kind {
            Kind::Conv => m.conv += n,
            Kind::Depthwise => m.depthwise += n,
            Kind::Pointwise => m.pointwise += n,
            Kind::Matmul => m.matmul += n,
        }
        c.set(m);
    });
}

/// Runs `f` and returns its result with the MACs it executed on this thread.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, MacCounts) {
    let before = snapshot();
    let out = f();
    let after = snapshot();
    let diff = MacCounts {
        conv: after.conv - before.conv,
        depthwise: after.depthwise - before.depthwise,
        pointwise: after.pointwise - before.pointwise,
        matmul: after.matmul - before.matmul,
    };
    (out, diff)
}
