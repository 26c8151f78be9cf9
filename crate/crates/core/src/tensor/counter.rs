//! Instrumented multiply-add counter.
//!
//! Every GEMM and convolution records its scalar multiply-add count on the
//! current thread. Counts go to the `"total"` bucket and to every tag that
//! is active via [`tagged`], which lets callers isolate one sub-computation
//! (for example the attention score product) inside a larger forward pass.

use std::cell::RefCell;
use std::collections::BTreeMap;

thread_local! {
    static STATE: RefCell<State> = RefCell::new(State::default());
}

#[derive(Default)]
struct State {
    active: Vec<&'static str>,
    counts: BTreeMap<&'static str, u64>,
}

pub const TOTAL: &str = "total";
pub const ATTENTION_SCORES: &str = "attention.scores";

pub(crate) fn record_macs(n: u64) {
    STATE.with(|s| {
        let mut s = s.borrow_mut();
        *s.counts.entry(TOTAL).or_default() += n;
        let tags = s.active.clone();
        for tag in tags {
            *s.counts.entry(tag).or_default() += n;
        }
    });
}

/// Runs `f` with `tag` active; nested tags all receive counts.
pub fn tagged<R>(tag: &'static str, f: impl FnOnce() -> R) -> R {
    struct Pop;
    impl Drop for Pop {
        fn drop(&mut self) {
            STATE.with(|s| {
                s.borrow_mut().active.pop();
            });
        }
    }
    STATE.with(|s| s.borrow_mut().active.push(tag));
    let _pop = Pop;
    f()
}

pub fn reset() {
    STATE.with(|s| s.borrow_mut().counts.clear());
}

pub fn get(tag: &str) -> u64 {
    STATE.with(|s| s.borrow().counts.get(tag).copied().unwrap_or(0))
}

/// Counts accumulated while running `f`, without disturbing outer totals.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, BTreeMap<&'static str, u64>) {
    let saved = STATE.with(|s| std::mem::take(&mut s.borrow_mut().counts));
    let out = f();
    let counts = STATE.with(|s| {
        let mut s = s.borrow_mut();
        let inner = std::mem::replace(&mut s.counts, saved);
        for (k, v) in &inner {
            *s.counts.entry(k).or_default() += v;
        }
        inner
    });
    (out, counts)
}
