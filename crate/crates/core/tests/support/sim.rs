//! Reference checks for the event simulator, written against the plain
//! crossing definition rather than the simulator's closed form.

use rgbe_track::event::{log_intensity, EventFrame, LumaFrame};

/// Signed event counts per frame for one log-intensity trace, counting
/// threshold crossings one at a time.
pub fn crossing_counter(trace: &[f64], c: f64) -> Vec<i64> {
    let tol = 1e-9 * c;
    let mut reference = trace[0];
    let mut out = vec![0];
    for &l in &trace[1..] {
        let mut n = 0i64;
        while l - reference >= c - tol {
            reference += c;
            n += 1;
        }
        while reference - l >= c - tol {
            reference -= c;
            n -= 1;
        }
        out.push(n);
    }
    out
}

/// Number of (frame, pixel, polarity) cells where `fine` has fewer events
/// than `coarse`.
pub fn halving_violations(coarse: &[EventFrame], fine: &[EventFrame]) -> usize {
    let mut bad = 0;
    for (a, b) in coarse.iter().zip(fine) {
        for p in 0..a.pos.len() {
            bad += usize::from(b.pos[p] < a.pos[p]) + usize::from(b.neg[p] < a.neg[p]);
        }
    }
    bad
}

/// Largest `|signed_sum · C − (L_t − L_0)|` over every pixel and frame.
pub fn max_residual(frames: &[LumaFrame], events: &[EventFrame], c: f64) -> f64 {
    let n = frames[0].data.len();
    let mut signed = vec![0i64; n];
    let mut worst = 0.0f64;
    for (f, e) in frames.iter().zip(events) {
        for p in 0..n {
            signed[p] += e.pos[p] as i64 - e.neg[p] as i64;
            let change = log_intensity(f.data[p]) - log_intensity(frames[0].data[p]);
            worst = worst.max((signed[p] as f64 * c - change).abs());
        }
    }
    worst
}
