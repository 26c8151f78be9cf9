use super::{EventFrame, LumaFrame};
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.15;
/// Offset inside the logarithm so black pixels stay finite.
pub const LOG_EPS: f64 = 1e-3;

/// Slack on the crossing test; a step of exactly `k·C` must yield `k`
/// events despite rounding in the log.
const CROSS_SLACK: f64 = 1e-9;

pub fn log_intensity(v: f64) -> f64 {
    (v + LOG_EPS).ln()
}

/// Threshold-crossing event simulator.
///
/// Each pixel keeps a reference log intensity. At every new frame it emits
/// `floor(|L - L_ref| / C)` events of the sign of the change and moves the
/// reference by that many thresholds. Frame 0 only initialises the
/// reference, so its event frame is empty.
pub fn simulate_events(frames: &[LumaFrame], threshold: f64) -> Result<Vec<EventFrame>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Contract("event simulation needs at least one frame".into()))?;
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(Error::Contract(format!("threshold must be positive, got {threshold}")));
    }
    let (w, h) = (first.width, first.height);
    if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.width != w || f.height != h) {
        return Err(Error::Contract(format!(
            "frame {i} is {}x{}, frame 0 is {w}x{h}",
            f.width, f.height
        )));
    }
    let mut reference: Vec<f64> = first.data.iter().map(|&v| log_intensity(v)).collect();
    let mut out = vec![EventFrame::empty(w, h, 0)];
    for (t, frame) in frames.iter().enumerate().skip(1) {
        let mut ef = EventFrame::empty(w, h, t);
        for (p, (&v, r)) in frame.data.iter().zip(reference.iter_mut()).enumerate() {
            let d = log_intensity(v) - *r;
            let n = (d.abs() / threshold + CROSS_SLACK).floor();
            if n < 1.0 {
                continue;
            }
            if d > 0.0 {
                ef.pos[p] = n as u32;
                *r += n * threshold;
            } else {
                ef.neg[p] = n as u32;
                *r -= n * threshold;
            }
        }
        out.push(ef);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pixel_trace(logs: &[f64]) -> Vec<LumaFrame> {
        logs.iter()
            .map(|&l| LumaFrame {
                width: 1,
                height: 1,
                data: vec![l.exp() - LOG_EPS],
            })
            .collect()
    }

    #[test]
    fn constant_scene_is_silent() {
        let f = LumaFrame {
            width: 5,
            height: 4,
            data: (0..20).map(|i| i as f64 / 20.0).collect(),
        };
        let ev = simulate_events(&vec![f; 6], 0.15).unwrap();
        assert_eq!(ev.len(), 6);
        assert!(ev.iter().all(EventFrame::is_empty));
        assert_eq!(ev[3].frame_index, 3);
    }

    #[test]
    fn step_of_two_thresholds() {
        let c = 0.15;
        let base = log_intensity(0.4);
        let ev = simulate_events(&pixel_trace(&[base, base + 2.0 * c]), c).unwrap();
        assert_eq!(ev[0].total(), 0);
        assert_eq!((ev[1].pos[0], ev[1].neg[0]), (2, 0));
        let ev = simulate_events(&pixel_trace(&[base, base - 2.0 * c]), c).unwrap();
        assert_eq!((ev[1].pos[0], ev[1].neg[0]), (0, 2));
    }

    #[test]
    fn raising_threshold_can_add_events() {
        // Reference advancing makes the count non-monotone in C in general.
        let trace = pixel_trace(&[-0.18, 0.57, 0.25]);
        let count = |c| simulate_events(&trace, c).unwrap().iter().map(EventFrame::total).sum::<u64>();
        assert_eq!(count(0.2), 3);
        assert_eq!(count(0.25), 4);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(simulate_events(&[], 0.1), Err(Error::Contract(_))));
        let f = LumaFrame { width: 1, height: 1, data: vec![0.5] };
        assert!(simulate_events(&[f.clone()], 0.0).is_err());
        let g = LumaFrame { width: 2, height: 1, data: vec![0.5; 2] };
        assert!(simulate_events(&[f, g], 0.1).is_err());
    }
}
