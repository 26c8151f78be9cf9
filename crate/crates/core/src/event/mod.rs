//! Synthetic RGB sequences, the event-camera simulator, and the on-disk
//! dataset format.

mod crop;
mod dataset;
mod ppm;
mod render;
pub mod scenario;
mod simulate;

pub use crop::{CropWindow, TrackSample, SEARCH_FACTOR, TEMPLATE_FACTOR};
pub use dataset::{read_dataset, read_gt, synthesize, write_dataset, write_gt, Corpus, Sequence};
pub use ppm::{read_ppm, write_ppm};
pub use render::{event_colour, render_event_image, render_event_planes};
pub use scenario::{
    render_sequence, Corruption, CorruptionKind, ObjectShape, RenderedSequence, ScenarioSampler, ScenarioSpec,
    Trajectory, TrajectoryKind,
};
pub use simulate::{log_intensity, simulate_events, DEFAULT_THRESHOLD, LOG_EPS};

/// 8-bit RGB image, row-major, interleaved `HWC`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        RgbImage {
            width,
            height,
            data: rgb.iter().copied().cycle().take(width * height * 3).collect(),
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Linear luminance in `[0, 1]`, as seen by the event sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct LumaFrame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// Per-pixel polarity counts accumulated between two consecutive frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventFrame {
    pub width: usize,
    pub height: usize,
    pub pos: Vec<u32>,
    pub neg: Vec<u32>,
    pub frame_index: usize,
}

impl EventFrame {
    pub fn empty(width: usize, height: usize, frame_index: usize) -> Self {
        EventFrame {
            width,
            height,
            pos: vec![0; width * height],
            neg: vec![0; width * height],
            frame_index,
        }
    }

    pub fn total(&self) -> u64 {
        self.pos.iter().chain(&self.neg).map(|&c| c as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }
}
