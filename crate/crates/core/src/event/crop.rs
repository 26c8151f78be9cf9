use super::{EventFrame, RgbImage, Sequence};
use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Template crop side relative to the box side `sqrt(w·h)`.
pub const TEMPLATE_FACTOR: f64 = 2.0;
/// Search crop side relative to the box side.
pub const SEARCH_FACTOR: f64 = 4.0;

/// Square region of a frame resampled to `out × out` pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropWindow {
    pub cx: f64,
    pub cy: f64,
    /// Side length in source pixels.
    pub side: f64,
    pub out: usize,
}

impl CropWindow {
    pub fn around(b: &BBox, factor: f64, out: usize) -> Self {
        let (cx, cy) = b.center();
        CropWindow {
            cx,
            cy,
            side: (b.side() * factor).max(1.0),
            out,
        }
    }

    pub fn scale(&self) -> f64 {
        self.out as f64 / self.side
    }

    fn origin(&self) -> (f64, f64) {
        (self.cx - self.side / 2.0, self.cy - self.side / 2.0)
    }

    /// Frame coordinates to crop coordinates.
    pub fn to_crop(&self, b: &BBox) -> BBox {
        let (ox, oy) = self.origin();
        let s = self.scale();
        BBox::new((b.x - ox) * s, (b.y - oy) * s, b.w * s, b.h * s)
    }

    pub fn to_frame(&self, b: &BBox) -> BBox {
        let (ox, oy) = self.origin();
        let s = self.scale();
        BBox::new(b.x / s + ox, b.y / s + oy, b.w / s, b.h / s)
    }

    /// Bilinear resampling of `channels` planar `h × w` sources; samples
    /// outside the frame read as zero.
    fn resample(&self, channels: usize, w: usize, h: usize, at: impl Fn(usize, usize, usize) -> f32) -> Vec<f32> {
        let n = self.out;
        let (ox, oy) = self.origin();
        let step = self.side / n as f64;
        let mut out = vec![0.0f32; channels * n * n];
        let get = |c: usize, x: i64, y: i64| -> f32 {
            if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                0.0
            } else {
                at(c, x as usize, y as usize)
            }
        };
        for v in 0..n {
            let sy = oy + (v as f64 + 0.5) * step - 0.5;
            let (y0, ty) = (sy.floor() as i64, (sy - sy.floor()) as f32);
            for u in 0..n {
                let sx = ox + (u as f64 + 0.5) * step - 0.5;
                let (x0, tx) = (sx.floor() as i64, (sx - sx.floor()) as f32);
                for c in 0..channels {
                    let top = get(c, x0, y0) * (1.0 - tx) + get(c, x0 + 1, y0) * tx;
                    let bot = get(c, x0, y0 + 1) * (1.0 - tx) + get(c, x0 + 1, y0 + 1) * tx;
                    out[(c * n + v) * n + u] = top * (1.0 - ty) + bot * ty;
                }
            }
        }
        out
    }

    /// `[3, out, out]` crop with values in `[0, 1]`.
    pub fn crop_rgb(&self, img: &RgbImage) -> Result<Tensor<f32>> {
        let w = img.width;
        let data = self.resample(3, w, img.height, |c, x, y| img.data[(y * w + x) * 3 + c] as f32 / 255.0);
        Tensor::from_vec(data, &[3, self.out, self.out])
    }

    /// `[2, out, out]` crop of the positive and negative count planes.
    pub fn crop_events(&self, ef: &EventFrame) -> Result<Tensor<f32>> {
        let w = ef.width;
        let data = self.resample(2, w, ef.height, |c, x, y| {
            let plane = if c == 0 { &ef.pos } else { &ef.neg };
            plane[y * w + x] as f32
        });
        Tensor::from_vec(data, &[2, self.out, self.out])
    }
}

/// One training or evaluation pair: template crops from the first frame,
/// search crops from frame `t`.
#[derive(Debug, Clone)]
pub struct TrackSample {
    pub rgb_template: Tensor<f32>,
    pub rgb_search: Tensor<f32>,
    pub evt_template: Tensor<f32>,
    pub evt_search: Tensor<f32>,
    /// Ground truth in search-crop pixels.
    pub gt: BBox,
    pub window: CropWindow,
}

impl TrackSample {
    /// Template crops of `seq` at its first box. The first event frame is
    /// always empty, so the event template comes from frame 1 when it exists.
    pub fn template(seq: &Sequence, size: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let first = seq
            .gt
            .first()
            .ok_or_else(|| Error::Contract("sequence has no frames".into()))?;
        let win = CropWindow::around(first, TEMPLATE_FACTOR, size);
        let evt = &seq.events[1.min(seq.events.len() - 1)];
        Ok((win.crop_rgb(&seq.frames[0])?, win.crop_events(evt)?))
    }

    /// Search crops of frame `t` under `window`.
    pub fn search(seq: &Sequence, t: usize, window: CropWindow) -> Result<(Tensor<f32>, Tensor<f32>)> {
        if t >= seq.len() {
            return Err(Error::Contract(format!("frame {t} outside sequence of {}", seq.len())));
        }
        Ok((window.crop_rgb(&seq.frames[t])?, window.crop_events(&seq.events[t])?))
    }

    pub fn build(seq: &Sequence, t: usize, window: CropWindow, template_size: usize) -> Result<Self> {
        let (rgb_template, evt_template) = Self::template(seq, template_size)?;
        let (rgb_search, evt_search) = Self::search(seq, t, window)?;
        Ok(TrackSample {
            rgb_template,
            rgb_search,
            evt_template,
            evt_search,
            gt: window.to_crop(&seq.gt[t]),
            window,
        })
    }
}
