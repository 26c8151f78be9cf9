use super::{EventFrame, RgbImage};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Count at which a polarity reaches full colour.
const SATURATION: f64 = 3.0;

/// Colour of one pixel with `pos` positive and `neg` negative events, in
/// `[0, 1]`. White background, positive pushes towards red, negative
/// towards blue, both linear up to three events.
pub fn event_colour(pos: f64, neg: f64) -> [f64; 3] {
    let a = pos.clamp(0.0, SATURATION) / SATURATION;
    let b = neg.clamp(0.0, SATURATION) / SATURATION;
    [1.0 - b, 1.0 - a.max(b), 1.0 - a]
}

pub fn render_event_image(ef: &EventFrame) -> RgbImage {
    let data = ef
        .pos
        .iter()
        .zip(&ef.neg)
        .flat_map(|(&p, &n)| event_colour(p as f64, n as f64).map(|v| (v * 255.0).round() as u8))
        .collect();
    RgbImage {
        width: ef.width,
        height: ef.height,
        data,
    }
}

/// Same map applied to real-valued `[2, H, W]` count planes, giving a
/// `[3, H, W]` image in `[0, 1]`. Not differentiable; inputs only.
pub fn render_event_planes<T: Scalar>(planes: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w) = match planes.shape() {
        &[2, h, w] => (h, w),
        s => return Err(Error::dim("render_event_planes", format!("expected [2, H, W], got {s:?}"))),
    };
    let n = h * w;
    let d = planes.data();
    let mut out = vec![T::zero(); 3 * n];
    for i in 0..n {
        let c = event_colour(d[i].as_f64(), d[n + i].as_f64());
        for k in 0..3 {
            out[k * n + i] = T::lit(c[k]);
        }
    }
    Tensor::from_vec(out, &[3, h, w])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_frame_is_white() {
        let img = render_event_image(&EventFrame::empty(4, 3, 1));
        assert!(img.data.iter().all(|&v| v == 255));
    }

    #[test]
    fn single_positive_event() {
        let mut ef = EventFrame::empty(3, 2, 1);
        ef.pos[4] = 1;
        let img = render_event_image(&ef);
        assert_eq!(img.pixel(1, 1), [255, 170, 170]);
        assert_eq!(img.pixel(0, 0), [255, 255, 255]);
        ef.pos[4] = 7;
        assert_eq!(render_event_image(&ef).pixel(1, 1), [255, 0, 0]);
    }

    #[test]
    fn planes_agree_with_integer_render() {
        let mut ef = EventFrame::empty(2, 2, 1);
        ef.pos = vec![0, 1, 2, 5];
        ef.neg = vec![3, 0, 1, 2];
        let planes: Vec<f32> = ef.pos.iter().chain(&ef.neg).map(|&c| c as f32).collect();
        let t = render_event_planes(&Tensor::from_vec(planes, &[2, 2, 2]).unwrap()).unwrap();
        let img = render_event_image(&ef);
        for i in 0..4 {
            for c in 0..3 {
                let v = (t.data()[c * 4 + i] * 255.0).round() as u8;
                assert_eq!(v, img.data[i * 3 + c]);
            }
        }
    }
}
