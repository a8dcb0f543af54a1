use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-channel bilinear resampling of a `[C, H, W]` tensor with half-pixel
/// centres (`align_corners = false`), clamping at the borders.
pub fn resize_bilinear(t: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let [c, h, w] = *t.shape() else {
        return Err(Error::Dimension(format!("resize needs [C, H, W], got {:?}", t.shape())));
    };
    if out_h == 0 || out_w == 0 {
        return Err(Error::Dimension("resize target must be non-empty".into()));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(t.clone());
    }
    let axis = |len: usize, out: usize| -> Vec<(usize, usize, f64)> {
        let scale = len as f64 / out as f64;
        (0..out)
            .map(|i| {
                let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(len - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let ys = axis(h, out_h);
    let xs = axis(w, out_w);
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let map = t.channel(ch);
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = map[y0 * w + x0] * (1.0 - fx) + map[y0 * w + x1] * fx;
                let bot = map[y1 * w + x0] * (1.0 - fx) + map[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, out_h, out_w], out))
}

/// Linear rescale of one channel onto [-1, 1] using its own min and max.
/// A constant channel maps to all zeros.
pub fn normalize_channel(x: &[f64]) -> Vec<f64> {
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        return vec![0.0; x.len()];
    }
    let span = hi - lo;
    x.iter()
        .map(|&v| {
            if v == hi {
                1.0
            } else {
                2.0 * (v - lo) / span - 1.0
            }
        })
        .collect()
}

pub fn normalize_image(t: &Tensor) -> Tensor {
    let c = t.shape()[0];
    let mut data = Vec::with_capacity(t.len());
    for ch in 0..c {
        data.extend(normalize_channel(t.channel(ch)));
    }
    Tensor::from_parts(t.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_endpoints_and_midpoint() {
        let x = [10.0, 250.0, 130.0, 70.0];
        let n = normalize_channel(&x);
        assert_eq!(n[0], -1.0);
        assert_eq!(n[1], 1.0);
        assert_eq!(n[2], 0.0);
        assert_eq!(n[3], -0.5);
        assert_eq!(normalize_channel(&[4.0, 4.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn normalize_is_idempotent_on_unit_range() {
        let x: Vec<f64> = (0..50).map(|i| ((i as f64) * 0.37).sin()).collect();
        let once = normalize_channel(&x);
        let twice = normalize_channel(&once);
        for (a, b) in once.iter().zip(&twice) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn resize_identity_and_constant() {
        let t = Tensor::new(vec![1, 3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(resize_bilinear(&t, 3, 2).unwrap(), t);
        let c = Tensor::full(&[3, 5, 7], 42.0);
        let r = resize_bilinear(&c, 128, 128).unwrap();
        assert!(r.data().iter().all(|&v| (v - 42.0).abs() < 1e-12));
    }

    #[test]
    fn checkerboard_centre_is_neighbour_average() {
        // 2x2 -> 4x4: inner samples sit at source coordinates 0.25 / 0.75,
        // so the four centre outputs are weighted 9:3:3:1 mixes; their mean is
        // the plain average of the four source pixels.
        let t = Tensor::new(vec![1, 2, 2], vec![0.0, 255.0, 255.0, 0.0]).unwrap();
        let r = resize_bilinear(&t, 4, 4).unwrap();
        let centre = [r.data()[5], r.data()[6], r.data()[9], r.data()[10]];
        assert!((centre[0] - 255.0 * 6.0 / 16.0).abs() < 1e-12);
        assert!((centre[1] - 255.0 * 10.0 / 16.0).abs() < 1e-12);
        assert!((centre.iter().sum::<f64>() / 4.0 - 127.5).abs() < 1e-12);
        // 2x2 -> 3x3: the single centre sample is the exact 4-neighbour average
        let r = resize_bilinear(&t, 3, 3).unwrap();
        assert!((r.data()[4] - 127.5).abs() < 1e-12);
    }

    #[test]
    fn resize_rejects_empty_target() {
        assert!(resize_bilinear(&Tensor::zeros(&[3, 2, 2]), 0, 4).is_err());
    }
}
