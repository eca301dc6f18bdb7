use rayon::prelude::*;

use crate::batch::{ImageBatch, ItemShape};
use crate::error::{Error, Result};

/// Keeps frames `0, stride, 2 * stride, ...`.
pub fn subsample_frames<T: Clone>(video: &[T], stride: usize) -> Result<Vec<T>> {
    if video.is_empty() {
        return Err(Error::InsufficientData("empty video".into()));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be >= 1".into()));
    }
    Ok(video.iter().step_by(stride).cloned().collect())
}

/// Source coordinate and blend weight for one output index under the
/// half-pixel-centre convention.
fn taps(out: usize, input: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / out as f64;
    (0..out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Bilinear resize of every channel plane. Outputs are convex combinations of
/// inputs, so the range never grows.
pub fn resize(x: &ImageBatch, height: usize, width: usize) -> Result<ImageBatch> {
    let s = x.shape();
    if s.height == 0 || s.width == 0 || s.channels == 0 {
        return Err(Error::Shape(format!("cannot resize zero-sized items {s}")));
    }
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument(format!("resize target {height}x{width} must be positive")));
    }
    if (height, width) == (s.height, s.width) {
        return Ok(x.clone());
    }
    let ty = taps(height, s.height);
    let tx = taps(width, s.width);
    let out_shape = ItemShape::new(s.channels, height, width);
    let mut data = vec![0.0; x.len() * out_shape.len()];
    data.par_chunks_mut(out_shape.len())
        .zip(x.as_slice().par_chunks(s.len()))
        .for_each(|(o, item)| {
            for c in 0..s.channels {
                let plane = &item[c * s.plane()..(c + 1) * s.plane()];
                for (i, &(y0, y1, fy)) in ty.iter().enumerate() {
                    for (j, &(x0, x1, fx)) in tx.iter().enumerate() {
                        let top = plane[y0 * s.width + x0] * (1.0 - fx) + plane[y0 * s.width + x1] * fx;
                        let bottom = plane[y1 * s.width + x0] * (1.0 - fx) + plane[y1 * s.width + x1] * fx;
                        o[(c * height + i) * width + j] = top * (1.0 - fy) + bottom * fy;
                    }
                }
            }
        });
    ImageBatch::from_vec(x.len(), out_shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stride_arithmetic() {
        let v: Vec<usize> = (0..7).collect();
        assert_eq!(subsample_frames(&v, 5).unwrap(), vec![0, 5]);
        assert_eq!(subsample_frames(&v, 1).unwrap(), v);
        assert!(subsample_frames::<usize>(&[], 2).is_err());
        assert!(subsample_frames(&v, 0).is_err());
    }

    #[test]
    fn two_by_two_to_one() {
        let x = ImageBatch::from_vec(1, ItemShape::new(1, 2, 2), vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(resize(&x, 1, 1).unwrap().as_slice(), &[0.5]);
    }

    #[test]
    fn constants_and_identity() {
        let x = ImageBatch::from_vec(1, ItemShape::new(2, 3, 5), (0..30).map(|v| v as f64).collect()).unwrap();
        assert_eq!(resize(&x, 3, 5).unwrap(), x);
        let c = ImageBatch::from_vec(1, ItemShape::new(1, 5, 7), vec![0.3; 35]).unwrap();
        for (h, w) in [(2, 3), (11, 4), (64, 64)] {
            assert!(resize(&c, h, w).unwrap().as_slice().iter().all(|v| *v == 0.3));
        }
    }

    #[test]
    fn no_overshoot() {
        let vals: Vec<f64> = (0..49).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let x = ImageBatch::from_vec(1, ItemShape::new(1, 7, 7), vals.clone()).unwrap();
        let (lo, hi) = (-5.0, 5.0);
        for (h, w) in [(3, 3), (13, 9), (20, 20)] {
            assert!(resize(&x, h, w).unwrap().as_slice().iter().all(|v| *v >= lo && *v <= hi));
        }
    }
}
