use rand::Rng;

use crate::batch::ItemShape;

/// One random augmentation: resize-crop, horizontal flip, rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    /// Side of the crop relative to the image, in `[0.8, 1]`.
    pub scale: f64,
    /// Crop position within the free margin, each in `[0, 1]`.
    pub offset: (f64, f64),
    pub flip: bool,
    /// Rotation in degrees, in `[-15, 15]`.
    pub angle: f64,
}

impl AugmentDraw {
    pub const IDENTITY: AugmentDraw = AugmentDraw {
        scale: 1.0,
        offset: (0.0, 0.0),
        flip: false,
        angle: 0.0,
    };

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            scale: rng.random_range(0.8..=1.0),
            offset: (rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0)),
            flip: rng.random_bool(0.5),
            angle: rng.random_range(-15.0..=15.0),
        }
    }
}

/// Bilinear read at a fractional position; `None` outside the pixel grid.
fn sample_at(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> Option<f64> {
    let eps = 1e-9;
    if y < -eps || x < -eps || y > (h - 1) as f64 + eps || x > (w - 1) as f64 + eps {
        return None;
    }
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
    let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
    Some(top * (1.0 - fy) + bottom * fy)
}

/// Applies `draw` to one item. Pixels rotated in from outside take the image minimum.
pub fn apply_augment(image: &[f64], shape: ItemShape, draw: &AugmentDraw) -> Vec<f64> {
    let (h, w) = (shape.height, shape.width);
    let fill = image.iter().copied().fold(f64::INFINITY, f64::min);
    let (ch, cw) = (draw.scale * h as f64, draw.scale * w as f64);
    let (y0, x0) = (draw.offset.0 * (h as f64 - ch), draw.offset.1 * (w as f64 - cw));
    let (sin, cos) = draw.angle.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = vec![0.0; image.len()];
    for c in 0..shape.channels {
        let plane = &image[c * shape.plane()..(c + 1) * shape.plane()];
        // Resize-crop then flip.
        let mut stage = vec![0.0; shape.plane()];
        for i in 0..h {
            for j in 0..w {
                let jj = if draw.flip { w - 1 - j } else { j };
                let sy = y0 + (i as f64 + 0.5) * ch / h as f64 - 0.5;
                let sx = x0 + (jj as f64 + 0.5) * cw / w as f64 - 0.5;
                stage[i * w + j] = sample_at(plane, h, w, sy, sx).unwrap_or(fill);
            }
        }
        // Rotation about the centre.
        let dst = &mut out[c * shape.plane()..(c + 1) * shape.plane()];
        for i in 0..h {
            for j in 0..w {
                let (dy, dx) = (i as f64 - cy, j as f64 - cx);
                let sy = cos * dy - sin * dx + cy;
                let sx = sin * dy + cos * dx + cx;
                dst[i * w + j] = sample_at(&stage, h, w, sy, sx).unwrap_or(fill);
            }
        }
    }
    out
}

pub fn augment<R: Rng + ?Sized>(image: &[f64], shape: ItemShape, rng: &mut R) -> Vec<f64> {
    apply_augment(image, shape, &AugmentDraw::sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn ramp(shape: ItemShape) -> Vec<f64> {
        (0..shape.len()).map(|v| (v as f64 * 0.61).sin()).collect()
    }

    #[test]
    fn null_draw_is_identity() {
        let s = ItemShape::new(2, 9, 7);
        let img = ramp(s);
        assert_eq!(apply_augment(&img, s, &AugmentDraw::IDENTITY), img);
    }

    #[test]
    fn flip_only_mirrors_rows() {
        let s = ItemShape::new(1, 3, 4);
        let img = ramp(s);
        let out = apply_augment(&img, s, &AugmentDraw { flip: true, ..AugmentDraw::IDENTITY });
        for i in 0..3 {
            for j in 0..4 {
                assert_eq!(out[i * 4 + j], img[i * 4 + 3 - j]);
            }
        }
    }

    #[test]
    fn seeded_calls_agree() {
        let s = ItemShape::new(1, 16, 16);
        let img = ramp(s);
        let a = augment(&img, s, &mut rng_from_seed(3));
        assert_eq!(a, augment(&img, s, &mut rng_from_seed(3)));
        assert_eq!(a.len(), img.len());
    }

    #[test]
    fn uniform_image_is_unchanged() {
        let s = ItemShape::new(1, 12, 12);
        let img = vec![0.4; s.len()];
        let mut rng = rng_from_seed(8);
        for _ in 0..50 {
            assert!(augment(&img, s, &mut rng).iter().all(|v| (v - 0.4).abs() < 1e-12));
        }
    }
}
