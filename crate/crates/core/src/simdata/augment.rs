//! Symmetries of the square applied to whole frames: images, boxes, ground
//! truth, and the query features derived from them.

use rand::Rng;

use crate::domain::{BBox, Detection, FrameObservation, Image};
use crate::tokenize::{crop_mean_color, query_features};

/// Transpose first, then flips, in normalized coordinates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Symmetry {
    pub transpose: bool,
    pub flip_x: bool,
    pub flip_y: bool,
}

impl Symmetry {
    pub fn all() -> impl Iterator<Item = Symmetry> {
        (0..8u8).map(|b| Symmetry {
            transpose: b & 4 != 0,
            flip_x: b & 1 != 0,
            flip_y: b & 2 != 0,
        })
    }

    /// Uniform over the eight symmetries; transposes only square images.
    pub fn sample(square: bool, rng: &mut impl Rng) -> Self {
        Symmetry {
            transpose: square && rng.random(),
            flip_x: rng.random(),
            flip_y: rng.random(),
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::default()
    }

    pub fn point(&self, x: f64, y: f64) -> (f64, f64) {
        let (x, y) = if self.transpose { (y, x) } else { (x, y) };
        (
            if self.flip_x { 1.0 - x } else { x },
            if self.flip_y { 1.0 - y } else { y },
        )
    }

    pub fn bbox(&self, b: &BBox) -> BBox {
        let (ax, ay) = self.point(b.x1, b.y1);
        let (bx, by) = self.point(b.x2, b.y2);
        BBox {
            x1: ax.min(bx),
            y1: ay.min(by),
            x2: ax.max(bx),
            y2: ay.max(by),
        }
    }

    pub fn image(&self, img: &Image) -> Image {
        let (h, w) = if self.transpose {
            (img.width, img.height)
        } else {
            (img.height, img.width)
        };
        let mut out = Image::filled(h, w, img.channels, 0.0);
        for y in 0..h {
            for x in 0..w {
                // Undo the flips, then the transpose.
                let sx = if self.flip_x { w - 1 - x } else { x };
                let sy = if self.flip_y { h - 1 - y } else { y };
                let (sx, sy) = if self.transpose { (sy, sx) } else { (sx, sy) };
                for c in 0..img.channels {
                    *out.at_mut(y, x, c) = img.at(sy, sx, c);
                }
            }
        }
        out
    }

    /// Transforms a frame and recomputes each detection's query features.
    pub fn frame(&self, f: &FrameObservation) -> FrameObservation {
        let image = self.image(&f.image);
        let detections = f
            .detections
            .iter()
            .map(|d| {
                let bbox = self.bbox(&d.bbox);
                Detection {
                    bbox,
                    confidence: d.confidence,
                    query_embedding: query_features(&bbox, &image, d.query_embedding.len()),
                    appearance: d.appearance.map(|_| crop_mean_color(&bbox, &image)),
                }
            })
            .collect();
        let mut ground_truth = f.ground_truth.clone();
        for g in &mut ground_truth {
            g.bbox = self.bbox(&g.bbox);
        }
        FrameObservation {
            frame_index: f.frame_index,
            image,
            detections,
            gt_ids: f.gt_ids.clone(),
            ground_truth,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simdata::{generate_suite, SuiteConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn features_match_a_freshly_detected_transformed_frame() {
        let v = &generate_suite(&SuiteConfig::training(1, 4)).unwrap()[0];
        let f = &v.frames[5];
        for s in Symmetry::all() {
            let t = s.frame(f);
            for (d, orig) in t.detections.iter().zip(&f.detections) {
                assert_eq!(
                    d.query_embedding,
                    query_features(&d.bbox, &t.image, orig.query_embedding.len())
                );
                // The same pixels fall inside the box, so color statistics are unchanged.
                assert_eq!(d.appearance, orig.appearance, "{s:?}");
                assert_eq!(
                    &d.query_embedding[40..46],
                    &orig.query_embedding[40..46],
                    "{s:?}"
                );
                assert!((d.bbox.area() - orig.bbox.area()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn group_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut img = Image::filled(4, 4, 2, 0.0);
        img.data.iter_mut().for_each(|v| *v = rng.random());
        let b = BBox::new(0.1, 0.2, 0.35, 0.9).unwrap();
        let distinct: std::collections::BTreeSet<Vec<u32>> = Symmetry::all()
            .map(|s| s.image(&img).data.iter().map(|v| v.to_bits()).collect())
            .collect();
        assert_eq!(distinct.len(), 8);
        for s in Symmetry::all() {
            // Flips and transpose are involutions only when applied alone.
            if !(s.transpose && s.flip_x != s.flip_y) {
                assert_eq!(s.image(&s.image(&img)), img, "{s:?}");
                let bb = s.bbox(&s.bbox(&b));
                assert!(
                    (bb.x1 - b.x1).abs() < 1e-12 && (bb.y2 - b.y2).abs() < 1e-12,
                    "{s:?}"
                );
            }
        }
        // Pixel (row 0, col 1) center at x=0.375, y=0.125 lands where the point map says.
        let s = Symmetry {
            transpose: true,
            flip_x: true,
            flip_y: false,
        };
        let (x, y) = s.point(0.375, 0.125);
        let (px, py) = ((x * 4.0) as usize, (y * 4.0) as usize);
        assert_eq!(s.image(&img).at(py, px, 1), img.at(0, 1, 1));
    }
}
