//! Seeded corruption of ground-truth mask images: fusing adjacent labels,
//! splitting labels along random lines, and eroding boundaries. Models the
//! failure modes of real 2D segmenters for robustness experiments.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::masks2d::MaskImage;

/// Corruption parameters; all probabilities per view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Chance that a pair of image-adjacent labels fuses into one.
    pub merge_prob: f64,
    /// Chance that a label splits along a random line through its centroid.
    pub split_prob: f64,
    /// Boundary erosion radius in pixels (eroded pixels become background).
    pub erode_px: u32,
    pub seed: u64,
}

impl NoiseModel {
    pub fn none(seed: u64) -> Self {
        NoiseModel {
            merge_prob: 0.0,
            split_prob: 0.0,
            erode_px: 0,
            seed,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.merge_prob == 0.0 && self.split_prob == 0.0 && self.erode_px == 0
    }
}

/// Applies the noise model to every view. Each view draws from its own rng
/// stream derived from (seed, view index), so corruption is reproducible
/// and independent of processing order.
pub fn corrupt_masks(masks: &[MaskImage], model: &NoiseModel) -> Vec<MaskImage> {
    masks
        .iter()
        .enumerate()
        .map(|(view_idx, m)| corrupt_single(m, model, view_idx as u64))
        .collect()
}

fn corrupt_single(masks: &MaskImage, model: &NoiseModel, view_idx: u64) -> MaskImage {
    if model.is_identity() {
        return masks.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(
        model
            .seed
            .wrapping_add((view_idx + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
    );
    let (w, h) = (masks.width, masks.height);
    let mut labels = masks.labels.clone();

    // Fuse adjacent label pairs.
    if model.merge_prob > 0.0 && masks.num_masks >= 2 {
        let mut pairs: Vec<(u32, u32)> = Vec::new();
        for row in 0..h {
            for col in 0..w {
                let a = labels[row * w + col];
                if a == 0 {
                    continue;
                }
                for (dc, dr) in [(1i64, 0i64), (0, 1)] {
                    let (nc, nr) = (col as i64 + dc, row as i64 + dr);
                    if nc < 0 || nr < 0 || nc >= w as i64 || nr >= h as i64 {
                        continue;
                    }
                    let b = labels[nr as usize * w + nc as usize];
                    if b != 0 && b != a {
                        pairs.push((a.min(b), a.max(b)));
                    }
                }
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        // Union-find over labels so chained merges stay consistent.
        let max_label = masks.num_masks as usize;
        let mut parent: Vec<u32> = (0..=max_label as u32).collect();
        fn find(parent: &mut [u32], mut x: u32) -> u32 {
            while parent[x as usize] != x {
                x = parent[x as usize];
            }
            x
        }
        for (a, b) in pairs {
            if rng.random_range(0.0..1.0) < model.merge_prob {
                let ra = find(&mut parent, a);
                let rb = find(&mut parent, b);
                if ra != rb {
                    parent[ra.max(rb) as usize] = ra.min(rb);
                }
            }
        }
        for l in labels.iter_mut() {
            if *l != 0 {
                *l = find(&mut parent, *l);
            }
        }
    }

    // Split labels along random lines through their centroids.
    if model.split_prob > 0.0 {
        let mut present: Vec<u32> = labels.iter().copied().filter(|&l| l != 0).collect();
        present.sort_unstable();
        present.dedup();
        let mut next_label = present.iter().copied().max().unwrap_or(0) + 1;
        for label in present {
            if rng.random_range(0.0..1.0) >= model.split_prob {
                continue;
            }
            let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let normal = (angle.cos(), angle.sin());
            let mut cx = 0.0;
            let mut cy = 0.0;
            let mut count = 0usize;
            for row in 0..h {
                for col in 0..w {
                    if labels[row * w + col] == label {
                        cx += col as f64;
                        cy += row as f64;
                        count += 1;
                    }
                }
            }
            if count == 0 {
                continue;
            }
            cx /= count as f64;
            cy /= count as f64;
            for row in 0..h {
                for col in 0..w {
                    let idx = row * w + col;
                    if labels[idx] == label {
                        let side =
                            (col as f64 - cx) * normal.0 + (row as f64 - cy) * normal.1;
                        if side > 0.0 {
                            labels[idx] = next_label;
                        }
                    }
                }
            }
            next_label += 1;
        }
    }

    // Diamond erosion: a pixel is cleared when any 4-neighbor differs.
    for _ in 0..model.erode_px {
        let snapshot = labels.clone();
        for row in 0..h {
            for col in 0..w {
                let idx = row * w + col;
                let l = snapshot[idx];
                if l == 0 {
                    continue;
                }
                let mut boundary = false;
                for (dc, dr) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
                    let (nc, nr) = (col as i64 + dc, row as i64 + dr);
                    if nc < 0 || nr < 0 || nc >= w as i64 || nr >= h as i64 {
                        boundary = true;
                        break;
                    }
                    if snapshot[nr as usize * w + nc as usize] != l {
                        boundary = true;
                        break;
                    }
                }
                if boundary {
                    labels[idx] = 0;
                }
            }
        }
    }

    MaskImage::from_labels(w, h, labels).expect("corrupted labels keep dimensions")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_band_mask() -> MaskImage {
        // Left half label 1, right half label 2, touching at the middle.
        let (w, h) = (16, 8);
        let mut labels = vec![0u32; w * h];
        for row in 0..h {
            for col in 0..w {
                labels[row * w + col] = if col < w / 2 { 1 } else { 2 };
            }
        }
        MaskImage::from_labels(w, h, labels).unwrap()
    }

    #[test]
    fn zero_model_is_identity() {
        let mask = two_band_mask();
        let out = corrupt_masks(std::slice::from_ref(&mask), &NoiseModel::none(3));
        assert_eq!(out[0], mask);
    }

    #[test]
    fn certain_merge_fuses_adjacent_labels() {
        let mask = two_band_mask();
        let model = NoiseModel {
            merge_prob: 1.0,
            split_prob: 0.0,
            erode_px: 0,
            seed: 5,
        };
        let out = corrupt_masks(&[mask], &model);
        assert_eq!(out[0].num_masks, 1);
    }

    #[test]
    fn certain_split_divides_a_label() {
        let mask = two_band_mask();
        let model = NoiseModel {
            merge_prob: 0.0,
            split_prob: 1.0,
            erode_px: 0,
            seed: 5,
        };
        let out = corrupt_masks(&[mask], &model);
        assert!(out[0].num_masks >= 3, "got {} masks", out[0].num_masks);
    }

    #[test]
    fn erosion_clears_boundaries() {
        let mask = two_band_mask();
        let model = NoiseModel {
            merge_prob: 0.0,
            split_prob: 0.0,
            erode_px: 1,
            seed: 5,
        };
        let out = corrupt_masks(std::slice::from_ref(&mask), &model);
        let before = mask.labels.iter().filter(|&&l| l != 0).count();
        let after = out[0].labels.iter().filter(|&&l| l != 0).count();
        assert!(after < before);
        // The middle columns, where the two bands met, must now be 0.
        assert_eq!(out[0].at(7, 4), 0);
        assert_eq!(out[0].at(8, 4), 0);
    }

    #[test]
    fn same_seed_reproduces_corruption() {
        let mask = two_band_mask();
        let model = NoiseModel {
            merge_prob: 0.4,
            split_prob: 0.4,
            erode_px: 1,
            seed: 99,
        };
        let a = corrupt_masks(&[mask.clone(), mask.clone()], &model);
        let b = corrupt_masks(&[mask.clone(), mask], &model);
        assert_eq!(a, b);
    }
}
