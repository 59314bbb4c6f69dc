//! Exact ray-cast rendering of the synthetic scenes: per-view depth maps,
//! ground-truth instance masks, semantic label images, and the
//! camera-observability filter applied to sampled clouds.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::geometry::{CameraView, DepthMap, Intrinsics, Pose};
use crate::masks2d::MaskImage;
use crate::openvocab::SemanticMaskImage;
use crate::synth::shapes::SceneGeometry;

/// Ring of cameras looking at a common target.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitSpec {
    pub count: usize,
    pub radius: f64,
    pub height: f64,
    pub look_at: Vector3<f64>,
    pub image_width: usize,
    pub image_height: usize,
    pub focal: f64,
}

impl OrbitSpec {
    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics {
            fx: self.focal,
            fy: self.focal,
            cx: self.image_width as f64 / 2.0,
            cy: self.image_height as f64 / 2.0,
            width: self.image_width,
            height: self.image_height,
        }
    }

    /// World-to-camera pose of the k-th orbit position.
    pub fn pose(&self, k: usize) -> Pose {
        let angle = std::f64::consts::TAU * k as f64 / self.count.max(1) as f64;
        let position = Vector3::new(
            self.look_at.x + self.radius * angle.cos(),
            self.look_at.y + self.radius * angle.sin(),
            self.height,
        );
        look_at_pose(&position, &self.look_at)
    }
}

/// Camera convention: +z forward, +x image right, +y image down.
pub fn look_at_pose(position: &Vector3<f64>, target: &Vector3<f64>) -> Pose {
    let forward = (target - position).normalize();
    let world_up = Vector3::new(0.0, 0.0, 1.0);
    let mut right = forward.cross(&world_up);
    if right.norm() < 1e-9 {
        right = forward.cross(&Vector3::new(0.0, 1.0, 0.0));
    }
    let right = right.normalize();
    let image_down = forward.cross(&right);
    let rotation_c2w = Matrix3::from_columns(&[right, image_down, forward]);
    let rotation = rotation_c2w.transpose();
    let translation = -(rotation * position);
    Pose::from_world_to_cam(rotation, translation)
}

/// One rendered frame: the camera view with exact depth and ground-truth
/// instance masks, plus the semantic label image in global instance ids.
#[derive(Debug, Clone)]
pub struct RenderedView {
    pub view: CameraView,
    pub semantic: SemanticMaskImage,
    /// Per-view map from dense mask label to global instance id.
    pub mask_to_instance: Vec<u32>,
}

/// Ray-casts every pixel of every orbit camera against the scene geometry.
/// Depth is the camera-space z of the first hit; the mask label is the
/// first-hit instance, densified per view.
pub fn render_views(scene: &SceneGeometry, orbit: &OrbitSpec) -> Vec<RenderedView> {
    (0..orbit.count)
        .into_par_iter()
        .map(|k| render_single(scene, orbit, k))
        .collect()
}

fn render_single(scene: &SceneGeometry, orbit: &OrbitSpec, k: usize) -> RenderedView {
    let intrinsics = orbit.intrinsics();
    let pose = orbit.pose(k);
    let inverse = pose.inverse();
    let origin = pose.camera_center();
    let (w, h) = (intrinsics.width, intrinsics.height);
    let mut depth = DepthMap::new(w, h);
    let mut raw_labels = vec![0u32; w * h];
    for row in 0..h {
        for col in 0..w {
            // Camera-frame direction with unit z: the hit parameter t is
            // then exactly the camera-space depth.
            let dir_cam = Vector3::new(
                (col as f64 - intrinsics.cx) / intrinsics.fx,
                (row as f64 - intrinsics.cy) / intrinsics.fy,
                1.0,
            );
            let dir_world = inverse.rotation * dir_cam;
            if let Some((t, id)) = scene.first_hit(&origin, &dir_world) {
                depth.set(col, row, t);
                raw_labels[row * w + col] = id;
            }
        }
    }
    let semantic = SemanticMaskImage {
        width: w,
        height: h,
        labels: raw_labels.clone(),
    };
    let masks = MaskImage::from_labels(w, h, raw_labels.clone()).expect("densify mask");
    // Recover which instance each dense label came from.
    let mut mask_to_instance = vec![0u32; masks.num_masks as usize + 1];
    for (pix, &dense) in masks.labels.iter().enumerate() {
        if dense != 0 {
            mask_to_instance[dense as usize] = raw_labels[pix];
        }
    }
    RenderedView {
        view: CameraView {
            intrinsics,
            pose,
            depth,
            masks,
        },
        semantic,
        mask_to_instance,
    }
}

/// Keeps only the points observable from at least one camera: inside some
/// frustum, in front of the camera, and not occluded along the exact ray
/// from the camera center to the point.
pub fn observable_indices(
    positions: &[Vector3<f64>],
    scene: &SceneGeometry,
    orbit: &OrbitSpec,
) -> Vec<u32> {
    let intrinsics = orbit.intrinsics();
    let cameras: Vec<(Pose, Vector3<f64>)> = (0..orbit.count)
        .map(|k| {
            let pose = orbit.pose(k);
            let center = pose.camera_center();
            (pose, center)
        })
        .collect();
    positions
        .par_iter()
        .enumerate()
        .filter_map(|(i, p)| {
            for (pose, center) in &cameras {
                let pc = pose.transform(p);
                if pc.z <= 0.0 {
                    continue;
                }
                let u = intrinsics.fx * pc.x / pc.z + intrinsics.cx;
                let v = intrinsics.fy * pc.y / pc.z + intrinsics.cy;
                if !(u >= 0.0
                    && u < intrinsics.width as f64
                    && v >= 0.0
                    && v < intrinsics.height as f64)
                {
                    continue;
                }
                let dir = p - center;
                match scene.first_hit(center, &dir) {
                    // The point lies on a surface, so the first hit along
                    // its own ray sits at t=1 unless something is in front.
                    Some((t, _)) if t < 1.0 - 1e-6 => continue,
                    _ => return Some(i as u32),
                }
            }
            None
        })
        .collect()
}
