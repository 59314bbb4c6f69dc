use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::camera::{CameraView, DepthMap, Intrinsics, Pose};
use crate::geometry::cloud::PointCloud;

/// Default depth-consistency tolerance in meters for the visibility test.
pub const DEFAULT_DEPTH_TOLERANCE: f64 = 0.05;

/// Per-point projection of a cloud into one view: continuous pixel
/// coordinates, camera-space depth, and the visibility verdict.
#[derive(Debug, Clone)]
pub struct Projection {
    pub pixel: Vec<[f64; 2]>,
    pub cam_depth: Vec<f64>,
    pub visible: Vec<bool>,
}

impl Projection {
    pub fn len(&self) -> usize {
        self.visible.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visible.is_empty()
    }

    /// Nearest integer pixel of point `i`, or None when the continuous
    /// coordinates fall outside the image.
    #[inline]
    pub fn nearest_pixel(&self, i: usize, width: usize, height: usize) -> Option<(usize, usize)> {
        nearest_pixel(self.pixel[i][0], self.pixel[i][1], width, height)
    }
}

/// Maps continuous pixel coordinates to the nearest pixel index. Integer
/// coordinates are pixel centers; anything in [0, W) x [0, H) is in bounds.
#[inline]
pub fn nearest_pixel(u: f64, v: f64, width: usize, height: usize) -> Option<(usize, usize)> {
    if !(u >= 0.0 && u < width as f64 && v >= 0.0 && v < height as f64) {
        return None;
    }
    let col = (u.round() as usize).min(width - 1);
    let row = (v.round() as usize).min(height - 1);
    Some((col, row))
}

/// Projects every cloud point into the view and runs the depth-consistency
/// visibility test at the given tolerance.
pub fn project_points_with_tolerance(
    cloud: &PointCloud,
    view: &CameraView,
    tolerance: f64,
) -> Projection {
    let n = cloud.len();
    let mut pixel = Vec::with_capacity(n);
    let mut cam_depth = Vec::with_capacity(n);
    for p in &cloud.positions {
        let pc = view.pose.transform(p);
        if pc.z != 0.0 {
            pixel.push([
                view.intrinsics.fx * pc.x / pc.z + view.intrinsics.cx,
                view.intrinsics.fy * pc.y / pc.z + view.intrinsics.cy,
            ]);
        } else {
            pixel.push([f64::NAN, f64::NAN]);
        }
        cam_depth.push(pc.z);
    }
    let visible = visibility_test(&pixel, &cam_depth, &view.depth, tolerance);
    Projection {
        pixel,
        cam_depth,
        visible,
    }
}

/// Projection with the default depth tolerance.
pub fn project_points(cloud: &PointCloud, view: &CameraView) -> Projection {
    project_points_with_tolerance(cloud, view, DEFAULT_DEPTH_TOLERANCE)
}

/// A point is visible iff it lies in front of the camera, lands in bounds,
/// its nearest depth pixel is valid, and the camera-space depth agrees with
/// the stored depth within `tolerance` meters.
pub fn visibility_test(
    pixel: &[[f64; 2]],
    cam_depth: &[f64],
    depth: &DepthMap,
    tolerance: f64,
) -> Vec<bool> {
    pixel
        .iter()
        .zip(cam_depth)
        .map(|(px, &z)| {
            if z <= 0.0 {
                return false;
            }
            match nearest_pixel(px[0], px[1], depth.width, depth.height) {
                Some((col, row)) => {
                    let d = depth.at(col, row);
                    d > 0.0 && (z - d).abs() <= tolerance
                }
                None => false,
            }
        })
        .collect()
}

/// Fraction of a superpoint's points that are visible in the projection.
pub fn primitive_visibility(superpoint: &[u32], projection: &Projection) -> Result<f64> {
    if superpoint.is_empty() {
        return Err(Error::invalid(
            "visibility of an empty superpoint is undefined (degenerate partition)",
        ));
    }
    let visible = superpoint
        .iter()
        .filter(|&&p| projection.visible[p as usize])
        .count();
    Ok(visible as f64 / superpoint.len() as f64)
}

/// Lifts an image-space sample (pixel + depth) back to a world-space point
/// through the inverse camera model.
pub fn backproject(intrinsics: &Intrinsics, pose: &Pose, u: f64, v: f64, depth: f64) -> Vector3<f64> {
    let cam = Vector3::new(
        (u - intrinsics.cx) / intrinsics.fx * depth,
        (v - intrinsics.cy) / intrinsics.fy * depth,
        depth,
    );
    pose.inverse().transform(&cam)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masks2d::MaskImage;
    use nalgebra::{Matrix3, Rotation3};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn test_view(width: usize, height: usize, depth_value: f64) -> CameraView {
        let mut depth = DepthMap::new(width, height);
        depth.data.fill(depth_value);
        CameraView {
            intrinsics: Intrinsics {
                fx: 100.0,
                fy: 100.0,
                cx: 50.0,
                cy: 50.0,
                width,
                height,
            },
            pose: Pose::identity(),
            depth,
            masks: MaskImage::empty(width, height),
        }
    }

    #[test]
    fn on_axis_point_projects_to_principal_point() {
        let cloud = PointCloud::from_positions(vec![Vector3::new(0.0, 0.0, 1.0)]);
        let view = test_view(100, 100, 1.0);
        let proj = project_points(&cloud, &view);
        assert!((proj.pixel[0][0] - 50.0).abs() < 1e-12);
        assert!((proj.pixel[0][1] - 50.0).abs() < 1e-12);
        assert!((proj.cam_depth[0] - 1.0).abs() < 1e-12);
        assert!(proj.visible[0]);
    }

    #[test]
    fn point_behind_camera_is_invisible() {
        let cloud = PointCloud::from_positions(vec![Vector3::new(0.0, 0.0, -1.0)]);
        let view = test_view(100, 100, 1.0);
        let proj = project_points(&cloud, &view);
        assert!(!proj.visible[0]);
    }

    #[test]
    fn random_points_match_matrix_oracle() {
        // Independent oracle: build the 3x4 projection chain explicitly and
        // compare pixels for random points under a random rigid pose.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rot = Rotation3::from_euler_angles(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let t = Vector3::new(
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
        );
        let pose = Pose::from_world_to_cam(*rot.matrix(), t);
        let mut view = test_view(100, 100, 0.0);
        view.pose = pose;

        let points: Vec<Vector3<f64>> = (0..10)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(2.0..5.0),
                )
            })
            .collect();
        let cloud = PointCloud::from_positions(points.clone());
        let proj = project_points(&cloud, &view);

        let k = Matrix3::new(100.0, 0.0, 50.0, 0.0, 100.0, 50.0, 0.0, 0.0, 1.0);
        for (i, p) in points.iter().enumerate() {
            let pc = rot.matrix() * p + t;
            let hom = k * pc;
            if pc.z > 0.0 {
                let u = hom.x / hom.z;
                let v = hom.y / hom.z;
                assert!((proj.pixel[i][0] - u).abs() < 1e-9, "u mismatch at {i}");
                assert!((proj.pixel[i][1] - v).abs() < 1e-9, "v mismatch at {i}");
            } else {
                assert!(!proj.visible[i]);
            }
        }
    }

    #[test]
    fn visibility_within_tolerance() {
        let mut depth = DepthMap::new(4, 4);
        depth.data.fill(2.01);
        let visible = visibility_test(&[[1.0, 1.0]], &[2.0], &depth, 0.05);
        assert!(visible[0]);
    }

    #[test]
    fn occluded_point_is_invisible() {
        let mut depth = DepthMap::new(4, 4);
        depth.data.fill(1.0);
        let visible = visibility_test(&[[1.0, 1.0]], &[3.0], &depth, 0.05);
        assert!(!visible[0]);
    }

    #[test]
    fn invalid_depth_pixel_is_invisible() {
        let depth = DepthMap::new(4, 4);
        let visible = visibility_test(&[[1.0, 1.0]], &[1.0], &depth, 0.05);
        assert!(!visible[0]);
    }

    #[test]
    fn out_of_bounds_is_invisible() {
        let mut depth = DepthMap::new(4, 4);
        depth.data.fill(1.0);
        let visible = visibility_test(&[[-0.2, 1.0], [4.0, 1.0]], &[1.0, 1.0], &depth, 0.05);
        assert!(!visible[0]);
        assert!(!visible[1]);
    }

    #[test]
    fn primitive_visibility_counts() {
        let proj = Projection {
            pixel: vec![[0.0, 0.0]; 20],
            cam_depth: vec![1.0; 20],
            visible: (0..20).map(|i| i < 7).collect(),
        };
        let all: Vec<u32> = (0..20).collect();
        assert!((primitive_visibility(&all, &proj).unwrap() - 0.35).abs() < 1e-12);
        let none: Vec<u32> = (7..20).collect();
        assert_eq!(primitive_visibility(&none, &proj).unwrap(), 0.0);
        let seen: Vec<u32> = (0..7).collect();
        assert_eq!(primitive_visibility(&seen, &proj).unwrap(), 1.0);
        assert!(primitive_visibility(&[], &proj).is_err());
    }

    #[test]
    fn round_trip_recovers_world_position() {
        let rot = Rotation3::from_euler_angles(0.2, -0.7, 0.1);
        let pose = Pose::from_world_to_cam(*rot.matrix(), Vector3::new(0.1, 0.2, 0.3));
        let mut view = test_view(100, 100, 3.0);
        view.pose = pose;
        let p = Vector3::new(0.4, -0.2, 2.5);
        let cloud = PointCloud::from_positions(vec![p]);
        let proj = project_points(&cloud, &view);
        let back = backproject(
            &view.intrinsics,
            &view.pose,
            proj.pixel[0][0],
            proj.pixel[0][1],
            proj.cam_depth[0],
        );
        assert!((back - p).norm() < 1e-6);
    }

    #[test]
    fn rigid_invariance_of_projection() {
        // Moving the cloud by T and compensating the pose leaves pixels put.
        let t_rot = Rotation3::from_euler_angles(0.5, 0.2, -0.4);
        let t_vec = Vector3::new(1.0, -2.0, 0.7);
        let rot = Rotation3::from_euler_angles(0.1, 0.3, 0.0);
        let pose = Pose::from_world_to_cam(*rot.matrix(), Vector3::new(0.0, 0.0, 1.0));

        let points = vec![Vector3::new(0.2, 0.1, 2.0), Vector3::new(-0.3, 0.4, 3.0)];
        let cloud = PointCloud::from_positions(points.clone());
        let mut view = test_view(100, 100, 0.0);
        view.pose = pose;
        let base = project_points(&cloud, &view);

        let moved: Vec<Vector3<f64>> = points.iter().map(|p| t_rot * p + t_vec).collect();
        let comp_rot = pose.rotation * t_rot.matrix().transpose();
        let comp_t = pose.translation - comp_rot * t_vec;
        let mut view2 = test_view(100, 100, 0.0);
        view2.pose = Pose::from_world_to_cam(comp_rot, comp_t);
        let moved_proj = project_points(&PointCloud::from_positions(moved), &view2);

        for i in 0..points.len() {
            assert!((base.pixel[i][0] - moved_proj.pixel[i][0]).abs() < 1e-9);
            assert!((base.pixel[i][1] - moved_proj.pixel[i][1]).abs() < 1e-9);
            assert!((base.cam_depth[i] - moved_proj.cam_depth[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn visibility_monotone_in_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut depth = DepthMap::new(8, 8);
        for d in depth.data.iter_mut() {
            *d = rng.random_range(0.0..3.0);
        }
        let pixel: Vec<[f64; 2]> = (0..50)
            .map(|_| [rng.random_range(-1.0..9.0), rng.random_range(-1.0..9.0)])
            .collect();
        let cam_depth: Vec<f64> = (0..50).map(|_| rng.random_range(-0.5..3.5)).collect();
        let lo = visibility_test(&pixel, &cam_depth, &depth, 0.02);
        let hi = visibility_test(&pixel, &cam_depth, &depth, 0.5);
        for i in 0..50 {
            assert!(!lo[i] || hi[i], "tolerance monotonicity violated at {i}");
        }
    }
}
