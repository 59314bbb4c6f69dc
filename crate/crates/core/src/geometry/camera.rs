use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};
use crate::masks2d::MaskImage;

/// Pinhole intrinsics in pixels together with the image size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<()> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::invalid("principal point must be finite"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image dimensions must be non-zero"));
        }
        Ok(())
    }
}

/// Rigid world-to-camera transform stored as rotation + translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a world-to-camera pose from a camera-to-world 4x4 matrix
    /// (the convention scene files use), inverting it on the way in.
    ///
    /// The rotation block is validated for near-orthonormality and then
    /// re-orthonormalized via SVD so downstream math sees an exact rotation
    /// even when the source matrix was stored at float precision.
    pub fn from_cam_to_world(m: &Matrix4<f64>) -> Result<Self> {
        let bottom = m.row(3);
        if (bottom[0] != 0.0) || (bottom[1] != 0.0) || (bottom[2] != 0.0) || (bottom[3] != 1.0) {
            return Err(Error::invalid("pose matrix last row must be [0 0 0 1]"));
        }
        let r = m.fixed_view::<3, 3>(0, 0).into_owned();
        let t = m.fixed_view::<3, 1>(0, 3).into_owned();
        let gram = r * r.transpose();
        let dev = (gram - Matrix3::identity()).norm();
        if !dev.is_finite() || dev > 1e-6 {
            return Err(Error::invalid(format!(
                "pose rotation block not orthonormal (deviation {dev:.3e})"
            )));
        }
        if r.determinant() <= 0.0 {
            return Err(Error::invalid("pose rotation block has non-positive determinant"));
        }
        let r = orthonormalize(&r);
        // world-to-cam: R_wc = R_cw^T, t_wc = -R_cw^T * t_cw
        Ok(Pose {
            rotation: r.transpose(),
            translation: -(r.transpose() * t),
        })
    }

    /// World-to-camera pose from explicit rotation and translation.
    pub fn from_world_to_cam(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Camera center in world coordinates.
    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Camera-to-world 4x4 matrix, row-major semantics as stored on disk.
    pub fn to_cam_to_world(&self) -> Matrix4<f64> {
        let inv = self.inverse();
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&inv.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&inv.translation);
        m
    }

    pub fn validate(&self) -> Result<()> {
        let gram = self.rotation * self.rotation.transpose();
        let dev = (gram - Matrix3::identity()).norm();
        if dev > 1e-9 {
            return Err(Error::invalid(format!(
                "rotation not orthonormal (deviation {dev:.3e})"
            )));
        }
        if (self.rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("rotation determinant must be +1"));
        }
        Ok(())
    }
}

/// Projects a nearly-orthonormal matrix to the closest rotation (polar
/// factor via SVD).
fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v_t");
    let mut rot = u * vt;
    if rot.determinant() < 0.0 {
        // Flip the axis with the smallest singular value.
        let mut u = u;
        let col = u.column(2).into_owned();
        u.set_column(2, &(-col));
        rot = u * vt;
    }
    rot
}

/// Row-major H x W depth image in meters; 0 marks invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize) -> Self {
        DepthMap {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn at(&self, col: usize, row: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.width * self.height {
            return Err(Error::invalid("depth buffer size mismatch"));
        }
        if self.data.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::invalid("depth values must be finite and non-negative"));
        }
        Ok(())
    }
}

/// One posed frame: intrinsics, world-to-camera pose, depth, and the frame's
/// resolved 2D instance masks.
#[derive(Debug, Clone)]
pub struct CameraView {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
    pub depth: DepthMap,
    pub masks: MaskImage,
}

impl CameraView {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        self.pose.validate()?;
        self.depth.validate()?;
        if self.depth.width != self.intrinsics.width || self.depth.height != self.intrinsics.height
        {
            return Err(Error::invalid("depth dimensions do not match intrinsics"));
        }
        if self.masks.width != self.depth.width || self.masks.height != self.depth.height {
            return Err(Error::invalid("mask dimensions do not match depth map"));
        }
        Ok(())
    }
}
