//! Analytic primitives for the synthetic scenes: surface sampling with
//! exact normals and exact ray intersection, both in a shared object frame
//! (translation + yaw about z).

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use crate::error::{Error, Result};

const RAY_EPS: f64 = 1e-9;

/// A closed solid in its object frame, centered at the origin.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Cuboid { size: Vector3<f64> },
    Sphere { radius: f64 },
    Cylinder { radius: f64, height: f64 },
}

impl Shape {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Shape::Cuboid { size } => size.x > 0.0 && size.y > 0.0 && size.z > 0.0,
            Shape::Sphere { radius } => *radius > 0.0,
            Shape::Cylinder { radius, height } => *radius > 0.0 && *height > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("degenerate shape dimensions"))
        }
    }

    pub fn surface_area(&self) -> f64 {
        match self {
            Shape::Cuboid { size } => 2.0 * (size.x * size.y + size.x * size.z + size.y * size.z),
            Shape::Sphere { radius } => 4.0 * std::f64::consts::PI * radius * radius,
            Shape::Cylinder { radius, height } => {
                2.0 * std::f64::consts::PI * radius * (radius + height)
            }
        }
    }

    /// Radius of the bounding sphere around the object-frame origin.
    pub fn bounding_radius(&self) -> f64 {
        match self {
            Shape::Cuboid { size } => size.norm() / 2.0,
            Shape::Sphere { radius } => *radius,
            Shape::Cylinder { radius, height } => {
                (radius * radius + height * height / 4.0).sqrt()
            }
        }
    }

    /// Vertical distance from the object center to its lowest surface.
    pub fn bottom_offset(&self) -> f64 {
        match self {
            Shape::Cuboid { size } => size.z / 2.0,
            Shape::Sphere { radius } => *radius,
            Shape::Cylinder { height, .. } => height / 2.0,
        }
    }

    /// Samples `surface_area() * density` points (rounded per face) in the
    /// object frame, returning (position, outward normal, face tag).
    pub fn sample_surface(
        &self,
        density: f64,
        rng: &mut impl Rng,
    ) -> Vec<(Vector3<f64>, Vector3<f64>, u8)> {
        let mut out = Vec::new();
        match self {
            Shape::Cuboid { size } => {
                let h = size / 2.0;
                // (fixed axis, sign), tags 0..5.
                let faces = [
                    (0usize, 1.0f64),
                    (0, -1.0),
                    (1, 1.0),
                    (1, -1.0),
                    (2, 1.0),
                    (2, -1.0),
                ];
                for (tag, &(axis, sign)) in faces.iter().enumerate() {
                    let (u_axis, v_axis) = match axis {
                        0 => (1, 2),
                        1 => (0, 2),
                        _ => (0, 1),
                    };
                    let area = size[u_axis] * size[v_axis];
                    let n = (area * density).round() as usize;
                    let mut normal = Vector3::zeros();
                    normal[axis] = sign;
                    for _ in 0..n {
                        let mut p = Vector3::zeros();
                        p[axis] = sign * h[axis];
                        p[u_axis] = rng.random_range(-h[u_axis]..h[u_axis]);
                        p[v_axis] = rng.random_range(-h[v_axis]..h[v_axis]);
                        out.push((p, normal, tag as u8));
                    }
                }
            }
            Shape::Sphere { radius } => {
                let n = (self.surface_area() * density).round() as usize;
                for _ in 0..n {
                    let z: f64 = rng.random_range(-1.0..1.0);
                    let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                    let r = (1.0 - z * z).sqrt();
                    let dir = Vector3::new(r * theta.cos(), r * theta.sin(), z);
                    out.push((dir * *radius, dir, 0));
                }
            }
            Shape::Cylinder { radius, height } => {
                let lateral_area = std::f64::consts::TAU * radius * height;
                let cap_area = std::f64::consts::PI * radius * radius;
                let n_lateral = (lateral_area * density).round() as usize;
                for _ in 0..n_lateral {
                    let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                    let z = rng.random_range(-height / 2.0..height / 2.0);
                    let dir = Vector3::new(theta.cos(), theta.sin(), 0.0);
                    out.push((
                        Vector3::new(dir.x * radius, dir.y * radius, z),
                        dir,
                        0,
                    ));
                }
                for (tag, sign) in [(1u8, 1.0f64), (2, -1.0)] {
                    let n_cap = (cap_area * density).round() as usize;
                    for _ in 0..n_cap {
                        let r = radius * rng.random_range(0.0..1.0f64).sqrt();
                        let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                        out.push((
                            Vector3::new(r * theta.cos(), r * theta.sin(), sign * height / 2.0),
                            Vector3::new(0.0, 0.0, sign),
                            tag,
                        ));
                    }
                }
            }
        }
        out
    }

    /// Smallest positive ray parameter where `origin + t * dir` meets the
    /// surface, in the object frame. `dir` need not be normalized.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match self {
            Shape::Cuboid { size } => {
                let h = size / 2.0;
                let mut tmin = f64::NEG_INFINITY;
                let mut tmax = f64::INFINITY;
                for axis in 0..3 {
                    if dir[axis].abs() < 1e-15 {
                        if origin[axis].abs() > h[axis] {
                            return None;
                        }
                    } else {
                        let inv = 1.0 / dir[axis];
                        let mut t1 = (-h[axis] - origin[axis]) * inv;
                        let mut t2 = (h[axis] - origin[axis]) * inv;
                        if t1 > t2 {
                            std::mem::swap(&mut t1, &mut t2);
                        }
                        tmin = tmin.max(t1);
                        tmax = tmax.min(t2);
                        if tmax < tmin {
                            return None;
                        }
                    }
                }
                if tmin > RAY_EPS {
                    Some(tmin)
                } else if tmax > RAY_EPS {
                    Some(tmax)
                } else {
                    None
                }
            }
            Shape::Sphere { radius } => {
                let a = dir.dot(dir);
                let b = 2.0 * origin.dot(dir);
                let c = origin.dot(origin) - radius * radius;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return None;
                }
                let sqrt_disc = disc.sqrt();
                let t1 = (-b - sqrt_disc) / (2.0 * a);
                let t2 = (-b + sqrt_disc) / (2.0 * a);
                if t1 > RAY_EPS {
                    Some(t1)
                } else if t2 > RAY_EPS {
                    Some(t2)
                } else {
                    None
                }
            }
            Shape::Cylinder { radius, height } => {
                let half = height / 2.0;
                let mut best: Option<f64> = None;
                let mut consider = |t: f64| {
                    if t > RAY_EPS && best.is_none_or(|b| t < b) {
                        best = Some(t);
                    }
                };
                // Lateral surface.
                let a = dir.x * dir.x + dir.y * dir.y;
                if a > 1e-15 {
                    let b = 2.0 * (origin.x * dir.x + origin.y * dir.y);
                    let c = origin.x * origin.x + origin.y * origin.y - radius * radius;
                    let disc = b * b - 4.0 * a * c;
                    if disc >= 0.0 {
                        let sqrt_disc = disc.sqrt();
                        for t in [(-b - sqrt_disc) / (2.0 * a), (-b + sqrt_disc) / (2.0 * a)] {
                            let z = origin.z + t * dir.z;
                            if z.abs() <= half {
                                consider(t);
                            }
                        }
                    }
                }
                // Caps.
                if dir.z.abs() > 1e-15 {
                    for cap_z in [half, -half] {
                        let t = (cap_z - origin.z) / dir.z;
                        let x = origin.x + t * dir.x;
                        let y = origin.y + t * dir.y;
                        if x * x + y * y <= radius * radius {
                            consider(t);
                        }
                    }
                }
                best
            }
        }
    }
}

/// A shape placed in the world: translation plus yaw about +z.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacedObject {
    pub shape: Shape,
    pub position: Vector3<f64>,
    pub yaw: f64,
    pub name: String,
}

impl PlacedObject {
    fn rotation(&self) -> Matrix3<f64> {
        let (s, c) = self.yaw.sin_cos();
        Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    }

    pub fn to_world(&self, p_obj: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p_obj + self.position
    }

    pub fn direction_to_world(&self, d_obj: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * d_obj
    }

    pub fn intersect_world(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let rot_t = self.rotation().transpose();
        let o = rot_t * (origin - self.position);
        let d = rot_t * dir;
        self.shape.intersect(&o, &d)
    }
}

/// The scene's solid geometry: an optional square floor patch at z=0 plus
/// placed objects. Instance ids: floor = 1, object k = 2 + k.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGeometry {
    pub floor_extent: f64,
    pub objects: Vec<PlacedObject>,
}

impl SceneGeometry {
    /// First surface hit along the ray: (parameter t, instance id).
    pub fn first_hit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, u32)> {
        let mut best: Option<(f64, u32)> = None;
        if self.floor_extent > 0.0 && dir.z.abs() > 1e-15 {
            let t = -origin.z / dir.z;
            if t > RAY_EPS {
                let x = origin.x + t * dir.x;
                let y = origin.y + t * dir.y;
                let half = self.floor_extent / 2.0;
                if x.abs() <= half && y.abs() <= half {
                    best = Some((t, 1));
                }
            }
        }
        for (k, obj) in self.objects.iter().enumerate() {
            if let Some(t) = obj.intersect_world(origin, dir) {
                if best.is_none_or(|(bt, _)| t < bt) {
    best = Some((t, 2 + k as u32));
                }
            }
        }
        best
    }
}
