use nalgebra::Vector3;

use crate::error::{Error, Result};

/// A 3D point cloud in the world frame. Positions are meters; normals, when
/// present, are unit length.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Vector3<f64>>,
    pub normals: Option<Vec<Vector3<f64>>>,
    pub colors: Option<Vec<[u8; 3]>>,
}

impl PointCloud {
    pub fn from_positions(positions: Vec<Vector3<f64>>) -> Self {
        PointCloud {
            positions,
            normals: None,
            colors: None,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Checks the structural invariants: at least one point, finite
    /// coordinates, unit normals, and matching array lengths.
    pub fn validate(&self) -> Result<()> {
        if self.positions.is_empty() {
            return Err(Error::invalid("point cloud has no points"));
        }
        for (i, p) in self.positions.iter().enumerate() {
            if !p.x.is_finite() || !p.y.is_finite() || !p.z.is_finite() {
                return Err(Error::invalid(format!("non-finite coordinate at point {i}")));
            }
        }
        if let Some(normals) = &self.normals {
            if normals.len() != self.positions.len() {
                return Err(Error::invalid(format!(
                    "normal count {} does not match point count {}",
                    normals.len(),
                    self.positions.len()
                )));
            }
            for (i, n) in normals.iter().enumerate() {
                if (n.norm() - 1.0).abs() > 1e-6 {
                    return Err(Error::invalid(format!(
                        "normal at point {i} has length {}, expected 1",
                        n.norm()
                    )));
                }
            }
        }
        if let Some(colors) = &self.colors {
            if colors.len() != self.positions.len() {
                return Err(Error::invalid(format!(
                    "color count {} does not match point count {}",
                    colors.len(),
                    self.positions.len()
                )));
            }
        }
        Ok(())
    }
}
