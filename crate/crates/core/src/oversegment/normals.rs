use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::spatial::PointGrid;

/// How to pick the sign of each estimated normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormalOrientation {
    /// Flip each normal toward a reference position (e.g. the mean camera
    /// center) as seen from the point.
    Toward(Vector3<f64>),
    /// Flip toward +z, with lexicographic tie-breaking on vertical surfaces.
    PlusZ,
}

/// Counters for pathologies encountered during estimation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NormalDiagnostics {
    /// Neighborhoods with zero covariance; their normals default to +z.
    pub degenerate: usize,
}

/// Estimates a unit normal per point as the smallest-eigenvalue eigenvector
/// of the covariance of the point's k-nearest neighborhood.
pub fn estimate_normals(
    cloud: &PointCloud,
    k: usize,
    orientation: NormalOrientation,
) -> Result<(PointCloud, NormalDiagnostics)> {
    let n = cloud.len();
    if k < 3 {
        return Err(Error::invalid("normal estimation needs k >= 3"));
    }
    if n < k {
        return Err(Error::invalid(format!(
            "normal estimation needs at least k={k} points, cloud has {n}"
        )));
    }
    let grid = PointGrid::new(&cloud.positions);

    let results: Vec<(Vector3<f64>, bool)> = cloud
        .positions
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let neighbors = grid.k_nearest(p, k, Some(i as u32));
            // Covariance over the point plus its neighbors.
            let mut mean = *p;
            for (j, _) in &neighbors {
                mean += cloud.positions[*j as usize];
            }
            mean /= (neighbors.len() + 1) as f64;
            let mut cov = Matrix3::zeros();
            let d0 = p - mean;
            cov += d0 * d0.transpose();
            for (j, _) in &neighbors {
                let d = cloud.positions[*j as usize] - mean;
                cov += d * d.transpose();
            }
            if cov.trace() < 1e-24 {
                return (Vector3::new(0.0, 0.0, 1.0), true);
            }
            let eigen = cov.symmetric_eigen();
            let min_idx = eigen
                .eigenvalues
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(idx, _)| idx)
                .unwrap();
            let mut normal = eigen.eigenvectors.column(min_idx).into_owned();
            let norm = normal.norm();
            if !(norm.is_finite() && norm > 0.0) {
                return (Vector3::new(0.0, 0.0, 1.0), true);
            }
            normal /= norm;
            orient(&mut normal, p, orientation);
            (normal, false)
        })
        .collect();

    let degenerate = results.iter().filter(|(_, d)| *d).count();
    let normals = results.into_iter().map(|(n, _)| n).collect();
    let mut out = cloud.clone();
    out.normals = Some(normals);
    Ok((out, NormalDiagnostics { degenerate }))
}

fn orient(normal: &mut Vector3<f64>, point: &Vector3<f64>, orientation: NormalOrientation) {
    match orientation {
        NormalOrientation::Toward(target) => {
            let toward = target - point;
            let d = normal.dot(&toward);
            if d < 0.0 {
                *normal = -*normal;
            } else if d == 0.0 {
                orient_plus_z(normal);
            }
        }
        NormalOrientation::PlusZ => orient_plus_z(normal),
    }
}

fn orient_plus_z(normal: &mut Vector3<f64>) {
    let flip = if normal.z != 0.0 {
        normal.z < 0.0
    } else if normal.y != 0.0 {
        normal.y < 0.0
    } else {
        normal.x < 0.0
    };
    if flip {
        *normal = -*normal;
    }
}
