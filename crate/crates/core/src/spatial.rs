//! Uniform hash-grid index over 3D points for k-nearest-neighbor and
//! fixed-radius queries. Results are sorted by (distance, index) so every
//! query is deterministic regardless of hash iteration order.

use std::collections::HashMap;

use nalgebra::Vector3;

#[derive(Debug)]
pub struct PointGrid {
    cell: f64,
    cells: HashMap<(i64, i64, i64), Vec<u32>>,
    positions: Vec<Vector3<f64>>,
    extent: f64,
}

impl PointGrid {
    /// Builds a grid with an automatically chosen cell size (roughly the
    /// mean point spacing, assuming a surface-like distribution).
    pub fn new(positions: &[Vector3<f64>]) -> Self {
        let cell = estimate_spacing(positions);
        Self::with_cell_size(positions, cell)
    }

    pub fn with_cell_size(positions: &[Vector3<f64>], cell: f64) -> Self {
        let cell = if cell.is_finite() && cell > 0.0 { cell } else { 1.0 };
        let mut cells: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
        for (i, p) in positions.iter().enumerate() {
            cells.entry(key_of(p, cell)).or_default().push(i as u32);
        }
        PointGrid {
            cell,
            cells,
            extent: max_extent(positions),
            positions: positions.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// The `k` nearest points to `query`, excluding `exclude` when given.
    /// Returned as (index, distance) sorted by (distance, index).
    pub fn k_nearest(
        &self,
        query: &Vector3<f64>,
        k: usize,
        exclude: Option<u32>,
    ) -> Vec<(u32, f64)> {
        let available = self.positions.len() - exclude.is_some() as usize;
        let k = k.min(available);
        if k == 0 {
            return Vec::new();
        }
        let center = key_of(query, self.cell);
        let mut found: Vec<(u32, f64)> = Vec::new();
        let mut shell = 0i64;
        loop {
            for key in shell_keys(center, shell) {
                if let Some(indices) = self.cells.get(&key) {
                    for &i in indices {
                        if Some(i) == exclude {
                            continue;
                        }
                        found.push((i, (self.positions[i as usize] - query).norm()));
                    }
                }
            }
            // Any point in a farther shell is at least (shell)·cell away
            // from the query; stop once the k-th candidate strictly beats
            // that bound (strict, so boundary ties still get explored).
            if found.len() >= k {
                found.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
                found.truncate(k.max(found.len().min(4 * k)));
                let kth = found[k - 1].1;
                if kth < shell as f64 * self.cell {
                    found.truncate(k);
                    return found;
                }
            }
            shell += 1;
            if shell as f64 * self.cell > self.extent + 2.0 * self.cell {
                // Collected everything reachable.
                found.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
                found.truncate(k);
                return found;
            }
        }
    }

    /// All points within `radius` of `query`, sorted by index.
    pub fn within_radius(&self, query: &Vector3<f64>, radius: f64) -> Vec<u32> {
        let mut out = Vec::new();
        let r2 = radius * radius;
        let span = (radius / self.cell).ceil() as i64;
        let center = key_of(query, self.cell);
        for dx in -span..=span {
            for dy in -span..=span {
                for dz in -span..=span {
                    let key = (center.0 + dx, center.1 + dy, center.2 + dz);
                    if let Some(indices) = self.cells.get(&key) {
                        for &i in indices {
                            if (self.positions[i as usize] - query).norm_squared() <= r2 {
                                out.push(i);
                            }
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Nearest point within `radius`, ties broken by lower index.
    pub fn nearest_within(&self, query: &Vector3<f64>, radius: f64) -> Option<(u32, f64)> {
        self.within_radius(query, radius)
            .into_iter()
            .map(|i| (i, (self.positions[i as usize] - query).norm()))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)))
    }
}

fn key_of(p: &Vector3<f64>, cell: f64) -> (i64, i64, i64) {
    (
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    )
}

/// Cell keys at exactly Chebyshev distance `shell` from `center`.
fn shell_keys(center: (i64, i64, i64), shell: i64) -> Vec<(i64, i64, i64)> {
    if shell == 0 {
        return vec![center];
    }
    let mut keys = Vec::new();
    for dx in -shell..=shell {
        for dy in -shell..=shell {
            for dz in -shell..=shell {
                if dx.abs().max(dy.abs()).max(dz.abs()) == shell {
                    keys.push((center.0 + dx, center.1 + dy, center.2 + dz));
                }
            }
        }
    }
    keys
}

fn max_extent(positions: &[Vector3<f64>]) -> f64 {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in positions {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (hi - lo).norm()
}

/// Heuristic mean spacing: treats the cloud as a sampled surface and uses
/// sqrt(area / n) over the two largest bounding-box extents.
fn estimate_spacing(positions: &[Vector3<f64>]) -> f64 {
    if positions.len() < 2 {
        return 1.0;
    }
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in positions {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let mut ext = [hi.x - lo.x, hi.y - lo.y, hi.z - lo.z];
    ext.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let area = (ext[1] * ext[2]).max(ext[2] * ext[2] * 1e-6);
    let spacing = (area / positions.len() as f64).sqrt();
    if spacing.is_finite() && spacing > 0.0 {
        spacing
    } else {
        1.0
    }
}
