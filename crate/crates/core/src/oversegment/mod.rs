//! Geometry-based oversegmentation: graph-cut superpoints over a k-NN point
//! graph weighted by normal disagreement, plus the superpoint adjacency
//! graph used everywhere downstream.

mod normals;

use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;

pub use normals::{estimate_normals, NormalDiagnostics, NormalOrientation};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::spatial::PointGrid;

/// Default radius (meters) at which superpoints count as neighbors.
pub const DEFAULT_ADJACENCY_RADIUS: f64 = 0.05;

/// A partition of the cloud into superpoints: one label per point plus the
/// member lists per superpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperpointPartition {
    pub labels: Vec<u32>,
    pub members: Vec<Vec<u32>>,
}

impl SuperpointPartition {
    /// Builds a partition from arbitrary per-point segment ids, compacting
    /// them to [0, num_superpoints) by first occurrence.
    pub fn from_labels(raw: &[u32]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::invalid("partition over an empty cloud"));
        }
        let mut remap: std::collections::HashMap<u32, u32> = std::collections::HashMap::new();
        let mut labels = Vec::with_capacity(raw.len());
        let mut members: Vec<Vec<u32>> = Vec::new();
        for (i, &r) in raw.iter().enumerate() {
            let next = members.len() as u32;
            let id = *remap.entry(r).or_insert(next);
            if id == next {
                members.push(Vec::new());
            }
            labels.push(id);
            members[id as usize].push(i as u32);
        }
        Ok(SuperpointPartition { labels, members })
    }

    /// Every point its own superpoint (the point-level fallback mode).
    pub fn singletons(n: usize) -> Self {
        SuperpointPartition {
            labels: (0..n as u32).collect(),
            members: (0..n as u32).map(|i| vec![i]).collect(),
        }
    }

    pub fn num_superpoints(&self) -> usize {
        self.members.len()
    }

    pub fn num_points(&self) -> usize {
        self.labels.len()
    }

    /// Point count per superpoint.
    pub fn sizes(&self) -> Vec<u64> {
        self.members.iter().map(|m| m.len() as u64).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n: usize = self.members.iter().map(|m| m.len()).sum();
        if n != self.labels.len() {
            return Err(Error::Internal("partition member lists do not cover the cloud".into()));
        }
        let mut seen = vec![false; self.labels.len()];
        for (id, member) in self.members.iter().enumerate() {
            if member.is_empty() {
                return Err(Error::Internal(format!("superpoint {id} is empty")));
            }
            for &p in member {
                let p = p as usize;
                if p >= self.labels.len() || seen[p] {
                    return Err(Error::Internal("partition is not a partition".into()));
                }
                seen[p] = true;
                if self.labels[p] != id as u32 {
                    return Err(Error::Internal("labels and members disagree".into()));
                }
            }
        }
        Ok(())
    }
}

/// Undirected superpoint adjacency: sorted neighbor lists, no self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyGraph {
    pub neighbors: Vec<Vec<u32>>,
}

impl AdjacencyGraph {
    pub fn from_edges(num_nodes: usize, edges: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let mut neighbors = vec![Vec::new(); num_nodes];
        for (a, b) in edges {
            if a == b {
                continue;
            }
            neighbors[a as usize].push(b);
            neighbors[b as usize].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        AdjacencyGraph { neighbors }
    }

    pub fn num_nodes(&self) -> usize {
        self.neighbors.len()
    }

    pub fn are_adjacent(&self, a: u32, b: u32) -> bool {
        self.neighbors[a as usize].binary_search(&b).is_ok()
    }

    /// Unordered pairs (i < j) within graph distance 2, tagged with the
    /// distance (1 = direct edge, 2 = one bridge node).
    pub fn pairs_within_two(&self) -> Vec<(u32, u32, u8)> {
        let n = self.num_nodes();
        let mut pairs = Vec::new();
        for i in 0..n as u32 {
            let direct: &[u32] = &self.neighbors[i as usize];
            for &j in direct {
                if j > i {
                    pairs.push((i, j, 1u8));
                }
            }
            let mut second: HashSet<u32> = HashSet::new();
            for &mid in direct {
                for &j in &self.neighbors[mid as usize] {
                    if j > i && !self.are_adjacent(i, j) {
                        second.insert(j);
                    }
                }
            }
            let mut second: Vec<u32> = second.into_iter().collect();
            second.sort_unstable();
            for j in second {
                pairs.push((i, j, 2u8));
            }
        }
        pairs.sort_unstable();
        pairs
    }

    pub fn validate(&self) -> Result<()> {
        for (i, list) in self.neighbors.iter().enumerate() {
            for &j in list {
                if j as usize == i {
                    return Err(Error::Internal(format!("self-loop at node {i}")));
                }
                if j as usize >= self.neighbors.len() {
                    return Err(Error::Internal(format!("edge to unknown node {j}")));
                }
                if !self.neighbors[j as usize].contains(&(i as u32)) {
                    return Err(Error::Internal(format!("asymmetric edge {i} -> {j}")));
                }
            }
        }
        Ok(())
    }
}

/// Graph-cut oversegmentation over the k-NN point graph. Edge weight is
/// 1 - n_p . n_q (clamped at 0); components merge while the joining weight
/// stays below both sides' internal difference plus `threshold_scale / size`.
/// Components smaller than `min_size` are then absorbed across their
/// cheapest boundary edge, and labels are compacted by first occurrence.
pub fn felzenszwalb_segment(
    cloud: &PointCloud,
    knn: usize,
    threshold_scale: f64,
    min_size: usize,
) -> Result<SuperpointPartition> {
    let normals = cloud
        .normals
        .as_ref()
        .ok_or_else(|| Error::invalid("segmentation requires normals"))?;
    let n = cloud.len();
    if n == 0 {
        return Err(Error::invalid("cannot segment an empty cloud"));
    }
    if knn >= n {
        return Err(Error::invalid(format!(
            "knn={knn} must be smaller than the point count {n}"
        )));
    }

    let grid = PointGrid::new(&cloud.positions);
    let mut edges: Vec<(f64, u32, u32)> = (0..n as u32)
        .into_par_iter()
        .map(|i| {
            let mut local = Vec::with_capacity(knn);
            for (j, _) in grid.k_nearest(&cloud.positions[i as usize], knn, Some(i)) {
                let (a, b) = if i < j { (i, j) } else { (j, i) };
                let w = (1.0 - normals[a as usize].dot(&normals[b as usize])).max(0.0);
                local.push((w, a, b));
            }
            local
        })
        .flatten()
        .collect();
    edges.par_sort_unstable_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    edges.dedup_by_key(|e| (e.1, e.2));

    let mut uf = UnionFind::new(n);
    for &(w, a, b) in &edges {
        let ra = uf.find(a);
        let rb = uf.find(b);
        if ra == rb {
            continue;
        }
        let mint = (uf.internal[ra as usize] + threshold_scale / uf.size[ra as usize] as f64)
            .min(uf.internal[rb as usize] + threshold_scale / uf.size[rb as usize] as f64);
        if w <= mint {
            uf.union(ra, rb, w);
        }
    }
    // Absorb undersized components along their cheapest boundary edges.
    if min_size > 1 {
        for &(w, a, b) in &edges {
            let ra = uf.find(a);
            let rb = uf.find(b);
            if ra == rb {
                continue;
            }
            if uf.size[ra as usize] < min_size || uf.size[rb as usize] < min_size {
                uf.union(ra, rb, w);
            }
        }
    }

    let roots: Vec<u32> = (0..n as u32).map(|i| uf.find(i)).collect();
    SuperpointPartition::from_labels(&roots)
}

/// Union-find with per-component size and internal difference; the smaller
/// root index always wins so results do not depend on merge order quirks.
struct UnionFind {
    parent: Vec<u32>,
    size: Vec<usize>,
    internal: Vec<f64>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
            internal: vec![0.0; n],
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let up = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = up;
            x = up;
        }
        x
    }

    fn union(&mut self, ra: u32, rb: u32, weight: f64) {
        let (keep, drop) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[drop as usize] = keep;
        self.size[keep as usize] += self.size[drop as usize];
        self.internal[keep as usize] = self.internal[keep as usize]
            .max(self.internal[drop as usize])
            .max(weight);
    }
}

/// Superpoints are adjacent when any of their points come within `radius`
/// of each other; found with a grid rather than all-pairs scanning.
pub fn superpoint_adjacency(
    cloud: &PointCloud,
    partition: &SuperpointPartition,
    radius: f64,
) -> AdjacencyGraph {
    let grid = PointGrid::with_cell_size(&cloud.positions, radius.max(1e-9));
    let edge_sets: Vec<HashSet<(u32, u32)>> = (0..cloud.len() as u32)
        .into_par_iter()
        .map(|i| {
            let mut local = HashSet::new();
            let li = partition.labels[i as usize];
            for j in grid.within_radius(&cloud.positions[i as usize], radius) {
                let lj = partition.labels[j as usize];
                if li != lj {
                    local.insert((li.min(lj), li.max(lj)));
                }
            }
            local
        })
        .collect();
    let mut edges: HashSet<(u32, u32)> = HashSet::new();
    for set in edge_sets {
        edges.extend(set);
    }
    AdjacencyGraph::from_edges(partition.num_superpoints(), edges)
}

/// Reads a pre-existing oversegmentation in the dataset segs format:
/// a JSON object with a "segIndices" integer array, one id per point.
pub fn load_segs_json(path: &Path, expected_points: usize) -> Result<SuperpointPartition> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::format(path, format!("bad JSON: {e}")))?;
    let indices = value
        .get("segIndices")
        .and_then(|v| v.as_array())
        .ok_or_else(|| Error::format(path, "missing segIndices array"))?;
    let raw: Result<Vec<u32>> = indices
        .iter()
        .map(|v| {
            v.as_u64()
                .map(|x| x as u32)
                .ok_or_else(|| Error::format(path, "segIndices entries must be non-negative integers"))
        })
        .collect();
    let raw = raw?;
    if raw.len() != expected_points {
        return Err(Error::format(
            path,
            format!("segIndices has {} entries for {} points", raw.len(), expected_points),
        ));
    }
    SuperpointPartition::from_labels(&raw)
}

/// Writes a partition in the same segs format so stages can be cached.
pub fn save_segs_json(path: &Path, partition: &SuperpointPartition) -> Result<()> {
    let obj = serde_json::json!({ "segIndices": partition.labels });
    std::fs::write(path, serde_json::to_string(&obj).expect("serialize segs"))
        .map_err(|e| Error::io(path, e))
}
