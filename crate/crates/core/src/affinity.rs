//! Superpoint affinities from multi-view 2D masks: per-view mask-label
//! histograms, cosine similarity between histogram pairs, and the
//! visibility-weighted aggregation into a sparse symmetric matrix over
//! superpoint pairs within graph distance 2.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{
    primitive_visibility, project_points_with_tolerance, CameraView, PointCloud, Projection,
};
use crate::masks2d::MaskImage;
use crate::oversegment::{AdjacencyGraph, SuperpointPartition};

/// Sparse count histogram of the mask labels covered by the visible points
/// of one superpoint in one view. Background (label 0) is never stored.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelHistogram {
    counts: Vec<(u32, u32)>,
    norm: f64,
}

impl LabelHistogram {
    pub fn from_counts(mut counts: Vec<(u32, u32)>) -> Self {
        counts.retain(|&(label, count)| label != 0 && count > 0);
        counts.sort_unstable();
        let norm = counts
            .iter()
            .map(|&(_, c)| (c as f64) * (c as f64))
            .sum::<f64>()
            .sqrt();
        LabelHistogram { counts, norm }
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn counts(&self) -> &[(u32, u32)] {
        &self.counts
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn dot(&self, other: &LabelHistogram) -> f64 {
        let mut sum = 0.0;
        let (mut a, mut b) = (self.counts.iter().peekable(), other.counts.iter().peekable());
        while let (Some(&&(la, ca)), Some(&&(lb, cb))) = (a.peek(), b.peek()) {
            match la.cmp(&lb) {
                std::cmp::Ordering::Less => {
                    a.next();
                }
                std::cmp::Ordering::Greater => {
                    b.next();
                }
                std::cmp::Ordering::Equal => {
                    sum += ca as f64 * cb as f64;
                    a.next();
                    b.next();
                }
            }
        }
        sum
    }
}

/// Counts the mask label under each visible point of the superpoint.
/// Invisible points and background pixels contribute nothing.
pub fn compute_histogram(
    superpoint: &[u32],
    projection: &Projection,
    masks: &MaskImage,
) -> LabelHistogram {
    let mut counts: HashMap<u32, u32> = HashMap::new();
    for &p in superpoint {
        let p = p as usize;
        if !projection.visible[p] {
            continue;
        }
        if let Some((col, row)) = projection.nearest_pixel(p, masks.width, masks.height) {
            let label = masks.at(col, row);
            if label != 0 {
                *counts.entry(label).or_insert(0) += 1;
            }
        }
    }
    LabelHistogram::from_counts(counts.into_iter().collect())
}

/// Cosine similarity between two histograms; None when either is empty
/// (the view then carries no evidence for the pair).
pub fn single_view_affinity(a: &LabelHistogram, b: &LabelHistogram) -> Option<f64> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    Some(a.dot(b) / (a.norm() * b.norm()))
}

/// Visibility-weighted mean of per-view affinities. Each view weighs
/// v_i * v_j; views with no evidence weigh zero. Returns the final affinity
/// and the total weight; zero total weight means no evidence.
pub fn aggregate_affinity(per_view: &[(Option<f64>, f64, f64)]) -> (Option<f64>, f64) {
    let mut weighted_sum = 0.0;
    let mut weight_total = 0.0;
    for &(affinity, vi, vj) in per_view {
        if let Some(a) = affinity {
            let w = vi * vj;
            weighted_sum += w * a;
            weight_total += w;
        }
    }
    if weight_total > 0.0 {
        (Some(weighted_sum / weight_total), weight_total)
    } else {
        (None, 0.0)
    }
}

/// Sparse symmetric affinity matrix over superpoint pairs within graph
/// distance 2. Each unordered pair is stored once, so symmetry is exact.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    pairs: Vec<PairCell>,
    index: HashMap<(u32, u32), u32>,
    num_nodes: usize,
    min_weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct PairCell {
    i: u32,
    j: u32,
    distance: u8,
    weighted_sum: f64,
    weight_total: f64,
}

/// One finalized pair entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairEntry {
    pub i: u32,
    pub j: u32,
    pub distance: u8,
    /// None when the pair was never co-observed with evidence.
    pub affinity: Option<f64>,
    pub weight_total: f64,
}

impl AffinityMatrix {
    /// Allocates cells for every pair of the adjacency graph within
    /// distance 2, all initially holding no evidence.
    pub fn new(adjacency: &AdjacencyGraph) -> Self {
        Self::with_min_weight(adjacency, 0.0)
    }

    /// Same, with a minimum total weight below which a pair is demoted to
    /// no-evidence at read time.
    pub fn with_min_weight(adjacency: &AdjacencyGraph, min_weight: f64) -> Self {
        let pairs: Vec<PairCell> = adjacency
            .pairs_within_two()
            .into_iter()
            .map(|(i, j, distance)| PairCell {
                i,
                j,
                distance,
                weighted_sum: 0.0,
                weight_total: 0.0,
            })
            .collect();
        let index = pairs
            .iter()
            .enumerate()
            .map(|(idx, c)| ((c.i, c.j), idx as u32))
            .collect();
        AffinityMatrix {
            pairs,
            index,
            num_nodes: adjacency.num_nodes(),
            min_weight,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }

    fn cell_index(&self, i: u32, j: u32) -> Option<u32> {
        let key = (i.min(j), i.max(j));
        self.index.get(&key).copied()
    }

    /// Adds one view's contribution to a pair.
    pub fn accumulate(&mut self, i: u32, j: u32, affinity: f64, weight: f64) -> Result<()> {
        let idx = self
            .cell_index(i, j)
            .ok_or_else(|| Error::Internal(format!("pair ({i},{j}) is outside distance 2")))?;
        let cell = &mut self.pairs[idx as usize];
        cell.weighted_sum += weight * affinity;
        cell.weight_total += weight;
        Ok(())
    }

    /// Finalized pair lookup; `affinity` is None for no-evidence pairs.
    pub fn get(&self, i: u32, j: u32) -> Option<PairEntry> {
        self.cell_index(i, j).map(|idx| self.entry(idx as usize))
    }

    /// Finalized affinity if the pair has evidence.
    pub fn evidence(&self, i: u32, j: u32) -> Option<f64> {
        self.get(i, j).and_then(|e| e.affinity)
    }

    fn entry(&self, idx: usize) -> PairEntry {
        let cell = &self.pairs[idx];
        let affinity = if cell.weight_total > 0.0 && cell.weight_total >= self.min_weight {
            Some(cell.weighted_sum / cell.weight_total)
        } else {
            None
        };
        PairEntry {
            i: cell.i,
            j: cell.j,
            distance: cell.distance,
            affinity,
            weight_total: cell.weight_total,
        }
    }

    /// All pairs in (i, j) order.
    pub fn entries(&self) -> impl Iterator<Item = PairEntry> + '_ {
        (0..self.pairs.len()).map(|idx| self.entry(idx))
    }

    /// Writes evidence-bearing pairs as text lines "i j affinity weight".
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "# i j affinity weight_total").map_err(|e| Error::io(path, e))?;
        for cell in &self.pairs {
            if cell.weight_total > 0.0 {
                let affinity = cell.weighted_sum / cell.weight_total;
                writeln!(w, "{} {} {} {}", cell.i, cell.j, affinity, cell.weight_total)
                    .map_err(|e| Error::io(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reloads a dump produced by [`AffinityMatrix::save`] against the same
    /// adjacency graph.
    pub fn load(path: &Path, adjacency: &AdjacencyGraph, min_weight: f64) -> Result<Self> {
        let mut matrix = Self::with_min_weight(adjacency, min_weight);
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(Error::format(path, format!("line {}: expected 4 fields", lineno + 1)));
            }
            let i: u32 = fields[0]
                .parse()
                .map_err(|_| Error::format(path, format!("line {}: bad index", lineno + 1)))?;
            let j: u32 = fields[1]
                .parse()
                .map_err(|_| Error::format(path, format!("line {}: bad index", lineno + 1)))?;
            let affinity: f64 = fields[2]
                .parse()
                .map_err(|_| Error::format(path, format!("line {}: bad affinity", lineno + 1)))?;
            let weight: f64 = fields[3]
                .parse()
                .map_err(|_| Error::format(path, format!("line {}: bad weight", lineno + 1)))?;
            let idx = matrix.cell_index(i, j).ok_or_else(|| {
                Error::format(
                    path,
                    format!("line {}: pair ({i},{j}) not within distance 2 of this graph", lineno + 1),
                )
            })?;
            let cell = &mut matrix.pairs[idx as usize];
            cell.weighted_sum = affinity * weight;
            cell.weight_total = weight;
        }
        Ok(matrix)
    }

    /// Structural checks: values in range, weights non-negative.
    pub fn validate(&self) -> Result<()> {
        for entry in self.entries() {
            if entry.weight_total < 0.0 {
                return Err(Error::Internal("negative pair weight".into()));
            }
            if let Some(a) = entry.affinity {
                if !(-1e-12..=1.0 + 1e-12).contains(&a) {
                    return Err(Error::Internal(format!(
                        "affinity {a} outside [0,1] for pair ({},{})",
                        entry.i, entry.j
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Options for matrix construction.
#[derive(Debug, Clone, Copy)]
pub struct AffinityConfig {
    /// Depth-consistency tolerance for the visibility test, meters.
    pub depth_tolerance: f64,
    /// Pairs whose accumulated weight stays below this are no-evidence.
    pub min_pair_weight: f64,
}

impl Default for AffinityConfig {
    fn default() -> Self {
        AffinityConfig {
            depth_tolerance: crate::geometry::DEFAULT_DEPTH_TOLERANCE,
            min_pair_weight: 0.0,
        }
    }
}

/// One view's accumulation rows: (pair index, affinity, weight).
type ViewContributions = Vec<(u32, f64, f64)>;

/// Construction counters surfaced so frame discards are never silent.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AffinityStats {
    /// (view, primitive) combinations discarded for zero visibility.
    pub zero_visibility_discards: usize,
    pub views: usize,
}

/// Builds the affinity matrix over all superpoint pairs within graph
/// distance 2 by accumulating visibility-weighted per-view affinities.
/// Views are processed in parallel but merged in order, so the result is
/// identical for any thread count.
pub fn build_affinity_matrix(
    cloud: &PointCloud,
    partition: &SuperpointPartition,
    adjacency: &AdjacencyGraph,
    views: &[CameraView],
    config: &AffinityConfig,
) -> Result<AffinityMatrix> {
    build_affinity_matrix_with_stats(cloud, partition, adjacency, views, config)
        .map(|(matrix, _)| matrix)
}

/// Like [`build_affinity_matrix`], also reporting discard counters.
pub fn build_affinity_matrix_with_stats(
    cloud: &PointCloud,
    partition: &SuperpointPartition,
    adjacency: &AdjacencyGraph,
    views: &[CameraView],
    config: &AffinityConfig,
) -> Result<(AffinityMatrix, AffinityStats)> {
    if partition.num_points() != cloud.len() {
        return Err(Error::invalid("partition does not cover the cloud"));
    }
    if adjacency.num_nodes() != partition.num_superpoints() {
        return Err(Error::invalid("adjacency graph does not match the partition"));
    }
    let mut matrix = AffinityMatrix::with_min_weight(adjacency, config.min_pair_weight);
    let pair_keys: Vec<(u32, u32)> = matrix.pairs.iter().map(|c| (c.i, c.j)).collect();

    // Per-view contributions: (pair index, affinity, weight).
    let contributions: Vec<(ViewContributions, usize)> = views
        .par_iter()
        .map(|view| {
            let projection = project_points_with_tolerance(cloud, view, config.depth_tolerance);
            let visibility: Vec<f64> = partition
                .members
                .iter()
                .map(|members| primitive_visibility(members, &projection).unwrap_or(0.0))
                .collect();
            let histograms: Vec<Option<LabelHistogram>> = partition
                .members
                .iter()
                .enumerate()
                .map(|(i, members)| {
                    // A primitive invisible in this view is discarded for it.
                    if visibility[i] > 0.0 {
                        Some(compute_histogram(members, &projection, &view.masks))
                    } else {
                        None
                    }
                })
                .collect();
            let discards = histograms.iter().filter(|h| h.is_none()).count();
            let mut out = Vec::new();
            for (idx, &(i, j)) in pair_keys.iter().enumerate() {
                let (Some(hi), Some(hj)) = (&histograms[i as usize], &histograms[j as usize])
                else {
                    continue;
                };
                if let Some(a) = single_view_affinity(hi, hj) {
                    let w = visibility[i as usize] * visibility[j as usize];
                    if w > 0.0 {
                        out.push((idx as u32, a, w));
                    }
                }
            }
            (out, discards)
        })
        .collect();

    let mut stats = AffinityStats {
        zero_visibility_discards: 0,
        views: views.len(),
    };
    for (view_contrib, discards) in contributions {
        stats.zero_visibility_discards += discards;
        for (idx, affinity, weight) in view_contrib {
            let cell = &mut matrix.pairs[idx as usize];
            cell.weighted_sum += weight * affinity;
            cell.weight_total += weight;
        }
    }
    matrix.validate()?;
    Ok((matrix, stats))
}
