//! Merging superpoints into instance regions: seeded breadth-first growth
//! where a candidate joins the current region when the region-to-candidate
//! affinity clears the stage threshold. The region-level affinity is a
//! distance-decayed, size-weighted average over region members within graph
//! distance 2 of the candidate, and a descending threshold schedule re-grows
//! collapsed regions stage by stage.

use std::collections::VecDeque;

use crate::affinity::AffinityMatrix;
use crate::error::{Error, Result};
use crate::oversegment::{AdjacencyGraph, SuperpointPartition};

/// Per-superpoint instance ids (1-based; 0 only during growth) plus region
/// member lists.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionLabeling {
    pub instance_id: Vec<u32>,
    pub members: Vec<Vec<u32>>,
}

impl RegionLabeling {
    fn from_ids(instance_id: Vec<u32>) -> Self {
        let regions = instance_id.iter().copied().max().unwrap_or(0) as usize;
        let mut members = vec![Vec::new(); regions];
        for (node, &id) in instance_id.iter().enumerate() {
            members[id as usize - 1].push(node as u32);
        }
        RegionLabeling {
            instance_id,
            members,
        }
    }

    pub fn num_regions(&self) -> usize {
        self.members.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.instance_id.contains(&0) {
            return Err(Error::Internal("unlabeled node after growth".into()));
        }
        for (r, members) in self.members.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::Internal(format!("region {} is empty", r + 1)));
            }
        }
        Ok(())
    }
}

/// How a candidate is compared against the growing region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeCriterion {
    /// Distance-decayed, size-weighted average over region members within
    /// graph distance 2 of the candidate.
    MultiLevel,
    /// Plain pairwise test against the popped node only.
    PairwiseVanilla,
}

/// Threshold schedule and decay for progressive growing.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthConfig {
    /// Strictly descending stage thresholds in (0, 1].
    pub thresholds: Vec<f64>,
    /// Distance decay applied as gamma^d, d in {1, 2}.
    pub gamma: f64,
    pub criterion: MergeCriterion,
}

impl Default for GrowthConfig {
    fn default() -> Self {
        GrowthConfig {
            thresholds: vec![0.9, 0.8, 0.7],
            gamma: 0.5,
            criterion: MergeCriterion::MultiLevel,
        }
    }
}

impl GrowthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::invalid("at least one growth threshold is required"));
        }
        for pair in self.thresholds.windows(2) {
            if pair[1] >= pair[0] {
                return Err(Error::invalid("thresholds must be strictly descending"));
            }
        }
        if self.thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return Err(Error::invalid("thresholds must lie in (0, 1]"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid("gamma must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// One stage's node graph: sizes in points, direct adjacency, and for every
/// node the (neighbor, distance, affinity) list covering distance <= 2.
#[derive(Debug, Clone)]
pub struct StageGraph {
    pub sizes: Vec<u64>,
    pub neighbors: Vec<Vec<u32>>,
    /// Per node, sorted by the other node's id.
    reach: Vec<Vec<ReachEntry>>,
}

#[derive(Debug, Clone, Copy)]
struct ReachEntry {
    other: u32,
    distance: u8,
    affinity: Option<f64>,
}

impl StageGraph {
    pub fn num_nodes(&self) -> usize {
        self.sizes.len()
    }

    /// Assembles the stage-1 graph from the superpoint partition, its
    /// adjacency, and the finalized affinity matrix.
    pub fn from_superpoints(
        partition: &SuperpointPartition,
        adjacency: &AdjacencyGraph,
        matrix: &AffinityMatrix,
    ) -> Result<Self> {
        if adjacency.num_nodes() != partition.num_superpoints()
            || matrix.num_nodes() != partition.num_superpoints()
        {
            return Err(Error::invalid("partition, adjacency and matrix sizes disagree"));
        }
        let n = partition.num_superpoints();
        let mut reach: Vec<Vec<ReachEntry>> = vec![Vec::new(); n];
        for entry in matrix.entries() {
            reach[entry.i as usize].push(ReachEntry {
                other: entry.j,
                distance: entry.distance,
                affinity: entry.affinity,
            });
            reach[entry.j as usize].push(ReachEntry {
                other: entry.i,
                distance: entry.distance,
                affinity: entry.affinity,
            });
        }
        for list in &mut reach {
            list.sort_by_key(|e| e.other);
        }
        Ok(StageGraph {
            sizes: partition.sizes(),
            neighbors: adjacency.neighbors.clone(),
            reach,
        })
    }

    fn pair(&self, a: u32, b: u32) -> Option<&ReachEntry> {
        self.reach[a as usize]
            .binary_search_by_key(&b, |e| e.other)
            .ok()
            .map(|idx| &self.reach[a as usize][idx])
    }
}

/// Region-versus-candidate affinity: gamma^d size-weighted average of the
/// pairwise affinities between the candidate and region members within
/// distance 2. No-evidence pairs are skipped on both sides of the ratio;
/// None means nothing contributed.
pub fn region_node_affinity(
    graph: &StageGraph,
    region: &[bool],
    candidate: u32,
    gamma: f64,
) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for entry in &graph.reach[candidate as usize] {
        if !region[entry.other as usize] {
            continue;
        }
        if let Some(a) = entry.affinity {
            let beta = gamma.powi(entry.distance as i32) * graph.sizes[entry.other as usize] as f64;
            num += beta * a;
            den += beta;
        }
    }
    (den > 0.0).then(|| num / den)
}

/// Seeded breadth-first growth over the stage graph. Seeds iterate in
/// ascending node id; a popped node's unlabeled neighbors join the region
/// when the criterion value is strictly above `tau`. Every node ends up
/// labeled; region ids count up in seed order.
pub fn grow_stage(graph: &StageGraph, tau: f64, gamma: f64, criterion: MergeCriterion) -> RegionLabeling {
    let n = graph.num_nodes();
    let mut labels = vec![0u32; n];
    let mut in_region = vec![false; n];
    let mut next_id = 1u32;
    for seed in 0..n as u32 {
        if labels[seed as usize] != 0 {
            continue;
        }
        let id = next_id;
        next_id += 1;
        labels[seed as usize] = id;
        in_region[seed as usize] = true;
        let mut queue = VecDeque::new();
        queue.push_back(seed);
        let mut region_members = vec![seed];
        while let Some(v) = queue.pop_front() {
            for &j in &graph.neighbors[v as usize] {
                if labels[j as usize] != 0 {
                    continue;
                }
                let score = match criterion {
                    MergeCriterion::MultiLevel => {
                        region_node_affinity(graph, &in_region, j, gamma)
                    }
                    MergeCriterion::PairwiseVanilla => {
                        graph.pair(v, j).and_then(|e| e.affinity)
                    }
                };
                if let Some(a) = score {
                    if a > tau {
                        labels[j as usize] = id;
                        in_region[j as usize] = true;
                        region_members.push(j);
                        queue.push_back(j);
                    }
                }
            }
        }
        for m in region_members {
            in_region[m as usize] = false;
        }
    }
    RegionLabeling::from_ids(labels)
}

/// Collapses a labeling into the next stage's graph: one node per region,
/// node size = summed member points, adjacency = any member adjacency, and
/// node-pair affinity = the gamma^d size-product weighted average over
/// member cross-pairs within distance 2 (no-evidence pairs skipped).
pub fn collapse(graph: &StageGraph, labeling: &RegionLabeling, gamma: f64) -> StageGraph {
    let regions = labeling.num_regions();
    let region_of = |node: u32| labeling.instance_id[node as usize] - 1;

    let mut sizes = vec![0u64; regions];
    for (node, &size) in graph.sizes.iter().enumerate() {
        sizes[region_of(node as u32) as usize] += size;
    }

    let mut edges: Vec<(u32, u32)> = Vec::new();
    for (node, neighbors) in graph.neighbors.iter().enumerate() {
        let ra = region_of(node as u32);
        for &other in neighbors {
            let rb = region_of(other);
            if ra != rb {
                edges.push((ra.min(rb), ra.max(rb)));
            }
        }
    }
    edges.sort_unstable();
    edges.dedup();
    let adjacency = AdjacencyGraph::from_edges(regions, edges);

    // Accumulate cross-pair contributions onto collapsed pairs.
    let mut sums: std::collections::HashMap<(u32, u32), (f64, f64)> =
        std::collections::HashMap::new();
    for (node, reach) in graph.reach.iter().enumerate() {
        let ra = region_of(node as u32);
        for entry in reach {
            if entry.other <= node as u32 {
                continue;
            }
            let rb = region_of(entry.other);
            if ra == rb {
                continue;
            }
            if let Some(a) = entry.affinity {
                let beta = gamma.powi(entry.distance as i32)
                    * graph.sizes[node] as f64
                    * graph.sizes[entry.other as usize] as f64;
                let cell = sums.entry((ra.min(rb), ra.max(rb))).or_insert((0.0, 0.0));
                cell.0 += beta * a;
                cell.1 += beta;
            }
        }
    }

    let mut reach: Vec<Vec<ReachEntry>> = vec![Vec::new(); regions];
    for (i, j, distance) in adjacency.pairs_within_two() {
        let affinity = sums
            .get(&(i, j))
            .filter(|(_, den)| *den > 0.0)
            .map(|(num, den)| num / den);
        reach[i as usize].push(ReachEntry {
            other: j,
            distance,
            affinity,
        });
        reach[j as usize].push(ReachEntry {
            other: i,
            distance,
            affinity,
        });
    }
    for list in &mut reach {
        list.sort_by_key(|e| e.other);
    }
    StageGraph {
        sizes,
        neighbors: adjacency.neighbors,
        reach,
    }
}

/// Runs the descending threshold schedule: grow, collapse regions into
/// nodes, re-grow with the next threshold, then propagate the final region
/// ids back to superpoints.
pub fn progressive_grow(
    partition: &SuperpointPartition,
    adjacency: &AdjacencyGraph,
    matrix: &AffinityMatrix,
    config: &GrowthConfig,
) -> Result<RegionLabeling> {
    config.validate()?;
    let mut graph = StageGraph::from_superpoints(partition, adjacency, matrix)?;
    // Superpoint -> current-stage node mapping, refined after each collapse.
    let mut node_of: Vec<u32> = (0..partition.num_superpoints() as u32).collect();
    for (stage, &tau) in config.thresholds.iter().enumerate() {
        let stage_labeling = grow_stage(&graph, tau, config.gamma, config.criterion);
        for slot in node_of.iter_mut() {
            *slot = stage_labeling.instance_id[*slot as usize] - 1;
        }
        if stage + 1 < config.thresholds.len() {
            graph = collapse(&graph, &stage_labeling, config.gamma);
        }
    }
    let ids: Vec<u32> = node_of.iter().map(|&r| r + 1).collect();
    let out = RegionLabeling::from_ids(ids);
    out.validate()?;
    Ok(out)
}

/// Spreads per-superpoint region ids to per-point ids.
pub fn labels_to_points(partition: &SuperpointPartition, labeling: &RegionLabeling) -> Vec<u32> {
    partition
        .labels
        .iter()
        .map(|&sp| labeling.instance_id[sp as usize])
        .collect()
}

/// Mean finalized affinity over a region's internal evidence-bearing pairs;
/// 1.0 when the region has none (e.g. singletons). Used as the prediction
/// confidence for evaluation ranking.
pub fn region_confidences(matrix: &AffinityMatrix, labeling: &RegionLabeling) -> Vec<f64> {
    let mut sums = vec![(0.0f64, 0usize); labeling.num_regions()];
    for entry in matrix.entries() {
        let ri = labeling.instance_id[entry.i as usize];
        let rj = labeling.instance_id[entry.j as usize];
        if ri == rj {
            if let Some(a) = entry.affinity {
                let cell = &mut sums[ri as usize - 1];
                cell.0 += a;
                cell.1 += 1;
            }
        }
    }
    sums.into_iter()
        .map(|(sum, count)| if count > 0 { sum / count as f64 } else { 1.0 })
        .collect()
}
