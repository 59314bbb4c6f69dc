//! Text-queried semantics for 3D instances: back-project per-frame semantic
//! label images onto the cloud by majority vote, then retrieve instances
//! whose point overlap with a queried label exceeds a threshold.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{backproject, CameraView};
use crate::spatial::PointGrid;

/// Scene-level mapping from semantic label id to its query string.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SemanticLabelTable {
    pub names: BTreeMap<u32, String>,
}

impl SemanticLabelTable {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: BTreeMap<String, String> = serde_json::from_str(&text)
            .map_err(|e| Error::format(path, format!("bad label table: {e}")))?;
        let mut names = BTreeMap::new();
        for (k, v) in raw {
            let id: u32 = k
                .parse()
                .map_err(|_| Error::format(path, format!("label id {k} is not an integer")))?;
            names.insert(id, v);
        }
        Ok(SemanticLabelTable { names })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let raw: BTreeMap<String, String> = self
            .names
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect();
        std::fs::write(path, serde_json::to_string_pretty(&raw).expect("serialize labels"))
            .map_err(|e| Error::io(path, e))
    }

    /// Ids whose name equals the query, lowest first.
    pub fn ids_for(&self, query: &str) -> Vec<u32> {
        self.names
            .iter()
            .filter(|(_, name)| name.as_str() == query)
            .map(|(&id, _)| id)
            .collect()
    }
}

/// Per-frame semantic label image; 0 = unlabeled.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMaskImage {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
}

impl SemanticMaskImage {
    pub fn load(path: &Path, table: &SemanticLabelTable) -> Result<Self> {
        let (width, height, values) = crate::io::load_png16(path)?;
        let labels: Vec<u32> = values.into_iter().map(u32::from).collect();
        for &l in &labels {
            if l != 0 && !table.names.contains_key(&l) {
                return Err(Error::format(
                    path,
                    format!("semantic label {l} missing from the label table"),
                ));
            }
        }
        Ok(SemanticMaskImage {
            width,
            height,
            labels,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if self.labels.iter().any(|&l| l > u16::MAX as u32) {
            return Err(Error::invalid("semantic label exceeds 16-bit range"));
        }
        let values: Vec<u16> = self.labels.iter().map(|&l| l as u16).collect();
        crate::io::save_png16(path, self.width, self.height, &values)
    }

    #[inline]
    pub fn at(&self, col: usize, row: usize) -> u32 {
        self.labels[row * self.width + col]
    }
}

/// Lifts every labeled pixel with valid depth into 3D and lets it vote for
/// the nearest cloud point within `radius`. Per-point label = majority vote,
/// ties to the lower label id; unvoted points stay None.
pub fn backproject_semantics(
    views: &[CameraView],
    semantics: &[SemanticMaskImage],
    positions: &[nalgebra::Vector3<f64>],
    radius: f64,
) -> Result<Vec<Option<u32>>> {
    if views.len() != semantics.len() {
        return Err(Error::invalid("one semantic image per view is required"));
    }
    let grid = PointGrid::with_cell_size(positions, radius.max(1e-9));

    // Per-view vote lists, merged in view order so the tally is stable.
    let per_view: Vec<Vec<(u32, u32)>> = views
        .par_iter()
        .zip(semantics)
        .map(|(view, sem)| {
            let mut votes = Vec::new();
            for row in 0..sem.height {
                for col in 0..sem.width {
                    let label = sem.at(col, row);
                    if label == 0 {
                        continue;
                    }
                    let d = view.depth.at(col, row);
                    if d <= 0.0 {
                        continue;
                    }
                    let world = backproject(&view.intrinsics, &view.pose, col as f64, row as f64, d);
                    if let Some((point, _)) = grid.nearest_within(&world, radius) {
                        votes.push((point, label));
                    }
                }
            }
            votes
        })
        .collect();

    let mut tallies: Vec<HashMap<u32, u32>> = vec![HashMap::new(); positions.len()];
    for votes in per_view {
        for (point, label) in votes {
            *tallies[point as usize].entry(label).or_insert(0) += 1;
        }
    }
    Ok(tallies
        .into_iter()
        .map(|tally| {
            tally
                .into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                .map(|(label, _)| label)
        })
        .collect())
}

/// One retrieved instance with its overlap fraction.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct QueryMatch {
    pub instance_id: u32,
    pub overlap: f64,
}

/// Result of an open-vocabulary query.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct QueryResult {
    pub query: String,
    pub matches: Vec<QueryMatch>,
}

/// Instances whose fraction of points labeled with the queried name exceeds
/// `threshold`, sorted by descending overlap.
pub fn query_instances(
    instance_ids: &[u32],
    point_labels: &[Option<u32>],
    table: &SemanticLabelTable,
    query: &str,
    threshold: f64,
) -> Result<QueryResult> {
    if instance_ids.len() != point_labels.len() {
        return Err(Error::invalid("instance and label arrays must align"));
    }
    let wanted: Vec<u32> = table.ids_for(query);
    let mut totals: HashMap<u32, (usize, usize)> = HashMap::new();
    for (&inst, label) in instance_ids.iter().zip(point_labels) {
        if inst == 0 {
            continue;
        }
        let entry = totals.entry(inst).or_insert((0, 0));
        entry.1 += 1;
        if let Some(l) = label {
            if wanted.contains(l) {
                entry.0 += 1;
            }
        }
    }
    let mut matches: Vec<QueryMatch> = totals
        .into_iter()
        .filter_map(|(inst, (hit, total))| {
            let overlap = hit as f64 / total as f64;
            (overlap > threshold).then_some(QueryMatch {
                instance_id: inst,
                overlap,
            })
        })
        .collect();
    matches.sort_by(|a, b| {
        b.overlap
            .partial_cmp(&a.overlap)
            .unwrap()
            .then(a.instance_id.cmp(&b.instance_id))
    });
    Ok(QueryResult {
        query: query.to_string(),
        matches,
    })
}
