//! Per-frame 2D instance masks: loading, overlap resolution, and dense
//! relabeling so each pixel carries at most one label.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::error::{Error, Result};

/// A label image: 0 is background, labels 1..=num_masks are instances.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskImage {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    pub num_masks: u32,
    /// Optional per-label quality score in [0, 1].
    pub scores: Option<BTreeMap<u32, f64>>,
}

impl MaskImage {
    pub fn empty(width: usize, height: usize) -> Self {
        MaskImage {
            width,
            height,
            labels: vec![0; width * height],
            num_masks: 0,
            scores: None,
        }
    }

    /// Builds a mask image from raw labels, renumbering the distinct
    /// non-zero values to 1..=num_masks in ascending original order.
    pub fn from_labels(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::invalid(format!(
                "label buffer has {} entries for a {}x{} image",
                labels.len(),
                width,
                height
            )));
        }
        let mut distinct: Vec<u32> = labels.iter().copied().filter(|&l| l != 0).collect();
        distinct.sort_unstable();
        distinct.dedup();
        let remap: HashMap<u32, u32> = distinct
            .iter()
            .enumerate()
            .map(|(i, &l)| (l, i as u32 + 1))
            .collect();
        let dense = labels
            .into_iter()
            .map(|l| if l == 0 { 0 } else { remap[&l] })
            .collect();
        Ok(MaskImage {
            width,
            height,
            labels: dense,
            num_masks: distinct.len() as u32,
            scores: None,
        })
    }

    #[inline]
    pub fn at(&self, col: usize, row: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.width * self.height {
            return Err(Error::invalid("mask buffer size mismatch"));
        }
        let mut seen = vec![false; self.num_masks as usize + 1];
        for &l in &self.labels {
            if l > self.num_masks {
                return Err(Error::invalid(format!(
                    "mask label {l} exceeds num_masks {}",
                    self.num_masks
                )));
            }
            seen[l as usize] = true;
        }
        if let Some(missing) = (1..=self.num_masks).find(|&l| !seen[l as usize]) {
            return Err(Error::invalid(format!("mask label {missing} is unused")));
        }
        Ok(())
    }
}

/// A possibly-overlapping stack of binary masks paired with scores.
#[derive(Debug, Clone)]
pub struct RawMaskSet {
    pub width: usize,
    pub height: usize,
    /// Each mask is a row-major boolean coverage image.
    pub masks: Vec<(Vec<bool>, f64)>,
}

impl RawMaskSet {
    pub fn new(width: usize, height: usize) -> Self {
        RawMaskSet {
            width,
            height,
            masks: Vec::new(),
        }
    }

    pub fn push(&mut self, mask: Vec<bool>, score: f64) -> Result<()> {
        if mask.len() != self.width * self.height {
            return Err(Error::invalid("mask dimensions do not match the set"));
        }
        if !score.is_finite() {
            return Err(Error::invalid("mask score must be finite"));
        }
        self.masks.push((mask, score));
        Ok(())
    }
}

/// Flattens an overlapping mask stack into a single label image: every
/// covered pixel keeps the highest-scoring covering mask (ties go to the
/// lower mask index), and surviving masks are renumbered densely by
/// descending score.
pub fn resolve_overlaps(raw: &RawMaskSet) -> Result<MaskImage> {
    for (mask, _) in &raw.masks {
        if mask.len() != raw.width * raw.height {
            return Err(Error::invalid("mask dimensions do not match the set"));
        }
    }
    let npix = raw.width * raw.height;
    // Winner per pixel, as an index into raw.masks.
    let mut winner: Vec<Option<u32>> = vec![None; npix];
    for (idx, (mask, score)) in raw.masks.iter().enumerate() {
        for (pix, covered) in mask.iter().enumerate() {
            if !covered {
                continue;
            }
            match winner[pix] {
                None => winner[pix] = Some(idx as u32),
                Some(prev) => {
                    let prev_score = raw.masks[prev as usize].1;
                    if *score > prev_score {
                        winner[pix] = Some(idx as u32);
                    }
                }
            }
        }
    }
    // Surviving masks ordered by (score desc, index asc) get labels 1..
    let mut survivors: Vec<u32> = winner.iter().flatten().copied().collect();
    survivors.sort_unstable();
    survivors.dedup();
    survivors.sort_by(|&a, &b| {
        let sa = raw.masks[a as usize].1;
        let sb = raw.masks[b as usize].1;
        sb.partial_cmp(&sa).unwrap().then(a.cmp(&b))
    });
    let mut relabel: HashMap<u32, u32> = HashMap::new();
    let mut scores = BTreeMap::new();
    for (rank, &idx) in survivors.iter().enumerate() {
        let label = rank as u32 + 1;
        relabel.insert(idx, label);
        scores.insert(label, raw.masks[idx as usize].1);
    }
    let labels = winner
        .into_iter()
        .map(|w| w.map_or(0, |idx| relabel[&idx]))
        .collect();
    Ok(MaskImage {
        width: raw.width,
        height: raw.height,
        labels,
        num_masks: survivors.len() as u32,
        scores: Some(scores),
    })
}

/// Reads a 16-bit grayscale PNG as a label image and densifies its labels.
pub fn load_mask_image(path: &Path) -> Result<MaskImage> {
    let (width, height, values) = crate::io::load_png16(path)?;
    MaskImage::from_labels(width, height, values.into_iter().map(u32::from).collect())
}

/// Writes a label image as a 16-bit grayscale PNG.
pub fn save_mask_image(path: &Path, masks: &MaskImage) -> Result<()> {
    if masks.num_masks > u16::MAX as u32 {
        return Err(Error::invalid("more than 65535 masks cannot be saved as 16-bit PNG"));
    }
    let values: Vec<u16> = masks.labels.iter().map(|&l| l as u16).collect();
    crate::io::save_png16(path, masks.width, masks.height, &values)
}

/// Loads the binary-mask directory variant: `mask_<k>.png` files plus an
/// optional `scores.txt` (one float per line, line k scores mask k). When
/// scores are missing, mask area (normalized by image size) ranks masks.
pub fn load_mask_directory(dir: &Path) -> Result<MaskImage> {
    let mut mask_files = Vec::new();
    let entries =
        std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(rest) = name.strip_prefix("mask_") {
            if let Some(idx) = rest.strip_suffix(".png") {
                let k: usize = idx.parse().map_err(|_| {
                    Error::format(entry.path(), "mask file index is not an integer")
                })?;
                mask_files.push((k, entry.path()));
            }
        }
    }
    if mask_files.is_empty() {
        return Err(Error::format(dir, "no mask_<k>.png files found"));
    }
    mask_files.sort_by_key(|(k, _)| *k);
    for (expect, (k, path)) in mask_files.iter().enumerate() {
        if *k != expect {
            return Err(Error::format(path, format!("mask indices must be contiguous from 0, found {k}")));
        }
    }

    let scores_path = dir.join("scores.txt");
    let scores: Option<Vec<f64>> = if scores_path.exists() {
        let text = std::fs::read_to_string(&scores_path).map_err(|e| Error::io(&scores_path, e))?;
        let parsed: std::result::Result<Vec<f64>, _> =
            text.lines().map(|l| l.trim().parse::<f64>()).collect();
        Some(parsed.map_err(|_| Error::format(&scores_path, "scores must be one float per line"))?)
    } else {
        None
    };
    if let Some(s) = &scores {
        if s.len() != mask_files.len() {
            return Err(Error::format(
                &scores_path,
                format!("{} scores for {} masks", s.len(), mask_files.len()),
            ));
        }
    }

    let mut raw: Option<RawMaskSet> = None;
    for (k, path) in &mask_files {
        let (width, height, values) = crate::io::load_png16_or_8(path)?;
        let set = raw.get_or_insert_with(|| RawMaskSet::new(width, height));
        if width != set.width || height != set.height {
            return Err(Error::format(path, "mask dimensions differ within the directory"));
        }
        let bits: Vec<bool> = values.iter().map(|&v| v != 0).collect();
        let score = match &scores {
            Some(s) => s[*k],
            None => bits.iter().filter(|&&b| b).count() as f64 / (width * height) as f64,
        };
        set.push(bits, score)?;
    }
    resolve_overlaps(&raw.expect("at least one mask file"))
}
