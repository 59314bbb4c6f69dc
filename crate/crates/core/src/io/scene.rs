//! Scene directory layout and the loaders for its parts.
//!
//! ```text
//! scene/
//!   cloud.ply             point cloud (positions, optional normals/colors)
//!   intrinsics.txt        "fx fy cx cy width height"
//!   poses/<frame>.txt     4x4 row-major camera-to-world matrix
//!   depth/<frame>.png     16-bit PNG, millimeters, 0 = invalid
//!   masks/<frame>.png     16-bit label PNG (or masks/<frame>/ binary dirs)
//!   semantic/<frame>.png  optional 16-bit semantic label PNG
//!   labels.json           optional {"<id>": "name"} semantic table
//!   segs.json             optional precomputed oversegmentation
//!   gt_instances.txt      optional per-point instance id, one per line
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::Matrix4;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{CameraView, DepthMap, Intrinsics, PointCloud, Pose};
use crate::masks2d::{load_mask_directory, load_mask_image, MaskImage};
use crate::openvocab::{SemanticLabelTable, SemanticMaskImage};

/// Resolved paths inside a scene directory.
#[derive(Debug, Clone)]
pub struct ScenePaths {
    pub root: PathBuf,
    pub cloud: PathBuf,
    pub intrinsics: PathBuf,
    pub poses: PathBuf,
    pub depth: PathBuf,
    pub masks: PathBuf,
    pub semantic: PathBuf,
    pub labels_json: PathBuf,
    pub segs_json: PathBuf,
    pub gt_instances: PathBuf,
}

impl ScenePaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        let root = root.into();
        ScenePaths {
            cloud: root.join("cloud.ply"),
            intrinsics: root.join("intrinsics.txt"),
            poses: root.join("poses"),
            depth: root.join("depth"),
            masks: root.join("masks"),
            semantic: root.join("semantic"),
            labels_json: root.join("labels.json"),
            segs_json: root.join("segs.json"),
            gt_instances: root.join("gt_instances.txt"),
            root,
        }
    }
}

/// A fully loaded scene.
#[derive(Debug, Clone)]
pub struct SceneData {
    pub cloud: PointCloud,
    pub views: Vec<CameraView>,
    pub frame_ids: Vec<String>,
    pub semantic: Option<Vec<SemanticMaskImage>>,
    pub semantic_table: Option<SemanticLabelTable>,
    pub gt_instances: Option<Vec<u32>>,
}

/// Frame stems found in a directory, sorted numerically when every stem is
/// an integer and lexicographically otherwise.
pub fn frame_stems(dir: &Path, extension: &str) -> Result<Vec<String>> {
    if !dir.is_dir() {
        return Err(Error::MissingPath(dir.to_path_buf()));
    }
    let mut stems = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some(extension) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_string());
            }
        }
    }
    if stems.iter().all(|s| s.parse::<u64>().is_ok()) {
        stems.sort_by_key(|s| s.parse::<u64>().unwrap());
    } else {
        stems.sort();
    }
    Ok(stems)
}

pub fn load_intrinsics(path: &Path) -> Result<Intrinsics> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::format(path, "intrinsics must be six numbers: fx fy cx cy width height"))?;
    if vals.len() != 6 {
        return Err(Error::format(path, format!("expected 6 values, found {}", vals.len())));
    }
    let intr = Intrinsics {
        fx: vals[0],
        fy: vals[1],
        cx: vals[2],
        cy: vals[3],
        width: vals[4] as usize,
        height: vals[5] as usize,
    };
    intr.validate()?;
    Ok(intr)
}

pub fn save_intrinsics(path: &Path, intr: &Intrinsics) -> Result<()> {
    std::fs::write(
        path,
        format!(
            "{} {} {} {} {} {}\n",
            intr.fx, intr.fy, intr.cx, intr.cy, intr.width, intr.height
        ),
    )
    .map_err(|e| Error::io(path, e))
}

/// Loads a 4x4 row-major camera-to-world matrix and converts it to the
/// internal world-to-camera pose.
pub fn load_pose_txt(path: &Path) -> Result<Pose> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::format(path, "pose must be 16 numbers"))?;
    if vals.len() != 16 {
        return Err(Error::format(path, format!("expected 16 values, found {}", vals.len())));
    }
    let m = Matrix4::from_row_slice(&vals);
    Pose::from_cam_to_world(&m).map_err(|e| Error::format(path, e.to_string()))
}

pub fn save_pose_txt(path: &Path, pose: &Pose) -> Result<()> {
    let m = pose.to_cam_to_world();
    let mut out = String::new();
    for r in 0..4 {
        let row: Vec<String> = (0..4).map(|c| format!("{}", m[(r, c)])).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_depth_png(path: &Path) -> Result<DepthMap> {
    let (width, height, values) = crate::io::load_png16(path)?;
    Ok(DepthMap {
        width,
        height,
        data: values.into_iter().map(crate::io::depth_from_u16).collect(),
    })
}

pub fn save_depth_png(path: &Path, depth: &DepthMap) -> Result<()> {
    let values: Vec<u16> = depth.data.iter().map(|&d| crate::io::depth_to_u16(d)).collect();
    crate::io::save_png16(path, depth.width, depth.height, &values)
}

/// One instance id per point, one per line.
pub fn load_instances_txt(path: &Path) -> Result<Vec<u32>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(i, l)| {
            l.trim()
                .parse::<u32>()
                .map_err(|_| Error::format(path, format!("line {} is not an instance id", i + 1)))
        })
        .collect()
}

pub fn save_instances_txt(path: &Path, ids: &[u32]) -> Result<()> {
    let mut out = String::with_capacity(ids.len() * 4);
    for id in ids {
        out.push_str(&id.to_string());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn load_mask_for_frame(masks_dir: &Path, stem: &str) -> Result<MaskImage> {
    let png = masks_dir.join(format!("{stem}.png"));
    if png.is_file() {
        return load_mask_image(&png);
    }
    let dir = masks_dir.join(stem);
    if dir.is_dir() {
        return load_mask_directory(&dir);
    }
    Err(Error::MissingPath(png))
}

/// Loads a scene directory. `max_views`, when given, keeps only the first
/// N frames in id order.
pub fn load_scene(root: &Path, max_views: Option<usize>) -> Result<SceneData> {
    let paths = ScenePaths::new(root);
    if !root.is_dir() {
        return Err(Error::MissingPath(root.to_path_buf()));
    }
    if !paths.cloud.is_file() {
        return Err(Error::MissingPath(paths.cloud.clone()));
    }
    let cloud = crate::io::load_ply(&paths.cloud)?;
    let intrinsics = load_intrinsics(&paths.intrinsics)?;
    let mut stems = frame_stems(&paths.poses, "txt")?;
    if stems.is_empty() {
        return Err(Error::format(&paths.poses, "no pose files found"));
    }
    if let Some(m) = max_views {
        stems.truncate(m.max(1));
    }
    if !paths.depth.is_dir() {
        return Err(Error::MissingPath(paths.depth.clone()));
    }
    if !paths.masks.exists() {
        return Err(Error::MissingPath(paths.masks.clone()));
    }

    let views: Result<Vec<CameraView>> = stems
        .par_iter()
        .map(|stem| {
            let pose = load_pose_txt(&paths.poses.join(format!("{stem}.txt")))?;
            let depth_path = paths.depth.join(format!("{stem}.png"));
            if !depth_path.is_file() {
                return Err(Error::MissingPath(depth_path));
            }
            let depth = load_depth_png(&depth_path)?;
            let masks = load_mask_for_frame(&paths.masks, stem)?;
            let view = CameraView {
                intrinsics,
                pose,
                depth,
                masks,
            };
            view.validate()
                .map_err(|e| Error::format(paths.root.join(stem), e.to_string()))?;
            Ok(view)
        })
        .collect();
    let views = views?;

    let (semantic, semantic_table) = if paths.semantic.is_dir() {
        let table = SemanticLabelTable::load(&paths.labels_json)?;
        let images: Result<Vec<SemanticMaskImage>> = stems
            .par_iter()
            .map(|stem| {
                let path = paths.semantic.join(format!("{stem}.png"));
                if !path.is_file() {
                    return Err(Error::MissingPath(path));
                }
                SemanticMaskImage::load(&path, &table)
            })
            .collect();
        (Some(images?), Some(table))
    } else {
        (None, None)
    };

    let gt_instances = if paths.gt_instances.is_file() {
        let ids = load_instances_txt(&paths.gt_instances)?;
        if ids.len() != cloud.len() {
            return Err(Error::format(
                &paths.gt_instances,
                format!("{} ids for {} points", ids.len(), cloud.len()),
            ));
        }
        Some(ids)
    } else {
        None
    };

    cloud.validate()?;
    Ok(SceneData {
        cloud,
        views,
        frame_ids: stems,
        semantic,
        semantic_table,
        gt_instances,
    })
}

/// Serializes per-region point ranges as JSON: {"<region>": [[start, end), ...]}.
pub fn instances_to_range_json(ids: &[u32]) -> String {
    let mut ranges: BTreeMap<u32, Vec<[usize; 2]>> = BTreeMap::new();
    let mut i = 0;
    while i < ids.len() {
        let id = ids[i];
        let start = i;
        while i < ids.len() && ids[i] == id {
            i += 1;
        }
        ranges.entry(id).or_default().push([start, i]);
    }
    let map: BTreeMap<String, Vec<[usize; 2]>> = ranges
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    serde_json::to_string_pretty(&map).expect("serialize ranges")
}
