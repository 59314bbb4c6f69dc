//! Deterministic synthetic scenes: sampled point clouds with analytic
//! normals and ground-truth instance ids, exact ray-cast depth and mask
//! rendering, mask corruption, and scene-directory emission in the layout
//! the pipeline ingests.

mod corrupt;
mod render;
mod shapes;

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector3;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

pub use corrupt::{corrupt_masks, NoiseModel};
pub use render::{look_at_pose, observable_indices, render_views, OrbitSpec, RenderedView};
pub use shapes::{PlacedObject, SceneGeometry, Shape};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::openvocab::SemanticLabelTable;

/// Full description of a synthetic scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    /// Side length of the square floor at z=0; 0 disables the floor.
    pub floor_extent: f64,
    pub objects: Vec<PlacedObject>,
    /// Surface sampling density in points per square meter.
    pub density: f64,
    pub cameras: OrbitSpec,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.density <= 0.0 {
            return Err(Error::invalid("density must be positive"));
        }
        if self.cameras.count == 0 {
            return Err(Error::invalid("at least one camera is required"));
        }
        if self.floor_extent < 0.0 {
            return Err(Error::invalid("floor extent cannot be negative"));
        }
        for obj in &self.objects {
            obj.shape.validate()?;
        }
        Ok(())
    }

    pub fn geometry(&self) -> SceneGeometry {
        SceneGeometry {
            floor_extent: self.floor_extent,
            objects: self.objects.clone(),
        }
    }

    /// Scene-level semantic table: instance id -> object name.
    pub fn label_table(&self) -> SemanticLabelTable {
        let mut names = BTreeMap::new();
        if self.floor_extent > 0.0 {
            names.insert(1, "floor".to_string());
        }
        for (k, obj) in self.objects.iter().enumerate() {
            names.insert(2 + k as u32, obj.name.clone());
        }
        SemanticLabelTable { names }
    }
}

impl SceneSpec {
    /// Reads a scene description from a flat key-value file. Unknown keys
    /// are errors; `object` may repeat:
    ///
    /// ```text
    /// seed = 7
    /// floor_extent = 2.6
    /// density = 700
    /// views = 12
    /// camera_radius = 2.6
    /// camera_height = 2.3
    /// look_at = 0,0,0.35
    /// image = 192x144
    /// focal = 160
    /// object = cuboid 0.3 0.3 0.3 pos 0.2 0.1 0.5 yaw 0.4 name crate_a
    /// object = sphere 0.2 pos -0.4 0.2 0.6
    /// object = cylinder 0.15 0.4 pos 0.1 -0.5 0.45
    /// ```
    pub fn from_kv_file(path: &Path) -> Result<SceneSpec> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec = SceneSpec {
            seed: 42,
            floor_extent: 0.0,
            objects: Vec::new(),
            density: 700.0,
            cameras: OrbitSpec {
                count: 12,
                radius: 2.6,
                height: 2.3,
                look_at: Vector3::new(0.0, 0.0, 0.3),
                image_width: 192,
                image_height: 144,
                focal: 160.0,
            },
        };
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::format(path, format!("line {}: {msg}", lineno + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected key = value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            let parse_f64 = |v: &str| {
                v.parse::<f64>()
                    .map_err(|_| err(format!("bad number {v}")))
            };
            match key {
                "seed" => {
                    spec.seed = value
                        .parse()
                        .map_err(|_| err(format!("bad seed {value}")))?
                }
                "floor_extent" => spec.floor_extent = parse_f64(value)?,
                "density" => spec.density = parse_f64(value)?,
                "views" => {
                    spec.cameras.count = value
                        .parse()
                        .map_err(|_| err(format!("bad view count {value}")))?
                }
                "camera_radius" => spec.cameras.radius = parse_f64(value)?,
                "camera_height" => spec.cameras.height = parse_f64(value)?,
                "focal" => spec.cameras.focal = parse_f64(value)?,
                "look_at" => {
                    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                    if parts.len() != 3 {
                        return Err(err("look_at needs x,y,z".into()));
                    }
                    spec.cameras.look_at = Vector3::new(
                        parse_f64(parts[0])?,
                        parse_f64(parts[1])?,
                        parse_f64(parts[2])?,
                    );
                }
                "image" => {
                    let (w, h) = value
                        .split_once('x')
                        .ok_or_else(|| err("image needs WxH".into()))?;
                    spec.cameras.image_width = w
                        .trim()
                        .parse()
                        .map_err(|_| err(format!("bad width {w}")))?;
                    spec.cameras.image_height = h
                        .trim()
                        .parse()
                        .map_err(|_| err(format!("bad height {h}")))?;
                }
                "object" => {
                    let object = parse_object(value, spec.objects.len()).map_err(&err)?;
                    spec.objects.push(object);
                }
                other => return Err(err(format!("unknown key {other}"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn parse_object(value: &str, index: usize) -> std::result::Result<PlacedObject, String> {
    let tokens: Vec<&str> = value.split_whitespace().collect();
    let mut cursor = 0;
    let take_f64 = |tokens: &[&str], cursor: &mut usize| -> std::result::Result<f64, String> {
        let t = tokens
            .get(*cursor)
            .ok_or_else(|| "truncated object line".to_string())?;
        *cursor += 1;
        t.parse::<f64>().map_err(|_| format!("bad number {t}"))
    };
    let kind = tokens.first().ok_or("empty object line")?;
    cursor += 1;
    let shape = match *kind {
        "cuboid" => Shape::Cuboid {
            size: Vector3::new(
                take_f64(&tokens, &mut cursor)?,
                take_f64(&tokens, &mut cursor)?,
                take_f64(&tokens, &mut cursor)?,
            ),
        },
        "sphere" => Shape::Sphere {
            radius: take_f64(&tokens, &mut cursor)?,
        },
        "cylinder" => Shape::Cylinder {
            radius: take_f64(&tokens, &mut cursor)?,
            height: take_f64(&tokens, &mut cursor)?,
        },
        other => return Err(format!("unknown shape {other}")),
    };
    let mut position = Vector3::zeros();
    let mut yaw = 0.0;
    let mut name = format!("object_{index}");
    while cursor < tokens.len() {
        match tokens[cursor] {
            "pos" => {
                cursor += 1;
                position = Vector3::new(
                    take_f64(&tokens, &mut cursor)?,
                    take_f64(&tokens, &mut cursor)?,
                    take_f64(&tokens, &mut cursor)?,
                );
            }
            "yaw" => {
                cursor += 1;
                yaw = take_f64(&tokens, &mut cursor)?;
            }
            "name" => {
                cursor += 1;
                name = tokens
                    .get(cursor)
                    .ok_or("name needs a value")?
                    .to_string();
                cursor += 1;
            }
            other => return Err(format!("unknown object field {other}")),
        }
    }
    Ok(PlacedObject {
        shape,
        position,
        yaw,
        name,
    })
}

/// A sampled scene: cloud with analytic normals and per-point instance ids
/// (floor = 1, objects = 2 + index).
#[derive(Debug, Clone)]
pub struct SynthScene {
    pub cloud: PointCloud,
    pub gt_ids: Vec<u32>,
    /// Per-point face tag within its object (box face, cap, ...).
    pub face_tags: Vec<u8>,
}

/// Deterministic per-instance color for inspection outputs.
pub fn instance_color(id: u32) -> [u8; 3] {
    // Golden-ratio hue walk, fixed saturation/value.
    let hue = (id as f64 * 0.618_033_988_749_895) % 1.0;
    let (r, g, b) = hsv_to_rgb(hue, 0.65, 0.95);
    [r, g, b]
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (u8, u8, u8) {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    let (r, g, b) = match (i as i64).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    ((r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8)
}

/// Samples every surface at the scene's configured density. Each object draws from its
/// own rng stream, so adding an object never perturbs the others.
pub fn generate_scene(spec: &SceneSpec) -> Result<SynthScene> {
    spec.validate()?;
    let mut positions = Vec::new();
    let mut normals = Vec::new();
    let mut colors = Vec::new();
    let mut gt_ids = Vec::new();
    let mut face_tags = Vec::new();

    if spec.floor_extent > 0.0 {
        let mut rng = stream_rng(spec.seed, 0);
        let half = spec.floor_extent / 2.0;
        let n = (spec.floor_extent * spec.floor_extent * spec.density).round() as usize;
        for _ in 0..n {
            positions.push(Vector3::new(
                rng.random_range(-half..half),
                rng.random_range(-half..half),
                0.0,
            ));
            normals.push(Vector3::new(0.0, 0.0, 1.0));
            colors.push(instance_color(1));
            gt_ids.push(1u32);
            face_tags.push(0u8);
        }
    }
    for (k, obj) in spec.objects.iter().enumerate() {
        let id = 2 + k as u32;
        let mut rng = stream_rng(spec.seed, 1 + k as u64);
        for (p_obj, n_obj, tag) in obj.shape.sample_surface(spec.density, &mut rng) {
            positions.push(obj.to_world(&p_obj));
            normals.push(obj.direction_to_world(&n_obj));
            colors.push(instance_color(id));
            gt_ids.push(id);
            face_tags.push(tag);
        }
    }
    if positions.is_empty() {
        return Err(Error::invalid("scene sampled no points; raise density or add surfaces"));
    }
    let cloud = PointCloud {
        positions,
        normals: Some(normals),
        colors: Some(colors),
    };
    cloud.validate()?;
    Ok(SynthScene {
        cloud,
        gt_ids,
        face_tags,
    })
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add((stream + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// Restricts a sampled scene to the points observable from the scene's
/// cameras, mirroring what a real capture would contain.
pub fn filter_observable(scene: &SynthScene, spec: &SceneSpec) -> SynthScene {
    let keep = observable_indices(&scene.cloud.positions, &spec.geometry(), &spec.cameras);
    select_points(scene, &keep)
}

/// Keeps, per ground-truth instance, only its largest connected component
/// at the given linking radius. Grazing-angle observations can leave tiny
/// surface slivers pinched off from the rest of an object; a capture of a
/// well-separated scene is expected to yield one connected region per
/// instance, so the benchmark generator enforces that here.
pub fn keep_largest_components(scene: &SynthScene, radius: f64) -> SynthScene {
    use crate::spatial::PointGrid;
    let n = scene.cloud.len();
    let grid = PointGrid::with_cell_size(&scene.cloud.positions, radius.max(1e-9));
    let mut component = vec![u32::MAX; n];
    let mut next = 0u32;
    let mut sizes = Vec::new();
    for start in 0..n {
        if component[start] != u32::MAX {
            continue;
        }
        let id = next;
        next += 1;
        let mut size = 0usize;
        let mut stack = vec![start as u32];
        component[start] = id;
        while let Some(p) = stack.pop() {
            size += 1;
            for q in grid.within_radius(&scene.cloud.positions[p as usize], radius) {
                if component[q as usize] == u32::MAX
                    && scene.gt_ids[q as usize] == scene.gt_ids[p as usize]
                {
                    component[q as usize] = id;
                    stack.push(q);
                }
            }
        }
        sizes.push(size);
    }
    // Largest component per instance; earlier component wins ties.
    let mut best: std::collections::HashMap<u32, (usize, u32)> = std::collections::HashMap::new();
    for (point, &comp) in component.iter().enumerate() {
        let instance = scene.gt_ids[point];
        let entry = best.entry(instance).or_insert((0, comp));
        let size = sizes[comp as usize];
        if size > entry.0 || (size == entry.0 && comp < entry.1) {
            *entry = (size, comp);
        }
    }
    let keep: Vec<u32> = (0..n as u32)
        .filter(|&p| best[&scene.gt_ids[p as usize]].1 == component[p as usize])
        .collect();
    select_points(scene, &keep)
}

fn select_points(scene: &SynthScene, keep: &[u32]) -> SynthScene {
    let pick = |v: &Vec<Vector3<f64>>| -> Vec<Vector3<f64>> {
        keep.iter().map(|&i| v[i as usize]).collect()
    };
    SynthScene {
        cloud: PointCloud {
            positions: pick(&scene.cloud.positions),
            normals: scene.cloud.normals.as_ref().map(pick),
            colors: scene
                .cloud
                .colors
                .as_ref()
                .map(|c| keep.iter().map(|&i| c[i as usize]).collect()),
        },
        gt_ids: keep.iter().map(|&i| scene.gt_ids[i as usize]).collect(),
        face_tags: keep.iter().map(|&i| scene.face_tags[i as usize]).collect(),
    }
}

/// Writes the scene in the directory layout the pipeline ingests. The cloud
/// is observability-filtered; masks are corrupted when `noise` is given.
/// Returns the number of points written.
pub fn write_scene_dir(spec: &SceneSpec, root: &Path, noise: Option<&NoiseModel>) -> Result<usize> {
    spec.validate()?;
    let scene = generate_scene(spec)?;
    let scene = filter_observable(&scene, spec);
    let scene = keep_largest_components(&scene, crate::oversegment::DEFAULT_ADJACENCY_RADIUS);
    if scene.cloud.is_empty() {
        return Err(Error::invalid("no observable points; adjust cameras"));
    }
    let rendered = render_views(&spec.geometry(), &spec.cameras);

    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for sub in ["poses", "depth", "masks", "semantic"] {
        std::fs::create_dir_all(root.join(sub)).map_err(|e| Error::io(root.join(sub), e))?;
    }
    crate::io::save_ply(&root.join("cloud.ply"), &scene.cloud)?;
    crate::io::save_intrinsics(&root.join("intrinsics.txt"), &spec.cameras.intrinsics())?;
    crate::io::save_instances_txt(&root.join("gt_instances.txt"), &scene.gt_ids)?;
    spec.label_table().save(&root.join("labels.json"))?;

    let masks: Vec<crate::masks2d::MaskImage> =
        rendered.iter().map(|r| r.view.masks.clone()).collect();
    let masks = match noise {
        Some(model) => corrupt_masks(&masks, model),
        None => masks,
    };
    for (k, r) in rendered.iter().enumerate() {
        let stem = format!("{k:06}");
        crate::io::save_pose_txt(&root.join("poses").join(format!("{stem}.txt")), &r.view.pose)?;
        crate::io::save_depth_png(&root.join("depth").join(format!("{stem}.png")), &r.view.depth)?;
        crate::masks2d::save_mask_image(
            &root.join("masks").join(format!("{stem}.png")),
            &masks[k],
        )?;
        r.semantic
            .save(&root.join("semantic").join(format!("{stem}.png")))?;
    }
    Ok(scene.cloud.len())
}

/// Benchmark presets. `floating` keeps every object clear of the floor and
/// of each other so ground-truth regions are graph-separable; `contact`
/// rests objects on the floor, the configuration noisy masks can break.
pub mod presets {
    use super::*;

    fn orbit(count: usize, look_z: f64) -> OrbitSpec {
        OrbitSpec {
            count,
            radius: 2.6,
            height: 2.3,
            look_at: Vector3::new(0.0, 0.0, look_z),
            image_width: 192,
            image_height: 144,
            focal: 160.0,
        }
    }

    fn random_shape(rng: &mut impl Rng) -> Shape {
        match rng.random_range(0..3u32) {
            0 => Shape::Cuboid {
                size: Vector3::new(
                    rng.random_range(0.26..0.42),
                    rng.random_range(0.26..0.42),
                    rng.random_range(0.26..0.42),
                ),
            },
            1 => Shape::Sphere {
                radius: rng.random_range(0.16..0.24),
            },
            _ => Shape::Cylinder {
                radius: rng.random_range(0.14..0.2),
                height: rng.random_range(0.3..0.45),
            },
        }
    }

    fn place_objects(
        rng: &mut impl Rng,
        count: usize,
        floor_half: f64,
        z_of: impl Fn(&Shape, &mut dyn FnMut() -> f64) -> f64,
        clearance: f64,
    ) -> Vec<PlacedObject> {
        let mut objects: Vec<PlacedObject> = Vec::new();
        let mut attempts = 0;
        while objects.len() < count && attempts < 10_000 {
            attempts += 1;
            let shape = random_shape(rng);
            let r = shape.bounding_radius();
            let x = rng.random_range(-(floor_half - r - 0.1)..(floor_half - r - 0.1));
            let y = rng.random_range(-(floor_half - r - 0.1)..(floor_half - r - 0.1));
            let mut draw = || rng.random_range(0.0..1.0);
            let z = z_of(&shape, &mut draw);
            let yaw = rng.random_range(0.0..std::f64::consts::TAU);
            let position = Vector3::new(x, y, z);
            let clear = objects.iter().all(|existing| {
                (existing.position - position).norm()
                    >= existing.shape.bounding_radius() + r + clearance
            });
            if clear {
                let name = format!("object_{}", objects.len());
                objects.push(PlacedObject {
                    shape,
                    position,
                    yaw,
                    name,
                });
            }
        }
        objects
    }

    /// Clean oracle scenes: floor plus floating, well-separated objects.
    pub fn floating(seed: u64, num_objects: usize, views: usize) -> SceneSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0xA24B_AED4_963E_E407));
        let floor_extent = 2.6;
        let objects = place_objects(
            &mut rng,
            num_objects,
            floor_extent / 2.0,
            |shape, draw| shape.bottom_offset() + 0.22 + 0.25 * draw(),
            0.2,
        );
        SceneSpec {
            seed,
            floor_extent,
            objects,
            density: 700.0,
            cameras: orbit(views, 0.35),
        }
    }

    /// Contact scenes: objects rest on the floor. Used for noise-robustness
    /// trends where wrong merges across the contact ring become possible.
    pub fn contact(seed: u64, num_objects: usize, views: usize) -> SceneSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0xD6E8_FEB8_6659_FD93));
        let floor_extent = 2.6;
        let objects = place_objects(
            &mut rng,
            num_objects,
            floor_extent / 2.0,
            |shape, _| shape.bottom_offset(),
            0.24,
        );
        SceneSpec {
            seed,
            floor_extent,
            objects,
            density: 700.0,
            cameras: orbit(views, 0.25),
        }
    }

    /// Floorless stacked-pair scenes: each tower is a large cuboid with a
    /// smaller cuboid resting on top. The only inter-object contact runs
    /// through the stack interface, which makes wrong merges across it the
    /// dominant failure mode under mask-fusion noise.
    pub fn towers(seed: u64, num_towers: usize, views: usize) -> SceneSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0xBF58_476D_1CE4_E5B9));
        let mut objects: Vec<PlacedObject> = Vec::new();
        let mut attempts = 0;
        let half = 1.1;
        let mut placed: Vec<(Vector3<f64>, f64)> = Vec::new();
        while placed.len() < num_towers && attempts < 10_000 {
            attempts += 1;
            let base = Shape::Cuboid {
                size: Vector3::new(
                    rng.random_range(0.4..0.52),
                    rng.random_range(0.4..0.52),
                    rng.random_range(0.3..0.4),
                ),
            };
            let top = Shape::Cuboid {
                size: Vector3::new(
                    rng.random_range(0.26..0.34),
                    rng.random_range(0.26..0.34),
                    rng.random_range(0.24..0.32),
                ),
            };
            let r = base.bounding_radius();
            let x = rng.random_range(-(half - r)..(half - r));
            let y = rng.random_range(-(half - r)..(half - r));
            let base_center = Vector3::new(x, y, base.bottom_offset() + 0.2);
            if !placed
                .iter()
                .all(|(c, pr)| (c - base_center).norm() >= pr + r + 0.3)
            {
                continue;
            }
            placed.push((base_center, r));
            let base_height = match base {
                Shape::Cuboid { size } => size.z,
                _ => unreachable!(),
            };
            let top_center = Vector3::new(
                x + rng.random_range(-0.04..0.04),
                y + rng.random_range(-0.04..0.04),
                base_center.z + base_height / 2.0 + top.bottom_offset(),
            );
            let k = objects.len();
            objects.push(PlacedObject {
                shape: base,
                position: base_center,
                yaw: rng.random_range(0.0..std::f64::consts::TAU),
                name: format!("base_{}", k / 2),
            });
            objects.push(PlacedObject {
                shape: top,
                position: top_center,
                yaw: rng.random_range(0.0..std::f64::consts::TAU),
                name: format!("top_{}", k / 2),
            });
        }
        SceneSpec {
            seed,
            floor_extent: 0.0,
            objects,
            density: 700.0,
            cameras: orbit(views, 0.55),
        }
    }

    /// Contact scenes with cuboids only: every object meets the floor along
    /// a wide edge ring, so region-level evidence aggregates over several
    /// superpoint pairs per interface.
    pub fn contact_boxes(seed: u64, num_objects: usize, views: usize) -> SceneSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x94D0_49BB_1331_11EB));
        let floor_extent = 2.6;
        let mut objects: Vec<PlacedObject> = Vec::new();
        let mut attempts = 0;
        while objects.len() < num_objects && attempts < 10_000 {
            attempts += 1;
            let shape = Shape::Cuboid {
                size: Vector3::new(
                    rng.random_range(0.3..0.46),
                    rng.random_range(0.3..0.46),
                    rng.random_range(0.28..0.42),
                ),
            };
            let r = shape.bounding_radius();
            let half = floor_extent / 2.0;
            let x = rng.random_range(-(half - r - 0.1)..(half - r - 0.1));
            let y = rng.random_range(-(half - r - 0.1)..(half - r - 0.1));
            let z = shape.bottom_offset();
            let yaw = rng.random_range(0.0..std::f64::consts::TAU);
            let position = Vector3::new(x, y, z);
            if objects.iter().all(|existing| {
                (existing.position - position).norm()
                    >= existing.shape.bounding_radius() + r + 0.24
            }) {
                let name = format!("object_{}", objects.len());
                objects.push(PlacedObject { shape, position, yaw, name });
            }
        }
        SceneSpec {
            seed,
            floor_extent,
            objects,
            density: 700.0,
            cameras: orbit(views, 0.25),
        }
    }
}
