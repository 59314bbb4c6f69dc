//! Pipeline driver: each stage runs standalone against a scene directory,
//! or end-to-end with `run`. Exit codes: 0 success, 1 input error,
//! 2 internal invariant violation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use segfuse::affinity::AffinityMatrix;
use segfuse::error::Error;
use segfuse::eval::{average_precision, standard_iou_thresholds, InstancePrediction};
use segfuse::openvocab::{backproject_semantics, query_instances};
use segfuse::pipeline::{
    ablation_table, compute_adjacency, compute_partition, run_ablation, run_on_scene, write_outputs,
    PipelineConfig,
};
use segfuse::synth::{presets, write_scene_dir, NoiseModel, SceneSpec};

/// Default rng seed used by `synth` when none is given.
const DEFAULT_SEED: u64 = 42;

#[derive(Parser)]
#[command(name = "segfuse", version, about = "3D instance segmentation from multi-view 2D masks")]
struct Cli {
    /// Cap the rayon worker pool (0 = library default).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat key=value config file applied before --set overrides.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Single key=value override; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,

    /// Fraction of views to use (first ceil(f*M) frames by id order).
    #[arg(long)]
    views_fraction: Option<f64>,

    /// Progressive thresholds, comma separated, descending.
    #[arg(long)]
    thresholds: Option<String>,

    /// Distance decay for the multi-level criterion.
    #[arg(long)]
    gamma: Option<f64>,

    /// Merge criterion: multi-level or pairwise.
    #[arg(long)]
    criterion: Option<String>,

    /// Treat each point as its own superpoint.
    #[arg(long, default_value_t = false)]
    point_level: bool,

    /// Ingest segs.json from the scene directory instead of segmenting.
    #[arg(long, default_value_t = false)]
    use_segs_file: bool,
}

impl ConfigArgs {
    fn build(&self) -> Result<PipelineConfig, Error> {
        let mut config = PipelineConfig::default();
        if let Some(path) = &self.config {
            config.load_file(path)?;
        }
        for kv in &self.sets {
            let (key, value) = kv
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("--set expects key=value, got {kv}")))?;
            config.set(key.trim(), value.trim())?;
        }
        if let Some(f) = self.views_fraction {
            config.views_fraction = f;
        }
        if let Some(t) = &self.thresholds {
            config.set("thresholds", t)?;
        }
        if let Some(g) = self.gamma {
            config.gamma = g;
        }
        if let Some(c) = &self.criterion {
            config.set("criterion", c)?;
        }
        if self.point_level {
            config.point_level = true;
        }
        if self.use_segs_file {
            config.use_segs_file = true;
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene directory.
    Synth {
        /// Output scene directory.
        #[arg(long)]
        out: PathBuf,
        /// Scene spec key=value file (overrides the preset).
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Built-in scene family: floating, contact, contact-boxes, towers.
        #[arg(long, default_value = "floating")]
        preset: String,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Object count (towers: tower count).
        #[arg(long, default_value_t = 4)]
        objects: usize,
        #[arg(long, default_value_t = 16)]
        views: usize,
        /// Mask corruption: probability of fusing adjacent labels per view.
        #[arg(long, default_value_t = 0.0)]
        merge_prob: f64,
        /// Mask corruption: probability of splitting a label per view.
        #[arg(long, default_value_t = 0.0)]
        split_prob: f64,
        /// Mask corruption: boundary erosion radius in pixels.
        #[arg(long, default_value_t = 0)]
        erode_px: u32,
        /// Seed for the corruption rng (defaults to --seed).
        #[arg(long)]
        noise_seed: Option<u64>,
    },
    /// Oversegment a scene into superpoints and write segs.json.
    Oversegment {
        #[arg(long)]
        scene: PathBuf,
        /// Output segments file (segs.json format).
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Build the pairwise affinity matrix from 2D masks.
    Affinity {
        #[arg(long)]
        scene: PathBuf,
        /// Segments file produced by `oversegment` (omit to recompute).
        #[arg(long)]
        segs: Option<PathBuf>,
        /// Output matrix file (text: i j affinity weight).
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Grow instance regions from a cached affinity matrix.
    Grow {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        segs: Option<PathBuf>,
        /// Matrix file produced by `affinity`.
        #[arg(long)]
        matrix: PathBuf,
        /// Output directory for instances.txt / instances.json.
        #[arg(long)]
        out_dir: PathBuf,
        /// Also write a colored instances.ply.
        #[arg(long, default_value_t = false)]
        ply: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run the full pipeline end-to-end.
    Run {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Evaluate against gt_instances.txt and write report.json.
        #[arg(long, default_value_t = false)]
        eval: bool,
        #[arg(long, default_value_t = false)]
        ply: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score predictions against ground truth.
    Eval {
        /// Predicted instance ids, one per point per line.
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth instance ids, one per point per line.
        #[arg(long)]
        gt: PathBuf,
        /// Optional JSON {"<instance id>": confidence}.
        #[arg(long)]
        confidences: Option<PathBuf>,
        /// Write the full report here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Retrieve instances matching a text prompt via semantic masks.
    Query {
        #[arg(long)]
        scene: PathBuf,
        /// Instance label file from `grow`/`run`.
        #[arg(long)]
        instances: PathBuf,
        #[arg(long)]
        prompt: String,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Association radius for back-projected pixels, meters.
        #[arg(long, default_value_t = 0.02)]
        vote_radius: f64,
        #[arg(long)]
        json: Option<PathBuf>,
        /// Write a PLY with the matched instances highlighted.
        #[arg(long)]
        ply: Option<PathBuf>,
    },
    /// Run the design-toggle ablation grid over scene directories.
    Ablate {
        /// Scene directories (repeatable).
        #[arg(long = "scene", required = true)]
        scenes: Vec<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Error> {
    match command {
        Command::Synth {
            out,
            spec,
            preset,
            seed,
            objects,
            views,
            merge_prob,
            split_prob,
            erode_px,
            noise_seed,
        } => {
            let spec = match spec {
                Some(path) => SceneSpec::from_kv_file(&path)?,
                None => match preset.as_str() {
                    "floating" => presets::floating(seed, objects, views),
                    "contact" => presets::contact(seed, objects, views),
                    "contact-boxes" => presets::contact_boxes(seed, objects, views),
                    "towers" => presets::towers(seed, objects, views),
                    other => {
                        return Err(Error::invalid(format!(
                            "unknown preset {other} (floating|contact|contact-boxes|towers)"
                        )))
                    }
                },
            };
            let noise = NoiseModel {
                merge_prob,
                split_prob,
                erode_px,
                seed: noise_seed.unwrap_or(seed),
            };
            let noise = (!noise.is_identity()).then_some(noise);
            let points = write_scene_dir(&spec, &out, noise.as_ref())?;
            println!(
                "wrote {} ({} points, {} views, {} objects)",
                out.display(),
                points,
                spec.cameras.count,
                spec.objects.len()
            );
            Ok(())
        }
        Command::Oversegment { scene, out, config } => {
            let config = config.build()?;
            let data = segfuse::io::load_scene(&scene, None)?;
            let partition = compute_partition(&data, Some(&scene), &config)?;
            segfuse::oversegment::save_segs_json(&out, &partition)?;
            println!(
                "{} superpoints over {} points -> {}",
                partition.num_superpoints(),
                partition.num_points(),
                out.display()
            );
            Ok(())
        }
        Command::Affinity {
            scene,
            segs,
            out,
            config,
        } => {
            let config = config.build()?;
            let data = segfuse::io::load_scene(&scene, None)?;
            let partition = load_partition(&data, &scene, segs.as_deref(), &config)?;
            let adjacency = compute_adjacency(&data, &partition, &config);
            let views_used = config.views_to_use(data.views.len());
            let (matrix, stats) = segfuse::affinity::build_affinity_matrix_with_stats(
                &data.cloud,
                &partition,
                &adjacency,
                &data.views[..views_used],
                &config.affinity(),
            )?;
            matrix.save(&out)?;
            let with_evidence = matrix.entries().filter(|e| e.affinity.is_some()).count();
            println!(
                "{} pairs ({} with evidence) from {} views -> {}",
                matrix.pair_count(),
                with_evidence,
                views_used,
                out.display()
            );
            if stats.zero_visibility_discards > 0 {
                println!(
                    "skipped {} zero-visibility (view, superpoint) combinations",
                    stats.zero_visibility_discards
                );
            }
            Ok(())
        }
        Command::Grow {
            scene,
            segs,
            matrix,
            out_dir,
            ply,
            config,
        } => {
            let config = config.build()?;
            let data = segfuse::io::load_scene(&scene, None)?;
            let partition = load_partition(&data, &scene, segs.as_deref(), &config)?;
            let adjacency = compute_adjacency(&data, &partition, &config);
            let matrix = AffinityMatrix::load(&matrix, &adjacency, config.min_pair_weight)?;
            let labeling = segfuse::regiongrow::progressive_grow(
                &partition,
                &adjacency,
                &matrix,
                &config.growth(),
            )?;
            let point_instances = segfuse::regiongrow::labels_to_points(&partition, &labeling);
            let confidences = segfuse::regiongrow::region_confidences(&matrix, &labeling);
            let output = segfuse::pipeline::PipelineOutput {
                partition,
                adjacency,
                matrix,
                labeling,
                point_instances,
                confidences,
                views_used: data.views.len(),
                affinity_stats: Default::default(),
                report: None,
                eval_skipped: false,
            };
            write_outputs(&output, &data.cloud, &out_dir, ply)?;
            println!(
                "{} regions -> {}",
                output.labeling.num_regions(),
                out_dir.display()
            );
            Ok(())
        }
        Command::Run {
            scene,
            out_dir,
            eval,
            ply,
            config,
        } => {
            let config = config.build()?;
            let data = segfuse::io::load_scene(&scene, None)?;
            let output = run_on_scene(&data, Some(&scene), &config, eval)?;
            write_outputs(&output, &data.cloud, &out_dir, ply)?;
            println!(
                "{} regions from {} superpoints ({} views) -> {}",
                output.labeling.num_regions(),
                output.partition.num_superpoints(),
                output.views_used,
                out_dir.display()
            );
            if output.affinity_stats.zero_visibility_discards > 0 {
                println!(
                    "skipped {} zero-visibility (view, superpoint) combinations",
                    output.affinity_stats.zero_visibility_discards
                );
            }
            if let Some(report) = &output.report {
                print!("{}", report.text_table());
            } else if output.eval_skipped {
                println!("evaluation skipped: ground truth has no annotated instances");
            }
            Ok(())
        }
        Command::Eval {
            pred,
            gt,
            confidences,
            json,
        } => {
            let pred_ids = segfuse::io::load_instances_txt(&pred)?;
            let gt_ids = segfuse::io::load_instances_txt(&gt)?;
            if pred_ids.len() != gt_ids.len() {
                return Err(Error::invalid(format!(
                    "{} predicted ids vs {} ground-truth ids",
                    pred_ids.len(),
                    gt_ids.len()
                )));
            }
            let conf_map: BTreeMap<u32, f64> = match confidences {
                Some(path) => {
                    let text =
                        std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                    let raw: BTreeMap<String, f64> = serde_json::from_str(&text)
                        .map_err(|e| Error::format(&path, format!("bad JSON: {e}")))?;
                    raw.into_iter()
                        .map(|(k, v)| {
                            k.parse::<u32>()
                                .map(|id| (id, v))
                                .map_err(|_| Error::format(&path, format!("bad instance id {k}")))
                        })
                        .collect::<Result<_, _>>()?
                }
                None => BTreeMap::new(),
            };
            let mut groups: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
            for (point, &id) in pred_ids.iter().enumerate() {
                if id != 0 {
                    groups.entry(id).or_default().push(point as u32);
                }
            }
            let predictions: Vec<InstancePrediction> = groups
                .into_iter()
                .map(|(id, points)| InstancePrediction {
                    points,
                    confidence: conf_map.get(&id).copied().unwrap_or(1.0).clamp(0.0, 1.0),
                })
                .collect();
            match average_precision(&predictions, &gt_ids, &standard_iou_thresholds())? {
                Some(report) => {
                    print!("{}", report.text_table());
                    if let Some(path) = json {
                        std::fs::write(
                            &path,
                            serde_json::to_string_pretty(&report).expect("serialize report"),
                        )
                        .map_err(|e| Error::io(&path, e))?;
                    }
                }
                None => println!("evaluation skipped: ground truth has no annotated instances"),
            }
            Ok(())
        }
        Command::Query {
            scene,
            instances,
            prompt,
            threshold,
            vote_radius,
            json,
            ply,
        } => {
            let data = segfuse::io::load_scene(&scene, None)?;
            let instance_ids = segfuse::io::load_instances_txt(&instances)?;
            if instance_ids.len() != data.cloud.len() {
                return Err(Error::invalid(format!(
                    "{} instance ids for {} points",
                    instance_ids.len(),
                    data.cloud.len()
                )));
            }
            let semantic = data.semantic.as_ref().ok_or_else(|| {
                Error::MissingPath(scene.join("semantic"))
            })?;
            let table = data.semantic_table.as_ref().expect("table accompanies semantics");
            let point_labels =
                backproject_semantics(&data.views, semantic, &data.cloud.positions, vote_radius)?;
            let result = query_instances(&instance_ids, &point_labels, table, &prompt, threshold)?;
            let rendered = serde_json::to_string_pretty(&result).expect("serialize result");
            println!("{rendered}");
            if let Some(path) = json {
                std::fs::write(&path, rendered).map_err(|e| Error::io(&path, e))?;
            }
            if let Some(path) = ply {
                let matched: std::collections::HashSet<u32> =
                    result.matches.iter().map(|m| m.instance_id).collect();
                let mut colored = data.cloud.clone();
                colored.colors = Some(
                    instance_ids
                        .iter()
                        .map(|id| {
                            if matched.contains(id) {
                                [255, 32, 32]
                            } else {
                                [120, 120, 120]
                            }
                        })
                        .collect(),
                );
                segfuse::io::save_ply(&path, &colored)?;
            }
            Ok(())
        }
        Command::Ablate {
            scenes,
            json,
            config,
        } => {
            let config = config.build()?;
            let rows = run_ablation(&scenes, &config)?;
            print!("{}", ablation_table(&rows));
            if let Some(path) = json {
                std::fs::write(
                    &path,
                    serde_json::to_string_pretty(&rows).expect("serialize rows"),
                )
                .map_err(|e| Error::io(&path, e))?;
            }
            Ok(())
        }
    }
}

fn load_partition(
    data: &segfuse::io::SceneData,
    scene: &Path,
    segs: Option<&Path>,
    config: &PipelineConfig,
) -> Result<segfuse::oversegment::SuperpointPartition, Error> {
    match segs {
        Some(path) => segfuse::oversegment::load_segs_json(path, data.cloud.len()),
        None => compute_partition(data, Some(scene), config),
    }
}
