use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use relpose::config::Config;
use relpose::error::ErrorClass;
use relpose::geometry::rotation_angle;
use relpose::io::{self, FRAME_A_TO_Q};
use relpose::pipeline::{self, View};
use relpose::synth::{generate_scene, PoseRecord, SyntheticSceneSpec};
use relpose::Error;

#[derive(Parser)]
#[command(name = "relpose", version, about = "Relative object pose from descriptor maps and depth")]
struct Cli {
    /// Seed for scene generation and registration sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON file overriding any subset of the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Report format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene pair into --out.
    Synth {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Match masked descriptors; writes matches.csv.
    Match {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Register lifted matches; writes pose.json.
    Register {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        matches: PathBuf,
    },
    /// Score a predicted anchor-to-query pose against the scene's ground truth.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        pose: PathBuf,
    },
    /// Generate, match, register and evaluate in one run.
    E2e {
        #[arg(long)]
        spec: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Input => 2,
        ErrorClass::Empty => 3,
        ErrorClass::Registration => 4,
        ErrorClass::Internal => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(5);
        }
    }
    match std::panic::catch_unwind(|| run(&cli)) {
        Ok(Ok(report)) => match emit(&cli, &report) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(exit_code(&e))
            }
        },
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(5),
    }
}

fn load_config(path: Option<&Path>) -> Result<Config, Error> {
    let Some(path) = path else {
        return Ok(Config::default());
    };
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let config: Config = serde_json::from_slice(&bytes).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        field: "config",
        reason: e.to_string(),
    })?;
    config.validate().map_err(|e| Error::Format {
        path: path.to_path_buf(),
        field: "config",
        reason: e.to_string(),
    })?;
    Ok(config)
}

fn load_spec(path: &Path, seed: Option<u64>) -> Result<SyntheticSceneSpec, Error> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut spec: SyntheticSceneSpec = serde_json::from_slice(&bytes).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        field: "scene spec",
        reason: e.to_string(),
    })?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate().map_err(|e| Error::Format {
        path: path.to_path_buf(),
        field: "scene spec",
        reason: e.to_string(),
    })?;
    Ok(spec)
}

fn require_out(cli: &Cli) -> Result<&Path, Error> {
    cli.out.as_deref().ok_or_else(|| Error::Invalid {
        what: "arguments",
        reason: "--out is required for this command".into(),
    })
}

fn missing(manifest: &Path, field: &'static str) -> Error {
    Error::Format {
        path: manifest.to_path_buf(),
        field,
        reason: "required by this command but absent".into(),
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn run(cli: &Cli) -> Result<Value, Error> {
    let config = load_config(cli.config.as_deref())?;
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Synth { spec } => {
            let spec = load_spec(spec, cli.seed)?;
            let out = require_out(cli)?;
            let scene = generate_scene(&spec)?;
            io::save_scene(out, &scene)?;
            Ok(json!({
                "manifest": io::MANIFEST_NAME,
                "seed": spec.seed,
                "mask_a_pixels": scene.mask_a.count(),
                "mask_q_pixels": scene.mask_q.count(),
                "gt_matches": scene.gt_matches.len(),
                "object_diameter": scene.model.diameter,
                "gt_pose": to_value(&PoseRecord::from(&scene.gt_pose)),
                "relative_rotation_deg": rotation_angle(&scene.gt_pose.rotation).to_degrees(),
                "pose_sampling": format!(
                    "anchor rotation uniform on SO(3); query rotation = anchor perturbed about a uniform axis by an angle uniform in [0, {}] deg",
                    spec.max_relative_rotation_deg
                ),
            }))
        }
        Command::Match { manifest } => {
            let s = io::load_scene(manifest)?;
            let matches = pipeline::match_views(view_a(&s), view_q(&s), &config)?;
            if let Some(out) = &cli.out {
                io::save_matches(&out.join("matches.csv"), &matches)?;
            }
            let mean = matches.pairs.iter().map(|m| m.distance).sum::<f64>() / matches.len() as f64;
            Ok(json!({
                "matches": matches.len(),
                "capacity": matches.capacity,
                "mean_distance": mean,
            }))
        }
        Command::Register { manifest, matches } => {
            let s = io::load_scene(manifest)?;
            let matches = io::load_matches(matches)?;
            let est = pipeline::register_matches(&matches, view_a(&s), view_q(&s), &config, seed)?;
            if let Some(out) = &cli.out {
                io::save_pose(&out.join("pose.json"), &est.transform, FRAME_A_TO_Q)?;
            }
            let mut report = json!({
                "matches": matches.len(),
                "inliers": est.inliers.len(),
                "rmse": est.rmse,
                "pose": to_value(&PoseRecord::from(&est.transform)),
            });
            if let Some(gt) = &s.gt_pose {
                report["rotation_error_deg"] = json!(est.transform.rotation_error(gt).to_degrees());
                report["translation_error_m"] = json!(est.transform.translation_error(gt));
            }
            Ok(report)
        }
        Command::Evaluate { manifest, pose } => {
            let s = io::load_scene(manifest)?;
            let pred = io::load_pose(pose, FRAME_A_TO_Q)?;
            let model = s.model.as_ref().ok_or_else(|| missing(manifest, "object_model"))?;
            let pa = s.object_pose_a.as_ref().ok_or_else(|| missing(manifest, "object_pose_a"))?;
            let pq = s.object_pose_q.as_ref().ok_or_else(|| missing(manifest, "object_pose_q"))?;
            let metrics = pipeline::evaluate_pose(model, &pred, pa, pq, &s.intrinsics_q, &s.depth_q)?;
            let mut report = to_value(&metrics);
            if let Some(gt) = &s.gt_pose {
                report["rotation_error_deg"] = json!(pred.rotation_error(gt).to_degrees());
                report["translation_error_m"] = json!(pred.translation_error(gt));
            }
            Ok(report)
        }
        Command::E2e { spec } => {
            let spec = load_spec(spec, cli.seed)?;
            let scene = generate_scene(&spec)?;
            let report = pipeline::run_scene(&scene, &config, spec.seed)?;
            if let Some(out) = &cli.out {
                io::save_scene(out, &scene)?;
                io::save_pose(&out.join("pose.json"), &report.pose.to_transform()?, FRAME_A_TO_Q)?;
            }
            let mut v = to_value(&report);
            v["seed"] = json!(spec.seed);
            Ok(v)
        }
    }
}

fn view_a(s: &io::LoadedScene) -> View<'_> {
    View {
        fmap: &s.fmap_a,
        mask: &s.mask_a,
        depth: &s.depth_a,
        intrinsics: &s.intrinsics_a,
    }
}

fn view_q(s: &io::LoadedScene) -> View<'_> {
    View {
        fmap: &s.fmap_q,
        mask: &s.mask_q,
        depth: &s.depth_q,
        intrinsics: &s.intrinsics_q,
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    let key = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match v {
        Value::Object(map) => {
            for (k, x) in map {
                flatten(&key(k), x, out);
            }
        }
        Value::Array(items) => {
            for (i, x) in items.iter().enumerate() {
                flatten(&key(&i.to_string()), x, out);
            }
        }
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        Value::Null => out.push((prefix.to_string(), String::new())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

/// CSV reports are two rows: flattened keys, then values.
fn render(format: Format, report: &Value) -> String {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("json value");
            s.push('\n');
            s
        }
        Format::Csv => {
            let mut fields = Vec::new();
            flatten("", report, &mut fields);
            let quote = |s: &str| {
                if s.contains([',', '"', '\n']) {
                    format!("\"{}\"", s.replace('"', "\"\""))
                } else {
                    s.to_string()
                }
            };
            let keys: Vec<String> = fields.iter().map(|(k, _)| quote(k)).collect();
            let vals: Vec<String> = fields.iter().map(|(_, v)| quote(v)).collect();
            format!("{}\n{}\n", keys.join(","), vals.join(","))
        }
    }
}

fn emit(cli: &Cli, report: &Value) -> Result<(), Error> {
    let text = render(cli.format, report);
    if let Some(out) = &cli.out {
        let name = match cli.format {
            Format::Json => "report.json",
            Format::Csv => "report.csv",
        };
        std::fs::create_dir_all(out).map_err(|source| Error::Io {
            path: out.clone(),
            source,
        })?;
        let path = out.join(name);
        std::fs::write(&path, &text).map_err(|source| Error::Io { path, source })?;
    }
    print!("{text}");
    Ok(())
}
