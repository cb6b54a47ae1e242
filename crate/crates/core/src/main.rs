use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use matchmaker::axis::{AxisSource, Role};
use matchmaker::complement::HousingShape;
use matchmaker::pipeline::{self, Manifest, PipelineConfig, Status, Units};
use matchmaker::{Error, Result};

#[derive(Parser)]
#[command(name = "matchmaker", version, about = "Clearance-controlled assembly pairs from meshes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

/// Flags shared by every subcommand. They override the config file.
/// Lengths are in `--units`.
#[derive(Args)]
struct Common {
    /// JSON config mirroring the pipeline settings (lengths in meters).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    units: Option<Units>,
    #[arg(long, global = true)]
    clearance: Option<f64>,
    #[arg(long, global = true)]
    resolution: Option<usize>,
    #[arg(long, global = true)]
    axis_source: Option<AxisSource>,
    /// `+z`, `-x`, ... For repair, verify and bench: the plug's withdrawal
    /// direction. Otherwise the direction the mating part travels onto the asset.
    #[arg(long, global = true, allow_hyphen_values = true)]
    axis: Option<String>,
    /// Role of the asset when the axis is given by hand.
    #[arg(long, global = true)]
    role: Option<Role>,
    /// Part eroded by repair.
    #[arg(long, global = true)]
    erode: Option<Role>,
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    #[arg(long, global = true)]
    vlm_endpoint: Option<String>,
    #[arg(long, global = true)]
    vlm_model: Option<String>,
    /// Replay a recorded transcript instead of calling the endpoint.
    #[arg(long, global = true)]
    vlm_fixture: Option<PathBuf>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Repair (plug, receptacle) pairs to the requested clearance.
    Repair(PairArgs),
    /// Check (plug, receptacle) pairs without changing them.
    Verify(PairArgs),
    /// Generate counterparts for one asset, one pair per seed.
    Generate {
        asset: PathBuf,
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        #[arg(long)]
        housing: Option<HousingShape>,
        #[arg(long)]
        height: Option<f64>,
        #[arg(long)]
        wall: Option<f64>,
        /// Write completion requests here and import candidates found there.
        #[arg(long)]
        handoff_dir: Option<PathBuf>,
    },
    /// Write the contact surface and axis report of each asset.
    Extract {
        #[arg(required = true)]
        assets: Vec<PathBuf>,
    },
    /// Per-asset scores and dataset diversity over mesh files or directories.
    Metrics {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Also pick a maximally diverse subset of this size.
        #[arg(long)]
        select: Option<usize>,
    },
    /// Time repair stages on pairs; prints one JSON row per pair.
    Bench(PairArgs),
}

#[derive(Args)]
struct PairArgs {
    /// Alternating plug and receptacle files.
    files: Vec<PathBuf>,
    /// Directory whose subdirectories each hold a plug and a receptacle mesh.
    #[arg(long)]
    batch: Option<PathBuf>,
}

fn is_mesh(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("obj" | "stl")
    )
}

fn sorted_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", dir.display())))?
        .flatten()
        .map(|e| e.path())
        .collect();
    v.sort();
    Ok(v)
}

fn find_part(dir: &Path, stem: &str) -> Option<PathBuf> {
    ["obj", "stl"].iter().map(|ext| dir.join(format!("{stem}.{ext}"))).find(|p| p.is_file())
}

fn collect_pairs(args: &PairArgs) -> Result<Vec<(PathBuf, PathBuf)>> {
    if args.files.len() % 2 != 0 {
        return Err(Error::InvalidArgument("pair files must come as plug receptacle ...".into()));
    }
    let mut pairs: Vec<(PathBuf, PathBuf)> = args.files.chunks(2).map(|c| (c[0].clone(), c[1].clone())).collect();
    if let Some(root) = &args.batch {
        for dir in sorted_dir(root)?.into_iter().filter(|p| p.is_dir()) {
            // a missing part still makes an entry, so the manifest shows it
            let plug = find_part(&dir, "plug").unwrap_or_else(|| dir.join("plug.obj"));
            let receptacle = find_part(&dir, "receptacle").unwrap_or_else(|| dir.join("receptacle.obj"));
            pairs.push((plug, receptacle));
        }
    }
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no pairs given".into()));
    }
    Ok(pairs)
}

fn build_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::from_json_file(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(u) = common.units {
        cfg.units = u;
    }
    let scale = cfg.units.scale();
    if let Some(c) = common.clearance {
        cfg.clearance = c * scale;
    }
    if let Some(r) = common.resolution {
        cfg.resolution = r;
    }
    if let Some(s) = common.axis_source {
        cfg.axis_source = s;
    }
    if let Some(a) = &common.axis {
        cfg.axis = Some(a.clone());
        if common.axis_source.is_none() {
            cfg.axis_source = AxisSource::User;
        }
    }
    if let Some(r) = common.role {
        cfg.role = Some(r);
    }
    if let Some(r) = common.erode {
        cfg.erode_target = r;
    }
    if let Some(p) = common.parallelism {
        cfg.parallelism = p;
    }
    if let Some(e) = &common.vlm_endpoint {
        cfg.vlm.endpoint = Some(e.clone());
    }
    if let Some(m) = &common.vlm_model {
        cfg.vlm.model = m.clone();
    }
    if let Some(f) = &common.vlm_fixture {
        cfg.vlm.fixture = Some(f.clone());
    }
    Ok(cfg)
}

fn summarize(m: &Manifest, out: &Path) -> ExitCode {
    println!(
        "{} ok, {} rejected, {} error; manifest {}",
        m.count(Status::Ok),
        m.count(Status::Rejected),
        m.count(Status::Error),
        out.join(pipeline::MANIFEST_FILE).display()
    );
    for e in m.entries.iter().filter(|e| e.status != Status::Ok) {
        println!("  {} {:?}: {}", e.uid, e.status, e.reason.as_deref().unwrap_or(""));
    }
    if m.all_ok() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = build_config(&cli.common)?;
    let out = &cli.common.out;
    match cli.command {
        Command::Repair(args) => Ok(summarize(&pipeline::run_repair(&collect_pairs(&args)?, out, &cfg)?, out)),
        Command::Verify(args) => Ok(summarize(&pipeline::run_verify(&collect_pairs(&args)?, out, &cfg)?, out)),
        Command::Generate {
            asset,
            seeds,
            housing,
            height,
            wall,
            handoff_dir,
        } => {
            let scale = cfg.units.scale();
            if !seeds.is_empty() {
                cfg.seeds = seeds;
            }
            if let Some(h) = housing {
                cfg.housing.shape = h;
            }
            if let Some(h) = height {
                cfg.housing.height = Some(h * scale);
            }
            if let Some(w) = wall {
                cfg.housing.wall_thickness = Some(w * scale);
            }
            if handoff_dir.is_some() {
                cfg.handoff_dir = handoff_dir;
            }
            Ok(summarize(&pipeline::run_generate(&asset, out, &cfg)?, out))
        }
        Command::Extract { assets } => Ok(summarize(&pipeline::run_extract(&assets, out, &cfg)?, out)),
        Command::Metrics { inputs, select } => {
            let mut files = Vec::new();
            for p in inputs {
                if p.is_dir() {
                    files.extend(sorted_dir(&p)?.into_iter().filter(|f| f.is_file() && is_mesh(f)));
                } else {
                    files.push(p);
                }
            }
            let r = pipeline::run_metrics(&files, out, &cfg, select)?;
            if let Some(d) = &r.diversity {
                println!("{} assets, diversity {:.4}", r.assets.len(), d.diversity);
            }
            if let Some(sel) = &r.selected {
                println!("selected: {}", sel.join(" "));
            }
            for f in &r.failed {
                println!("  failed {}: {}", f.path.display(), f.reason);
            }
            Ok(if r.failed.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Bench(args) => {
            for row in pipeline::run_benchmark(&collect_pairs(&args)?, &cfg)? {
                println!("{}", serde_json::to_string(&row)?);
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
