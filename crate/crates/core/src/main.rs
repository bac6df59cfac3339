use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use morphofuse::fusion::{parse_sweep, FusionMode};
use morphofuse::phantom::{self, PhantomKind, DEFAULT_SEED};
use morphofuse::pipeline::{
    cmd_export_viewer, cmd_followup, cmd_fuse, cmd_map, cmd_spine, ConfigFile, D2Normalization, FollowupParams,
    MapArgs, Outcome, SpineParams,
};
use morphofuse::registration::DistanceMetric;
use morphofuse::texture::{CriterionKind, MappingCriterion, DEFAULT_SEARCH_RADIUS};
use morphofuse::Error;

#[derive(Parser)]
#[command(
    name = "morphofuse",
    version,
    about = "Bone morphology and tissue fusion from CT/MRI follow-up exams"
)]
struct Cli {
    /// TOML file whose keys override the command-line flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (all cores when unset).
    #[arg(long, global = true, env = "MORPHOFUSE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare baseline and follow-up exams bone by bone.
    Followup(FollowupArgs),
    /// Characterise vertebrae of one or more exams.
    Spine(SpineArgs),
    /// Write a synthetic dataset with ground truth.
    Phantom {
        /// wrist-pair, spine-healthy, spine-fractured or sphere-dent
        kind: PhantomKind,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Package a followup or spine bundle for the browser viewer.
    ExportViewer {
        bundle: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Map grey levels of an exam onto one bone surface.
    Map {
        exam: PathBuf,
        #[arg(long)]
        label: i32,
        /// Mesh to texture instead of the exam's own surface.
        #[arg(long)]
        mesh: Option<PathBuf>,
        #[arg(long, default_value = "external")]
        criterion: CriterionKind,
        #[arg(long, default_value_t = DEFAULT_SEARCH_RADIUS)]
        radius: f64,
        /// Rescale grey levels to [0, 1] before mapping.
        #[arg(long)]
        normalize: bool,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Fuse the d1 and d2 channels of a mesh.
    Fuse {
        mesh: PathBuf,
        #[arg(long, default_value = "multiply")]
        mode: FusionMode,
        #[arg(long, conflicts_with = "sweep")]
        epsilon: Option<f64>,
        /// Comma separated epsilons, e.g. "1,0.5,0.2".
        #[arg(long)]
        sweep: Option<String>,
        #[arg(short, long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct FollowupArgs {
    baseline: PathBuf,
    followup: PathBuf,
    /// Output bundle directory.
    #[arg(short, long)]
    out: PathBuf,
    /// Grey-level mapping criterion: euclidean, internal or external [default: external].
    #[arg(long)]
    criterion: Option<CriterionKind>,
    /// Nearest-voxel search radius in mm [default: 5].
    #[arg(long)]
    radius: Option<f64>,
    /// Comma separated epsilons for d1 + eps * d2 [default: 1,0.5,0.2].
    #[arg(long)]
    sweep: Option<String>,
    /// Relative RMS change that ends ICP [default: 1e-6].
    #[arg(long)]
    icp_tol: Option<f64>,
    /// ICP iteration cap [default: 100].
    #[arg(long)]
    icp_max_iters: Option<usize>,
    /// Drop the worst 10% of ICP pairs each iteration.
    #[arg(long)]
    trim: bool,
    /// Normalise d2 over the whole district instead of per bone.
    #[arg(long)]
    district: bool,
    /// Fused values above this count as detections in the report [default: 0.5].
    #[arg(long)]
    detection_threshold: Option<f64>,
    /// Measure d2 to the nearest surface point instead of the nearest vertex.
    #[arg(long)]
    point_to_triangle: bool,
}

#[derive(Args)]
struct SpineArgs {
    #[arg(required = true)]
    exams: Vec<PathBuf>,
    /// Output bundle directory.
    #[arg(short, long)]
    out: PathBuf,
    /// Fixed KDE bandwidth in mm instead of Silverman's rule.
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Nearest-voxel search radius in mm [default: 5].
    #[arg(long)]
    radius: Option<f64>,
}

fn followup_params(a: &FollowupArgs, cfg: &ConfigFile) -> morphofuse::Result<FollowupParams> {
    let mut p = FollowupParams::default();
    if let Some(c) = a.criterion {
        p.criterion = c;
    }
    if let Some(r) = a.radius {
        p.search_radius_mm = r;
    }
    if let Some(s) = &a.sweep {
        p.epsilon_sweep = parse_sweep(s)?;
    }
    if let Some(t) = a.icp_tol {
        p.icp.tol = t;
    }
    if let Some(n) = a.icp_max_iters {
        p.icp.max_iters = n;
    }
    p.icp.trim |= a.trim;
    if a.district {
        p.normalization = D2Normalization::District;
    }
    if let Some(t) = a.detection_threshold {
        p.detection_threshold = t;
    }
    if a.point_to_triangle {
        p.distance = DistanceMetric::PointToTriangle;
    }
    cfg.apply_followup(&mut p);
    Ok(p)
}

fn spine_params(a: &SpineArgs, cfg: &ConfigFile) -> SpineParams {
    let mut p = SpineParams::default();
    if a.bandwidth.is_some() {
        p.bandwidth_mm = a.bandwidth;
    }
    if let Some(r) = a.radius {
        p.search_radius_mm = r;
    }
    cfg.apply_spine(&mut p);
    p
}

fn ensure_dir(dir: &Path) -> morphofuse::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn run(cli: Cli, cfg: ConfigFile) -> morphofuse::Result<Outcome> {
    match cli.command {
        Command::Followup(a) => {
            let params = followup_params(&a, &cfg)?;
            ensure_dir(&a.out)?;
            cmd_followup(&a.baseline, &a.followup, &a.out, &params)
        }
        Command::Spine(a) => {
            let params = spine_params(&a, &cfg);
            ensure_dir(&a.out)?;
            let dirs: Vec<&Path> = a.exams.iter().map(PathBuf::as_path).collect();
            cmd_spine(&dirs, &a.out, &params)
        }
        Command::Phantom { kind, seed, out } => {
            phantom::generate(kind, &out, seed)?;
            Ok(Outcome::Success)
        }
        Command::ExportViewer { bundle, out } => cmd_export_viewer(&bundle, &out),
        Command::Map {
            exam,
            label,
            mesh,
            criterion,
            radius,
            normalize,
            out,
        } => cmd_map(&MapArgs {
            exam: &exam,
            label,
            mesh: mesh.as_deref(),
            criterion: MappingCriterion::new(criterion, radius)?,
            normalize,
            out: &out,
        }),
        Command::Fuse {
            mesh,
            mode,
            epsilon,
            sweep,
            out,
        } => {
            let epsilons = match (epsilon, sweep) {
                (Some(e), _) => vec![e],
                (None, Some(s)) => parse_sweep(&s)?,
                (None, None) => vec![1.0],
            };
            cmd_fuse(&mesh, mode, &epsilons, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with 2 on usage errors, which would read as a partial run.
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let cfg = match cli.config.as_deref().map(ConfigFile::load).transpose() {
        Ok(c) => c.unwrap_or_default(),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.threads.or(cli.threads) {
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| run(cli, cfg)) {
        Ok(outcome) => ExitCode::from(outcome.exit_code() as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
