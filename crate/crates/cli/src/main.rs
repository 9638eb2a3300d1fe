use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use ldl_core::chamfer::chamfer_rank;
use ldl_core::directions::{assign_segment, directions_3d, vanishing_points_2d, DEFAULT_LINE_TOL};
use ldl_core::eval::{parse_thresholds, pose_error, summarize, PoseError, DEFAULT_THRESHOLDS};
use ldl_core::io;
use ldl_core::lines::{filter_lines_2d, filter_lines_3d, LineMap3D, QueryLines2D};
use ldl_core::pipeline::{localize, PipelineConfig, Ranker};
use ldl_core::privacy::{filter_keypoints_2d, filter_keypoints_2d_principal, filter_keypoints_3d, DEFAULT_LAMBDA_2D, DEFAULT_LAMBDA_3D};
use ldl_core::refine::IdMatcher;
use ldl_core::rotations::enumerate_rotations;
use ldl_core::search::{ldf_2d, ldf_3d, rank_poses, sample_query_points, translation_pool};
use ldl_core::sim::{generate_scene, render_query, sample_pose, SceneKind, SimConfig};
use ldl_core::sphere::{orientation_from_ypr, Pose, Segment3D, Vec3};
use ldl_core::Error;

/// Panoramic localization against 3D line maps.
#[derive(Parser)]
#[command(name = "ldl", version)]
struct Cli {
    /// Maximum number of worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic map, a rendered query and its ground-truth pose.
    Generate(GenerateArgs),
    /// Localize a query against a map.
    Localize(LocalizeArgs),
    /// Compare predicted poses with ground truth.
    Eval(EvalArgs),
    /// Keep only keypoints close to a line.
    FilterKeypoints(FilterArgs),
    /// Time the pipeline stages.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Simulation config file; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scene: Option<SceneKind>,
    /// Room size in meters, `x,y,z`.
    #[arg(long, value_parser = parse_vec3)]
    extents: Option<Vec3>,
    #[arg(long)]
    clutter: Option<usize>,
    /// Endpoint noise, degrees.
    #[arg(long)]
    noise: Option<f64>,
    /// Outlier arcs as a fraction of the rendered arcs.
    #[arg(long)]
    outliers: Option<f64>,
    /// Fraction of rendered arcs to drop.
    #[arg(long)]
    drop: Option<f64>,
    #[arg(long)]
    keypoints: Option<usize>,
    /// Keypoint bearing noise, degrees.
    #[arg(long)]
    keypoint_noise: Option<f64>,
    #[arg(long)]
    keypoint_outliers: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// `random`, or `x,y,z,yaw,pitch,roll` with angles in degrees.
    #[arg(long, default_value = "random")]
    pose: String,
    #[arg(long)]
    out_map: PathBuf,
    #[arg(long)]
    out_query: PathBuf,
    #[arg(long)]
    out_gt: PathBuf,
}

#[derive(Args)]
struct LocalizeArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    query: PathBuf,
    /// Pipeline config file; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    top_k: Option<usize>,
    /// Target number of grid translations.
    #[arg(long)]
    nt: Option<usize>,
    #[arg(long)]
    no_refine: bool,
    /// Rank with a baseline instead of line distance fields.
    #[arg(long, value_parser = ["chamfer"])]
    baseline: Option<String>,
    /// Pose file whose camera center is added to the translation pool.
    #[arg(long)]
    inject_gt: Option<PathBuf>,
    /// RANSAC seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Results file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted pose or results files.
    #[arg(long, num_args = 1.., required = true)]
    pred: Vec<PathBuf>,
    /// Ground-truth pose files, one per prediction.
    #[arg(long, num_args = 1.., required = true)]
    gt: Vec<PathBuf>,
    #[arg(long, default_value = DEFAULT_THRESHOLDS)]
    thresholds: String,
    /// Writes per-pose errors and per-threshold accuracy as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("input").required(true).args(["map", "query"]))]
struct FilterArgs {
    #[arg(long)]
    map: Option<PathBuf>,
    #[arg(long)]
    query: Option<PathBuf>,
    /// Radians for a query, meters for a map.
    #[arg(long)]
    lambda: Option<f64>,
    /// Only lines along one of the three principal directions count.
    #[arg(long)]
    principal_only: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    query: PathBuf,
    #[arg(long, default_value_t = 200)]
    nt: usize,
    #[arg(long, default_value_t = 5)]
    repeat: usize,
}

fn parse_vec3(s: &str) -> Result<Vec3, String> {
    let v: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
    match v[..] {
        [x, y, z] => Ok(Vec3::new(x, y, z)),
        _ => Err(format!("expected x,y,z, got `{s}`")),
    }
}

fn parse_pose(s: &str) -> ldl_core::Result<Pose> {
    let bad = || Error::InvalidArgument(format!("pose must be `random` or x,y,z,yaw,pitch,roll, got `{s}`"));
    let v: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad())?;
    let [x, y, z, yaw, pitch, roll] = v[..] else { return Err(bad()) };
    let r = orientation_from_ypr(yaw.to_radians(), pitch.to_radians(), roll.to_radians()).transpose();
    Pose::from_center(r, &Vec3::new(x, y, z))
}

fn read_map(path: &Path) -> ldl_core::Result<LineMap3D> {
    io::map_from_str(&io::read_file(path)?)
}

fn read_query(path: &Path) -> ldl_core::Result<QueryLines2D> {
    io::query_from_str(&io::read_file(path)?)
}

fn read_pose(path: &Path) -> ldl_core::Result<Pose> {
    io::pose_from_str(&io::read_file(path)?)
}

fn generate(a: GenerateArgs) -> ldl_core::Result<()> {
    let mut cfg = match &a.config {
        Some(p) => io::sim_config_from_str(&io::read_file(p)?)?,
        None => SimConfig::default(),
    };
    if let Some(v) = a.scene {
        cfg.scene_kind = v;
    }
    if let Some(v) = a.extents {
        cfg.extents = [v.x, v.y, v.z];
    }
    if let Some(v) = a.clutter {
        cfg.n_clutter_lines = v;
    }
    if let Some(v) = a.noise {
        cfg.endpoint_noise = v.to_radians();
    }
    if let Some(v) = a.outliers {
        cfg.outlier_arcs = v;
    }
    if let Some(v) = a.drop {
        cfg.drop_fraction = v;
    }
    if let Some(v) = a.keypoints {
        cfg.n_keypoints = v;
    }
    if let Some(v) = a.keypoint_noise {
        cfg.keypoint_noise = v.to_radians();
    }
    if let Some(v) = a.keypoint_outliers {
        cfg.keypoint_outliers = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    let map = generate_scene(&cfg)?;
    let gt = if a.pose == "random" { sample_pose(&map, &cfg)? } else { parse_pose(&a.pose)? };
    let query = render_query(&map, &gt, &cfg)?;
    io::write_file(&a.out_map, &io::map_to_string(&map))?;
    io::write_file(&a.out_query, &io::query_to_string(&query))?;
    io::write_file(&a.out_gt, &io::pose_to_string(&gt))
}

fn localize_cmd(a: LocalizeArgs) -> ldl_core::Result<()> {
    let map = read_map(&a.map)?;
    let query = read_query(&a.query)?;
    let mut cfg = match &a.config {
        Some(p) => io::pipeline_config_from_str(&io::read_file(p)?)?,
        None => PipelineConfig::default(),
    };
    if let Some(k) = a.top_k {
        cfg.search.top_k = k;
    }
    if let Some(n) = a.nt {
        cfg.search.n_translations = n;
    }
    if a.no_refine {
        cfg.refine = false;
    }
    if a.baseline.is_some() {
        cfg.ranker = Ranker::Chamfer;
    }
    if let Some(s) = a.seed {
        cfg.ransac.seed = s;
    }
    let extra = match &a.inject_gt {
        Some(p) => vec![read_pose(p)?.center()],
        None => Vec::new(),
    };
    let matcher = IdMatcher { window: cfg.match_window };
    let localization = localize(&query, &map, &cfg, Some(&matcher), &extra)?;
    let text = io::results_to_string(&io::Results { config: cfg, localization });
    match &a.out {
        Some(p) => io::write_file(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// A prediction is either a pose file or a results file.
fn read_prediction(path: &Path) -> ldl_core::Result<Pose> {
    let text = io::read_file(path)?;
    match io::pose_from_str(&text) {
        Ok(p) => Ok(p),
        Err(pose_err) => match io::results_from_str(&text) {
            Ok(r) => Ok(*r.localization.best_pose()),
            Err(_) => Err(pose_err),
        },
    }
}

fn eval_cmd(a: EvalArgs) -> ldl_core::Result<()> {
    if a.pred.len() != a.gt.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions but {} ground-truth poses",
            a.pred.len(),
            a.gt.len()
        )));
    }
    let thresholds = parse_thresholds(&a.thresholds)?;
    let errors: Vec<PoseError> = a
        .pred
        .iter()
        .zip(&a.gt)
        .map(|(p, g)| Ok(pose_error(&read_prediction(p)?, &read_pose(g)?)))
        .collect::<ldl_core::Result<_>>()?;
    let s = summarize(&errors, &thresholds);
    println!("poses: {}", s.count);
    println!("median translation error: {:.4} m", s.median_translation);
    println!("median rotation error: {:.4} deg", s.median_rotation_deg);
    println!("{:>10} {:>10} {:>10}", "meters", "degrees", "accuracy");
    for (t, acc) in &s.accuracy {
        println!("{:>10} {:>10} {:>10.4}", t.meters, t.degrees, acc);
    }
    if let Some(path) = &a.csv {
        let csv_err = |e: csv::Error| Error::Io(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["row", "pred", "translation_m", "rotation_deg", "threshold_m", "threshold_deg", "accuracy"])
            .map_err(csv_err)?;
        for (p, e) in a.pred.iter().zip(&errors) {
            let row = ["pose".to_string(), p.display().to_string(), e.translation.to_string(), e.rotation_deg.to_string()];
            w.write_record(row.iter().map(String::as_str).chain(["", "", ""])).map_err(csv_err)?;
        }
        for (t, acc) in &s.accuracy {
            let row = ["threshold".to_string(), String::new(), String::new(), String::new(), t.meters.to_string(), t.degrees.to_string(), acc.to_string()];
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn filter_cmd(a: FilterArgs) -> ldl_core::Result<()> {
    if let Some(path) = &a.query {
        let q = read_query(path)?;
        let lambda = a.lambda.unwrap_or(DEFAULT_LAMBDA_2D);
        let kept = if a.principal_only {
            let vps = vanishing_points_2d(&q, 3, ldl_core::directions::DEFAULT_GRID_LEVEL)?;
            let principal = [vps.directions[0], vps.directions[1], vps.directions[2]];
            filter_keypoints_2d_principal(&q.keypoints, &q.arcs, lambda, &principal, DEFAULT_LINE_TOL)?
        } else {
            filter_keypoints_2d(&q.keypoints, &q.arcs, lambda)?
        };
        let out = QueryLines2D { arcs: q.arcs, keypoints: kept };
        return io::write_file(&a.out, &io::query_to_string(&out));
    }
    let map = read_map(a.map.as_deref().expect("clap requires one input"))?;
    let lambda = a.lambda.unwrap_or(DEFAULT_LAMBDA_3D);
    let segments: Vec<Segment3D> = if a.principal_only {
        let d = directions_3d(&map, 3, ldl_core::directions::DEFAULT_GRID_LEVEL)?;
        let principal = [d.directions[0], d.directions[1], d.directions[2]];
        map.segments()
            .iter()
            .filter(|s| assign_segment(s, &principal, DEFAULT_LINE_TOL).is_some())
            .copied()
            .collect()
    } else {
        map.segments().to_vec()
    };
    let kept = filter_keypoints_3d(map.keypoints(), &segments, lambda)?;
    io::write_file(&a.out, &io::map_to_string(&map.with_keypoints(kept)))
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn bench_cmd(a: BenchArgs) -> ldl_core::Result<()> {
    if a.repeat == 0 {
        return Err(Error::InvalidArgument("repeat must be positive".into()));
    }
    let map = read_map(&a.map)?;
    let query = read_query(&a.query)?;
    let cfg = PipelineConfig::default();
    let mut search = cfg.search;
    search.n_translations = a.nt;
    let stages = ["direction estimation", "rotation enumeration", "field computation", "ranking"];
    let mut times = vec![Vec::new(); stages.len()];
    let mut poses = 0;
    for _ in 0..a.repeat {
        let (map_f, removed) = filter_lines_3d(&map, cfg.filter_lambda)?;
        let query_f = filter_lines_2d(&query, removed)?;

        let t = Instant::now();
        let d2 = vanishing_points_2d(&query_f, cfg.k_2d, cfg.grid_level)?;
        let d3 = directions_3d(&map_f, cfg.k_3d, cfg.grid_level)?;
        times[0].push(t.elapsed().as_secs_f64());

        let t = Instant::now();
        let rotations = enumerate_rotations(&d2, &d3, &cfg.rotation)?.hypotheses;
        times[1].push(t.elapsed().as_secs_f64());

        let translations = translation_pool(&map_f, a.nt, search.margin)?;
        let points = sample_query_points(search.query_points)?;
        let t = Instant::now();
        std::hint::black_box(ldf_2d(&points, &query_f.arcs));
        for c in &translations {
            let pose = Pose::from_center(rotations[0].rotation, c)?;
            std::hint::black_box(ldf_3d(&points, map_f.segments(), &pose));
        }
        times[2].push(t.elapsed().as_secs_f64());

        let t = Instant::now();
        match cfg.ranker {
            Ranker::Ldf => rank_poses(&query_f, &map_f, &rotations, &translations, &search)?,
            Ranker::Chamfer => chamfer_rank(&query_f, &map_f, &rotations, &translations, search.top_k)?,
        };
        times[3].push(t.elapsed().as_secs_f64());
        poses = rotations.len() * translations.len();
    }
    println!("threads: {}", rayon::current_num_threads());
    println!("candidate poses: {poses}");
    println!("{:<22} {:>12} {:>12}", "stage", "mean_ms", "stdev_ms");
    for (name, t) in stages.iter().zip(&times) {
        let (m, s) = mean_std(t);
        println!("{:<22} {:>12.3} {:>12.3}", name, m * 1e3, s * 1e3);
    }
    Ok(())
}

fn run(cli: Cli) -> ldl_core::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("cannot configure {n} threads: {e}")))?;
    }
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Localize(a) => localize_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::FilterKeypoints(a) => filter_cmd(a),
        Command::Bench(a) => bench_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {e}", e.name());
            let code = match &e {
                Error::InvalidArgument(_) => 1,
                e if e.is_algorithmic() => 3,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}
