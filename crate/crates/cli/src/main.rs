mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Matrix3;
use poselift::bcd::{initialize, run_bcd, InitStrategy};
use poselift::dict::{learn_dictionary, preprocess, LearnConfig};
use poselift::em::run_em;
use poselift::eval::{pcp, per_joint_error_frames, reconstruction_error_frames, rescale_to_limb_length, PcpReport};
use poselift::geom::{calibration_matrix, camera_frame_poses, CameraMode, Hyperparams, PoseDictionary};
use poselift::io;
use poselift::synth::{generate_sequence, human_poses, render_heatmaps, skeleton, SynthConfig};
use poselift::Error;
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "poselift",
    version,
    about = "3D human pose from monocular 2D joints or heat maps with a sparse pose dictionary",
    args_override_self = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn a pose dictionary from 3D training poses.
    #[command(args_override_self = true)]
    LearnDict(LearnDictArgs),
    /// Reconstruct 3D poses from 2D joints.
    #[command(args_override_self = true)]
    Reconstruct(ReconstructArgs),
    /// Reconstruct 3D poses from per-joint heat maps, treating 2D joints as latent.
    #[command(args_override_self = true)]
    ReconstructEm(ReconstructEmArgs),
    /// Score estimated 3D poses against ground truth.
    #[command(args_override_self = true)]
    Eval(EvalArgs),
    /// Generate a synthetic sequence with its 2D projections and heat maps.
    #[command(args_override_self = true)]
    Synth(SynthArgs),
    /// Generate synthetic 3D training poses (millimetres).
    #[command(args_override_self = true)]
    SynthTrain(SynthTrainArgs),
}

#[derive(Args)]
struct ConfigArg {
    /// JSON object of flag values; explicit flags override it.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct LearnDictArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Training poses (pose3d file).
    #[arg(long)]
    train: PathBuf,
    /// Number of atoms.
    #[arg(long, default_value_t = 64)]
    k: usize,
    /// Sparsity weight of the coding step.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Upper bound on alternating rounds.
    #[arg(long, default_value_t = 30)]
    max_rounds: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Camera {
    Ortho,
    Persp,
}

impl From<Camera> for CameraMode {
    fn from(c: Camera) -> Self {
        match c {
            Camera::Ortho => CameraMode::Orthographic,
            Camera::Persp => CameraMode::Perspective,
        }
    }
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "ortho")]
    camera: Camera,
    /// Intrinsics in normalized coordinates: fx,fy,cx,cy or nine row-major entries.
    #[arg(long, value_parser = parse_calib)]
    calib: Option<Matrix3<f64>>,
    /// Weight of the L1 sparsity prior on the coefficients.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Weight of the temporal smoothness of the coefficients.
    #[arg(long, default_value_t = 20.0)]
    beta: f64,
    /// Weight of the temporal smoothness of the rotations.
    #[arg(long, default_value_t = 2.0)]
    gamma: f64,
    /// Precision of the 2D observation noise in normalized image units.
    #[arg(long, default_value_t = 4096.0)]
    nu: f64,
    /// Relative objective change that stops block coordinate descent.
    #[arg(long, default_value_t = 1e-6)]
    bcd_tol: f64,
    #[arg(long, default_value_t = 200)]
    bcd_max_iter: usize,
    /// `mean` for a rigid fit of the mean pose, or `file:<params.json>`.
    #[arg(long, default_value = "mean")]
    init: String,
}

impl ModelArgs {
    fn camera(&self) -> CameraMode {
        self.camera.into()
    }

    fn hyper(&self) -> Result<Hyperparams, Failure> {
        if self.camera() == CameraMode::Perspective && self.calib.is_none() {
            return Err(Failure::Usage("--camera persp requires --calib".into()));
        }
        let hyper = Hyperparams {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            nu: self.nu,
            calibration: self.calib,
            bcd_tol: self.bcd_tol,
            bcd_max_iter: self.bcd_max_iter,
            ..Hyperparams::default()
        };
        hyper.validate(self.camera()).map_err(|e| Failure::Usage(e.to_string()))?;
        Ok(hyper)
    }

    fn strategy(&self) -> Result<InitStrategy, Failure> {
        if self.init == "mean" {
            return Ok(InitStrategy::MeanPoseRigid);
        }
        match self.init.strip_prefix("file:") {
            Some(path) => Ok(InitStrategy::Provided(io::read_params(Path::new(path))?)),
            None => Err(Failure::Usage(format!(
                "--init must be `mean` or `file:<params>`, got `{}`",
                self.init
            ))),
        }
    }
}

fn parse_calib(s: &str) -> Result<Matrix3<f64>, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}")))
        .collect::<Result<_, _>>()?;
    match v.len() {
        4 => Ok(calibration_matrix(v[0], v[1], v[2], v[3])),
        9 => Ok(Matrix3::from_row_slice(&v)),
        n => Err(format!("expected 4 or 9 comma-separated values, got {n}")),
    }
}

#[derive(Args)]
struct ReconstructArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Observed 2D joints (pose2d file, normalized image coordinates).
    #[arg(long)]
    poses2d: PathBuf,
    #[arg(long)]
    dict: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    /// Per-iteration objective trace (JSON).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Estimated model parameters (JSON).
    #[arg(long)]
    params_out: Option<PathBuf>,
    /// Per-iteration objective series (CSV).
    #[arg(long)]
    plot_data: Option<PathBuf>,
    /// Camera-frame 3D poses (pose3d file).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReconstructEmArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Heat maps (MCHM binary file).
    #[arg(long)]
    heatmaps: PathBuf,
    #[arg(long)]
    dict: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    /// EM iterations; 0 returns the initialization.
    #[arg(long, default_value_t = 20)]
    em_iters: usize,
    /// Posterior-mean 2D joints of the final E-step (pose2d file).
    #[arg(long)]
    expected2d: Option<PathBuf>,
    /// Per-iteration surrogate trace (JSON).
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    params_out: Option<PathBuf>,
    /// Per-iteration surrogate series (CSV).
    #[arg(long)]
    plot_data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Metric {
    Pje,
    Rec,
    Pcp,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    est: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Metrics to compute; all of them when omitted.
    #[arg(long, value_enum, value_delimiter = ',')]
    metric: Vec<Metric>,
    /// PCP threshold as a fraction of the ground-truth part length.
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    /// Rescale both sequences to this dictionary's mean limb length first.
    #[arg(long, value_name = "DICT")]
    rescale_to: Option<PathBuf>,
    /// Restrict scoring to these joint indices.
    #[arg(long, value_delimiter = ',')]
    joints: Option<Vec<usize>>,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Per-frame metric series (CSV).
    #[arg(long)]
    plot_data: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    dict: PathBuf,
    #[arg(long, default_value_t = 30)]
    frames: usize,
    /// Standard deviation of the 2D noise, normalized image units.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Heat-map blob standard deviation in pixels; 0 renders single-pixel deltas.
    #[arg(long, default_value_t = 1.0)]
    heatmap_sigma: f64,
    /// Distractor blobs per frame, each replacing one joint's peak.
    #[arg(long, default_value_t = 0)]
    distractors: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "ortho")]
    camera: Camera,
    #[arg(long, default_value_t = 3)]
    active_atoms: usize,
    /// Heat-map side length in pixels.
    #[arg(long, default_value_t = 64)]
    grid: usize,
    /// Files are written as `<prefix>.truth3d.json`, `<prefix>.heatmaps.mchm`, and so on.
    #[arg(long)]
    out_prefix: String,
}

#[derive(Args)]
struct SynthTrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long, default_value_t = 2000)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

impl Failure {
    /// 2 bad input, 3 learning failure, 4 broken solver invariant.
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Core(e) if e.is_invariant_violation() => 4,
            Failure::Core(Error::Learning(_)) => 3,
            Failure::Core(_) => 2,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) => m.clone(),
            Failure::Core(e) => e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let args = match config::expand(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(m) => {
            eprintln!("error: {m}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::LearnDict(a) => learn_dict(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::ReconstructEm(a) => reconstruct_em(a),
        Command::Eval(a) => eval(a),
        Command::Synth(a) => synth(a),
        Command::SynthTrain(a) => synth_train(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn learn_dict(a: LearnDictArgs) -> Result<(), Failure> {
    let (poses, sk) = io::read_pose3d(&a.train)?;
    let train = preprocess(poses.frames(), &sk)?;
    let config = LearnConfig {
        k: a.k,
        alpha: a.alpha,
        seed: a.seed,
        max_rounds: a.max_rounds,
        ..LearnConfig::default()
    };
    let (dict, report) = learn_dictionary(&train, &config)?;
    if report.underdetermined {
        eprintln!(
            "warning: {} atoms exceed the {} training poses; the dictionary is underdetermined",
            a.k,
            train.poses.len()
        );
    }
    io::write_dictionary(&a.out, &dict)?;
    println!(
        "training reconstruction error {:.6} (pose units) after {} rounds",
        report.reconstruction_error, report.rounds
    );
    Ok(())
}

fn load_dict(path: &Path, p: usize) -> Result<PoseDictionary, Failure> {
    let dict = io::read_dictionary(path)?;
    if dict.joint_count() != p {
        return Err(Failure::Core(Error::Format(format!(
            "dictionary has {} joints, input has {p}",
            dict.joint_count()
        ))));
    }
    Ok(dict)
}

fn reconstruct(a: ReconstructArgs) -> Result<(), Failure> {
    let hyper = a.model.hyper()?;
    let (w, _) = io::read_pose2d(&a.poses2d)?;
    let dict = load_dict(&a.dict, w.joint_count())?;
    let strategy = a.model.strategy()?;
    let (init, diag) = initialize(&w, &dict, &hyper, a.model.camera(), &strategy)?;
    if !diag.degenerate_frames.is_empty() {
        eprintln!("warning: degenerate initial fit in frames {:?}", diag.degenerate_frames);
    }
    let (params, trace) = run_bcd(&w, &dict, &hyper, &init)?;
    if !trace.non_positive_depths.is_empty() {
        eprintln!("warning: non-positive depths at (frame, joint) {:?}", trace.non_positive_depths);
    }
    io::write_pose3d(&a.out, &camera_frame_poses(&params, &dict)?, dict.skeleton(), "normalized")?;
    if let Some(path) = &a.trace {
        io::write_bcd_trace(path, &trace)?;
    }
    if let Some(path) = &a.params_out {
        io::write_params(path, &params)?;
    }
    if let Some(path) = &a.plot_data {
        let mut csv = String::from("iteration,objective\n");
        for (i, f) in trace.objective.iter().enumerate() {
            let _ = writeln!(csv, "{i},{f:e}");
        }
        fs::write(path, csv)?;
    }
    println!(
        "{} iterations ({:?}), objective {:.9e}",
        trace.blocks.len(),
        trace.termination,
        trace.objective.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn reconstruct_em(a: ReconstructEmArgs) -> Result<(), Failure> {
    let hyper = Hyperparams {
        em_max_iter: a.em_iters,
        ..a.model.hyper()?
    };
    let maps = io::read_heatmaps(&a.heatmaps)?;
    let dict = load_dict(&a.dict, maps.joints())?;
    let strategy = a.model.strategy()?;
    let (params, trace) = run_em(&maps, &dict, &hyper, a.model.camera(), &strategy)?;
    io::write_pose3d(&a.out, &camera_frame_poses(&params, &dict)?, dict.skeleton(), "normalized")?;
    if let Some(path) = &a.expected2d {
        io::write_pose2d(path, &trace.final_expected, dict.skeleton(), "normalized")?;
    }
    if let Some(path) = &a.trace {
        io::write_json(path, &io::EmTraceFile::from(&trace))?;
    }
    if let Some(path) = &a.params_out {
        io::write_params(path, &params)?;
    }
    if let Some(path) = &a.plot_data {
        let mut csv = String::from("iteration,surrogate_before,surrogate_after,bcd_iterations\n");
        for (i, it) in trace.iterations.iter().enumerate() {
            let _ = writeln!(
                csv,
                "{},{:e},{:e},{}",
                i + 1,
                it.surrogate_before,
                it.surrogate_after,
                it.bcd_iterations
            );
        }
        fs::write(path, csv)?;
    }
    println!(
        "{} EM iterations ({:?})",
        trace.iterations.len(),
        trace.termination
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), Failure> {
    let (mut est, sk) = io::read_pose3d(&a.est)?;
    let (mut gt, _) = io::read_pose3d(&a.gt)?;
    let mut rescaled = None;
    if let Some(path) = &a.rescale_to {
        let target = io::read_dictionary(path)?.mean_limb_length;
        est = rescale_to_limb_length(&est, &sk, target)?;
        gt = rescale_to_limb_length(&gt, &sk, target)?;
        rescaled = Some(target);
    }
    let metrics = if a.metric.is_empty() {
        vec![Metric::Pje, Metric::Rec, Metric::Pcp]
    } else {
        a.metric.clone()
    };
    let subset = a.joints.as_deref();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut report = serde_json::Map::new();
    report.insert("frames".into(), json!(gt.len()));
    report.insert("rescaled_to".into(), json!(rescaled));
    let mut columns: Vec<(&str, Vec<Option<f64>>)> = Vec::new();
    for m in metrics {
        match m {
            Metric::Pje => {
                let frames = per_joint_error_frames(&est, &gt, &sk, subset)?;
                println!("pje {:.6}", mean(&frames));
                report.insert("pje".into(), json!({"mean": mean(&frames), "per_frame": frames}));
                columns.push(("pje", frames.into_iter().map(Some).collect()));
            }
            Metric::Rec => {
                let frames = reconstruction_error_frames(&est, &gt, subset)?;
                println!("rec {:.6}", mean(&frames));
                report.insert("rec".into(), json!({"mean": mean(&frames), "per_frame": frames}));
                columns.push(("rec", frames.into_iter().map(Some).collect()));
            }
            Metric::Pcp => {
                let r: PcpReport = pcp(&est, &gt, &sk, a.tau, subset)?;
                println!("pcp {:.6} (tau {})", r.overall, a.tau);
                columns.push(("pcp", r.per_frame.clone()));
                let mut v = serde_json::to_value(&r).map_err(|e| Error::Format(e.to_string()))?;
                v["tau"] = json!(a.tau);
                report.insert("pcp".into(), v);
            }
        }
    }
    if let Some(path) = &a.report {
        io::write_json(path, &report)?;
    }
    if let Some(path) = &a.plot_data {
        let mut csv = String::from("frame");
        for (name, _) in &columns {
            csv.push(',');
            csv.push_str(name);
        }
        csv.push('\n');
        for t in 0..gt.len() {
            let _ = write!(csv, "{t}");
            for (_, col) in &columns {
                match col[t] {
                    Some(v) => {
                        let _ = write!(csv, ",{v:e}");
                    }
                    None => csv.push(','),
                }
            }
            csv.push('\n');
        }
        fs::write(path, csv)?;
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<(), Failure> {
    let dict = io::read_dictionary(&a.dict)?;
    let config = SynthConfig {
        seed: a.seed,
        frames: a.frames,
        active_atoms: a.active_atoms,
        noise: a.noise,
        heatmap_sigma: a.heatmap_sigma,
        grid_height: a.grid,
        grid_width: a.grid,
        camera: a.camera.into(),
        distractors: a.distractors,
        ..SynthConfig::default()
    };
    config.validate(dict.k()).map_err(|e| Failure::Usage(e.to_string()))?;
    let seq = generate_sequence(&dict, &config)?;
    let (maps, render) = render_heatmaps(&seq.noisy, &config)?;
    let out = |suffix: &str| PathBuf::from(format!("{}.{suffix}", a.out_prefix));
    let sk = dict.skeleton();
    io::write_pose3d(&out("truth3d.json"), &seq.poses, sk, "normalized")?;
    io::write_params(&out("params.json"), &seq.params)?;
    io::write_pose2d(&out("clean2d.json"), &seq.clean, sk, "normalized")?;
    io::write_pose2d(&out("noisy2d.json"), &seq.noisy, sk, "normalized")?;
    io::write_heatmaps(&out("heatmaps.mchm"), &maps)?;
    if render.clipped > 0 {
        eprintln!("warning: {} joints fell outside the heat-map grid", render.clipped);
    }
    if config.camera == CameraMode::Perspective {
        let k = config.calibration();
        println!("calib {},{},{},{}", k[(0, 0)], k[(1, 1)], k[(0, 2)], k[(1, 2)]);
    }
    println!("wrote {} frames under {}", config.frames, a.out_prefix);
    Ok(())
}

fn synth_train(a: SynthTrainArgs) -> Result<(), Failure> {
    if a.count == 0 {
        return Err(Failure::Usage("--count must be positive".into()));
    }
    let poses = poselift::geom::PoseSequence3D::new(human_poses(a.count, a.seed))?;
    io::write_pose3d(&a.out, &poses, &skeleton(), "mm")?;
    println!("wrote {} training poses", a.count);
    Ok(())
}
