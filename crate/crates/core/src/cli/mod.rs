//! Command-line front end: `simulate`, `unmix`, `evaluate`, `ablate`, `fuse`
//! and `sweep`.
//!
//! Exit codes: 0 on success, 2 for usage, validation and I/O problems, 3 when
//! the numerics fail (initialization or divergence).

mod args;
mod runs;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Parser;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use args::{
    AblateArgs, Cli, Command, EvaluateArgs, FuseArgs, SimulateArgs, SolverFlags, SweepArgs,
    UnmixArgs,
};
pub use runs::{
    run_ablation, summarize, AblationResult, EvalRow, SummaryRow, EVAL_CSV_HEADER,
};

use crate::error::{Error, Result};
use crate::fusion::fuse_graphs;
use crate::graph::MultiOrderGraphSet;
use crate::hsi_core::{
    load_cube, read_matrix_csv, save_abundance_maps, sidecar_path, write_matrix_csv, CubeFormat,
    HsiCube,
};
use crate::metrics::evaluate;
use crate::simgen::{build_scene, SceneConfig, SceneManifest, SpectralLibrary, SyntheticScene};
use crate::unmix::{
    initialize, prepare_graph, run_solver_with, FusionSummary, GraphOrders, SolverConfig,
};

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

/// Solver settings as read from a JSON config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub solver: SolverConfig,
    pub endmembers: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub graph_ms: u128,
    pub init_ms: u128,
    pub solve_ms: u128,
    pub total_ms: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeInfo {
    pub path: PathBuf,
    pub bands: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: SolverConfig,
    pub endmembers: usize,
    pub cube: CubeInfo,
    /// SHA-256 of every input file, keyed by path.
    pub input_hashes: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub timings: Timings,
    pub iterations: usize,
    pub converged: bool,
    pub final_objective: f64,
    pub gamma: f64,
    pub fusion: Option<FusionSummary>,
}

/// Process entry point; returns the exit code.
pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .try_init();
    configure_threads();
    run(std::env::args_os())
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return if code == 0 { 0 } else { 2 };
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Divergence { .. } | Error::Init(_) => 3,
        _ => 2,
    }
}

fn configure_threads() {
    let Ok(value) = std::env::var("MOGNMF_THREADS") else {
        return;
    };
    match value.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                log::warn!("could not size the thread pool: {e}");
            }
        }
        _ => log::warn!("ignoring MOGNMF_THREADS={value:?}"),
    }
}

pub fn dispatch(command: &Command) -> Result<()> {
    match command {
        Command::Simulate(a) => cmd_simulate(a).map(|_| ()),
        Command::Unmix(a) => cmd_unmix(a).map(|_| ()),
        Command::Evaluate(a) => cmd_evaluate(a).map(|_| ()),
        Command::Ablate(a) => cmd_ablate(a).map(|_| ()),
        Command::Fuse(a) => cmd_fuse(a).map(|_| ()),
        Command::Sweep(a) => cmd_sweep(a).map(|_| ()),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .unwrap_or_default()
        .to_string_lossy()
        .into_owned()
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<Vec<PathBuf>> {
    let mut config: SceneConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => SceneConfig::default(),
    };
    args.apply(&mut config);
    config.validate()?;
    let library = match &args.library {
        Some(path) => Some(SpectralLibrary::load_csv(path)?),
        None => None,
    };
    let mut scene = build_scene(library.as_ref(), &config)?;
    let written = scene.save(&args.out)?;
    if let Some(snr) = scene.manifest.measured_snr_db {
        log::info!(
            "scene written to {}: measured SNR {snr:.3} dB, {:.4}% clamped",
            args.out.display(),
            100.0 * scene.manifest.clamp_fraction
        );
    }
    Ok(written)
}

/// Merges the optional config file with flag overrides.
fn solver_config(config_path: Option<&Path>, flags: &SolverFlags) -> Result<RunConfig> {
    let mut run: RunConfig = match config_path {
        Some(path) => read_json(path)?,
        None => RunConfig::default(),
    };
    flags.apply(&mut run.solver)?;
    run.solver.params.validate()?;
    Ok(run)
}

fn load_input_cube(path: &Path, format: Option<CubeFormat>) -> Result<HsiCube> {
    let format = format.unwrap_or_else(|| CubeFormat::from_path(path));
    load_cube(path, format)
}

fn input_hashes(paths: &[&Path]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for path in paths {
        if path.exists() {
            out.insert(path.display().to_string(), sha256_file(path)?);
        }
    }
    Ok(out)
}

pub fn cmd_unmix(args: &UnmixArgs) -> Result<RunManifest> {
    let started = Instant::now();
    let run = solver_config(args.config.as_deref(), &args.solver)?;
    let m = args
        .m
        .or(run.endmembers)
        .ok_or_else(|| Error::Param("endmember count missing (--m or config `endmembers`)".into()))?;
    let format = args.format.unwrap_or_else(|| CubeFormat::from_path(&args.cube));
    let cube = load_input_cube(&args.cube, Some(format))?;
    let config = run.solver;

    let t = Instant::now();
    let graph = prepare_graph(&cube, &config)?;
    let graph_ms = t.elapsed().as_millis();
    let t = Instant::now();
    let init = initialize(&cube, m, &config)?;
    let init_ms = t.elapsed().as_millis();
    let t = Instant::now();
    let model = run_solver_with(&cube, m, &config, graph.as_ref(), init)?;
    let solve_ms = t.elapsed().as_millis();

    let out = &args.out;
    create_dir(out)?;
    let mut outputs = Vec::new();
    let mut emit = |name: &str, m: &ndarray::Array2<f64>| -> Result<()> {
        write_matrix_csv(&m.view(), &out.join(name))?;
        outputs.push(name.to_string());
        Ok(())
    };
    emit("A.csv", &model.endmembers)?;
    emit("S.csv", &model.abundances)?;
    let noise = model
        .noise
        .clone()
        .unwrap_or_else(|| ndarray::Array2::zeros(cube.data().dim()));
    emit("E.csv", &noise)?;
    if let Some(f) = &model.fusion {
        let rows = f.h.len();
        let cols = f.h.first().map(Vec::len).unwrap_or(0);
        let h = ndarray::Array2::from_shape_fn((rows, cols), |(v, k)| f.h[v][k]);
        emit("H.csv", &h)?;
    }
    let trace_path = out.join("objective.csv");
    let mut trace = String::from("iteration,objective\n");
    for (i, v) in model.objective_trace.iter().enumerate() {
        trace.push_str(&format!("{},{v}\n", i + 1));
    }
    fs::write(&trace_path, trace).map_err(|e| Error::io(&trace_path, e))?;
    outputs.push("objective.csv".into());
    for p in save_abundance_maps(&model.abundances.view(), cube.height(), cube.width(), out)? {
        outputs.push(file_name(&p));
    }
    outputs.push(RUN_MANIFEST_FILE.into());

    let sidecar = sidecar_path(&args.cube);
    let mut inputs: Vec<&Path> = vec![&args.cube];
    if format == CubeFormat::RawF32 {
        inputs.push(&sidecar);
    }
    if let Some(c) = &args.config {
        inputs.push(c);
    }
    let manifest = RunManifest {
        command: "unmix".into(),
        config,
        endmembers: m,
        cube: CubeInfo {
            path: args.cube.clone(),
            bands: cube.bands(),
            height: cube.height(),
            width: cube.width(),
        },
        input_hashes: input_hashes(&inputs)?,
        outputs,
        timings: Timings {
            graph_ms,
            init_ms,
            solve_ms,
            total_ms: started.elapsed().as_millis(),
        },
        iterations: model.iterations,
        converged: model.converged,
        final_objective: model.objective_trace.last().copied().unwrap_or(f64::NAN),
        gamma: model.gamma,
        fusion: model.fusion.clone(),
    };
    write_json(&manifest, &out.join(RUN_MANIFEST_FILE))?;
    Ok(manifest)
}

/// Effective graph order of a configuration, 0 for graph-free variants.
pub fn effective_order(config: &SolverConfig) -> usize {
    match config.variant.graph_orders(config.params.order) {
        Some(GraphOrders::UpTo(k)) | Some(GraphOrders::Only(k)) => k,
        None => 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub row: EvalRow,
    pub report: crate::metrics::EvalReport,
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<EvalOutput> {
    let a_est = read_matrix_csv(&args.result.join("A.csv"))?;
    let s_est = read_matrix_csv(&args.result.join("S.csv"))?;
    let a_true = read_matrix_csv(&args.truth.join(crate::simgen::A_TRUE_FILE))?;
    let s_true = read_matrix_csv(&args.truth.join(crate::simgen::S_TRUE_FILE))?;
    if a_est.dim() != a_true.dim() || s_est.dim() != s_true.dim() {
        return Err(Error::Shape(format!(
            "estimate has A {:?}, S {:?}; truth has A {:?}, S {:?}",
            a_est.dim(),
            s_est.dim(),
            a_true.dim(),
            s_true.dim()
        )));
    }
    let mut report = evaluate(&a_true.view(), &s_true.view(), &a_est.view(), &s_est.view())?;
    let truth_manifest = args.truth.join(crate::simgen::MANIFEST_FILE);
    let scene: Option<SceneManifest> = if truth_manifest.exists() {
        Some(read_json(&truth_manifest)?)
    } else {
        None
    };
    report.measured_snr_db = scene.as_ref().and_then(|s| s.measured_snr_db);
    let run_path = args.result.join(RUN_MANIFEST_FILE);
    let run: Option<RunManifest> = if run_path.exists() {
        Some(read_json(&run_path)?)
    } else {
        None
    };
    let row = EvalRow {
        variant: run
            .as_ref()
            .map(|r| r.config.variant.name().to_string())
            .unwrap_or_else(|| "unknown".into()),
        k: run.as_ref().map(|r| effective_order(&r.config)).unwrap_or(0),
        seed: run.as_ref().map(|r| r.config.params.seed).unwrap_or(0),
        snr_db: scene.as_ref().and_then(|s| s.target_snr_db),
        mean_sad: report.mean_sad,
        rmse: report.rmse,
        iters: run.as_ref().map(|r| r.iterations).unwrap_or(0),
        wall_ms: run.as_ref().map(|r| r.timings.total_ms).unwrap_or(0),
    };
    let out = args.out.clone().unwrap_or_else(|| args.result.clone());
    create_dir(&out)?;
    let output = EvalOutput { row, report };
    write_json(&output, &out.join("eval.json"))?;
    runs::write_rows(&out.join("eval.csv"), std::slice::from_ref(&output.row))?;
    Ok(output)
}

fn load_scene_dir(dir: &Path) -> Result<SyntheticScene> {
    SyntheticScene::load(dir)
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<AblationResult> {
    let run = solver_config(args.config.as_deref(), &args.solver)?;
    let scene = load_scene_dir(&args.scene)?;
    let m = args.m.or(run.endmembers).unwrap_or(scene.a_true.ncols());
    let seeds = args::parse_seeds(&args.seeds)?;
    let orders = args::parse_list::<usize>(&args.orders, "orders")?;
    let result = run_ablation(&scene, m, &run.solver, &seeds, &orders)?;
    create_dir(&args.out)?;
    runs::write_rows(&args.out.join("ablation_runs.csv"), &result.cases)?;
    runs::write_rows(&args.out.join("order_runs.csv"), &result.orders)?;
    runs::write_summary(&args.out.join("ablation_summary.csv"), &result.summary)?;
    write_json(&result, &args.out.join("ablation.json"))?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuseReport {
    pub h: Vec<Vec<f64>>,
    pub orders: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
    pub nnz: usize,
    pub mean_degree: f64,
}

pub fn cmd_fuse(args: &FuseArgs) -> Result<FuseReport> {
    let run = solver_config(args.config.as_deref(), &args.solver)?;
    let cube = load_input_cube(&args.cube, args.format)?;
    let config = run.solver;
    let params = &config.params;
    let orders = config
        .variant
        .graph_orders(params.order)
        .unwrap_or(GraphOrders::UpTo(params.order));
    let mut opts = params.graph_options();
    let set = match orders {
        GraphOrders::UpTo(k) => {
            opts.order = k;
            MultiOrderGraphSet::build(&cube, &opts)?
        }
        GraphOrders::Only(k) => {
            opts.order = k;
            MultiOrderGraphSet::build(&cube, &opts)?.single_order(k)?
        }
    };
    let state = fuse_graphs(&set, &params.fusion_options())?;
    create_dir(&args.out)?;
    write_matrix_csv(&state.h.view(), &args.out.join("H.csv"))?;
    if args.write_consensus {
        state.consensus.write_csv(&args.out.join("Wm.csv"))?;
    }
    if args.dump_graphs {
        for (v, _, w) in set.iter() {
            w.write_csv(&args.out.join(format!("W_view{v}_order{}.csv", w.order)))?;
        }
    }
    let degrees = &state.laplacian.degrees;
    let report = FuseReport {
        h: state.h.outer_iter().map(|r| r.to_vec()).collect(),
        orders: set.views()[0].iter().map(|w| w.order).collect(),
        iterations: state.iterations,
        converged: state.converged,
        objective_trace: state.objective_trace.clone(),
        nnz: state.consensus.nnz(),
        mean_degree: degrees.sum() / degrees.len().max(1) as f64,
    };
    write_json(&report, &args.out.join("fusion.json"))?;
    Ok(report)
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<Vec<runs::SweepRow>> {
    let run = solver_config(args.config.as_deref(), &args.solver)?;
    let scene = load_scene_dir(&args.scene)?;
    let m = args.m.or(run.endmembers).unwrap_or(scene.a_true.ncols());
    let seeds = args::parse_seeds(&args.seeds)?;
    let variants = match &args.variants {
        Some(list) => args::parse_list(list, "variants")?,
        None => vec![run.solver.variant],
    };
    let lambdas = match &args.lambdas {
        Some(list) => args::parse_list(list, "lambdas")?,
        None => vec![run.solver.params.lambda],
    };
    let betas = match &args.betas {
        Some(list) => args::parse_list(list, "betas")?,
        None => vec![run.solver.params.beta],
    };
    let snrs = match &args.snrs {
        Some(list) => Some(args::parse_list::<f64>(list, "snrs")?),
        None => None,
    };
    let grid = runs::SweepGrid {
        variants: &variants,
        lambdas: &lambdas,
        betas: &betas,
        snrs: snrs.as_deref(),
        seeds: &seeds,
    };
    let keep = args.keep_outputs.then_some(args.out.as_path());
    let rows = runs::run_sweep(&scene, m, &run.solver, &grid, keep)?;
    create_dir(&args.out)?;
    runs::write_sweep(&args.out.join("sweep_runs.csv"), &rows)?;
    Ok(rows)
}
