use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::graph::Sigma;
use crate::hsi_core::CubeFormat;
use crate::simgen::{Preset, SceneConfig};
use crate::unmix::{InitMethod, SolverConfig, Variant};

#[derive(Debug, Parser)]
#[command(name = "mognmf", version, about = "Multi-order graph regularized NMF for hyperspectral unmixing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene with ground truth.
    Simulate(SimulateArgs),
    /// Unmix a cube.
    Unmix(UnmixArgs),
    /// Score an unmixing result against ground truth.
    Evaluate(EvaluateArgs),
    /// Run the ablation cases and the graph-order study on a scene.
    Ablate(AblateArgs),
    /// Build and fuse the multi-order graphs only.
    Fuse(FuseArgs),
    /// Grid over variants, lambda, beta, SNR and seeds on a scene.
    Sweep(SweepArgs),
}

fn parse_format(s: &str) -> std::result::Result<CubeFormat, String> {
    match s.to_ascii_lowercase().as_str() {
        "csv" => Ok(CubeFormat::Csv),
        "raw" | "raw-f32" | "raw_f32" => Ok(CubeFormat::RawF32),
        _ => Err(format!("unknown cube format {s:?} (csv or raw-f32)")),
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Scene config JSON; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<Preset>,
    /// Endmember count.
    #[arg(long)]
    pub m: Option<usize>,
    /// Target SNR in dB.
    #[arg(long, conflicts_with = "noiseless")]
    pub snr: Option<f64>,
    #[arg(long)]
    pub noiseless: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub bands: Option<usize>,
    /// Correlation length of the abundance fields, in pixels.
    #[arg(long)]
    pub smoothness: Option<f64>,
    #[arg(long)]
    pub contrast: Option<f64>,
    #[arg(long)]
    pub library_size: Option<usize>,
    /// Spectral library CSV used instead of the built-in one.
    #[arg(long)]
    pub library: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

impl SimulateArgs {
    pub fn apply(&self, c: &mut SceneConfig) {
        if let Some(v) = self.preset {
            c.preset = v;
        }
        if let Some(v) = self.m {
            c.endmembers = v;
        }
        if let Some(v) = self.snr {
            c.snr_db = Some(v);
        }
        if self.noiseless {
            c.snr_db = None;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.height {
            c.height = v;
        }
        if let Some(v) = self.width {
            c.width = v;
        }
        if let Some(v) = self.bands {
            c.bands = v;
        }
        if let Some(v) = self.smoothness {
            c.smoothness = v;
        }
        if let Some(v) = self.contrast {
            c.contrast = v;
        }
        if let Some(v) = self.library_size {
            c.library_size = v;
        }
    }
}

/// Solver knobs shared by every command that runs the solver.
#[derive(Debug, Clone, Default, Args)]
pub struct SolverFlags {
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub init: Option<InitMethod>,
    /// Fixed l1/2 weight instead of the data-driven estimate.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Highest graph order K.
    #[arg(long = "order", short = 'K')]
    pub order: Option<usize>,
    #[arg(long)]
    pub neighbors: Option<usize>,
    #[arg(long)]
    pub spectral_neighbors: Option<usize>,
    /// Spatial kernel width, or `auto`.
    #[arg(long)]
    pub sigma_s: Option<Sigma>,
    /// Spectral kernel width, or `auto`.
    #[arg(long)]
    pub sigma_l: Option<Sigma>,
    #[arg(long)]
    pub eps1: Option<f64>,
    #[arg(long)]
    pub eps2: Option<f64>,
    #[arg(long)]
    pub t1: Option<usize>,
    #[arg(long)]
    pub t2: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Keep higher-order graphs unscaled.
    #[arg(long)]
    pub no_order_norm: bool,
    /// Use the gamma formula with the sqrt(N-1) factors left in.
    #[arg(long)]
    pub gamma_as_written: bool,
    /// Stop on an absolute objective change instead of a relative one.
    #[arg(long)]
    pub absolute_stop: bool,
}

impl SolverFlags {
    pub fn apply(&self, c: &mut SolverConfig) -> Result<()> {
        if let Some(v) = self.variant {
            c.variant = v;
        }
        if let Some(v) = self.init {
            c.init = v;
        }
        let p = &mut c.params;
        if self.gamma.is_some() {
            p.gamma = self.gamma;
        }
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { p.$field = v; })*
            };
        }
        set!(beta, lambda, mu, alpha, delta, order, neighbors, sigma_s, sigma_l, eps1, eps2, t1, t2, seed);
        if self.spectral_neighbors.is_some() {
            p.spectral_neighbors = self.spectral_neighbors;
        }
        if self.no_order_norm {
            p.normalize_orders = false;
        }
        if self.gamma_as_written {
            p.gamma_as_written = true;
        }
        if self.absolute_stop {
            p.absolute_stop = true;
        }
        p.validate()
    }
}

#[derive(Debug, Clone, Args)]
pub struct UnmixArgs {
    /// Cube file (`.csv`, or raw f32 with a JSON sidecar).
    #[arg(long)]
    pub cube: PathBuf,
    #[arg(long, value_parser = parse_format)]
    pub format: Option<CubeFormat>,
    /// Endmember count.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Directory written by `unmix`.
    #[arg(long)]
    pub result: PathBuf,
    /// Scene directory with `A_true.csv` and `S_true.csv`.
    #[arg(long)]
    pub truth: PathBuf,
    /// Report directory; defaults to the result directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    /// Scene directory written by `simulate`.
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverFlags,
    /// `a..b` (inclusive) or a comma list.
    #[arg(long, default_value = "0..9")]
    pub seeds: String,
    #[arg(long, default_value = "1,2,3")]
    pub orders: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub cube: PathBuf,
    #[arg(long, value_parser = parse_format)]
    pub format: Option<CubeFormat>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverFlags,
    /// Also write the fused graph as a dense CSV.
    #[arg(long)]
    pub write_consensus: bool,
    /// Also write every per-view, per-order graph as a dense CSV.
    #[arg(long)]
    pub dump_graphs: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverFlags,
    /// Comma list of variants; defaults to the configured one.
    #[arg(long)]
    pub variants: Option<String>,
    #[arg(long)]
    pub lambdas: Option<String>,
    #[arg(long)]
    pub betas: Option<String>,
    /// Comma list of SNRs; the scene's clean data is renoised at each.
    #[arg(long)]
    pub snrs: Option<String>,
    #[arg(long, default_value = "0")]
    pub seeds: String,
    /// Write every run's factors to its own directory under `out/runs`.
    #[arg(long)]
    pub keep_outputs: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `a..b` (inclusive), `a..=b`, or a comma list of seeds.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let s = s.trim();
    if let Some((lo, hi)) = s.split_once("..") {
        let hi = hi.strip_prefix('=').unwrap_or(hi);
        let bad = || Error::Param(format!("bad seed range {s:?}"));
        let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
        if hi < lo {
            return Err(bad());
        }
        return Ok((lo..=hi).collect());
    }
    parse_list(s, "seeds")
}

pub fn parse_list<T: FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    let items: Vec<T> = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| Error::Param(format!("bad entry {t:?} in {what}")))
        })
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Param(format!("{what} is empty")));
    }
    Ok(items)
}
