//! Batch runs over one scene: the ablation cases, the order study and sweeps.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::effective_order;
use crate::error::{Error, Result};
use crate::hsi_core::{write_matrix_csv, HsiCube};
use crate::metrics::evaluate;
use crate::simgen::{add_noise_at_snr, NoiseKind, SyntheticScene};
use crate::unmix::{
    initialize, prepare_graph, run_solver_with, GraphOrders, PreparedGraph, SolverConfig,
    UnmixModel, Variant,
};

pub const EVAL_CSV_HEADER: &str = "variant,K,seed,snr_db,mean_sad,rmse,iters,wall_ms";

/// One scored run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub variant: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
    pub snr_db: Option<f64>,
    pub mean_sad: f64,
    pub rmse: f64,
    pub iters: usize,
    pub wall_ms: u128,
}

impl EvalRow {
    fn csv_line(&self) -> String {
        let snr = self.snr_db.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{snr},{},{},{},{}",
            self.variant, self.k, self.seed, self.mean_sad, self.rmse, self.iters, self.wall_ms
        )
    }
}

/// Mean, sample standard deviation and median of one group of runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    /// `cases` or `orders`.
    pub study: String,
    pub case: String,
    pub variant: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub runs: usize,
    pub mean_sad_mean: f64,
    pub mean_sad_std: f64,
    pub mean_sad_median: f64,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub rmse_median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    /// Cases I to V, one row per case and seed.
    pub cases: Vec<EvalRow>,
    /// Case I at each requested K, one row per K and seed.
    pub orders: Vec<EvalRow>,
    pub summary: Vec<SummaryRow>,
}

pub const CASES: [(&str, Variant); 5] = [
    ("I", Variant::Mognmf),
    ("II", Variant::CaseIi),
    ("III", Variant::CaseIii),
    ("IV", Variant::CaseIv),
    ("V", Variant::CaseV),
];

fn case_label(variant: &str) -> String {
    CASES
        .iter()
        .find(|(_, v)| v.name() == variant)
        .map(|(c, _)| c.to_string())
        .unwrap_or_default()
}

/// Fused graphs keyed by the orders they cover; the graph does not depend
/// on the seed or on lambda and beta, so batch runs build each one once.
#[derive(Default)]
struct GraphCache {
    entries: Vec<(GraphOrders, Option<PreparedGraph>)>,
}

impl GraphCache {
    fn get(&mut self, cube: &HsiCube, config: &SolverConfig) -> Result<Option<&PreparedGraph>> {
        let Some(orders) = config.variant.graph_orders(config.params.order) else {
            return Ok(None);
        };
        let idx = match self.entries.iter().position(|(o, _)| *o == orders) {
            Some(i) => i,
            None => {
                self.entries.push((orders, prepare_graph(cube, config)?));
                self.entries.len() - 1
            }
        };
        Ok(self.entries[idx].1.as_ref())
    }
}

struct Truth<'a> {
    a: &'a Array2<f64>,
    s: &'a Array2<f64>,
    snr_db: Option<f64>,
}

fn score(
    cube: &HsiCube,
    truth: &Truth<'_>,
    m: usize,
    config: &SolverConfig,
    graph: Option<&PreparedGraph>,
    init: (Array2<f64>, Array2<f64>),
) -> Result<(EvalRow, UnmixModel)> {
    let started = Instant::now();
    let model = run_solver_with(cube, m, config, graph, init)?;
    let wall_ms = started.elapsed().as_millis();
    let report = evaluate(
        &truth.a.view(),
        &truth.s.view(),
        &model.endmembers.view(),
        &model.abundances.view(),
    )?;
    let row = EvalRow {
        variant: config.variant.name().to_string(),
        k: effective_order(config),
        seed: config.params.seed,
        snr_db: truth.snr_db,
        mean_sad: report.mean_sad,
        rmse: report.rmse,
        iters: model.iterations,
        wall_ms,
    };
    log::info!(
        "{} K={} seed={}: SAD {:.5}, RMSE {:.5}, {} iterations",
        row.variant,
        row.k,
        row.seed,
        row.mean_sad,
        row.rmse,
        row.iters
    );
    Ok((row, model))
}

fn check_truth(scene: &SyntheticScene, m: usize) -> Result<()> {
    if scene.a_true.ncols() != m {
        return Err(Error::Shape(format!(
            "scene has {} endmembers, run asks for {m}",
            scene.a_true.ncols()
        )));
    }
    Ok(())
}

/// Runs Cases I to V for every seed, then Case I at every K in `orders`.
/// Each seed's initialization is shared by all runs with that seed.
pub fn run_ablation(
    scene: &SyntheticScene,
    m: usize,
    base: &SolverConfig,
    seeds: &[u64],
    orders: &[usize],
) -> Result<AblationResult> {
    check_truth(scene, m)?;
    if seeds.is_empty() {
        return Err(Error::Param("no seeds given".into()));
    }
    if orders.contains(&0) {
        return Err(Error::Param("graph orders start at 1".into()));
    }
    let cube = &scene.cube;
    let truth = Truth {
        a: &scene.a_true,
        s: &scene.s_true,
        snr_db: scene.target_snr_db,
    };
    let mut graphs = GraphCache::default();
    let mut cases = Vec::new();
    let mut order_rows = Vec::new();
    for &seed in seeds {
        let mut config = base.clone();
        config.params.seed = seed;
        let init = initialize(cube, m, &config)?;
        for (_, variant) in CASES {
            config.variant = variant;
            let graph = graphs.get(cube, &config)?;
            let (row, _) = score(cube, &truth, m, &config, graph, init.clone())?;
            cases.push(row);
        }
        for &k in orders {
            if k == base.params.order {
                let reused = cases
                    .iter()
                    .rev()
                    .find(|r| r.variant == Variant::Mognmf.name() && r.seed == seed)
                    .cloned()
                    .expect("Case I ran for this seed");
                order_rows.push(reused);
                continue;
            }
            let mut config = config.clone();
            config.variant = Variant::Mognmf;
            config.params.order = k;
            let graph = graphs.get(cube, &config)?;
            let (row, _) = score(cube, &truth, m, &config, graph, init.clone())?;
            order_rows.push(row);
        }
    }
    let mut summary = summarize("cases", &cases);
    summary.extend(summarize("orders", &order_rows));
    Ok(AblationResult {
        cases,
        orders: order_rows,
        summary,
    })
}

fn mean_std_median(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    (mean, std, median)
}

/// Groups rows by variant and K (first-appearance order) and aggregates
/// over seeds. The standard deviation is the sample one.
pub fn summarize(study: &str, rows: &[EvalRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, usize)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|(v, k)| *v == r.variant && *k == r.k) {
            keys.push((r.variant.clone(), r.k));
        }
    }
    keys.into_iter()
        .map(|(variant, k)| {
            let group: Vec<&EvalRow> = rows
                .iter()
                .filter(|r| r.variant == variant && r.k == k)
                .collect();
            let sad: Vec<f64> = group.iter().map(|r| r.mean_sad).collect();
            let rmse: Vec<f64> = group.iter().map(|r| r.rmse).collect();
            let (sm, ss, smed) = mean_std_median(&sad);
            let (rm, rs, rmed) = mean_std_median(&rmse);
            SummaryRow {
                study: study.to_string(),
                case: case_label(&variant),
                variant,
                k,
                runs: group.len(),
                mean_sad_mean: sm,
                mean_sad_std: ss,
                mean_sad_median: smed,
                rmse_mean: rm,
                rmse_std: rs,
                rmse_median: rmed,
            }
        })
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_rows(path: &Path, rows: &[EvalRow]) -> Result<()> {
    let mut out = format!("{EVAL_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut out = String::from(
        "study,case,variant,K,runs,mean_sad_mean,mean_sad_std,mean_sad_median,rmse_mean,rmse_std,rmse_median\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.study,
            r.case,
            r.variant,
            r.k,
            r.runs,
            r.mean_sad_mean,
            r.mean_sad_std,
            r.mean_sad_median,
            r.rmse_mean,
            r.rmse_std,
            r.rmse_median
        );
    }
    write_text(path, &out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(flatten)]
    pub eval: EvalRow,
    /// `None` when the variant has no graph term.
    pub lambda: Option<f64>,
    /// `None` when the variant has no noise term.
    pub beta: Option<f64>,
}

pub struct SweepGrid<'a> {
    pub variants: &'a [Variant],
    pub lambdas: &'a [f64],
    pub betas: &'a [f64],
    /// `None` runs on the scene cube as stored.
    pub snrs: Option<&'a [f64]>,
    pub seeds: &'a [u64],
}

/// Every combination of the grid. Lambda is only varied for graph variants
/// and beta only for variants with a noise term. With `keep` each run's
/// factors land in their own directory under `keep/runs`.
pub fn run_sweep(
    scene: &SyntheticScene,
    m: usize,
    base: &SolverConfig,
    grid: &SweepGrid<'_>,
    keep: Option<&Path>,
) -> Result<Vec<SweepRow>> {
    check_truth(scene, m)?;
    let stored = [f64::NAN];
    let snrs: &[f64] = grid.snrs.unwrap_or(&stored);
    let mut rows = Vec::new();
    for &snr in snrs {
        let (cube, snr_db) = if snr.is_nan() {
            (scene.cube.clone(), scene.target_snr_db)
        } else {
            let noisy = add_noise_at_snr(&scene.clean.view(), snr, NoiseKind::GaussianWhite, scene.seed)?;
            (
                HsiCube::new(noisy.data, scene.cube.height(), scene.cube.width())?,
                Some(snr),
            )
        };
        let truth = Truth {
            a: &scene.a_true,
            s: &scene.s_true,
            snr_db,
        };
        let mut graphs = GraphCache::default();
        for &seed in grid.seeds {
            let mut config = base.clone();
            config.params.seed = seed;
            let init = initialize(&cube, m, &config)?;
            for &variant in grid.variants {
                config.variant = variant;
                let lambdas: Vec<Option<f64>> = if variant.uses_graph() {
                    grid.lambdas.iter().copied().map(Some).collect()
                } else {
                    vec![None]
                };
                let betas: Vec<Option<f64>> = if variant.uses_noise() {
                    grid.betas.iter().copied().map(Some).collect()
                } else {
                    vec![None]
                };
                for &lambda in &lambdas {
                    for &beta in &betas {
                        let mut config = config.clone();
                        if let Some(l) = lambda {
                            config.params.lambda = l;
                        }
                        if let Some(b) = beta {
                            config.params.beta = b;
                        }
                        let graph = graphs.get(&cube, &config)?;
                        let (row, model) = score(&cube, &truth, m, &config, graph, init.clone())?;
                        if let Some(dir) = keep {
                            let name = format!(
                                "{}_snr{}_l{}_b{}_s{seed}",
                                variant.name(),
                                snr_db.map(|v| v.to_string()).unwrap_or_else(|| "na".into()),
                                lambda.map(|v| v.to_string()).unwrap_or_else(|| "na".into()),
                                beta.map(|v| v.to_string()).unwrap_or_else(|| "na".into()),
                            );
                            let run_dir = dir.join("runs").join(name);
                            fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
                            write_matrix_csv(&model.endmembers.view(), &run_dir.join("A.csv"))?;
                            write_matrix_csv(&model.abundances.view(), &run_dir.join("S.csv"))?;
                        }
                        rows.push(SweepRow {
                            eval: row,
                            lambda,
                            beta,
                        });
                    }
                }
            }
        }
    }
    Ok(rows)
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    let mut out = format!("{EVAL_CSV_HEADER},lambda,beta\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.eval.csv_line(), opt(r.lambda), opt(r.beta));
    }
    write_text(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(variant: &str, k: usize, seed: u64, sad: f64, rmse: f64) -> EvalRow {
        EvalRow {
            variant: variant.into(),
            k,
            seed,
            snr_db: Some(30.0),
            mean_sad: sad,
            rmse,
            iters: 10,
            wall_ms: 1,
        }
    }

    #[test]
    fn summary_statistics() {
        let rows = vec![
            row("mognmf", 3, 0, 1.0, 4.0),
            row("case_ii", 3, 0, 9.0, 9.0),
            row("mognmf", 3, 1, 2.0, 6.0),
            row("mognmf", 3, 2, 6.0, 5.0),
        ];
        let s = summarize("cases", &rows);
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].variant.as_str(), s[0].case.as_str(), s[0].runs), ("mognmf", "I", 3));
        assert!((s[0].mean_sad_mean - 3.0).abs() < 1e-12);
        assert!((s[0].mean_sad_std - 7f64.sqrt()).abs() < 1e-12);
        assert_eq!(s[0].mean_sad_median, 2.0);
        assert_eq!(s[0].rmse_median, 5.0);
        assert_eq!((s[1].runs, s[1].mean_sad_std), (1, 0.0));
    }

    #[test]
    fn csv_schema() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.csv");
        write_rows(&path, &[row("nmf", 0, 4, 0.5, 0.25)]).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), EVAL_CSV_HEADER);
        assert_eq!(lines.next().unwrap(), "nmf,0,4,30,0.5,0.25,10,1");
    }
}
