use std::time::Instant;

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use super::init::{estimate_gamma, init_fcls, init_random, init_vca};
use super::updates::{abundance_step, endmember_step, fit_target, update_noise, GraphTerm};
use super::{GraphOrders, InitMethod, SolverConfig};
use crate::error::{Error, Result};
use crate::fusion::fuse_graphs;
use crate::graph::{
    graph_powers, spatial_weights, spectral_weights, GraphOperator, MultiOrderGraphSet,
    PowerCombination, SparseWeights,
};
use crate::hsi_core::{append_constant_row, HsiCube};

/// What the graph-fusion stage learned, kept for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionSummary {
    /// Rows are views (spatial, spectral), columns are the orders used.
    pub h: Vec<Vec<f64>>,
    pub orders: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
    pub nnz: usize,
    pub mean_degree: f64,
    pub wall_ms: u128,
}

/// Fused graph ready for the abundance update.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    pub operator: PowerCombination,
    pub degrees: Vec<f64>,
    pub summary: FusionSummary,
}

impl PreparedGraph {
    pub fn term(&self) -> GraphTerm<'_> {
        GraphTerm {
            weights: &self.operator,
            degrees: &self.degrees,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnmixModel {
    pub endmembers: Array2<f64>,
    pub abundances: Array2<f64>,
    /// Row-sparse noise; `None` for variants without the noise term.
    pub noise: Option<Array2<f64>>,
    /// `‖X − AS‖_F²` after every iteration.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// ℓ1/2 weight actually used.
    pub gamma: f64,
    pub fusion: Option<FusionSummary>,
}

/// `‖X − AS‖_F²`.
pub fn objective(x: &ArrayView2<f64>, a: &ArrayView2<f64>, s: &ArrayView2<f64>) -> f64 {
    let fit = a.dot(s);
    Zip::from(x).and(&fit).fold(0.0, |acc, &x, &f| acc + (x - f) * (x - f))
}

/// Builds and fuses the graph stack the variant needs; `None` if it uses no graph.
///
/// The consensus `max(0, Σ H_vk W_k^v / (1+μ))` is a nonnegative combination
/// of nonnegative matrices, so the clamp is inactive and the solver can apply
/// it as a sum of powers of the two sparse first-order graphs.
pub fn prepare_graph(cube: &HsiCube, config: &SolverConfig) -> Result<Option<PreparedGraph>> {
    let params = &config.params;
    params.validate()?;
    let Some(orders) = config.variant.graph_orders(params.order) else {
        return Ok(None);
    };
    let started = Instant::now();
    let opts = params.graph_options();
    let top = match orders {
        GraphOrders::UpTo(k) | GraphOrders::Only(k) => k,
    };
    let bases = [
        spatial_weights(cube, opts.sigma_s, opts.spatial_neighbors)?,
        spectral_weights(cube, opts.sigma_l, opts.spectral_neighbors)?,
    ];
    let mut views = Vec::with_capacity(bases.len());
    for base in &bases {
        let mut stack = graph_powers(base, top, opts.normalize_orders)?;
        if let GraphOrders::Only(k) = orders {
            stack.retain(|w| w.order == k);
        }
        views.push(stack);
    }
    let set = MultiOrderGraphSet::from_views(views)?;
    let fopts = params.fusion_options();
    let state = fuse_graphs(&set, &fopts)?;
    let shrink = 1.0 / (1.0 + fopts.mu);
    let terms = set
        .views()
        .iter()
        .enumerate()
        .map(|(v, stack)| {
            stack
                .iter()
                .enumerate()
                .map(|(i, w)| (w.order, state.h[[v, i]] * shrink * w.scale))
                .collect()
        })
        .collect();
    let used: Vec<usize> = set.views()[0].iter().map(|w| w.order).collect();
    drop(set);
    let operator = PowerCombination::new(
        bases.iter().map(|b| SparseWeights::from_dense(&b.view())).collect(),
        terms,
    );
    let degrees = state.laplacian.degrees.to_vec();
    let nodes = degrees.len().max(1);
    let summary = FusionSummary {
        h: state.h.outer_iter().map(|r| r.to_vec()).collect(),
        orders: used,
        iterations: state.iterations,
        converged: state.converged,
        objective_trace: state.objective_trace,
        nnz: state.consensus.nnz(),
        mean_degree: degrees.iter().sum::<f64>() / nodes as f64,
        wall_ms: started.elapsed().as_millis(),
    };
    log::info!(
        "fused graph: weights {:?}, {} nonzeros, mean degree {:.4}",
        summary.h,
        summary.nnz,
        summary.mean_degree
    );
    Ok(Some(PreparedGraph {
        operator,
        degrees,
        summary,
    }))
}

/// Starting `(A, S)` according to the configured method.
pub fn initialize(cube: &HsiCube, m: usize, config: &SolverConfig) -> Result<(Array2<f64>, Array2<f64>)> {
    check_m(cube, m)?;
    let params = &config.params;
    match config.init {
        InitMethod::VcaFcls => {
            let a0 = init_vca(cube, m, params.seed)?;
            let s0 = init_fcls(cube, &a0.view(), params.delta)?;
            Ok((a0, s0))
        }
        InitMethod::Random => init_random(cube, m, params.seed),
    }
}

fn check_m(cube: &HsiCube, m: usize) -> Result<()> {
    if m == 0 || m > cube.bands().min(cube.pixels()) {
        return Err(Error::Param(format!(
            "endmember count {m} must be in 1..={}",
            cube.bands().min(cube.pixels())
        )));
    }
    Ok(())
}

pub fn run_solver(cube: &HsiCube, m: usize, config: &SolverConfig) -> Result<UnmixModel> {
    config.params.validate()?;
    check_m(cube, m)?;
    let graph = prepare_graph(cube, config)?;
    let init = initialize(cube, m, config)?;
    run_solver_with(cube, m, config, graph.as_ref(), init)
}

/// Runs the alternating updates from a given start and (optionally) a
/// prebuilt graph, so sweeps can share both.
pub fn run_solver_with(
    cube: &HsiCube,
    m: usize,
    config: &SolverConfig,
    graph: Option<&PreparedGraph>,
    init: (Array2<f64>, Array2<f64>),
) -> Result<UnmixModel> {
    let params = &config.params;
    let variant = config.variant;
    params.validate()?;
    check_m(cube, m)?;
    let x = cube.data();
    let (mut a, mut s) = init;
    if a.dim() != (cube.bands(), m) || s.dim() != (m, cube.pixels()) {
        return Err(Error::Shape(format!(
            "initial factors {:?} and {:?} do not fit {} bands, {} pixels, {m} endmembers",
            a.dim(),
            s.dim(),
            cube.bands(),
            cube.pixels()
        )));
    }
    if variant.uses_graph() && graph.is_none() {
        return Err(Error::Param(format!("variant {variant} needs a fused graph")));
    }
    let graph_term = if variant.uses_graph() {
        let g = graph.expect("checked above");
        if g.operator.dim() != cube.pixels() {
            return Err(Error::Shape(format!(
                "graph has {} nodes, cube has {} pixels",
                g.operator.dim(),
                cube.pixels()
            )));
        }
        Some(g.term())
    } else {
        None
    };
    let gamma = if variant.uses_sparsity() {
        match params.gamma {
            Some(g) => g,
            None => estimate_gamma(cube, params.gamma_form())?,
        }
    } else {
        0.0
    };
    let lambda = if graph_term.is_some() { params.lambda } else { 0.0 };
    let mut e = variant.uses_noise().then(|| Array2::<f64>::zeros(x.dim()));

    let mut prev = objective(&x.view(), &a.view(), &s.view());
    if !prev.is_finite() {
        return Err(Error::Divergence {
            iteration: 0,
            value: prev,
        });
    }
    let mut trace = Vec::new();
    let mut converged = false;
    for it in 1..=params.t1 {
        let target = fit_target(&x.view(), e.as_ref().map(|e| e.view()).as_ref());
        a = endmember_step(&a.view(), &s.view(), &target.view());
        s = if variant.uses_augmentation() {
            let target_aug = append_constant_row(&target.view(), params.delta);
            let a_aug = append_constant_row(&a.view(), params.delta);
            abundance_step(&s.view(), &a_aug.view(), &target_aug.view(), gamma, lambda, graph_term)
        } else {
            abundance_step(&s.view(), &a.view(), &target.view(), gamma, lambda, graph_term)
        };
        if let Some(e) = e.as_mut() {
            *e = update_noise(&x.view(), &a.view(), &s.view(), params.beta)?;
        }
        let value = objective(&x.view(), &a.view(), &s.view());
        if !value.is_finite() {
            return Err(Error::Divergence {
                iteration: it,
                value,
            });
        }
        trace.push(value);
        let scale = if params.absolute_stop { 1.0 } else { 1.0 + prev.abs() };
        if (prev - value).abs() < params.eps1 * scale {
            converged = true;
            break;
        }
        prev = value;
    }
    log::info!(
        "{variant}: {} iterations, objective {:.6e}, converged {converged}",
        trace.len(),
        trace.last().copied().unwrap_or(prev)
    );
    Ok(UnmixModel {
        endmembers: a,
        abundances: s,
        noise: e,
        iterations: trace.len(),
        objective_trace: trace,
        converged,
        gamma,
        fusion: graph.map(|g| g.summary.clone()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unmix::{UnmixParams, Variant};
    use ndarray::array;

    fn exact_scene() -> (HsiCube, Array2<f64>, Array2<f64>) {
        let a = array![[0.9, 0.1], [0.2, 0.8], [0.4, 0.5], [0.7, 0.3]];
        let s = array![[1.0, 0.0, 0.3, 0.6, 0.5, 0.2], [0.0, 1.0, 0.7, 0.4, 0.5, 0.8]];
        let cube = HsiCube::new(a.dot(&s), 2, 3).unwrap();
        (cube, a, s)
    }

    #[test]
    fn optimum_is_a_fixed_point() {
        let (cube, a, s) = exact_scene();
        for variant in [Variant::Nmf, Variant::Snmf, Variant::CaseIii] {
            let mut config = SolverConfig::new(variant);
            config.params = UnmixParams {
                gamma: Some(0.0),
                beta: 0.0,
                lambda: 0.0,
                ..UnmixParams::default()
            };
            let model = run_solver_with(&cube, 2, &config, None, (a.clone(), s.clone())).unwrap();
            assert!(model.iterations <= 2);
            assert!(*model.objective_trace.last().unwrap() < 1e-20);
        }
    }

    #[test]
    fn graph_variant_requires_graph() {
        let (cube, a, s) = exact_scene();
        let config = SolverConfig::new(Variant::CaseIi);
        assert!(matches!(
            run_solver_with(&cube, 2, &config, None, (a, s)),
            Err(Error::Param(_))
        ));
    }

    #[test]
    fn rejects_bad_endmember_count() {
        let (cube, _, _) = exact_scene();
        let config = SolverConfig::new(Variant::Nmf);
        assert!(matches!(run_solver(&cube, 5, &config), Err(Error::Param(_))));
    }

    #[test]
    fn nonfinite_start_diverges() {
        let (cube, mut a, s) = exact_scene();
        a[[0, 0]] = f64::INFINITY;
        let config = SolverConfig::new(Variant::Nmf);
        assert!(matches!(
            run_solver_with(&cube, 2, &config, None, (a, s)),
            Err(Error::Divergence { iteration: 0, .. })
        ));
    }
}
