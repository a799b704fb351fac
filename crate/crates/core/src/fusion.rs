//! Adaptive fusion of the multi-order graph stack into one consensus graph.
//!
//! Alternates two exact block minimizations of
//!
//! ```text
//! Σ_vk H_vk ‖W_m − W_k^v‖_F² + μ‖W_m‖_F² + α‖H‖_F²,   H ≥ 0, Σ H = 1, W_m ≥ 0
//! ```
//!
//! The `W_m` block has the closed form `max(0, Σ H_vk W_k^v / (1+μ))`. The `H`
//! block is a QP whose Hessian is `2αI`, so its minimizer is the Euclidean
//! projection of `−P/(2α)` onto the probability simplex.

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{laplacian, GraphKind, LaplacianMatrix, MultiOrderGraphSet, WeightMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionOptions {
    pub mu: f64,
    pub alpha: f64,
    pub eps2: f64,
    pub t2: usize,
    /// Compare successive objectives in absolute rather than relative terms.
    pub absolute_stop: bool,
}

impl Default for FusionOptions {
    fn default() -> Self {
        Self {
            mu: 0.1,
            alpha: 0.1,
            eps2: 1e-6,
            t2: 50,
            absolute_stop: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FusionState {
    /// View × order weights, on the global simplex.
    pub h: Array2<f64>,
    pub consensus: WeightMatrix,
    pub laplacian: LaplacianMatrix,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn check_h(h: &ArrayView2<f64>, graphs: &MultiOrderGraphSet) -> Result<()> {
    if h.dim() != (graphs.view_count(), graphs.order_count()) {
        return Err(Error::Shape(format!(
            "weights are {:?} but the graph set is {}x{}",
            h.dim(),
            graphs.view_count(),
            graphs.order_count()
        )));
    }
    Ok(())
}

pub fn update_consensus(
    h: &ArrayView2<f64>,
    graphs: &MultiOrderGraphSet,
    mu: f64,
) -> Result<Array2<f64>> {
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(Error::Param(format!("mu must be nonnegative, got {mu}")));
    }
    check_h(h, graphs)?;
    let n = graphs.nodes();
    let mut wm = Array2::<f64>::zeros((n, n));
    for (v, k, w) in graphs.iter() {
        let weight = h[[v, k]];
        if weight != 0.0 {
            wm.scaled_add(weight, &w.weights);
        }
    }
    let scale = 1.0 / (1.0 + mu);
    wm.mapv_inplace(|x| (x * scale).max(0.0));
    Ok(wm)
}

/// `P_vk = ‖W_m − W_k^v‖_F²`.
pub fn compute_residuals(wm: &ArrayView2<f64>, graphs: &MultiOrderGraphSet) -> Result<Array2<f64>> {
    let n = graphs.nodes();
    if wm.dim() != (n, n) {
        return Err(Error::Shape(format!("consensus is {:?}, graphs are {n}x{n}", wm.dim())));
    }
    let mut p = Array2::zeros((graphs.view_count(), graphs.order_count()));
    for (v, k, w) in graphs.iter() {
        p[[v, k]] = Zip::from(wm)
            .and(&w.weights)
            .fold(0.0, |acc, &a, &b| acc + (a - b) * (a - b));
    }
    Ok(p)
}

/// Minimizes `α‖H‖² + ⟨P, H⟩` over the simplex `{H ≥ 0, Σ H = 1}`.
pub fn update_weights(p: &ArrayView2<f64>, alpha: f64) -> Result<Array2<f64>> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Param(format!("alpha must be positive, got {alpha}")));
    }
    let y: Vec<f64> = p.iter().map(|&v| -v / (2.0 * alpha)).collect();
    let h = project_simplex(&y)?;
    Array2::from_shape_vec(p.dim(), h).map_err(|e| Error::Shape(e.to_string()))
}

/// Euclidean projection onto `{h ≥ 0, Σ h = 1}` by sorting and thresholding.
pub fn project_simplex(y: &[f64]) -> Result<Vec<f64>> {
    if y.is_empty() {
        return Err(Error::Shape("cannot project an empty vector".into()));
    }
    if let Some(bad) = y.iter().find(|v| !v.is_finite()) {
        return Err(Error::Param(format!("projection input must be finite, got {bad}")));
    }
    let mut sorted = y.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    Ok(y.iter().map(|&v| (v - theta).max(0.0)).collect())
}

pub fn fusion_objective(
    h: &ArrayView2<f64>,
    wm: &ArrayView2<f64>,
    graphs: &MultiOrderGraphSet,
    mu: f64,
    alpha: f64,
) -> Result<f64> {
    let p = compute_residuals(wm, graphs)?;
    Ok(objective_from_residuals(h, &p.view(), wm, mu, alpha))
}

fn objective_from_residuals(
    h: &ArrayView2<f64>,
    p: &ArrayView2<f64>,
    wm: &ArrayView2<f64>,
    mu: f64,
    alpha: f64,
) -> f64 {
    let data: f64 = Zip::from(h).and(p).fold(0.0, |acc, &a, &b| acc + a * b);
    let wm_sq: f64 = wm.iter().map(|v| v * v).sum();
    let h_sq: f64 = h.iter().map(|v| v * v).sum();
    data + mu * wm_sq + alpha * h_sq
}

pub fn fuse_graphs(graphs: &MultiOrderGraphSet, opts: &FusionOptions) -> Result<FusionState> {
    if opts.t2 < 1 {
        return Err(Error::Param("t2 must be at least 1".into()));
    }
    if !(opts.eps2 > 0.0) {
        return Err(Error::Param(format!("eps2 must be positive, got {}", opts.eps2)));
    }
    let (views, orders) = (graphs.view_count(), graphs.order_count());
    let mut h = Array2::from_elem((views, orders), 1.0 / (views * orders) as f64);
    let mut wm = Array2::zeros((graphs.nodes(), graphs.nodes()));
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    for j in 1..=opts.t2 {
        wm = update_consensus(&h.view(), graphs, opts.mu)?;
        let p = compute_residuals(&wm.view(), graphs)?;
        h = update_weights(&p.view(), opts.alpha)?;
        let value = objective_from_residuals(&h.view(), &p.view(), &wm.view(), opts.mu, opts.alpha);
        log::debug!("fusion iteration {j}: objective {value:.6e}, weights {h}");
        if let Some(&prev) = trace.last() {
            let change = (value - prev).abs();
            let scale = if opts.absolute_stop { 1.0 } else { 1.0 + prev.abs() };
            trace.push(value);
            if change < opts.eps2 * scale {
                converged = true;
                break;
            }
        } else {
            trace.push(value);
        }
    }
    let lap = laplacian(&wm.view())?;
    Ok(FusionState {
        h,
        consensus: WeightMatrix::new(wm, GraphKind::Fused, 1)?,
        laplacian: lap,
        iterations: trace.len(),
        objective_trace: trace,
        converged,
    })
}
