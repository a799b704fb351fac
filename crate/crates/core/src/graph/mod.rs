//! Spatial and spectral k-NN heat-kernel graphs, their powers, and Laplacians.
//!
//! First-order graphs keep, for every pixel, its `C` nearest neighbours
//! (grid distance for the spatial view, spectral Euclidean distance for the
//! spectral view), weight each kept edge by `exp(-d² / 2σ²)`, and symmetrize by
//! elementwise max. Higher orders are plain matrix powers `W_k = W_{k-1} W`.

mod sparse;

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use sparse::{GraphOperator, PowerCombination, SparseWeights};

use crate::error::{Error, Result};
use crate::hsi_core::{pixel_coords, write_matrix_csv, HsiCube};

pub const DEFAULT_NEIGHBORS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    Spatial,
    Spectral,
    Fused,
}

/// Kernel bandwidth: a fixed value, or the median retained neighbour distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sigma {
    Fixed(f64),
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AutoTag {
    #[serde(rename = "auto")]
    Auto,
}

impl Sigma {
    pub const AUTO: Sigma = Sigma::Auto(AutoTag::Auto);
}

impl Default for Sigma {
    fn default() -> Self {
        Sigma::AUTO
    }
}

impl std::str::FromStr for Sigma {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Sigma::AUTO);
        }
        let v: f64 = s.parse().map_err(|e| format!("sigma must be a number or 'auto': {e}"))?;
        if !(v > 0.0) || !v.is_finite() {
            return Err(format!("sigma must be positive, got {v}"));
        }
        Ok(Sigma::Fixed(v))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub weights: Array2<f64>,
    pub kind: GraphKind,
    pub order: usize,
    /// Bandwidth actually used (first-order graphs only).
    pub sigma: Option<f64>,
    /// `weights = scale · W₁^k`, with `W₁` the first-order graph.
    pub scale: f64,
}

impl WeightMatrix {
    pub fn new(weights: Array2<f64>, kind: GraphKind, order: usize) -> Result<Self> {
        if weights.nrows() != weights.ncols() {
            return Err(Error::Shape(format!(
                "weight matrix must be square, got {}x{}",
                weights.nrows(),
                weights.ncols()
            )));
        }
        Ok(Self {
            weights,
            kind,
            order,
            sigma: None,
            scale: 1.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.weights.view()
    }

    pub fn nnz(&self) -> usize {
        self.weights.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_matrix_csv(&self.weights.view(), path)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianMatrix {
    pub matrix: Array2<f64>,
    pub degrees: Array1<f64>,
}

/// Per-pixel neighbour lists `(index, distance)`, nearest first.
type NeighborLists = Vec<Vec<(usize, f64)>>;

fn check_neighbors(n: usize, neighbors: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::Param(format!("graphs need at least 2 pixels, got {n}")));
    }
    if neighbors == 0 || neighbors >= n {
        return Err(Error::Param(format!(
            "neighbor count must be in 1..{n}, got {neighbors}"
        )));
    }
    Ok(())
}

pub fn spatial_weights(cube: &HsiCube, sigma: Sigma, neighbors: usize) -> Result<WeightMatrix> {
    check_neighbors(cube.pixels(), neighbors)?;
    let lists = spatial_neighbors(cube.height(), cube.width(), neighbors);
    assemble(lists, sigma, GraphKind::Spatial)
}

pub fn spectral_weights(cube: &HsiCube, sigma: Sigma, neighbors: usize) -> Result<WeightMatrix> {
    check_neighbors(cube.pixels(), neighbors)?;
    let lists = spectral_neighbors(&cube.data().view(), neighbors);
    assemble(lists, sigma, GraphKind::Spectral)
}

fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

fn spatial_neighbors(height: usize, width: usize, neighbors: usize) -> NeighborLists {
    // Within Chebyshev radius r there are at least (r+1)² - 1 pixels even in a
    // corner, all closer than r·√2, so a window of radius ceil(r·√2) holds the
    // C nearest ones.
    let r = ((neighbors + 1) as f64).sqrt().ceil();
    let radius = (r * std::f64::consts::SQRT_2).ceil() as isize;
    (0..height * width)
        .into_par_iter()
        .map(|j| {
            let (u, n) = pixel_coords(j, width);
            let (u, n) = (u as isize, n as isize);
            let mut cands = Vec::new();
            for du in -radius..=radius {
                for dn in -radius..=radius {
                    let (uu, nn) = (u + du, n + dn);
                    if (du, dn) == (0, 0)
                        || uu < 0
                        || nn < 0
                        || uu >= height as isize
                        || nn >= width as isize
                    {
                        continue;
                    }
                    let d2 = (du * du + dn * dn) as f64;
                    cands.push((d2, uu as usize * width + nn as usize));
                }
            }
            cands.sort_by(by_distance_then_index);
            cands.truncate(neighbors);
            cands.into_iter().map(|(d2, i)| (i, d2.sqrt())).collect()
        })
        .collect()
}

fn spectral_neighbors(x: &ArrayView2<f64>, neighbors: usize) -> NeighborLists {
    const BLOCK: usize = 256;
    let n = x.ncols();
    let sq: Vec<f64> = x.columns().into_iter().map(|c| c.dot(&c)).collect();
    let starts: Vec<usize> = (0..n).step_by(BLOCK).collect();
    starts
        .into_par_iter()
        .flat_map_iter(|start| {
            let end = (start + BLOCK).min(n);
            let gram = x.slice(s![.., start..end]).t().dot(x);
            let sq = &sq;
            (start..end)
                .map(|i| {
                    let g = gram.row(i - start);
                    let mut cands: Vec<(f64, usize)> = (0..n)
                        .filter(|&j| j != i)
                        .map(|j| ((sq[i] + sq[j] - 2.0 * g[j]).max(0.0), j))
                        .collect();
                    cands.select_nth_unstable_by(neighbors - 1, by_distance_then_index);
                    cands.truncate(neighbors);
                    cands.sort_by(by_distance_then_index);
                    let xi = x.column(i);
                    cands
                        .into_iter()
                        .map(|(_, j)| {
                            let d2: f64 = xi
                                .iter()
                                .zip(x.column(j).iter())
                                .map(|(a, b)| (a - b) * (a - b))
                                .sum();
                            (j, d2.sqrt())
                        })
                        .collect::<Vec<_>>()
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

fn median_distance(lists: &NeighborLists) -> f64 {
    let mut d: Vec<f64> = lists.iter().flatten().map(|&(_, d)| d).collect();
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let median = if d.len() % 2 == 0 {
        0.5 * (d[mid - 1] + d[mid])
    } else {
        d[mid]
    };
    if median > 0.0 {
        return median;
    }
    // Mostly duplicated pixels: fall back to the smallest positive distance.
    d.into_iter().find(|&v| v > 0.0).unwrap_or(1.0)
}

fn assemble(lists: NeighborLists, sigma: Sigma, kind: GraphKind) -> Result<WeightMatrix> {
    let sigma = match sigma {
        Sigma::Fixed(v) if v > 0.0 && v.is_finite() => v,
        Sigma::Fixed(v) => return Err(Error::Param(format!("sigma must be positive, got {v}"))),
        Sigma::Auto(_) => median_distance(&lists),
    };
    let n = lists.len();
    let denom = 2.0 * sigma * sigma;
    let mut w = Array2::<f64>::zeros((n, n));
    for (i, list) in lists.iter().enumerate() {
        for &(j, d) in list {
            let v = (-d * d / denom).exp();
            if v > w[[i, j]] {
                w[[i, j]] = v;
            }
            if v > w[[j, i]] {
                w[[j, i]] = v;
            }
        }
    }
    w.diag_mut().fill(0.0);
    Ok(WeightMatrix {
        weights: w,
        kind,
        order: 1,
        sigma: Some(sigma),
        scale: 1.0,
    })
}

/// Returns `[W, W², …, W^K]`.
///
/// With `normalize`, every power of order ≥ 2 is divided by its largest entry;
/// first-order kernel weights already lie in `[0, 1]` and are returned as-is.
pub fn graph_powers(w: &WeightMatrix, order: usize, normalize: bool) -> Result<Vec<WeightMatrix>> {
    if order < 1 {
        return Err(Error::Param("graph order must be at least 1".into()));
    }
    if w.weights.nrows() != w.weights.ncols() {
        return Err(Error::Shape("weight matrix must be square".into()));
    }
    let base = SparseWeights::from_dense(&w.view());
    let mut out = Vec::with_capacity(order);
    out.push(w.clone());
    let mut raw = w.weights.clone();
    for k in 2..=order {
        raw = right_mul_sparse(&raw.view(), &base);
        let mut weights = raw.clone();
        let mut scale = 1.0;
        if normalize {
            let max = weights.iter().copied().fold(0.0, f64::max);
            if max > 0.0 {
                weights.mapv_inplace(|v| v / max);
                scale /= max;
            }
        }
        out.push(WeightMatrix {
            weights,
            kind: w.kind,
            order: k,
            sigma: None,
            scale,
        });
    }
    Ok(out)
}

/// Dense `P · W` where `W` is compressed; zero entries of `P` are skipped.
fn right_mul_sparse(p: &ArrayView2<f64>, w: &SparseWeights) -> Array2<f64> {
    let n = p.nrows();
    let mut out = Array2::<f64>::zeros((n, w.dim()));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            for (l, &a) in p.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (j, b) in w.row(l) {
                    row[j] += a * b;
                }
            }
        });
    out
}

/// `L = diag(D) - W` with `D_i = Σ_j W_ij`.
pub fn laplacian(w: &ArrayView2<f64>) -> Result<LaplacianMatrix> {
    if w.nrows() != w.ncols() {
        return Err(Error::Shape(format!(
            "weight matrix must be square, got {}x{}",
            w.nrows(),
            w.ncols()
        )));
    }
    let degrees = w.sum_axis(Axis(1));
    let mut matrix = w.mapv(|v| -v);
    Zip::from(matrix.diag_mut())
        .and(&degrees)
        .and(w.diag())
        .for_each(|l, &d, &wii| *l = d - wii);
    Ok(LaplacianMatrix { matrix, degrees })
}

/// `Tr(S L Sᵀ)`, the graph smoothness penalty of the abundance rows.
pub fn laplacian_quadratic(s: &ArrayView2<f64>, lap: &LaplacianMatrix) -> Result<f64> {
    if s.ncols() != lap.matrix.nrows() {
        return Err(Error::Shape(format!(
            "abundances have {} columns but the graph has {} nodes",
            s.ncols(),
            lap.matrix.nrows()
        )));
    }
    let sl = s.dot(&lap.matrix);
    Ok(Zip::from(&sl).and(s).fold(0.0, |acc, &a, &b| acc + a * b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphOptions {
    pub order: usize,
    pub spatial_neighbors: usize,
    pub spectral_neighbors: usize,
    pub sigma_s: Sigma,
    pub sigma_l: Sigma,
    pub normalize_orders: bool,
}

impl Default for GraphOptions {
    fn default() -> Self {
        Self {
            order: 3,
            spatial_neighbors: DEFAULT_NEIGHBORS,
            spectral_neighbors: DEFAULT_NEIGHBORS,
            sigma_s: Sigma::AUTO,
            sigma_l: Sigma::AUTO,
            normalize_orders: true,
        }
    }
}

/// Spatial and spectral graph stacks `[W_1^v, …, W_K^v]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiOrderGraphSet {
    views: Vec<Vec<WeightMatrix>>,
}

impl MultiOrderGraphSet {
    pub fn build(cube: &HsiCube, opts: &GraphOptions) -> Result<Self> {
        let spatial = spatial_weights(cube, opts.sigma_s, opts.spatial_neighbors)?;
        let spectral = spectral_weights(cube, opts.sigma_l, opts.spectral_neighbors)?;
        Ok(Self {
            views: vec![
                graph_powers(&spatial, opts.order, opts.normalize_orders)?,
                graph_powers(&spectral, opts.order, opts.normalize_orders)?,
            ],
        })
    }

    /// Builds a set from explicit stacks; every stack must have the same length
    /// and every matrix the same size.
    pub fn from_views(views: Vec<Vec<WeightMatrix>>) -> Result<Self> {
        let order = views.first().map(Vec::len).unwrap_or(0);
        if views.is_empty() || order == 0 {
            return Err(Error::Shape("graph set must be nonempty".into()));
        }
        let n = views[0][0].dim();
        for stack in &views {
            if stack.len() != order {
                return Err(Error::Shape("every view needs the same number of orders".into()));
            }
            if stack.iter().any(|w| w.dim() != n || w.weights.ncols() != n) {
                return Err(Error::Shape("graphs disagree in size".into()));
            }
        }
        Ok(Self { views })
    }

    /// Keeps only order `k` in every view.
    pub fn single_order(self, k: usize) -> Result<Self> {
        let views = self
            .views
            .into_iter()
            .map(|stack| {
                stack
                    .into_iter()
                    .find(|w| w.order == k)
                    .map(|w| vec![w])
                    .ok_or_else(|| Error::Param(format!("order {k} not in graph set")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { views })
    }

    pub fn view_count(&self) -> usize {
        self.views.len()
    }

    pub fn order_count(&self) -> usize {
        self.views[0].len()
    }

    pub fn nodes(&self) -> usize {
        self.views[0][0].dim()
    }

    pub fn get(&self, v: usize, k: usize) -> &WeightMatrix {
        &self.views[v][k]
    }

    pub fn views(&self) -> &[Vec<WeightMatrix>] {
        &self.views
    }

    /// `(v, k, W_k^v)` in row-major `(view, order)` order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, &WeightMatrix)> {
        self.views
            .iter()
            .enumerate()
            .flat_map(|(v, stack)| stack.iter().enumerate().map(move |(k, w)| (v, k, w)))
    }
}
