use ndarray::{Array2, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};
use crate::graph::GraphOperator;

/// Added to every multiplicative denominator.
pub const DENOM_GUARD: f64 = 1e-12;

/// Abundances are floored here before taking `S^{-1/2}`.
pub const ABUNDANCE_FLOOR: f64 = 1e-10;

/// Fused graph in the form the abundance update consumes.
#[derive(Debug, Clone, Copy)]
pub struct GraphTerm<'a> {
    pub weights: &'a dyn GraphOperator,
    pub degrees: &'a [f64],
}

/// `max(X − E, 0)`, the data the factors are fit to.
pub(crate) fn fit_target(x: &ArrayView2<f64>, e: Option<&ArrayView2<f64>>) -> Array2<f64> {
    match e {
        Some(e) => {
            let mut t = x.to_owned();
            Zip::from(&mut t).and(e).for_each(|t, &e| *t = (*t - e).max(0.0));
            t
        }
        None => x.to_owned(),
    }
}

fn check_factors(a: &ArrayView2<f64>, s: &ArrayView2<f64>, x: &ArrayView2<f64>) -> Result<()> {
    if a.ncols() != s.nrows() || a.nrows() != x.nrows() || s.ncols() != x.ncols() {
        return Err(Error::Shape(format!(
            "A {:?}, S {:?}, X {:?} are inconsistent",
            a.dim(),
            s.dim(),
            x.dim()
        )));
    }
    Ok(())
}

fn check_noise(x: &ArrayView2<f64>, e: Option<&ArrayView2<f64>>) -> Result<()> {
    match e {
        Some(e) if e.dim() != x.dim() => Err(Error::Shape(format!(
            "noise {:?} does not match data {:?}",
            e.dim(),
            x.dim()
        ))),
        _ => Ok(()),
    }
}

/// `A ← A ⊙ ((X−E) Sᵀ) ⊘ (A S Sᵀ)`.
pub fn update_endmembers(
    a: &ArrayView2<f64>,
    s: &ArrayView2<f64>,
    x: &ArrayView2<f64>,
    e: Option<&ArrayView2<f64>>,
) -> Result<Array2<f64>> {
    check_factors(a, s, x)?;
    check_noise(x, e)?;
    let target = fit_target(x, e);
    Ok(endmember_step(a, s, &target.view()))
}

pub(crate) fn endmember_step(
    a: &ArrayView2<f64>,
    s: &ArrayView2<f64>,
    target: &ArrayView2<f64>,
) -> Array2<f64> {
    let numer = target.dot(&s.t());
    let denom = a.dot(&s.dot(&s.t()));
    let mut out = a.to_owned();
    Zip::from(&mut out)
        .and(&numer)
        .and(&denom)
        .for_each(|a, &n, &d| *a *= n / (d + DENOM_GUARD));
    out
}

/// `S ← S ⊙ (Aᵀ(X−E) + λ S W) ⊘ (AᵀA S + (γ/2) S^{-1/2} + λ S D)`.
pub fn update_abundances(
    s: &ArrayView2<f64>,
    a: &ArrayView2<f64>,
    x: &ArrayView2<f64>,
    e: Option<&ArrayView2<f64>>,
    gamma: f64,
    lambda: f64,
    graph: Option<GraphTerm<'_>>,
) -> Result<Array2<f64>> {
    check_factors(a, s, x)?;
    check_noise(x, e)?;
    if let Some(g) = graph {
        if g.weights.dim() != s.ncols() || g.degrees.len() != s.ncols() {
            return Err(Error::Shape(format!(
                "graph of size {} for {} pixels",
                g.weights.dim(),
                s.ncols()
            )));
        }
    }
    let target = fit_target(x, e);
    Ok(abundance_step(s, a, &target.view(), gamma, lambda, graph))
}

pub(crate) fn abundance_step(
    s: &ArrayView2<f64>,
    a: &ArrayView2<f64>,
    target: &ArrayView2<f64>,
    gamma: f64,
    lambda: f64,
    graph: Option<GraphTerm<'_>>,
) -> Array2<f64> {
    let mut numer = a.t().dot(target);
    let mut denom = a.t().dot(a).dot(s);
    if gamma > 0.0 {
        let half = 0.5 * gamma;
        Zip::from(&mut denom)
            .and(s)
            .for_each(|d, &v| *d += half / v.max(ABUNDANCE_FLOOR).sqrt());
    }
    if let (Some(g), true) = (graph, lambda > 0.0) {
        let sw = g.weights.right_apply(s);
        numer.scaled_add(lambda, &sw);
        for (mut col, (&deg, s_col)) in denom
            .axis_iter_mut(Axis(1))
            .zip(g.degrees.iter().zip(s.axis_iter(Axis(1))))
        {
            col.scaled_add(lambda * deg, &s_col);
        }
    }
    let mut out = s.to_owned();
    Zip::from(&mut out)
        .and(&numer)
        .and(&denom)
        .for_each(|s, &n, &d| *s *= n / (d + DENOM_GUARD));
    out
}

/// Row-wise group soft threshold of `T = X − AS` at level `beta`.
pub fn update_noise(
    x: &ArrayView2<f64>,
    a: &ArrayView2<f64>,
    s: &ArrayView2<f64>,
    beta: f64,
) -> Result<Array2<f64>> {
    check_factors(a, s, x)?;
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::Param(format!("beta must be nonnegative, got {beta}")));
    }
    let mut t = x.to_owned() - a.dot(s);
    for mut row in t.axis_iter_mut(Axis(0)) {
        let norm = row.dot(&row).sqrt();
        let scale = if norm > 0.0 && norm >= beta {
            (norm - beta) / norm
        } else {
            0.0
        };
        row.mapv_inplace(|v| v * scale);
    }
    Ok(t)
}
