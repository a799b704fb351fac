//! Starting points for the factorization: VCA endmembers, augmented NNLS
//! abundances, random factors, and the data-driven ℓ1/2 weight.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hsi_core::HsiCube;
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GammaForm {
    /// Band-averaged Hoyer sparseness, `(√N − ‖x‖₁/‖x‖₂)/(√N − 1)`.
    #[default]
    Sparseness,
    /// `√(N−1)‖x‖₁ / (‖x‖₂ √(N−1))` summed over bands, factors left uncancelled.
    AsWritten,
}

/// Data-driven ℓ1/2 weight, `(1/√L) Σ_l f(x^l)` over band rows.
pub fn estimate_gamma(cube: &HsiCube, form: GammaForm) -> Result<f64> {
    let n = cube.pixels();
    if n < 2 {
        return Err(Error::Param("gamma estimation needs at least 2 pixels".into()));
    }
    let root_n = (n as f64).sqrt();
    let root_n1 = ((n - 1) as f64).sqrt();
    let mut total = 0.0;
    for (band, row) in cube.data().axis_iter(Axis(0)).enumerate() {
        let l1: f64 = row.iter().map(|v| v.abs()).sum();
        let l2 = row.dot(&row).sqrt();
        if l2 == 0.0 {
            return Err(Error::InvalidData(format!("band {band} is identically zero")));
        }
        total += match form {
            GammaForm::Sparseness => (root_n - l1 / l2) / (root_n - 1.0),
            GammaForm::AsWritten => root_n1 * l1 / (l2 * root_n1),
        };
    }
    Ok(total / (cube.bands() as f64).sqrt())
}

fn to_nalgebra(m: &ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

/// Eigenpairs of a symmetric matrix, largest eigenvalue first.
fn sorted_eigen(m: &ArrayView2<f64>) -> (Vec<f64>, Array2<f64>) {
    let eig = SymmetricEigen::new(to_nalgebra(m));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let n = m.nrows();
    let vectors = Array2::from_shape_fn((n, order.len()), |(r, c)| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Vertex component analysis: picks `m` pixels that are extreme points of the
/// data simplex by repeatedly projecting onto directions orthogonal to the
/// vertices found so far. Returns those pixel spectra as the columns of `A0`.
pub fn init_vca(cube: &HsiCube, m: usize, seed: u64) -> Result<Array2<f64>> {
    let x = cube.data();
    let (bands, n) = x.dim();
    if m == 0 || m > bands.min(n) {
        return Err(Error::Init(format!(
            "cannot extract {m} endmembers from {bands} bands and {n} pixels"
        )));
    }
    let corr = x.dot(&x.t()) / n as f64;
    let (corr_vals, corr_vecs) = sorted_eigen(&corr.view());
    let top = corr_vals[0].max(0.0);
    let rank = corr_vals.iter().filter(|&&v| v > 1e-10 * top).count();
    if top == 0.0 || rank < m {
        return Err(Error::Init(format!("data rank {rank} is below the requested {m} endmembers")));
    }

    if m == 1 {
        let u = corr_vecs.column(0);
        let proj = u.dot(x).mapv(f64::abs);
        let best = argmax(proj.iter().copied().enumerate(), &[]);
        return Ok(x.select(Axis(1), &[best]));
    }

    let mean = x.mean_axis(Axis(1)).expect("nonempty");
    let centered = x - &mean.view().insert_axis(Axis(1));
    let cov = centered.dot(&centered.t()) / n as f64;
    let (_, cov_vecs) = sorted_eigen(&cov.view());
    let ud = cov_vecs.slice(ndarray::s![.., ..m]).to_owned();
    let x_p = ud.t().dot(&centered);

    let p_y = x.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let p_x = x_p.iter().map(|v| v * v).sum::<f64>() / n as f64 + mean.dot(&mean);
    let snr = if p_y - p_x <= f64::EPSILON * p_y {
        f64::INFINITY
    } else {
        10.0 * ((p_x - m as f64 / bands as f64 * p_y) / (p_y - p_x)).log10()
    };
    let snr_threshold = 15.0 + 10.0 * (m as f64).log10();

    let y = if snr.is_nan() || snr < snr_threshold {
        // Project onto the (m−1)-dim affine hull and lift with a constant row.
        let d = m - 1;
        let xs = x_p.slice(ndarray::s![..d, ..]);
        let c = xs
            .axis_iter(Axis(1))
            .map(|col| col.dot(&col).sqrt())
            .fold(0.0, f64::max);
        let mut y = Array2::from_elem((m, n), c);
        y.slice_mut(ndarray::s![..d, ..]).assign(&xs);
        y
    } else {
        let ud = corr_vecs.slice(ndarray::s![.., ..m]);
        let xp = ud.t().dot(x);
        let u = xp.mean_axis(Axis(1)).expect("nonempty");
        let mut y = xp;
        for mut col in y.axis_iter_mut(Axis(1)) {
            let denom = u.dot(&col);
            let denom = if denom.abs() < 1e-300 { 1e-300 } else { denom };
            col.mapv_inplace(|v| v / denom);
        }
        y
    };

    let mut rng = stream_rng(seed, Stream::Init);
    let mut chosen: Vec<usize> = Vec::with_capacity(m);
    for i in 0..m {
        let basis: Vec<Array1<f64>> = if i == 0 {
            let mut e = Array1::zeros(m);
            e[m - 1] = 1.0;
            vec![e]
        } else {
            chosen.iter().map(|&j| y.column(j).to_owned()).collect()
        };
        let q = orthonormalize(&basis);
        let mut f: Array1<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        for qi in &q {
            let c = qi.dot(&f);
            f.scaled_add(-c, qi);
        }
        let norm = f.dot(&f).sqrt();
        if norm > 0.0 {
            f /= norm;
        }
        let v = f.dot(&y);
        let best = argmax(v.iter().map(|v| v.abs()).enumerate(), &chosen);
        chosen.push(best);
    }
    Ok(x.select(Axis(1), &chosen))
}

fn argmax(values: impl Iterator<Item = (usize, f64)>, exclude: &[usize]) -> usize {
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for (j, v) in values {
        if exclude.contains(&j) {
            continue;
        }
        if v > best.1 || best.0 == usize::MAX {
            best = (j, v);
        }
    }
    best.0
}

fn orthonormalize(vectors: &[Array1<f64>]) -> Vec<Array1<f64>> {
    let mut q: Vec<Array1<f64>> = Vec::with_capacity(vectors.len());
    for v in vectors {
        let mut w = v.clone();
        for qi in &q {
            let c = qi.dot(&w);
            w.scaled_add(-c, qi);
        }
        let norm = w.dot(&w).sqrt();
        if norm > 1e-12 * v.dot(v).sqrt().max(1e-300) {
            q.push(w / norm);
        }
    }
    q
}

/// Per-pixel NNLS on the `delta`-augmented system, giving nonnegative
/// abundances that approximately sum to one.
pub fn init_fcls(cube: &HsiCube, a0: &ArrayView2<f64>, delta: f64) -> Result<Array2<f64>> {
    let x = cube.data();
    if a0.nrows() != x.nrows() {
        return Err(Error::Shape(format!(
            "endmembers have {} bands, cube has {}",
            a0.nrows(),
            x.nrows()
        )));
    }
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::Param(format!("delta must be positive, got {delta}")));
    }
    if a0.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::Init("initial endmembers must be finite and nonnegative".into()));
    }
    let m = a0.ncols();
    let plain_gram = a0.t().dot(a0);
    if cholesky(&plain_gram.view()).is_none() {
        return Err(Error::Init("initial endmembers are rank deficient".into()));
    }
    // Gram of [A; δ1ᵀ] and the δ² contribution of the constant row.
    let gram = &plain_gram + delta * delta;
    let atx = a0.t().dot(x);
    let columns: Vec<Array1<f64>> = atx
        .axis_iter(Axis(1))
        .into_par_iter()
        .map(|col| {
            let b = col.mapv(|v| v + delta * delta);
            nnls_gram(&gram.view(), &b.view())
        })
        .collect::<Result<_>>()?;
    let mut s = Array2::zeros((m, x.ncols()));
    for (j, col) in columns.into_iter().enumerate() {
        s.column_mut(j).assign(&col);
    }
    Ok(s)
}

/// Nonnegative least squares `min ‖A s − b‖₂, s ≥ 0` (Lawson–Hanson).
pub fn nnls(a: &ArrayView2<f64>, b: &ArrayView1<f64>) -> Result<Array1<f64>> {
    if a.nrows() != b.len() {
        return Err(Error::Shape(format!("A has {} rows, b has {}", a.nrows(), b.len())));
    }
    let gram = a.t().dot(a);
    let atb = a.t().dot(b);
    nnls_gram(&gram.view(), &atb.view())
}

/// Lawson–Hanson active set on the normal equations `G s = c`.
fn nnls_gram(gram: &ArrayView2<f64>, c: &ArrayView1<f64>) -> Result<Array1<f64>> {
    let m = c.len();
    let scale = gram.diag().iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1e-300);
    let tol = 1e-12 * scale * (1.0 + c.iter().fold(0.0f64, |a, &b| a.max(b.abs())));
    let mut s = Array1::<f64>::zeros(m);
    let mut passive = vec![false; m];
    let max_outer = 3 * m + 10;
    for _ in 0..max_outer {
        let w = c - &gram.dot(&s);
        let candidate = (0..m)
            .filter(|&j| !passive[j])
            .max_by(|&a, &b| w[a].total_cmp(&w[b]).then(b.cmp(&a)));
        match candidate {
            Some(t) if w[t] > tol => passive[t] = true,
            _ => return Ok(s),
        }
        loop {
            let idx: Vec<usize> = (0..m).filter(|&j| passive[j]).collect();
            let sub = gram.select(Axis(0), &idx).select(Axis(1), &idx);
            let rhs: Array1<f64> = idx.iter().map(|&j| c[j]).collect();
            let sol = solve_spd(&sub.view(), &rhs.view())
                .ok_or_else(|| Error::Init("singular subsystem in NNLS".into()))?;
            let mut z = Array1::<f64>::zeros(m);
            for (&j, &v) in idx.iter().zip(sol.iter()) {
                z[j] = v;
            }
            if idx.iter().all(|&j| z[j] > 0.0) {
                s = z;
                break;
            }
            let mut step = f64::INFINITY;
            for &j in &idx {
                if z[j] <= 0.0 {
                    step = step.min(s[j] / (s[j] - z[j]));
                }
            }
            s = &s + &((&z - &s) * step);
            for &j in &idx {
                if s[j] <= tol.min(1e-15) || z[j] <= 0.0 && s[j] <= 1e-15 {
                    passive[j] = false;
                    s[j] = 0.0;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    Ok(s.mapv(|v| v.max(0.0)))
}

/// Lower-triangular Cholesky factor, or `None` if not numerically positive definite.
fn cholesky(a: &ArrayView2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let trace = a.diag().sum().abs().max(1e-300);
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if sum <= 1e-12 * trace {
                    return None;
                }
                l[[i, i]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Some(l)
}

fn solve_spd(a: &ArrayView2<f64>, b: &ArrayView1<f64>) -> Option<Array1<f64>> {
    let l = cholesky(a)?;
    let n = b.len();
    let mut y = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[[i, k]] * y[k];
        }
        y[i] = sum / l[[i, i]];
    }
    let mut x = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= l[[k, i]] * x[k];
        }
        x[i] = sum / l[[i, i]];
    }
    Some(x)
}

/// Random factors: `|N(0,1)|` endmembers scaled to the data maximum and
/// uniform abundance columns normalized onto the simplex.
pub fn init_random(cube: &HsiCube, m: usize, seed: u64) -> Result<(Array2<f64>, Array2<f64>)> {
    if m == 0 {
        return Err(Error::Init("endmember count must be positive".into()));
    }
    let mut rng = stream_rng(seed, Stream::Init);
    let (bands, n) = cube.data().dim();
    let data_max = cube.data().iter().copied().fold(0.0, f64::max);
    let mut a = Array2::from_shape_simple_fn((bands, m), || {
        let z: f64 = StandardNormal.sample(&mut rng);
        z.abs()
    });
    let a_max = a.iter().copied().fold(0.0, f64::max);
    if a_max > 0.0 {
        a.mapv_inplace(|v| v * data_max / a_max);
    }
    let mut s = Array2::from_shape_simple_fn((m, n), || rng.random::<f64>());
    for mut col in s.axis_iter_mut(Axis(1)) {
        let sum = col.sum();
        col.mapv_inplace(|v| v / sum);
    }
    Ok((a, s))
}
