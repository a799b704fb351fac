//! Unmixing quality metrics.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spectral angle between two spectra, in radians.
pub fn sad(a: &ArrayView1<f64>, a_hat: &ArrayView1<f64>) -> Result<f64> {
    if a.len() != a_hat.len() {
        return Err(Error::Shape(format!("spectra of length {} and {}", a.len(), a_hat.len())));
    }
    let na = a.dot(a).sqrt();
    let nb = a_hat.dot(a_hat).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Metric("spectral angle of a zero vector".into()));
    }
    let cos = (a.dot(a_hat) / (na * nb)).clamp(-1.0, 1.0);
    Ok(cos.acos())
}

/// `sqrt((1/N) Σ_j ‖s_j − ŝ_j‖²)` over pixel columns.
pub fn rmse(s: &ArrayView2<f64>, s_hat: &ArrayView2<f64>) -> Result<f64> {
    if s.dim() != s_hat.dim() {
        return Err(Error::Shape(format!("abundances {:?} vs {:?}", s.dim(), s_hat.dim())));
    }
    if s.ncols() == 0 {
        return Err(Error::Shape("no pixels".into()));
    }
    let sq: f64 = s.iter().zip(s_hat.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sq / s.ncols() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    /// `permutation[k]` is the estimated column matched to true endmember `k`.
    pub permutation: Vec<usize>,
    pub sad: Vec<f64>,
}

impl Matching {
    pub fn total(&self) -> f64 {
        self.sad.iter().sum()
    }
}

/// Pairs true and estimated endmembers by minimum total spectral angle.
pub fn match_endmembers(a_true: &ArrayView2<f64>, a_est: &ArrayView2<f64>) -> Result<Matching> {
    if a_true.dim() != a_est.dim() {
        return Err(Error::Shape(format!(
            "endmember matrices {:?} vs {:?}",
            a_true.dim(),
            a_est.dim()
        )));
    }
    let m = a_true.ncols();
    let mut cost = Array2::zeros((m, m));
    for k in 0..m {
        for j in 0..m {
            cost[[k, j]] = sad(&a_true.column(k), &a_est.column(j))?;
        }
    }
    let permutation = min_cost_assignment(&cost.view());
    let sad = permutation.iter().enumerate().map(|(k, &j)| cost[[k, j]]).collect();
    Ok(Matching { permutation, sad })
}

/// Hungarian algorithm (shortest augmenting paths with potentials) on a square
/// cost matrix. Returns `assign[row] = col`.
pub fn min_cost_assignment(cost: &ArrayView2<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "assignment needs a square cost matrix");
    // 1-based arrays; index 0 is the virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

/// `10·log10(Σ‖x‖² / Σ‖n‖²)`; `+∞` when the noise is identically zero.
pub fn measure_snr(signal: &ArrayView2<f64>, noise: &ArrayView2<f64>) -> Result<f64> {
    if signal.dim() != noise.dim() {
        return Err(Error::Shape(format!("signal {:?} vs noise {:?}", signal.dim(), noise.dim())));
    }
    let ps: f64 = signal.iter().map(|v| v * v).sum();
    let pn: f64 = noise.iter().map(|v| v * v).sum();
    if pn == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (ps / pn).log10())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_endmember_sad: Vec<f64>,
    pub mean_sad: f64,
    pub rmse: f64,
    pub permutation: Vec<usize>,
    pub measured_snr_db: Option<f64>,
}

/// Matches endmembers, reorders the estimated abundance rows the same way,
/// and scores both.
pub fn evaluate(
    a_true: &ArrayView2<f64>,
    s_true: &ArrayView2<f64>,
    a_est: &ArrayView2<f64>,
    s_est: &ArrayView2<f64>,
) -> Result<EvalReport> {
    let matching = match_endmembers(a_true, a_est)?;
    let s_aligned = s_est.select(Axis(0), &matching.permutation);
    let rmse = rmse(s_true, &s_aligned.view())?;
    let mean_sad = matching.total() / matching.sad.len() as f64;
    Ok(EvalReport {
        per_endmember_sad: matching.sad,
        mean_sad,
        rmse,
        permutation: matching.permutation,
        measured_snr_db: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    #[test]
    fn sad_cases() {
        let a = array![1.0, 0.0];
        assert_eq!(sad(&a.view(), &a.view()).unwrap(), 0.0);
        assert!((sad(&a.view(), &array![0.0, 1.0].view()).unwrap() - FRAC_PI_2).abs() < 1e-15);
        assert!((sad(&a.view(), &array![1.0, 1.0].view()).unwrap() - FRAC_PI_4).abs() < 1e-15);
        assert!(matches!(sad(&a.view(), &array![0.0, 0.0].view()), Err(Error::Metric(_))));
    }

    #[test]
    fn rmse_cases() {
        let s = array![[0.1, 0.2, 0.3], [0.9, 0.8, 0.7]];
        assert_eq!(rmse(&s.view(), &s.view()).unwrap(), 0.0);
        let shifted = s.mapv(|v| v + 0.25);
        assert!((rmse(&s.view(), &shifted.view()).unwrap() - 0.25 * 2f64.sqrt()).abs() < 1e-15);
        assert!(matches!(
            rmse(&s.view(), &array![[1.0]].view()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn matching_recovers_permutation() {
        let a = array![[1.0, 0.0, 0.2], [0.0, 1.0, 0.3], [0.5, 0.1, 1.0]];
        let est = a.select(Axis(1), &[2, 0, 1]);
        let m = match_endmembers(&a.view(), &est.view()).unwrap();
        assert_eq!(m.permutation, vec![1, 2, 0]);
        assert!(m.sad.iter().all(|&v| v.abs() < 1e-7));
    }

    #[test]
    fn single_endmember_matches_identity() {
        let a = array![[1.0], [2.0]];
        let m = match_endmembers(&a.view(), &array![[3.0], [1.0]].view()).unwrap();
        assert_eq!(m.permutation, vec![0]);
    }

    #[test]
    fn snr_cases() {
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        assert!(measure_snr(&x.view(), &x.view()).unwrap().abs() < 1e-12);
        let n = x.mapv(|v| v / 10.0);
        assert!((measure_snr(&x.view(), &n.view()).unwrap() - 20.0).abs() < 1e-12);
        let n2 = n.mapv(|v| v * 2.0);
        let drop = measure_snr(&x.view(), &n.view()).unwrap() - measure_snr(&x.view(), &n2.view()).unwrap();
        assert!((drop - 6.0206).abs() < 1e-4);
        assert_eq!(measure_snr(&x.view(), &Array2::zeros((2, 2)).view()).unwrap(), f64::INFINITY);
    }

    #[test]
    fn evaluate_permuted_truth_is_perfect() {
        let a = array![[1.0, 0.1], [0.2, 1.0], [0.4, 0.4]];
        let s = array![[0.3, 0.6, 1.0], [0.7, 0.4, 0.0]];
        let a_est = a.select(Axis(1), &[1, 0]);
        let s_est = s.select(Axis(0), &[1, 0]);
        let r = evaluate(&a.view(), &s.view(), &a_est.view(), &s_est.view()).unwrap();
        assert!(r.mean_sad < 1e-7);
        assert!(r.rmse < 1e-15);
        assert_eq!(r.permutation, vec![1, 0]);
    }
}
