use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

/// Compressed-row copy of a square weight matrix.
///
/// The solver multiplies abundances by the fused graph thousands of times;
/// the graph is fixed for the whole run, so it is compressed once.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseWeights {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseWeights {
    pub fn from_dense(w: &ArrayView2<f64>) -> Self {
        assert_eq!(w.nrows(), w.ncols(), "weight matrix must be square");
        let n = w.nrows();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in w.rows() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    cols.push(j);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    /// `S · W` for a symmetric `W`.
    ///
    /// Column `j` of the product is `Σ_i W_ij s_i`, which for symmetric `W`
    /// reads row `j` of the compressed matrix.
    pub fn left_mul_symmetric(&self, s: &ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(s.ncols(), self.n, "column count must match graph size");
        let m = s.nrows();
        let st = s.t();
        let mut out = Array2::<f64>::zeros((self.n, m));
        out.axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(j, mut col)| {
                for (i, w) in self.row(j) {
                    let src = st.row(i);
                    for (c, &v) in col.iter_mut().zip(src.iter()) {
                        *c += w * v;
                    }
                }
            });
        out.reversed_axes().as_standard_layout().into_owned()
    }
}

/// Right multiplication by a fixed symmetric graph.
pub trait GraphOperator: Sync + std::fmt::Debug {
    fn dim(&self) -> usize;

    /// `S · W`.
    fn right_apply(&self, s: &ArrayView2<f64>) -> Array2<f64>;

    /// Row sums of `W`.
    fn degrees(&self) -> Vec<f64> {
        let ones = Array2::ones((1, self.dim()));
        self.right_apply(&ones.view()).row(0).to_vec()
    }
}

impl GraphOperator for SparseWeights {
    fn dim(&self) -> usize {
        self.n
    }

    fn right_apply(&self, s: &ArrayView2<f64>) -> Array2<f64> {
        self.left_mul_symmetric(s)
    }
}

/// `Σ_v Σ_k c_vk W_v^k` for symmetric sparse bases `W_v`.
///
/// Powers of a k-NN graph fill in quickly, so instead of storing them the
/// product `S · W_v^k` is built by `k` successive sparse products.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerCombination {
    bases: Vec<SparseWeights>,
    /// Per base: `(order, coefficient)` pairs.
    terms: Vec<Vec<(usize, f64)>>,
}

impl PowerCombination {
    pub fn new(bases: Vec<SparseWeights>, terms: Vec<Vec<(usize, f64)>>) -> Self {
        assert_eq!(bases.len(), terms.len(), "one term list per base graph");
        assert!(!bases.is_empty(), "need at least one base graph");
        let n = bases[0].dim();
        assert!(bases.iter().all(|b| b.dim() == n), "base graphs differ in size");
        assert!(
            terms.iter().flatten().all(|&(k, _)| k >= 1),
            "orders start at 1"
        );
        Self { bases, terms }
    }

    pub fn terms(&self) -> &[Vec<(usize, f64)>] {
        &self.terms
    }

    /// Stored entries over all bases.
    pub fn nnz(&self) -> usize {
        self.bases.iter().map(SparseWeights::nnz).sum()
    }
}

impl GraphOperator for PowerCombination {
    fn dim(&self) -> usize {
        self.bases[0].dim()
    }

    fn right_apply(&self, s: &ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::<f64>::zeros(s.dim());
        for (base, terms) in self.bases.iter().zip(&self.terms) {
            let top = terms
                .iter()
                .filter(|t| t.1 != 0.0)
                .map(|t| t.0)
                .max()
                .unwrap_or(0);
            let mut power = s.to_owned();
            for k in 1..=top {
                power = base.left_mul_symmetric(&power.view());
                for &(order, coef) in terms {
                    if order == k && coef != 0.0 {
                        out.scaled_add(coef, &power);
                    }
                }
            }
        }
        out
    }
}
