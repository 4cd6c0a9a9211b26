use crate::numerics::Tensor;
use crate::{Error, Result};

/// Least-squares solver for a fixed `n × p` design via thin QR
/// (modified Gram-Schmidt with one re-orthogonalization pass).
#[derive(Clone, Debug)]
pub struct LeastSquares {
    /// Orthonormal columns, `p` vectors of length `n`.
    q: Vec<Vec<f64>>,
    /// Upper-triangular `p × p`.
    r: Vec<Vec<f64>>,
}

const RANK_TOLERANCE: f64 = 1e-10;

impl LeastSquares {
    pub fn new(design: &Tensor<f64>) -> Result<Self> {
        let (n, p) = (design.rows(), design.cols());
        if n < p {
            return Err(Error::RankDeficient(format!("{n} rows for {p} columns")));
        }
        let mut q: Vec<Vec<f64>> = Vec::with_capacity(p);
        let mut r = vec![vec![0.0; p]; p];
        for c in 0..p {
            let mut v: Vec<f64> = (0..n).map(|i| design.get2(i, c)).collect();
            let orig = norm(&v);
            for _pass in 0..2 {
                for (k, qk) in q.iter().enumerate() {
                    let d = dot(qk, &v);
                    r[k][c] += d;
                    v.iter_mut().zip(qk).for_each(|(a, b)| *a -= d * b);
                }
            }
            let nv = norm(&v);
            if orig == 0.0 || nv <= RANK_TOLERANCE * orig.max(1.0) {
                return Err(Error::RankDeficient(format!("design column {c} is linearly dependent")));
            }
            r[c][c] = nv;
            v.iter_mut().for_each(|a| *a /= nv);
            q.push(v);
        }
        Ok(LeastSquares { q, r })
    }

    pub fn rows(&self) -> usize {
        self.q.first().map_or(0, Vec::len)
    }

    /// Coefficients minimizing `‖X b − y‖²`.
    pub fn solve(&self, y: &[f64]) -> Vec<f64> {
        let p = self.q.len();
        let qty: Vec<f64> = self.q.iter().map(|qk| dot(qk, y)).collect();
        let mut b = vec![0.0; p];
        for i in (0..p).rev() {
            let s: f64 = (i + 1..p).map(|k| self.r[i][k] * b[k]).sum();
            b[i] = (qty[i] - s) / self.r[i][i];
        }
        b
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
