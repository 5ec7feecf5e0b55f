//! Dense row-major matrices for the small systems handled here (n ≤ 8).
//!
//! Only what the solvers and checkers need: products, LU with partial
//! pivoting, inverses, and symmetric eigenvalues by cyclic Jacobi sweeps.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Mat{}x{}", self.rows, self.cols)?;
        f.debug_list().entries(self.to_rows()).finish()
    }
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn scalar(v: f64) -> Self {
        Mat { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Mat::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    /// Builds a matrix from rows. An empty slice gives a 0×`cols` matrix only
    /// through [`Mat::zeros`]; here it yields 0×0.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::DimensionMismatch("ragged matrix rows".into()));
        }
        Ok(Mat { rows: r, cols: c, data: rows.concat() })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "Mat::from_vec shape");
        Mat { rows, cols, data }
    }

    pub fn column(v: &[f64]) -> Self {
        Mat { rows: v.len(), cols: 1, data: v.to_vec() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn matmul(&self, rhs: &Mat) -> Mat {
        assert_eq!(self.cols, rhs.rows, "matmul shape {:?} x {:?}", self.shape(), rhs.shape());
        let mut out = Mat::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += a * rhs.data[k * rhs.cols + j];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "mul_vec shape");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `selfᵀ v` without forming the transpose.
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, v.len(), "tr_mul_vec shape");
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j] += self[(i, j)] * v[i];
            }
        }
        out
    }

    /// `vᵀ self v`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        dot(v, &self.mul_vec(v))
    }

    pub fn symmetrize(&self) -> Mat {
        let t = self.transpose();
        (self + &t).scale(0.5)
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Mat {
        let mut out = Mat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                out[(i, j)] = self[(r0 + i, c0 + j)];
            }
        }
        out
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, b: &Mat) {
        for i in 0..b.rows {
            for j in 0..b.cols {
                self[(r0 + i, c0 + j)] = b[(i, j)];
            }
        }
    }

    /// Horizontal concatenation `[self rhs]`.
    pub fn hstack(&self, rhs: &Mat) -> Mat {
        assert_eq!(self.rows, rhs.rows, "hstack rows");
        let mut out = Mat::zeros(self.rows, self.cols + rhs.cols);
        out.set_block(0, 0, self);
        out.set_block(0, self.cols, rhs);
        out
    }

    /// Vertical concatenation `[self; rhs]`.
    pub fn vstack(&self, rhs: &Mat) -> Mat {
        assert_eq!(self.cols, rhs.cols, "vstack cols");
        let mut out = Mat::zeros(self.rows + rhs.rows, self.cols);
        out.set_block(0, 0, self);
        out.set_block(self.rows, 0, rhs);
        out
    }

    pub fn block_diag(a: &Mat, b: &Mat) -> Mat {
        let mut out = Mat::zeros(a.rows + b.rows, a.cols + b.cols);
        out.set_block(0, 0, a);
        out.set_block(a.rows, a.cols, b);
        out
    }

    pub fn lu(&self) -> Result<Lu> {
        Lu::factor(self)
    }

    pub fn solve(&self, b: &Mat) -> Result<Mat> {
        self.lu()?.solve_mat(b)
    }

    pub fn solve_vec(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.lu()?.solve_vec(b)
    }

    pub fn inverse(&self) -> Result<Mat> {
        self.lu()?.inverse()
    }

    /// 1-norm condition number estimate `‖A‖₁‖A⁻¹‖₁`.
    pub fn condition_number(&self) -> f64 {
        match self.inverse() {
            Ok(inv) => norm1(self) * norm1(&inv),
            Err(_) => f64::INFINITY,
        }
    }

    /// Eigenvalues of the symmetric part, ascending.
    pub fn sym_eigenvalues(&self) -> Vec<f64> {
        assert!(self.is_square(), "sym_eigenvalues needs a square matrix");
        jacobi_eigenvalues(&self.symmetrize())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.sym_eigenvalues().first().copied().unwrap_or(f64::INFINITY)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.sym_eigenvalues().last().copied().unwrap_or(f64::NEG_INFINITY)
    }

    /// Positive semidefinite up to `-tol`. Empty matrices pass.
    pub fn is_psd(&self, tol: f64) -> bool {
        self.rows == 0 || self.min_eigenvalue() >= -tol
    }

    pub fn is_pd(&self, tol: f64) -> bool {
        self.rows == 0 || self.min_eigenvalue() > tol
    }

    pub fn is_nd(&self, tol: f64) -> bool {
        self.rows == 0 || self.max_eigenvalue() < -tol
    }

    pub fn asymmetry(&self) -> f64 {
        (self - &self.transpose()).max_abs()
    }
}

fn norm1(m: &Mat) -> f64 {
    (0..m.cols)
        .map(|j| (0..m.rows).map(|i| m[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn jacobi_eigenvalues(a: &Mat) -> Vec<f64> {
    let n = a.rows;
    let mut m = a.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        if off <= 1e-30 * (1.0 + m.frobenius().powi(2)) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[(k, p)];
                    let akq = m[(k, q)];
                    m[(k, p)] = c * akp - s * akq;
                    m[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[(p, k)];
                    let aqk = m[(q, k)];
                    m[(p, k)] = c * apk - s * aqk;
                    m[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// LU factorization with partial pivoting, `PA = LU`.
#[derive(Clone, Debug)]
pub struct Lu {
    n: usize,
    lu: Mat,
    perm: Vec<usize>,
    sign: f64,
}

impl Lu {
    pub fn factor(a: &Mat) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch(format!("LU of non-square {:?}", a.shape())));
        }
        let n = a.rows;
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        let scale = a.max_abs().max(f64::MIN_POSITIVE);
        for k in 0..n {
            let (piv, pval) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pval <= 1e-14 * scale {
                return Err(Error::Singular(format!("pivot {pval:e} at column {k}")));
            }
            if piv != k {
                for j in 0..n {
                    lu.data.swap(k * n + j, piv * n + j);
                }
                perm.swap(k, piv);
                sign = -sign;
            }
            let d = lu[(k, k)];
            for i in k + 1..n {
                let f = lu[(i, k)] / d;
                lu[(i, k)] = f;
                for j in k + 1..n {
                    lu.data[i * n + j] -= f * lu.data[k * n + j];
                }
            }
        }
        Ok(Lu { n, lu, perm, sign })
    }

    pub fn determinant(&self) -> f64 {
        (0..self.n).fold(self.sign, |d, i| d * self.lu[(i, i)])
    }

    pub fn solve_vec(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return Err(Error::DimensionMismatch(format!("rhs {} vs {}", b.len(), self.n)));
        }
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for k in 0..i {
                x[i] -= self.lu[(i, k)] * x[k];
            }
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                x[i] -= self.lu[(i, k)] * x[k];
            }
            x[i] /= self.lu[(i, i)];
        }
        Ok(x)
    }

    pub fn solve_mat(&self, b: &Mat) -> Result<Mat> {
        if b.rows != self.n {
            return Err(Error::DimensionMismatch(format!("rhs rows {} vs {}", b.rows, self.n)));
        }
        let mut out = Mat::zeros(b.rows, b.cols);
        for j in 0..b.cols {
            let col: Vec<f64> = (0..b.rows).map(|i| b[(i, j)]).collect();
            let x = self.solve_vec(&col)?;
            for i in 0..b.rows {
                out[(i, j)] = x[i];
            }
        }
        Ok(out)
    }

    pub fn inverse(&self) -> Result<Mat> {
        self.solve_mat(&Mat::identity(self.n))
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Add for &Mat {
    type Output = Mat;
    fn add(self, rhs: &Mat) -> Mat {
        assert_eq!(self.shape(), rhs.shape(), "add shape");
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &Mat {
    type Output = Mat;
    fn sub(self, rhs: &Mat) -> Mat {
        assert_eq!(self.shape(), rhs.shape(), "sub shape");
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul for &Mat {
    type Output = Mat;
    fn mul(self, rhs: &Mat) -> Mat {
        self.matmul(rhs)
    }
}

impl Neg for &Mat {
    type Output = Mat;
    fn neg(self) -> Mat {
        self.scale(-1.0)
    }
}

impl Add for Mat {
    type Output = Mat;
    fn add(self, rhs: Mat) -> Mat {
        &self + &rhs
    }
}

impl Sub for Mat {
    type Output = Mat;
    fn sub(self, rhs: Mat) -> Mat {
        &self - &rhs
    }
}

impl Mul for Mat {
    type Output = Mat;
    fn mul(self, rhs: Mat) -> Mat {
        self.matmul(&rhs)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(xi, yi)| alpha * xi + yi).collect()
}

pub fn sub_vec(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}
