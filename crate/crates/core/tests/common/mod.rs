#![allow(dead_code)]

use hygame_core::hybrid_domain::InputDims;
use hygame_core::linalg::Mat;
use hygame_core::system::QuadraticGameSpec;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn to_na(m: &Mat) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

pub fn from_na(m: &DMatrix<f64>) -> Mat {
    let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect();
    Mat::from_rows(&rows).unwrap()
}

/// Solves `Aᵀ P + P A + W = 0` through the Kronecker form.
pub fn lyapunov(a: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let k = eye.kronecker(&a.transpose()) + a.transpose().kronecker(&eye);
    let rhs = -DMatrix::from_column_slice(n * n, 1, w.as_slice());
    let x = k.lu().solve(&rhs).expect("Lyapunov operator is nonsingular");
    let p = DMatrix::from_column_slice(n, n, x.as_slice());
    (&p + p.transpose()) * 0.5
}

/// Newton–Kleinman for `AᵀP + PA − PBR⁻¹BᵀP + Q = 0` from a stabilizing
/// gain `k0`.
pub fn care_kleinman(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, k0: &DMatrix<f64>) -> DMatrix<f64> {
    let rinv = r.clone().try_inverse().unwrap();
    let mut k = k0.clone();
    let mut p = DMatrix::zeros(a.nrows(), a.ncols());
    for _ in 0..100 {
        let acl = a - b * &k;
        let w = q + k.transpose() * r * &k;
        let next = lyapunov(&acl, &w);
        let done = (&next - &p).norm() < 1e-14 * (1.0 + next.norm());
        p = next;
        k = &rinv * b.transpose() * &p;
        if done {
            break;
        }
    }
    p
}

/// Value iteration for `P = Q + AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA`.
pub fn dare_value_iteration(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = q.clone();
    for _ in 0..100_000 {
        let btp = b.transpose() * &p;
        let m = r + &btp * b;
        let next = q + a.transpose() * &p * a - a.transpose() * btp.transpose() * m.lu().solve(&(&btp * a)).unwrap();
        let next = (&next + next.transpose()) * 0.5;
        let delta = (&next - &p).norm();
        p = next;
        if delta < 1e-15 * (1.0 + p.norm()) {
            break;
        }
    }
    p
}

fn random_mat(rng: &mut ChaCha8Rng, n: usize, m: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, m, |_, _| rng.gen_range(lo..hi))
}

fn random_pd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let l = random_mat(rng, n, n, -1.0, 1.0);
    &l * l.transpose() + DMatrix::identity(n, n) * rng.gen_range(0.2..1.5)
}

/// One-player flow-only specs (scalar or 2×2) with invertible input matrix,
/// plus the CARE oracle solution.
pub fn random_care_cases(count: usize, seed: u64) -> Vec<(QuadraticGameSpec, Mat)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| {
            let n = 1 + k % 2;
            let a = random_mat(&mut rng, n, n, -1.5, 1.5);
            let mut b = random_mat(&mut rng, n, n, -1.0, 1.0);
            b += DMatrix::identity(n, n) * 1.2;
            let q = random_pd(&mut rng, n);
            let r = random_pd(&mut rng, n);
            // high-gain start: A − c·BR⁻¹Bᵀ is Hurwitz for large c
            let s = &b * r.clone().try_inverse().unwrap() * b.transpose();
            let smin = s.clone().symmetric_eigen().eigenvalues.min();
            let c = (a.norm() + 1.0) / smin;
            let k0 = r.clone().try_inverse().unwrap() * b.transpose() * c;
            let p = care_kleinman(&a, &b, &q, &r, &k0);
            let mut spec = QuadraticGameSpec::zeros(n, InputDims::new(n, 0, 0, 0));
            spec.a_c = from_na(&a);
            spec.b_c1 = from_na(&b);
            spec.q_c = from_na(&q);
            spec.r_c1 = from_na(&r);
            spec.has_jumps = false;
            (spec, from_na(&p))
        })
        .collect()
}

/// One-player jump-only specs with the DARE value-iteration solution.
pub fn random_dare_cases(count: usize, seed: u64) -> Vec<(QuadraticGameSpec, Mat)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| {
            let n = 1 + k % 2;
            let a = random_mat(&mut rng, n, n, -1.2, 1.2);
            let mut b = random_mat(&mut rng, n, n, -1.0, 1.0);
            b += DMatrix::identity(n, n);
            let q = random_pd(&mut rng, n);
            let r = random_pd(&mut rng, n);
            let p = dare_value_iteration(&a, &b, &q, &r);
            let mut spec = QuadraticGameSpec::zeros(n, InputDims::new(0, 0, n, 0));
            spec.a_d = from_na(&a);
            spec.b_d1 = from_na(&b);
            spec.q_d = from_na(&q);
            spec.r_d1 = from_na(&r);
            spec.has_flows = false;
            (spec, from_na(&p))
        })
        .collect()
}

pub fn rel_diff(a: &Mat, b: &Mat) -> f64 {
    (a - b).frobenius() / (1.0 + b.frobenius())
}
