//! QR decomposition by Givens rotations and by CORDIC micro-rotations.
//!
//! Both factorizations share one rotation schedule: column-major, adjacent
//! row pairs, annihilating sub-diagonal entries bottom-up. R's diagonal is
//! made nonnegative and its sub-diagonal is explicitly zeroed. The CORDIC
//! path replaces each 2x2 rotation with shift-add micro-rotations driven by
//! the pivot pair (vectoring) and replayed on the remaining columns
//! (rotation); it runs through an [`Arith`] hook so the same schedule serves
//! the floating and the fixed-point pipeline.

use nalgebra::{DMatrix, DVector};

use crate::fixedpoint::Arith;
use crate::{Error, Result};

/// Thin QR factorization: `q` is m x n with orthonormal columns, `r` is
/// n x n upper triangular with nonnegative diagonal.
#[derive(Clone, Debug)]
pub struct QrResult {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

/// Gain handling for CORDIC rotations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GainCompensation {
    /// Multiply rotated rows by the precomputed 1/K constant (default).
    PrecomputedConstant,
    /// Leave the K growth in place (test/diagnostic use).
    None,
}

/// CORDIC parameters.
#[derive(Clone, Copy, Debug)]
pub struct CordicConfig {
    pub iterations: u32,
    pub gain_compensation: GainCompensation,
}

impl Default for CordicConfig {
    fn default() -> Self {
        CordicConfig { iterations: 24, gain_compensation: GainCompensation::PrecomputedConstant }
    }
}

/// Accumulated micro-rotation gain K = prod sqrt(1 + 2^-2i).
pub fn cordic_gain(iterations: u32) -> f64 {
    (0..iterations).map(|i| (1.0 + (-2.0 * i as f64).exp2()).sqrt()).product()
}

fn check_shape(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() < a.ncols() || a.ncols() == 0 {
        return Err(Error::Shape(format!("QR needs m >= n >= 1, got {}x{}", a.nrows(), a.ncols())));
    }
    Ok(())
}

/// Verifies a computed R has usable rank; tolerance scales with the input.
fn check_rank(r: &DMatrix<f64>, n: usize, scale: f64) -> Result<()> {
    let tol = f64::EPSILON * scale * r.nrows() as f64;
    for j in 0..n {
        if r[(j, j)].abs() <= tol {
            return Err(Error::RankDeficient(format!("R[{j}][{j}] = {:.3e}", r[(j, j)])));
        }
    }
    Ok(())
}

/// Forces the invariant structure: exact zeros below the diagonal and a
/// nonnegative diagonal (sign flips mirrored into qt / the rhs column).
fn finalize_triangle(work: &mut DMatrix<f64>, n: usize, mut qt: Option<&mut DMatrix<f64>>) {
    let m = work.nrows();
    for j in 0..n {
        for i in j + 1..m {
            work[(i, j)] = 0.0;
        }
    }
    for j in 0..n {
        if work[(j, j)] < 0.0 {
            for c in 0..work.ncols() {
                work[(j, c)] = -work[(j, c)];
            }
            if let Some(qt) = qt.as_deref_mut() {
                for c in 0..qt.ncols() {
                    qt[(j, c)] = -qt[(j, c)];
                }
            }
        }
    }
}

/// QR by exact Givens rotations; the floating-point reference.
pub fn qr_givens(a: &DMatrix<f64>) -> Result<QrResult> {
    check_shape(a)?;
    let (m, n) = (a.nrows(), a.ncols());
    let mut work = a.clone();
    let mut qt = DMatrix::<f64>::identity(m, m);
    for j in 0..n {
        for i in (j + 1..m).rev() {
            let (x, y) = (work[(i - 1, j)], work[(i, j)]);
            if y == 0.0 {
                continue;
            }
            let g = x.hypot(y);
            let (c, s) = (x / g, y / g);
            for col in j..n {
                let (u, v) = (work[(i - 1, col)], work[(i, col)]);
                work[(i - 1, col)] = c * u + s * v;
                work[(i, col)] = -s * u + c * v;
            }
            for col in 0..m {
                let (u, v) = (qt[(i - 1, col)], qt[(i, col)]);
                qt[(i - 1, col)] = c * u + s * v;
                qt[(i, col)] = -s * u + c * v;
            }
        }
    }
    finalize_triangle(&mut work, n, Some(&mut qt));
    let r = work.view((0, 0), (n, n)).clone_owned();
    check_rank(&r, n, a.amax())?;
    Ok(QrResult { q: qt.transpose().view((0, 0), (m, n)).clone_owned(), r })
}

/// One CORDIC rotation of rows (i-1, i): directions from the pivot column
/// pair in vectoring mode, replayed on columns `j..limit` of `work` and all
/// columns of `qt`.
fn cordic_rotate_pair<A: Arith>(
    work: &mut DMatrix<f64>,
    qt: &mut Option<&mut DMatrix<f64>>,
    i: usize,
    j: usize,
    cfg: &CordicConfig,
    arith: &A,
) {
    // Pre-rotation by pi when the pivot x is negative: negate both rows.
    if work[(i - 1, j)] < 0.0 {
        for c in j..work.ncols() {
            work[(i - 1, c)] = -work[(i - 1, c)];
            work[(i, c)] = -work[(i, c)];
        }
        if let Some(qt) = qt.as_deref_mut() {
            for c in 0..qt.ncols() {
                qt[(i - 1, c)] = -qt[(i - 1, c)];
                qt[(i, c)] = -qt[(i, c)];
            }
        }
    }

    // Vectoring on the pivot pair decides the direction sequence.
    let mut dirs = Vec::with_capacity(cfg.iterations as usize);
    {
        let (mut x, mut y) = (work[(i - 1, j)], work[(i, j)]);
        for k in 0..cfg.iterations {
            let t = (-(k as f64)).exp2();
            let d = if y >= 0.0 { -1.0 } else { 1.0 };
            let sx = arith.q(t * x);
            let sy = arith.q(t * y);
            x = arith.q(x - d * sy);
            y = arith.q(y + d * sx);
            dirs.push(d);
        }
    }

    let comp = match cfg.gain_compensation {
        GainCompensation::PrecomputedConstant => Some(arith.q(1.0 / cordic_gain(cfg.iterations))),
        GainCompensation::None => None,
    };

    let rotate_cols = |mat: &mut DMatrix<f64>, from: usize| {
        for c in from..mat.ncols() {
            let (mut x, mut y) = (mat[(i - 1, c)], mat[(i, c)]);
            for (k, &d) in dirs.iter().enumerate() {
                let t = (-(k as f64)).exp2();
                let sx = arith.q(t * x);
                let sy = arith.q(t * y);
                x = arith.q(x - d * sy);
                y = arith.q(y + d * sx);
            }
            if let Some(g) = comp {
                x = arith.q(x * g);
                y = arith.q(y * g);
            }
            mat[(i - 1, c)] = x;
            mat[(i, c)] = y;
        }
    };
    rotate_cols(work, j);
    if let Some(qt) = qt.as_deref_mut() {
        rotate_cols(qt, 0);
    }
}

/// Shared CORDIC elimination: the first `n` columns of `work` define the
/// schedule; trailing columns (e.g. an appended observation) ride along.
fn cordic_eliminate<A: Arith>(
    work: &mut DMatrix<f64>,
    n: usize,
    mut qt: Option<&mut DMatrix<f64>>,
    cfg: &CordicConfig,
    arith: &A,
) {
    let m = work.nrows();
    for j in 0..n {
        for i in (j + 1..m).rev() {
            cordic_rotate_pair(work, &mut qt, i, j, cfg, arith);
        }
    }
    finalize_triangle(work, n, qt);
}

/// QR by CORDIC micro-rotations in plain f64.
pub fn qr_cordic(a: &DMatrix<f64>, cfg: &CordicConfig) -> Result<QrResult> {
    qr_cordic_with(a, cfg, &crate::fixedpoint::Quantizer::Float)
}

/// QR by CORDIC micro-rotations through an arithmetic hook.
pub fn qr_cordic_with<A: Arith>(a: &DMatrix<f64>, cfg: &CordicConfig, arith: &A) -> Result<QrResult> {
    check_shape(a)?;
    if cfg.iterations == 0 {
        return Err(Error::Config("CORDIC needs at least one iteration".into()));
    }
    let (m, n) = (a.nrows(), a.ncols());
    let mut work = a.map(|v| arith.q(v));
    let mut qt = DMatrix::<f64>::identity(m, m);
    cordic_eliminate(&mut work, n, Some(&mut qt), cfg, arith);
    let r = work.view((0, 0), (n, n)).clone_owned();
    check_rank(&r, n, a.amax())?;
    Ok(QrResult { q: qt.transpose().view((0, 0), (m, n)).clone_owned(), r })
}

/// Fused CORDIC elimination of `[A | y]`: returns (R, Q^T y) without
/// accumulating Q. This is what the decoding pipeline runs.
pub fn qr_cordic_reduce<A: Arith>(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    cfg: &CordicConfig,
    arith: &A,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_shape(a)?;
    if y.len() != a.nrows() {
        return Err(Error::Shape(format!("rhs length {} != {} rows", y.len(), a.nrows())));
    }
    let (m, n) = (a.nrows(), a.ncols());
    let mut work = DMatrix::zeros(m, n + 1);
    for i in 0..m {
        for j in 0..n {
            work[(i, j)] = arith.q(a[(i, j)]);
        }
        work[(i, n)] = arith.q(y[i]);
    }
    cordic_eliminate(&mut work, n, None, cfg, arith);
    let r = work.view((0, 0), (n, n)).clone_owned();
    check_rank(&r, n, a.amax())?;
    let qty = DVector::from_fn(n, |i, _| work[(i, n)]);
    Ok((r, qty))
}

/// Projects an observation into the triangular domain: Q^T y.
pub fn apply_qt(qr: &QrResult, y: &DVector<f64>) -> Result<DVector<f64>> {
    if y.len() != qr.q.nrows() {
        return Err(Error::Shape(format!("y length {} != {} rows of Q", y.len(), qr.q.nrows())));
    }
    Ok(qr.q.tr_mul(y))
}
