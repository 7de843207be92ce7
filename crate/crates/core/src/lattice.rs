//! LLL lattice reduction with exact unimodular bookkeeping.
//!
//! The reduction runs on the basis columns with float (or fixed-emulated)
//! Gram-Schmidt state, while the transform T and its inverse are maintained
//! in exact integer arithmetic: every column operation on the basis mirrors
//! a column operation on T and the inverse row operation on T^-1, so
//! `reduced = original * T` and `T * T_inv = I` hold exactly at all times.
//!
//! Divisions go through [`Arith::recip`], which the fixed-point mode
//! implements as Newton-Raphson with a lookup seed; [`nr_reciprocal`] is the
//! standalone float variant with an exponent-flip seed.

use nalgebra::DMatrix;

use crate::fixedpoint::{Arith, Quantizer};
use crate::{Error, Result};

/// Basis matrix whose columns span the lattice.
pub type LatticeBasis = DMatrix<f64>;

/// Column transform with its exact integer inverse.
#[derive(Clone, Debug)]
pub struct UnimodularTransform {
    pub t: DMatrix<i64>,
    pub t_inv: DMatrix<i64>,
}

impl UnimodularTransform {
    pub fn identity(n: usize) -> Self {
        UnimodularTransform { t: DMatrix::identity(n, n), t_inv: DMatrix::identity(n, n) }
    }
}

/// LLL parameters. `max_swaps: None` derives a budget from the basis
/// condition estimate: 10 n^2 log2(cond).
#[derive(Clone, Copy, Debug)]
pub struct LllParams {
    pub delta: f64,
    pub max_swaps: Option<usize>,
}

impl Default for LllParams {
    fn default() -> Self {
        LllParams { delta: 0.75, max_swaps: None }
    }
}

fn validate(basis: &LatticeBasis, params: &LllParams) -> Result<()> {
    if basis.ncols() == 0 || basis.nrows() < basis.ncols() {
        return Err(Error::Shape(format!("basis must be m x n with m >= n >= 1, got {}x{}", basis.nrows(), basis.ncols())));
    }
    if !(0.25 < params.delta && params.delta < 1.0) {
        return Err(Error::Domain(format!("delta {} outside (1/4, 1)", params.delta)));
    }
    if basis.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("basis has non-finite entries".into()));
    }
    Ok(())
}

fn swap_budget(basis: &LatticeBasis, params: &LllParams) -> usize {
    if let Some(m) = params.max_swaps {
        return m;
    }
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for j in 0..basis.ncols() {
        let n = basis.column(j).norm();
        lo = lo.min(n);
        hi = hi.max(n);
    }
    let cond = if lo > 0.0 { hi / lo } else { 1e12 };
    let n = basis.ncols() as f64;
    (10.0 * n * n * cond.max(2.0).log2()).ceil() as usize
}

/// Gram-Schmidt state: squared norms of b*_j and the mu coefficients.
struct Gso {
    norms: Vec<f64>,
    mu: DMatrix<f64>,
}

fn gso_fresh<A: Arith>(b: &DMatrix<f64>, a: &A) -> Gso {
    let (m, n) = (b.nrows(), b.ncols());
    let mut bstar = b.clone();
    let mut norms = vec![0.0; n];
    let mut mu = DMatrix::zeros(n, n);
    for k in 0..n {
        for j in 0..k {
            let mut dot = 0.0;
            for i in 0..m {
                dot = a.q(dot + a.q(b[(i, k)] * bstar[(i, j)]));
            }
            let mukj = if norms[j] > 0.0 { a.q(dot * a.recip(norms[j])) } else { 0.0 };
            mu[(k, j)] = mukj;
            for i in 0..m {
                bstar[(i, k)] = a.q(bstar[(i, k)] - a.q(mukj * bstar[(i, j)]));
            }
        }
        let mut nn = 0.0;
        for i in 0..m {
            nn = a.q(nn + a.q(bstar[(i, k)] * bstar[(i, k)]));
        }
        norms[k] = nn;
        mu[(k, k)] = 1.0;
    }
    Gso { norms, mu }
}

/// b_k -= q * b_j mirrored on T (column op) and T_inv (inverse row op).
fn column_op(b: &mut DMatrix<f64>, tr: &mut UnimodularTransform, k: usize, j: usize, q: i64, a: &impl Arith) {
    if q == 0 {
        return;
    }
    for i in 0..b.nrows() {
        b[(i, k)] = a.q(b[(i, k)] - a.q(q as f64 * b[(i, j)]));
    }
    for i in 0..tr.t.nrows() {
        tr.t[(i, k)] -= q * tr.t[(i, j)];
    }
    for c in 0..tr.t_inv.ncols() {
        tr.t_inv[(j, c)] += q * tr.t_inv[(k, c)];
    }
}

fn swap_columns(b: &mut DMatrix<f64>, tr: &mut UnimodularTransform, k: usize) {
    b.swap_columns(k - 1, k);
    tr.t.swap_columns(k - 1, k);
    tr.t_inv.swap_rows(k - 1, k);
}

fn lll_core<A: Arith>(
    basis: &LatticeBasis,
    params: &LllParams,
    arith: &A,
    strict: bool,
) -> Result<(LatticeBasis, UnimodularTransform)> {
    validate(basis, params)?;
    let n = basis.ncols();
    let budget = swap_budget(basis, params);
    let mut b = basis.map(|v| arith.q(v));
    let mut tr = UnimodularTransform::identity(n);
    let mut swaps = 0usize;

    // Outer restarts re-derive the Gram-Schmidt state from scratch; a clean
    // pass (no column op, no swap) certifies the result at full precision.
    for _restart in 0..8 {
        let mut gso = gso_fresh(&b, arith);
        let mut dirty = false;
        let mut k = 1usize;
        while k < n {
            // Size-reduce column k against all previous columns. The strict
            // > 1/2 test keeps mu = 1/2 exactly from flip-flopping between
            // passes.
            for j in (0..k).rev() {
                if gso.mu[(k, j)].abs() <= 0.5 {
                    continue;
                }
                let q = gso.mu[(k, j)].round();
                if q != 0.0 && q.abs() < 9e15 {
                    let qi = q as i64;
                    column_op(&mut b, &mut tr, k, j, qi, arith);
                    for i in 0..j {
                        gso.mu[(k, i)] = arith.q(gso.mu[(k, i)] - arith.q(q * gso.mu[(j, i)]));
                    }
                    gso.mu[(k, j)] = arith.q(gso.mu[(k, j)] - q);
                    dirty = true;
                }
            }
            let mu_k = gso.mu[(k, k - 1)];
            let lhs = arith.q(params.delta * gso.norms[k - 1]);
            let rhs = arith.q(gso.norms[k] + arith.q(mu_k * mu_k * gso.norms[k - 1]));
            if lhs <= rhs {
                k += 1;
                continue;
            }

            // Lovasz failed: swap and update the GSO state in place.
            swap_columns(&mut b, &mut tr, k);
            swaps += 1;
            dirty = true;
            if swaps > budget {
                if strict {
                    return Err(Error::NonTermination(format!("LLL exceeded {budget} swaps")));
                }
                return Ok((b, tr));
            }
            let b_new = arith.q(gso.norms[k] + arith.q(mu_k * mu_k * gso.norms[k - 1]));
            if b_new > 0.0 {
                let inv_new = arith.recip(b_new);
                let mu_new = arith.q(mu_k * arith.q(gso.norms[k - 1] * inv_new));
                gso.norms[k] = arith.q(gso.norms[k - 1] * arith.q(gso.norms[k] * inv_new));
                gso.norms[k - 1] = b_new;
                for i in 0..k - 1 {
                    gso.mu.swap((k - 1, i), (k, i));
                }
                for i in k + 1..n {
                    let t = gso.mu[(i, k)];
                    gso.mu[(i, k)] = arith.q(gso.mu[(i, k - 1)] - arith.q(mu_k * t));
                    gso.mu[(i, k - 1)] = arith.q(t + arith.q(mu_new * gso.mu[(i, k)]));
                }
                gso.mu[(k, k - 1)] = mu_new;
            } else {
                // Degenerate direction (possible only under coarse
                // quantization); restart with fresh state.
                break;
            }
            k = k.max(2) - 1;
        }
        if !dirty {
            return Ok((b, tr));
        }
        if !strict && k >= n {
            // Bounded mode takes the first complete pass as final.
            return Ok((b, tr));
        }
    }
    if strict {
        Err(Error::NonTermination("LLL failed to certify a clean pass".into()))
    } else {
        Ok((b, tr))
    }
}

/// LLL reduction in floating point. Errors if the swap budget runs out.
pub fn lll_reduce(basis: &LatticeBasis, params: &LllParams) -> Result<(LatticeBasis, UnimodularTransform)> {
    lll_core(basis, params, &Quantizer::Float, true)
}

/// LLL reduction through an arithmetic hook with a hard effort bound:
/// exhausting the budget returns the current (still exactly unimodular)
/// state instead of erroring, matching a budgeted hardware reducer.
pub fn lll_reduce_bounded<A: Arith>(
    basis: &LatticeBasis,
    params: &LllParams,
    arith: &A,
) -> Result<(LatticeBasis, UnimodularTransform)> {
    lll_core(basis, params, arith, false)
}

/// Newton-Raphson reciprocal with an exponent-flip seed.
///
/// The seed r0 = (3 - 2m) 2^-e for x = m 2^e, m in [0.5, 1) is exact at
/// powers of two and keeps |1 - x r0| <= 1/8, so the quadratic iteration
/// satisfies |x r_n - 1| <= 2^(-3 * 2^n).
pub fn nr_reciprocal(x: f64, n_iter: u32) -> Result<f64> {
    if x == 0.0 || !x.is_finite() {
        return Err(Error::Domain(format!("reciprocal of {x}")));
    }
    let sign = x.signum();
    let ax = x.abs();
    let mut e = ax.log2().floor() as i32 + 1;
    let mut m = ax * ((-e) as f64).exp2();
    while m >= 1.0 {
        m *= 0.5;
        e += 1;
    }
    while m < 0.5 {
        m *= 2.0;
        e -= 1;
    }
    let mut r = (3.0 - 2.0 * m) * ((-e) as f64).exp2();
    for _ in 0..n_iter {
        r *= 2.0 - ax * r;
    }
    Ok(sign * r)
}

/// Outcome of checking a reduction against its definition.
#[derive(Clone, Debug)]
pub struct ReductionReport {
    /// reduced == original * T within float tolerance.
    pub reconstruction: bool,
    /// T has an exact integer inverse (and the carried inverse matches).
    pub unimodular: bool,
    /// |mu[k][j]| <= 1/2 for all j < k.
    pub size_reduced: bool,
    /// delta ||b*_{k-1}||^2 <= ||b*_k||^2 + mu^2 ||b*_{k-1}||^2 for all k.
    pub lovasz: bool,
    pub max_abs_mu: f64,
    pub reconstruction_err: f64,
}

impl ReductionReport {
    pub fn all_ok(&self) -> bool {
        self.reconstruction && self.unimodular && self.size_reduced && self.lovasz
    }
}

/// Exact integer inverse by unimodular row reduction; None when T is not
/// unimodular (|det| != 1).
pub fn integer_inverse(t: &DMatrix<i64>) -> Option<DMatrix<i64>> {
    let n = t.nrows();
    if n != t.ncols() || n == 0 {
        return None;
    }
    let mut a = DMatrix::<i128>::from_fn(n, n, |i, j| t[(i, j)] as i128);
    let mut inv = DMatrix::<i128>::identity(n, n);
    for col in 0..n {
        // Euclidean elimination below the diagonal keeps all ops unimodular.
        loop {
            let mut pivot = None;
            let mut best = i128::MAX;
            for r in col..n {
                let v = a[(r, col)].abs();
                if v != 0 && v < best {
                    best = v;
                    pivot = Some(r);
                }
            }
            let p = pivot?;
            if p != col {
                a.swap_rows(p, col);
                inv.swap_rows(p, col);
            }
            let mut live = false;
            for r in col + 1..n {
                let q = a[(r, col)].div_euclid(a[(col, col)]);
                if q != 0 {
                    for c in 0..n {
                        let d = q * a[(col, c)];
                        a[(r, c)] -= d;
                        let d = q * inv[(col, c)];
                        inv[(r, c)] -= d;
                    }
                }
                if a[(r, col)] != 0 {
                    live = true;
                }
            }
            if !live {
                break;
            }
        }
        if a[(col, col)].abs() != 1 {
            return None;
        }
    }
    for col in 0..n {
        if a[(col, col)] == -1 {
            for c in 0..n {
                a[(col, c)] = -a[(col, c)];
                inv[(col, c)] = -inv[(col, c)];
            }
        }
    }
    for col in (0..n).rev() {
        for r in 0..col {
            let q = a[(r, col)];
            if q != 0 {
                for c in 0..n {
                    let d = q * a[(col, c)];
                    a[(r, c)] -= d;
                    let d = q * inv[(col, c)];
                    inv[(r, c)] -= d;
                }
            }
        }
    }
    let mut out = DMatrix::<i64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = i128::try_from(inv[(i, j)]).ok().and_then(|v| i64::try_from(v).ok())?;
        }
    }
    Some(out)
}

/// Checks a claimed reduction: reconstruction, exact unimodularity,
/// size-reduction and the Lovasz condition at the given delta.
pub fn verify_reduction(
    original: &LatticeBasis,
    reduced: &LatticeBasis,
    tr: &UnimodularTransform,
    delta: f64,
) -> ReductionReport {
    let tf = tr.t.map(|v| v as f64);
    let recon = original * tf - reduced;
    let scale = reduced.norm().max(1.0);
    let reconstruction_err = recon.norm() / scale;
    let reconstruction = reconstruction_err <= 1e-10;

    let unimodular = match integer_inverse(&tr.t) {
        Some(inv) => {
            let n = tr.t.nrows();
            let prod = &tr.t * &tr.t_inv;
            inv == tr.t_inv && prod == DMatrix::<i64>::identity(n, n)
        }
        None => false,
    };

    let gso = gso_fresh(reduced, &Quantizer::Float);
    let n = reduced.ncols();
    let mut max_abs_mu = 0.0f64;
    for k in 0..n {
        for j in 0..k {
            max_abs_mu = max_abs_mu.max(gso.mu[(k, j)].abs());
        }
    }
    let size_reduced = max_abs_mu <= 0.5 + 1e-9;
    let mut lovasz = true;
    for k in 1..n {
        let mu = gso.mu[(k, k - 1)];
        let lhs = delta * gso.norms[k - 1];
        let rhs = gso.norms[k] + mu * mu * gso.norms[k - 1];
        if lhs > rhs + 1e-9 * gso.norms[k - 1].abs().max(1.0) {
            lovasz = false;
        }
    }
    ReductionReport { reconstruction, unimodular, size_reduced, lovasz, max_abs_mu, reconstruction_err }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_basis(m: usize, n: usize, rng: &mut ChaCha8Rng) -> LatticeBasis {
        DMatrix::from_fn(m, n, |_, _| rng.gen_range(-2.0..2.0))
    }

    #[test]
    fn identity_basis_unchanged() {
        let b = DMatrix::<f64>::identity(4, 4);
        let (red, tr) = lll_reduce(&b, &LllParams::default()).unwrap();
        assert_eq!(red, b);
        assert_eq!(tr.t, DMatrix::<i64>::identity(4, 4));
    }

    #[test]
    fn small_known_basis_reduces_validly() {
        let b = DMatrix::from_columns(&[
            DVector::from_vec(vec![1.0, 1.0, 1.0]),
            DVector::from_vec(vec![-1.0, 0.0, 2.0]),
            DVector::from_vec(vec![3.0, 5.0, 6.0]),
        ]);
        let (red, tr) = lll_reduce(&b, &LllParams::default()).unwrap();
        let report = verify_reduction(&b, &red, &tr, 0.75);
        assert!(report.all_ok(), "{report:?}");
        let shortest = |m: &DMatrix<f64>| (0..m.ncols()).map(|j| m.column(j).norm()).fold(f64::INFINITY, f64::min);
        assert!(shortest(&red) <= shortest(&b) + 1e-12);
    }

    #[test]
    fn random_bases_verify() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..50 {
            let b = random_basis(8, 4, &mut rng);
            if let Ok((red, tr)) = lll_reduce(&b, &LllParams::default()) {
                let report = verify_reduction(&b, &red, &tr, 0.75);
                assert!(report.all_ok(), "{report:?}");
            }
        }
    }

    #[test]
    fn scaling_leaves_transform_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let b = random_basis(6, 3, &mut rng);
        let (_, t1) = lll_reduce(&b, &LllParams::default()).unwrap();
        let scaled = 3.7 * &b;
        let (_, t2) = lll_reduce(&scaled, &LllParams::default()).unwrap();
        assert_eq!(t1.t, t2.t);
    }

    #[test]
    fn lattice_points_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let b = random_basis(8, 4, &mut rng);
        let (red, tr) = lll_reduce(&b, &LllParams::default()).unwrap();
        for _ in 0..100 {
            let z = DVector::from_fn(4, |_, _| rng.gen_range(-5..6) as f64);
            let tz = tr.t.map(|v| v as f64) * &z;
            let p1 = &red * &z;
            let p2 = &b * tz;
            assert!((p1 - p2).norm() < 1e-10);
        }
    }

    #[test]
    fn orthogonality_defect_never_grows() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let defect = |m: &DMatrix<f64>| {
            let prod: f64 = (0..m.ncols()).map(|j| m.column(j).norm()).product();
            let gram = m.tr_mul(m);
            prod / gram.determinant().sqrt()
        };
        for _ in 0..20 {
            let b = random_basis(8, 4, &mut rng);
            let (red, _) = lll_reduce(&b, &LllParams::default()).unwrap();
            assert!(defect(&red) <= defect(&b) * (1.0 + 1e-9));
        }
    }

    #[test]
    fn condition_number_improves_in_median() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let cond = |m: &DMatrix<f64>| {
            let sv = m.clone().svd(false, false).singular_values;
            sv.max() / sv.min()
        };
        let mut before = Vec::new();
        let mut after = Vec::new();
        for _ in 0..100 {
            let b = random_basis(8, 4, &mut rng);
            let (red, _) = lll_reduce(&b, &LllParams::default()).unwrap();
            before.push(cond(&b));
            after.push(cond(&red));
        }
        let med = |v: &mut Vec<f64>| {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v[v.len() / 2]
        };
        assert!(med(&mut after) <= med(&mut before));
    }

    #[test]
    fn tiny_swap_budget_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let mut hit = false;
        for _ in 0..20 {
            let b = random_basis(8, 4, &mut rng);
            let params = LllParams { delta: 0.75, max_swaps: Some(1) };
            match lll_reduce(&b, &params) {
                Err(Error::NonTermination(_)) => {
                    hit = true;
                    break;
                }
                _ => continue,
            }
        }
        assert!(hit, "no basis required more than one swap");
    }

    #[test]
    fn bounded_mode_returns_unimodular_state_at_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let b = random_basis(8, 4, &mut rng);
        let params = LllParams { delta: 0.75, max_swaps: Some(1) };
        let (red, tr) = lll_reduce_bounded(&b, &params, &Quantizer::Float).unwrap();
        let report = verify_reduction(&b, &red, &tr, 0.75);
        assert!(report.reconstruction && report.unimodular, "{report:?}");
    }

    #[test]
    fn nr_reciprocal_known_values() {
        assert!((nr_reciprocal(2.0, 4).unwrap() - 0.5).abs() < 1e-9);
        assert_eq!(nr_reciprocal(1.0, 0).unwrap(), 1.0);
        assert_eq!(nr_reciprocal(1.0, 7).unwrap(), 1.0);
        assert_eq!(nr_reciprocal(4.0, 0).unwrap(), 0.25);
        assert!((nr_reciprocal(-5.0, 5).unwrap() + 0.2).abs() < 1e-12);
        assert!(nr_reciprocal(0.0, 3).is_err());
    }

    #[test]
    fn nr_reciprocal_quadratic_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(48);
        for _ in 0..500 {
            let x: f64 = rng.gen_range(0.5..2.0);
            for n in 0..3u32 {
                let e_n = (nr_reciprocal(x, n).unwrap() - 1.0 / x).abs();
                let e_next = (nr_reciprocal(x, n + 1).unwrap() - 1.0 / x).abs();
                assert!(e_next <= e_n * e_n * x * 1.01 + 1e-15, "x={x} n={n}");
            }
        }
    }

    #[test]
    fn verify_rejects_bad_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(49);
        let b = random_basis(6, 3, &mut rng);
        let (red, tr) = lll_reduce(&b, &LllParams::default()).unwrap();

        // det = 2 transform is not unimodular.
        let mut bad_t = DMatrix::<i64>::identity(3, 3);
        bad_t[(0, 0)] = 2;
        let bad = UnimodularTransform { t: bad_t, t_inv: DMatrix::identity(3, 3) };
        assert!(!verify_reduction(&b, &red, &bad, 0.75).unimodular);

        // A basis with mu[1][0] = 0.6 by construction violates size
        // reduction even under the identity transform.
        let unreduced = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.0, 1.0]);
        let report = verify_reduction(&unreduced, &unreduced, &UnimodularTransform::identity(2), 0.75);
        assert!(!report.size_reduced);
        assert!((report.max_abs_mu - 0.6).abs() < 1e-12);
    }

    #[test]
    fn integer_inverse_exactness() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        for _ in 0..50 {
            let b = random_basis(8, 4, &mut rng);
            let (_, tr) = lll_reduce(&b, &LllParams::default()).unwrap();
            let inv = integer_inverse(&tr.t).expect("reduction transform must be unimodular");
            assert_eq!(inv, tr.t_inv);
            assert_eq!(&tr.t * &inv, DMatrix::<i64>::identity(4, 4));
        }
        assert!(integer_inverse(&DMatrix::<i64>::from_row_slice(2, 2, &[2, 0, 0, 1])).is_none());
        assert!(integer_inverse(&DMatrix::<i64>::zeros(2, 2)).is_none());
    }
}
