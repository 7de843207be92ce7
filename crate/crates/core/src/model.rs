//! System model: modulation, real-valued decomposition, MMSE extension and
//! the shifted/scaled lattice domain.
//!
//! Complex transmit symbols live on the odd-integer grid per dimension
//! (QPSK {-1,+1}, 16QAM {-3..+3}, 64QAM {-7..+7}) with reflected-Gray bit
//! maps. The real decomposition stacks [Re; Im] so an N_T x N_R complex
//! system becomes a 2N_T x 2N_R real one. The MMSE extension appends
//! sqrt(N0 / (2 sigma_s^2)) * I under the channel and zeros under the
//! observation. Shift/scale moves the odd grid onto all integers:
//! y_t = (y_ext - H_ext * 1) / 2, and a lattice point z maps back through
//! s = 2 T z + 1.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::{Error, Result};

/// Modulation scheme; symbols are per-dimension odd integers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    Qpsk,
    Qam16,
    Qam64,
}

impl Modulation {
    /// Bits per complex symbol (2/4/6).
    pub fn bits_per_symbol(&self) -> usize {
        match self {
            Modulation::Qpsk => 2,
            Modulation::Qam16 => 4,
            Modulation::Qam64 => 6,
        }
    }

    /// Bits per real dimension (1/2/3).
    pub fn bits_per_dimension(&self) -> usize {
        self.bits_per_symbol() / 2
    }

    /// Complex constellation size m (4/16/64).
    pub fn constellation_size(&self) -> usize {
        1 << self.bits_per_symbol()
    }

    /// Per-dimension alphabet in ascending order.
    pub fn alphabet(&self) -> &'static [i64] {
        match self {
            Modulation::Qpsk => &[-1, 1],
            Modulation::Qam16 => &[-3, -1, 1, 3],
            Modulation::Qam64 => &[-7, -5, -3, -1, 1, 3, 5, 7],
        }
    }

    /// Mean complex symbol energy (QPSK 2, 16QAM 10, 64QAM 42).
    pub fn avg_symbol_energy(&self) -> f64 {
        let a = self.alphabet();
        let per_dim: f64 = a.iter().map(|&v| (v * v) as f64).sum::<f64>() / a.len() as f64;
        2.0 * per_dim
    }

    /// Reflected-Gray map from `bits_per_dimension` bits to one amplitude.
    ///
    /// QPSK: 0 -> -1, 1 -> +1. 16QAM: 00 -> -3, 01 -> -1, 11 -> +1,
    /// 10 -> +3. 64QAM extends the same reflected pattern to 3 bits.
    pub fn gray_to_amplitude(&self, bits: &[u8]) -> Result<i64> {
        let n = self.bits_per_dimension();
        if bits.len() != n {
            return Err(Error::Shape(format!("expected {n} bits per dimension, got {}", bits.len())));
        }
        // Gray -> binary rank, rank indexes the ascending alphabet.
        let mut g: usize = 0;
        for &b in bits {
            if b > 1 {
                return Err(Error::Domain(format!("bit value {b} not in {{0,1}}")));
            }
            g = (g << 1) | b as usize;
        }
        let mut rank = 0usize;
        let mut acc = 0usize;
        for i in (0..n).rev() {
            acc ^= (g >> i) & 1;
            rank = (rank << 1) | acc;
        }
        Ok(self.alphabet()[rank])
    }

    /// Inverse of [`gray_to_amplitude`]; errors when `amp` is off-alphabet.
    pub fn amplitude_to_gray(&self, amp: i64) -> Result<Vec<u8>> {
        let rank = self
            .alphabet()
            .iter()
            .position(|&a| a == amp)
            .ok_or_else(|| Error::Domain(format!("amplitude {amp} not in {self:?} alphabet")))?;
        let n = self.bits_per_dimension();
        let g = rank ^ (rank >> 1);
        Ok((0..n).rev().map(|i| ((g >> i) & 1) as u8).collect())
    }
}

/// Complex observation model y = H s + n.
#[derive(Clone, Debug)]
pub struct ComplexSystem {
    pub h: DMatrix<Complex64>,
    pub y: DVector<Complex64>,
    /// Noise variance per real dimension (N0 / 2).
    pub noise_variance: f64,
    /// Per-complex-symbol transmit energy sigma_s^2.
    pub signal_variance: f64,
}

/// Real-valued decomposition of a [`ComplexSystem`].
#[derive(Clone, Debug)]
pub struct RealSystem {
    pub h: DMatrix<f64>,
    pub y: DVector<f64>,
    pub noise_variance: f64,
    pub signal_variance: f64,
}

/// MMSE-extended real system: H_ext = [H; alpha I], y_ext = [y; 0].
#[derive(Clone, Debug)]
pub struct ExtendedSystem {
    pub h: DMatrix<f64>,
    pub y: DVector<f64>,
    pub noise_variance: f64,
}

/// Maps a bit string to complex symbols, first half of each symbol's bits
/// driving the real dimension.
pub fn modulate(bits: &[u8], scheme: Modulation) -> Result<Vec<Complex64>> {
    let bps = scheme.bits_per_symbol();
    if bits.is_empty() || bits.len() % bps != 0 {
        return Err(Error::Shape(format!("bit count {} not a multiple of {bps}", bits.len())));
    }
    let bpd = scheme.bits_per_dimension();
    bits.chunks(bps)
        .map(|c| {
            let re = scheme.gray_to_amplitude(&c[..bpd])? as f64;
            let im = scheme.gray_to_amplitude(&c[bpd..])? as f64;
            Ok(Complex64::new(re, im))
        })
        .collect()
}

/// Recovers bits from exact constellation symbols (inverse of [`modulate`]).
pub fn demap(symbols: &[Complex64], scheme: Modulation) -> Result<Vec<u8>> {
    let mut bits = Vec::with_capacity(symbols.len() * scheme.bits_per_symbol());
    for s in symbols {
        for part in [s.re, s.im] {
            let amp = part.round() as i64;
            if part.fract() != 0.0 {
                return Err(Error::Domain(format!("symbol component {part} is not an integer amplitude")));
            }
            bits.extend(scheme.amplitude_to_gray(amp)?);
        }
    }
    Ok(bits)
}

/// Stacks a complex vector as [Re; Im].
pub fn realify_vector(v: &DVector<Complex64>) -> DVector<f64> {
    let n = v.len();
    DVector::from_fn(2 * n, |i, _| if i < n { v[i].re } else { v[i - n].im })
}

/// Real decomposition: H -> [[Re, -Im], [Im, Re]], y -> [Re; Im].
pub fn realify(sys: &ComplexSystem) -> RealSystem {
    let (nr, nt) = (sys.h.nrows(), sys.h.ncols());
    let mut h = DMatrix::zeros(2 * nr, 2 * nt);
    for i in 0..nr {
        for j in 0..nt {
            let c = sys.h[(i, j)];
            h[(i, j)] = c.re;
            h[(i, j + nt)] = -c.im;
            h[(i + nr, j)] = c.im;
            h[(i + nr, j + nt)] = c.re;
        }
    }
    RealSystem {
        h,
        y: realify_vector(&sys.y),
        noise_variance: sys.noise_variance,
        signal_variance: sys.signal_variance,
    }
}

/// Appends the MMSE regularization rows: alpha = sqrt(n0 / (2 sigma_s^2)).
///
/// `n0` is the total complex noise variance (twice the per-dimension one).
pub fn mmse_extend(sys: &RealSystem, n0: f64) -> Result<ExtendedSystem> {
    if sys.signal_variance <= 0.0 {
        return Err(Error::Domain("signal variance must be positive".into()));
    }
    if n0 < 0.0 {
        return Err(Error::Domain("noise variance must be nonnegative".into()));
    }
    let (m, n) = (sys.h.nrows(), sys.h.ncols());
    let alpha = (n0 / (2.0 * sys.signal_variance)).sqrt();
    let mut h = DMatrix::zeros(m + n, n);
    h.view_mut((0, 0), (m, n)).copy_from(&sys.h);
    for j in 0..n {
        h[(m + j, j)] = alpha;
    }
    let mut y = DVector::zeros(m + n);
    y.rows_mut(0, m).copy_from(&sys.y);
    Ok(ExtendedSystem { h, y, noise_variance: sys.noise_variance })
}

/// Moves the odd-integer grid onto all integers: (y_ext - H_ext * 1) / 2.
pub fn shift_scale(sys: &ExtendedSystem) -> DVector<f64> {
    let ones = DVector::from_element(sys.h.ncols(), 1.0);
    (&sys.y - &sys.h * ones) / 2.0
}

/// Maps a lattice point back to symbol amplitudes: s = 2 T z + 1 (exact
/// integer arithmetic).
pub fn unshift(z: &DVector<i64>, t: &DMatrix<i64>) -> Result<DVector<i64>> {
    if t.ncols() != z.len() {
        return Err(Error::Shape(format!("T is {}x{}, z has {}", t.nrows(), t.ncols(), z.len())));
    }
    Ok(DVector::from_fn(t.nrows(), |i, _| {
        2 * (0..z.len()).map(|j| t[(i, j)] * z[j]).sum::<i64>() + 1
    }))
}

/// Nearest alphabet member per entry; exact midpoints resolve toward the
/// larger amplitude.
pub fn quantize_to_constellation(s: &DVector<f64>, scheme: Modulation) -> DVector<i64> {
    let alpha = scheme.alphabet();
    DVector::from_fn(s.len(), |i, _| {
        let x = s[i];
        let mut best = alpha[0];
        let mut best_d = f64::INFINITY;
        for &a in alpha {
            let d = (x - a as f64).abs();
            // `>=` keeps the later (larger) amplitude on exact ties.
            if best_d >= d {
                best_d = d;
                best = a;
            }
        }
        best
    })
}

/// Reassembles a real symbol stack [Re; Im] into complex symbols.
pub fn complexify_symbols(s: &DVector<i64>) -> Result<Vec<Complex64>> {
    if s.len() % 2 != 0 {
        return Err(Error::Shape("real symbol stack must have even length".into()));
    }
    let n = s.len() / 2;
    Ok((0..n).map(|i| Complex64::new(s[i] as f64, s[i + n] as f64)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn modulate_known_points() {
        assert_eq!(modulate(&[0, 0], Modulation::Qpsk).unwrap()[0], Complex64::new(-1.0, -1.0));
        assert_eq!(modulate(&[1, 0], Modulation::Qpsk).unwrap()[0], Complex64::new(1.0, -1.0));
        assert_eq!(modulate(&[0, 0, 0, 0], Modulation::Qam16).unwrap()[0], Complex64::new(-3.0, -3.0));
        assert!(modulate(&[0, 1, 1], Modulation::Qam16).is_err());
    }

    #[test]
    fn demap_known_points() {
        assert_eq!(demap(&[Complex64::new(-1.0, -1.0)], Modulation::Qpsk).unwrap(), vec![0, 0]);
        assert_eq!(demap(&[Complex64::new(3.0, -1.0)], Modulation::Qam16).unwrap(), vec![1, 0, 0, 1]);
        assert!(demap(&[Complex64::new(2.0, 0.0)], Modulation::Qam16).is_err());
    }

    #[test]
    fn gray_roundtrip_all_schemes() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for scheme in [Modulation::Qpsk, Modulation::Qam16, Modulation::Qam64] {
            let bps = scheme.bits_per_symbol();
            for _ in 0..10_000 {
                let bits: Vec<u8> = (0..bps).map(|_| rng.gen_range(0..2u8)).collect();
                let syms = modulate(&bits, scheme).unwrap();
                assert_eq!(demap(&syms, scheme).unwrap(), bits);
            }
        }
    }

    #[test]
    fn gray_adjacent_amplitudes_differ_in_one_bit() {
        for scheme in [Modulation::Qpsk, Modulation::Qam16, Modulation::Qam64] {
            let a = scheme.alphabet();
            for w in a.windows(2) {
                let b0 = scheme.amplitude_to_gray(w[0]).unwrap();
                let b1 = scheme.amplitude_to_gray(w[1]).unwrap();
                let diff: usize = b0.iter().zip(&b1).filter(|(x, y)| x != y).count();
                assert_eq!(diff, 1, "{scheme:?} {w:?}");
            }
        }
    }

    #[test]
    fn energies() {
        assert_eq!(Modulation::Qpsk.avg_symbol_energy(), 2.0);
        assert_eq!(Modulation::Qam16.avg_symbol_energy(), 10.0);
        assert_eq!(Modulation::Qam64.avg_symbol_energy(), 42.0);
    }

    fn toy_complex(h00: Complex64, y0: Complex64) -> ComplexSystem {
        ComplexSystem {
            h: DMatrix::from_element(1, 1, h00),
            y: DVector::from_element(1, y0),
            noise_variance: 1.0,
            signal_variance: 2.0,
        }
    }

    #[test]
    fn realify_known_blocks() {
        let r = realify(&toy_complex(Complex64::new(1.0, 0.0), Complex64::new(2.0, 3.0)));
        assert_eq!(r.h, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        assert_eq!(r.y, DVector::from_vec(vec![2.0, 3.0]));

        let r = realify(&toy_complex(Complex64::new(0.0, 1.0), Complex64::new(0.0, 0.0)));
        assert_eq!(r.h, DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]));
    }

    #[test]
    fn realify_respects_complex_multiply() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..200 {
            let (nr, nt) = (rng.gen_range(1..5), rng.gen_range(1..5));
            let h = DMatrix::from_fn(nr, nt, |_, _| {
                Complex64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0))
            });
            let s = DVector::from_fn(nt, |_, _| {
                Complex64::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0))
            });
            let sys = ComplexSystem {
                h: h.clone(),
                y: DVector::zeros(nr),
                noise_variance: 1.0,
                signal_variance: 2.0,
            };
            let real = realify(&sys);
            let lhs = &real.h * realify_vector(&s);
            let rhs = realify_vector(&(&h * &s));
            assert!((lhs - rhs).norm() < 1e-12);
        }
    }

    #[test]
    fn mmse_extend_blocks() {
        let base = RealSystem {
            h: DMatrix::identity(2, 2),
            y: DVector::from_vec(vec![1.0, 2.0]),
            noise_variance: 1.0,
            signal_variance: 2.0,
        };
        let zero = mmse_extend(&base, 0.0).unwrap();
        assert!(zero.h.view((2, 0), (2, 2)).iter().all(|&v| v == 0.0));

        // n0 = 2 sigma_s^2 makes the extension exactly the identity.
        let ident = mmse_extend(&base, 4.0).unwrap();
        assert_eq!(ident.h.view((2, 0), (2, 2)).clone_owned(), DMatrix::identity(2, 2));

        let bad = RealSystem { signal_variance: 0.0, ..base };
        assert!(mmse_extend(&bad, 1.0).is_err());
    }

    #[test]
    fn mmse_extend_norm_identity() {
        // ||y_ext - H_ext s||^2 == ||y - H s||^2 + alpha^2 ||s||^2
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let (m, n) = (rng.gen_range(2..6), rng.gen_range(1..4));
            let sys = RealSystem {
                h: DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0)),
                y: DVector::from_fn(m, |_, _| rng.gen_range(-2.0..2.0)),
                noise_variance: 0.7,
                signal_variance: 1.3,
            };
            let n0 = rng.gen_range(0.01..3.0);
            let ext = mmse_extend(&sys, n0).unwrap();
            let s = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0f64));
            let lhs = (&ext.y - &ext.h * &s).norm_squared();
            let alpha2 = n0 / (2.0 * sys.signal_variance);
            let rhs = (&sys.y - &sys.h * &s).norm_squared() + alpha2 * s.norm_squared();
            assert!((lhs - rhs).abs() <= 1e-10 * rhs.max(1.0));
        }
    }

    #[test]
    fn shift_scale_cases() {
        let sys = ExtendedSystem {
            h: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.5, -1.0]),
            y: DVector::from_vec(vec![3.0, -0.5]),
            noise_variance: 1.0,
        };
        // y equal to H*1 maps to the origin.
        let aligned = ExtendedSystem { y: &sys.h * DVector::from_element(2, 1.0), ..sys.clone() };
        assert_eq!(shift_scale(&aligned), DVector::zeros(2));

        let zero_h = ExtendedSystem {
            h: DMatrix::zeros(2, 2),
            y: DVector::from_vec(vec![4.0, 2.0]),
            noise_variance: 1.0,
        };
        assert_eq!(shift_scale(&zero_h), DVector::from_vec(vec![2.0, 1.0]));
    }

    #[test]
    fn unshift_cases() {
        let t = DMatrix::<i64>::identity(2, 2);
        assert_eq!(
            unshift(&DVector::from_vec(vec![0, 0]), &t).unwrap(),
            DVector::from_vec(vec![1, 1])
        );
        assert_eq!(
            unshift(&DVector::from_vec(vec![1, -1]), &t).unwrap(),
            DVector::from_vec(vec![3, -1])
        );
        assert!(unshift(&DVector::from_vec(vec![1]), &t).is_err());
    }

    #[test]
    fn all_ones_sits_at_lattice_origin() {
        // With T = I, s = 1 corresponds to z = (s - 1)/2 = 0, so an
        // observation of H_ext * 1 lands exactly on the origin after
        // shift/scale.
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let h = DMatrix::from_fn(6, 3, |_, _| rng.gen_range(-1.0..1.0));
        let sys = ExtendedSystem {
            y: &h * DVector::from_element(3, 1.0),
            h,
            noise_variance: 0.0,
        };
        let yt = shift_scale(&sys);
        assert!(yt.norm() < 1e-14);
        let s = unshift(&DVector::zeros(3), &DMatrix::identity(3, 3)).unwrap();
        assert!(s.iter().all(|&v| v == 1));
    }

    #[test]
    fn constellation_quantizer() {
        let q = |x: f64, m: Modulation| quantize_to_constellation(&DVector::from_element(1, x), m)[0];
        assert_eq!(q(3.7, Modulation::Qam16), 3);
        assert_eq!(q(-5.0, Modulation::Qam16), -3);
        assert_eq!(q(0.0, Modulation::Qam16), 1); // midpoint goes up
        assert_eq!(q(2.0, Modulation::Qam16), 3);
        assert_eq!(q(0.0, Modulation::Qpsk), 1);

        let mut rng = ChaCha8Rng::seed_from_u64(25);
        for scheme in [Modulation::Qpsk, Modulation::Qam16, Modulation::Qam64] {
            for _ in 0..2000 {
                let x = DVector::from_element(1, rng.gen_range(-12.0..12.0));
                let v = quantize_to_constellation(&x, scheme);
                assert!(scheme.alphabet().contains(&v[0]));
                let again = quantize_to_constellation(&v.map(|a| a as f64), scheme);
                assert_eq!(v, again);
            }
        }
    }
}
