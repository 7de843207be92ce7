//! Soft-output demapping and the iterative detector/decoder loop.
//!
//! LLR convention throughout: positive means bit 0, with the bipolar map
//! x = 1 - 2b (so x = +1 carries bit 0). The detector produces max-log
//! extrinsic LLRs from a candidate list, the LDPC decoder is a layered
//! normalized min-sum, and the outer loop feeds decoder extrinsics back as
//! detector priors until the posterior stops moving.

use std::collections::HashMap;
use std::path::Path;

use crate::{Error, Result};

/// Candidate bit vector in bipolar form with its channel distance
/// ||y - H s||^2. The metric carries no prior term; priors enter at
/// LLR-computation time so the same list serves every outer iteration.
#[derive(Clone, Debug)]
pub struct ScoredCandidate {
    pub bits: Vec<i8>,
    pub metric: f64,
}

/// Max-log extrinsic LLRs from a candidate list.
///
/// For each bit k the two hypothesis sets split the list by the candidate's
/// value at k; a side with no candidates saturates the output at the clip
/// value. Priors are added for all bits except k, which keeps the output
/// extrinsic.
pub fn llr_extrinsic(cands: &[ScoredCandidate], priors: &[f64], sigma2: f64, clip: f64) -> Result<Vec<f64>> {
    if cands.is_empty() {
        return Err(Error::Domain("candidate list is empty".into()));
    }
    if sigma2 <= 0.0 || !sigma2.is_finite() {
        return Err(Error::Domain(format!("noise variance {sigma2} must be positive")));
    }
    if clip <= 0.0 {
        return Err(Error::Domain(format!("llr clip {clip} must be positive")));
    }
    let nbits = cands[0].bits.len();
    if priors.len() != nbits {
        return Err(Error::Shape(format!("{} priors for {} bits", priors.len(), nbits)));
    }
    let inv_s2 = 1.0 / sigma2;
    let mut base = Vec::with_capacity(cands.len());
    for c in cands {
        if c.bits.len() != nbits {
            return Err(Error::Shape("ragged candidate list".into()));
        }
        let mut b = -c.metric * inv_s2;
        for (x, la) in c.bits.iter().zip(priors) {
            debug_assert!(*x == 1 || *x == -1);
            b += *x as f64 * la;
        }
        base.push(b);
    }
    let mut out = vec![0.0; nbits];
    for k in 0..nbits {
        let mut best_pos = f64::NEG_INFINITY;
        let mut best_neg = f64::NEG_INFINITY;
        for (c, b) in cands.iter().zip(&base) {
            // Remove bit k's own prior so the result stays extrinsic.
            let score = b - c.bits[k] as f64 * priors[k];
            if c.bits[k] == 1 {
                best_pos = best_pos.max(score);
            } else {
                best_neg = best_neg.max(score);
            }
        }
        // An empty hypothesis side stands in at -2*clip: single-sided bits
        // lean hard toward the listed value, but stay responsive to how well
        // the surviving candidates fit the observation and the priors.
        if best_neg == f64::NEG_INFINITY {
            best_neg = -2.0 * clip;
        }
        if best_pos == f64::NEG_INFINITY {
            best_pos = -2.0 * clip;
        }
        out[k] = (0.5 * (best_pos - best_neg)).clamp(-clip, clip);
    }
    Ok(out)
}

/// Sparse parity-check code over GF(2).
///
/// Text format: one check row per line, the space-separated column indices
/// of its ones; blank lines and `#` comments are ignored. The block length
/// is the largest index plus one. Loading fails if the matrix is not full
/// row rank, which guarantees the systematic encoder below exists.
#[derive(Clone, Debug)]
pub struct LdpcCode {
    n: usize,
    rows: Vec<Vec<usize>>,
    /// Gauss-Jordan solved rows: (pivot column, free columns it depends on).
    solved: Vec<(usize, Vec<usize>)>,
    free_cols: Vec<usize>,
}

impl LdpcCode {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        let mut n = 0;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut row = Vec::new();
            for tok in line.split_whitespace() {
                let idx: usize = tok
                    .parse()
                    .map_err(|_| Error::Config(format!("parity row {}: bad index {tok:?}", lineno + 1)))?;
                row.push(idx);
                n = n.max(idx + 1);
            }
            row.sort_unstable();
            row.dedup();
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::Config("parity file has no rows".into()));
        }
        let m = rows.len();
        if m >= n {
            return Err(Error::Config(format!("{m} checks on {n} bits leaves no information")));
        }

        // Gauss-Jordan over GF(2) on dense bit rows.
        let words = n.div_ceil(64);
        let mut mat: Vec<Vec<u64>> = rows
            .iter()
            .map(|r| {
                let mut w = vec![0u64; words];
                for &c in r {
                    w[c / 64] ^= 1 << (c % 64);
                }
                w
            })
            .collect();
        let mut pivot_cols = Vec::with_capacity(m);
        let mut rank = 0;
        for col in 0..n {
            let (wi, bi) = (col / 64, col % 64);
            let Some(p) = (rank..m).find(|&r| mat[r][wi] >> bi & 1 == 1) else {
                continue;
            };
            mat.swap(rank, p);
            for r in 0..m {
                if r != rank && mat[r][wi] >> bi & 1 == 1 {
                    let (head, tail) = mat.split_at_mut(rank.max(r));
                    let (a, b) = if r > rank { (&mut tail[0], &head[rank]) } else { (&mut head[r], &tail[0]) };
                    for (x, y) in a.iter_mut().zip(b) {
                        *x ^= *y;
                    }
                }
            }
            pivot_cols.push(col);
            rank += 1;
            if rank == m {
                break;
            }
        }
        if rank != m {
            return Err(Error::Config(format!("parity matrix rank {rank} < {m}: redundant checks")));
        }
        let pivot_set: Vec<bool> = {
            let mut s = vec![false; n];
            for &c in &pivot_cols {
                s[c] = true;
            }
            s
        };
        let free_cols: Vec<usize> = (0..n).filter(|&c| !pivot_set[c]).collect();
        let solved = mat
            .iter()
            .take(m)
            .zip(&pivot_cols)
            .map(|(w, &p)| {
                let deps: Vec<usize> =
                    free_cols.iter().copied().filter(|&c| w[c / 64] >> (c % 64) & 1 == 1).collect();
                (p, deps)
            })
            .collect();
        Ok(LdpcCode { n, rows, solved, free_cols })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Information bits per codeword.
    pub fn k(&self) -> usize {
        self.n - self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    /// Positions that carry the information bits verbatim.
    pub fn info_positions(&self) -> &[usize] {
        &self.free_cols
    }

    pub fn encode(&self, info: &[u8]) -> Result<Vec<u8>> {
        if info.len() != self.k() {
            return Err(Error::Shape(format!("{} info bits for k = {}", info.len(), self.k())));
        }
        let mut cw = vec![0u8; self.n];
        for (&col, &b) in self.free_cols.iter().zip(info) {
            cw[col] = b & 1;
        }
        for (pivot, deps) in &self.solved {
            let mut acc = 0u8;
            for &d in deps {
                acc ^= cw[d];
            }
            cw[*pivot] = acc;
        }
        Ok(cw)
    }

    pub fn check(&self, bits: &[u8]) -> bool {
        bits.len() == self.n
            && self.rows.iter().all(|row| row.iter().fold(0u8, |acc, &c| acc ^ (bits[c] & 1)) == 0)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LdpcParams {
    pub max_iterations: usize,
    /// Normalization factor on check-to-variable magnitudes.
    pub scale: f64,
}

impl Default for LdpcParams {
    fn default() -> Self {
        LdpcParams { max_iterations: 25, scale: 0.75 }
    }
}

#[derive(Clone, Debug)]
pub struct LdpcOutcome {
    pub posterior: Vec<f64>,
    pub hard: Vec<u8>,
    pub converged: bool,
    pub iterations: usize,
}

/// Internal posterior clamp; far above any useful LLR so it only tames
/// runaway saturation.
const Q_CLAMP: f64 = 120.0;

/// Check-to-variable message memory, carried across decoder activations
/// so an outer loop can resume decoding instead of starting over.
#[derive(Clone, Debug)]
pub struct LdpcState {
    msgs: Vec<Vec<f64>>,
}

impl LdpcState {
    pub fn new(code: &LdpcCode) -> Self {
        LdpcState { msgs: code.rows.iter().map(|r| vec![0.0; r.len()]).collect() }
    }
}

/// Layered normalized min-sum. Convergence requires every check to have
/// even parity over bits with nonzero posterior; a zero posterior counts
/// as an erasure and keeps its checks unsatisfied, so an all-zero input
/// runs to the iteration limit instead of "converging" on garbage.
pub fn ldpc_decode(code: &LdpcCode, llr: &[f64], params: &LdpcParams) -> Result<LdpcOutcome> {
    ldpc_decode_warm(code, llr, params, &mut LdpcState::new(code))
}

/// `ldpc_decode` resuming from `state`. The posterior is rebuilt as the
/// fresh channel LLRs plus the remembered check messages, the way a
/// layered hardware decoder keeps running while its channel inputs are
/// refreshed between activations.
pub fn ldpc_decode_warm(
    code: &LdpcCode,
    llr: &[f64],
    params: &LdpcParams,
    state: &mut LdpcState,
) -> Result<LdpcOutcome> {
    if llr.len() != code.n {
        return Err(Error::Shape(format!("{} LLRs for block length {}", llr.len(), code.n)));
    }
    if !(0.0 < params.scale && params.scale <= 1.0) {
        return Err(Error::Domain(format!("min-sum scale {} outside (0, 1]", params.scale)));
    }
    if state.msgs.len() != code.rows.len()
        || state.msgs.iter().zip(&code.rows).any(|(m, r)| m.len() != r.len())
    {
        return Err(Error::Shape("decoder state does not match the code".into()));
    }
    let mut q: Vec<f64> = llr.iter().map(|v| v.clamp(-Q_CLAMP, Q_CLAMP)).collect();
    for (row, msg) in code.rows.iter().zip(&state.msgs) {
        for (&col, m) in row.iter().zip(msg) {
            q[col] = (q[col] + m).clamp(-Q_CLAMP, Q_CLAMP);
        }
    }
    let msgs = &mut state.msgs;
    let mut ext = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..params.max_iterations {
        iterations += 1;
        for (row, msg) in code.rows.iter().zip(msgs.iter_mut()) {
            ext.clear();
            let mut sign = 1.0f64;
            let mut min1 = f64::INFINITY;
            let mut min2 = f64::INFINITY;
            let mut arg1 = 0;
            for (slot, (&col, m)) in row.iter().zip(msg.iter()).enumerate() {
                let t = q[col] - m;
                ext.push(t);
                if t < 0.0 {
                    sign = -sign;
                }
                let a = t.abs();
                if a < min1 {
                    min2 = min1;
                    min1 = a;
                    arg1 = slot;
                } else if a < min2 {
                    min2 = a;
                }
            }
            for (slot, (&col, m)) in row.iter().zip(msg.iter_mut()).enumerate() {
                let t = ext[slot];
                let mag = if slot == arg1 { min2 } else { min1 };
                let s = if t < 0.0 { -sign } else { sign };
                let new = params.scale * s * mag;
                *m = new;
                q[col] = (t + new).clamp(-Q_CLAMP, Q_CLAMP);
            }
        }
        let ok = code.rows.iter().all(|row| {
            let mut parity = 0u8;
            for &c in row {
                if q[c] == 0.0 {
                    return false;
                }
                if q[c] < 0.0 {
                    parity ^= 1;
                }
            }
            parity == 0
        });
        if ok {
            converged = true;
            break;
        }
    }
    let hard = q.iter().map(|&v| u8::from(v < 0.0)).collect();
    Ok(LdpcOutcome { posterior: q, hard, converged, iterations })
}

#[derive(Clone, Copy, Debug)]
pub struct IterationConfig {
    pub max_outer: usize,
    /// Outer stop: mean absolute posterior change below this.
    pub epsilon: f64,
    pub llr_clip: f64,
    pub ldpc: LdpcParams,
}

impl Default for IterationConfig {
    fn default() -> Self {
        IterationConfig { max_outer: 4, epsilon: 1e-2, llr_clip: 25.0, ldpc: LdpcParams::default() }
    }
}

#[derive(Clone, Debug)]
pub struct IterationSnapshot {
    pub hard: Vec<u8>,
    pub mean_change: f64,
    pub ldpc_converged: bool,
}

#[derive(Clone, Debug)]
pub struct DecodeOutcome {
    /// One snapshot per executed outer iteration; a run that stops early
    /// stays at its last snapshot for later iteration indices.
    pub per_iteration: Vec<IterationSnapshot>,
    pub bits: Vec<u8>,
    pub outer_used: usize,
}

/// Detector/decoder exchange over one codeword.
///
/// `lists` holds one candidate list per channel use, bit positions
/// concatenated in order. The candidate lists are reused across outer
/// iterations: priors shift only the max-log scoring, not the tree search
/// that produced the lists. The prior for the next round is the decoder
/// extrinsic (posterior - detector input), clipped like any other LLR.
///
/// The decoder's message memory persists across outer passes
/// (`ldpc_decode_warm`), so each pass resumes decoding with refreshed
/// detector LLRs instead of starting over; decoding depth accumulates
/// the way it does in a layered hardware decoder.
pub fn iterate_decode(
    lists: &[Vec<ScoredCandidate>],
    sigma2: f64,
    code: &LdpcCode,
    cfg: &IterationConfig,
) -> Result<DecodeOutcome> {
    if cfg.max_outer == 0 {
        return Err(Error::Domain("need at least one outer iteration".into()));
    }
    let widths: Vec<usize> = lists
        .iter()
        .map(|l| l.first().map(|c| c.bits.len()).ok_or_else(|| Error::Domain("empty candidate list".into())))
        .collect::<Result<_>>()?;
    let total: usize = widths.iter().sum();
    if total != code.n() {
        return Err(Error::Shape(format!("{total} detector bits for block length {}", code.n())));
    }

    let n = code.n();
    let mut priors = vec![0.0; n];
    let mut state = LdpcState::new(code);
    let mut prev_posterior = vec![0.0; n];
    let mut per_iteration = Vec::with_capacity(cfg.max_outer);
    let mut bits = vec![0u8; n];
    for _ in 0..cfg.max_outer {
        let mut det = Vec::with_capacity(n);
        let mut offset = 0;
        for (list, w) in lists.iter().zip(&widths) {
            det.extend(llr_extrinsic(list, &priors[offset..offset + w], sigma2, cfg.llr_clip)?);
            offset += w;
        }
        let out = ldpc_decode_warm(code, &det, &cfg.ldpc, &mut state)?;
        let mean_change = out
            .posterior
            .iter()
            .zip(&prev_posterior)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / n as f64;
        bits = out.hard.clone();
        per_iteration.push(IterationSnapshot {
            hard: out.hard,
            mean_change,
            ldpc_converged: out.converged,
        });
        if out.converged || mean_change < cfg.epsilon {
            break;
        }
        for ((p, post), d) in priors.iter_mut().zip(&out.posterior).zip(&det) {
            *p = (post - d).clamp(-cfg.llr_clip, cfg.llr_clip);
        }
        prev_posterior = out.posterior;
    }
    let outer_used = per_iteration.len();
    Ok(DecodeOutcome { per_iteration, bits, outer_used })
}

/// True when no two checks share more than one variable (no length-4
/// cycles in the Tanner graph).
pub fn has_girth_at_least_six(code: &LdpcCode) -> bool {
    let mut seen: HashMap<(usize, usize), ()> = HashMap::new();
    for row in &code.rows {
        for i in 0..row.len() {
            for j in i + 1..row.len() {
                if seen.insert((row[i], row[j]), ()).is_some() {
                    return false;
                }
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const TOY: &str = "0 3 4 6 8 11\n0 2 5 7 8 10\n1 3 5 6 9 11\n1 2 4 7 9 11\n1 3 5 7 9 10\n0 2 4 6 8 10\n";

    fn toy() -> LdpcCode {
        LdpcCode::from_text(TOY).unwrap()
    }

    fn oracle_llr(cands: &[ScoredCandidate], priors: &[f64], sigma2: f64, clip: f64) -> Vec<f64> {
        let nbits = cands[0].bits.len();
        (0..nbits)
            .map(|k| {
                let side = |want: i8| {
                    cands
                        .iter()
                        .filter(|c| c.bits[k] == want)
                        .map(|c| {
                            let mut v = -c.metric / sigma2;
                            for (j, (&x, la)) in c.bits.iter().zip(priors).enumerate() {
                                if j != k {
                                    v += x as f64 * la;
                                }
                            }
                            v
                        })
                        .fold(f64::NEG_INFINITY, f64::max)
                };
                let sub = |v: f64| if v == f64::NEG_INFINITY { -2.0 * clip } else { v };
                (0.5 * (sub(side(1)) - sub(side(-1)))).clamp(-clip, clip)
            })
            .collect()
    }

    #[test]
    fn llr_hand_example() {
        let cands = vec![
            ScoredCandidate { bits: vec![1], metric: 2.0 },
            ScoredCandidate { bits: vec![-1], metric: 4.0 },
        ];
        let out = llr_extrinsic(&cands, &[0.0], 1.0, 25.0).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-12);
        // Halving the noise variance doubles the spread.
        let out = llr_extrinsic(&cands, &[0.0], 0.5, 25.0).unwrap();
        assert!((out[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn llr_single_sided_uses_certainty_fallback() {
        let cands = vec![
            ScoredCandidate { bits: vec![1, -1], metric: 1.0 },
            ScoredCandidate { bits: vec![1, 1], metric: 2.0 },
        ];
        // Bit 0 has no -1 hypothesis: that max falls back to -2*clip = -16,
        // so L = (-1 + 16)/2 = 7.5, inside the clip.
        let out = llr_extrinsic(&cands, &[0.0, 0.0], 1.0, 8.0).unwrap();
        assert!((out[0] - 7.5).abs() < 1e-12);
        assert!((out[1] + 0.5).abs() < 1e-12);

        // A perfectly fitting lone hypothesis does hit the clip.
        let lone = vec![ScoredCandidate { bits: vec![1], metric: 0.0 }];
        let out = llr_extrinsic(&lone, &[0.0], 1.0, 8.0).unwrap();
        assert_eq!(out[0], 8.0);

        // The fallback keeps single-sided bits responsive to priors: prior
        // agreement on other bits raises confidence on this one.
        let pair = vec![ScoredCandidate { bits: vec![1, 1], metric: 4.0 }];
        let flat = llr_extrinsic(&pair, &[0.0, 0.0], 1.0, 8.0).unwrap();
        let agree = llr_extrinsic(&pair, &[0.0, 3.0], 1.0, 8.0).unwrap();
        assert!(agree[0] > flat[0]);
    }

    #[test]
    fn llr_matches_definition_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        for _ in 0..2000 {
            let nbits = rng.gen_range(1..=8);
            let ncand = rng.gen_range(1..=8);
            let cands: Vec<ScoredCandidate> = (0..ncand)
                .map(|_| ScoredCandidate {
                    bits: (0..nbits).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect(),
                    metric: rng.gen_range(0.0..30.0),
                })
                .collect();
            let priors: Vec<f64> = (0..nbits).map(|_| rng.gen_range(-6.0..6.0)).collect();
            let sigma2 = rng.gen_range(0.3..3.0);
            let got = llr_extrinsic(&cands, &priors, sigma2, 25.0).unwrap();
            let want = oracle_llr(&cands, &priors, sigma2, 25.0);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn code_loads_with_expected_shape() {
        let code = toy();
        assert_eq!(code.n(), 12);
        assert_eq!(code.k(), 6);
        assert_eq!(code.rows().len(), 6);
        assert!(code.rows().iter().all(|r| r.len() == 6));
    }

    #[test]
    fn rank_deficient_matrix_rejected() {
        // Row 3 = row 1 xor row 2.
        let bad = "0 1 2\n2 3 4\n0 1 3 4\n";
        assert!(matches!(LdpcCode::from_text(bad), Err(Error::Config(_))));
    }

    #[test]
    fn encode_satisfies_all_checks() {
        let code = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(92);
        for _ in 0..64 {
            let info: Vec<u8> = (0..code.k()).map(|_| rng.gen_range(0..2)).collect();
            let cw = code.encode(&info).unwrap();
            assert!(code.check(&cw));
            // Info bits appear verbatim at the free positions.
            for (&pos, &b) in code.info_positions().iter().zip(&info) {
                assert_eq!(cw[pos], b);
            }
        }
        assert!(code.check(&vec![0u8; 12]));
    }

    #[test]
    fn decoder_fixes_single_flip() {
        let code = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(93);
        for flip in 0..code.n() {
            let info: Vec<u8> = (0..code.k()).map(|_| rng.gen_range(0..2)).collect();
            let cw = code.encode(&info).unwrap();
            let mut llr: Vec<f64> = cw.iter().map(|&b| if b == 0 { 4.0 } else { -4.0 }).collect();
            llr[flip] = -llr[flip] * 0.25;
            let out = ldpc_decode(&code, &llr, &LdpcParams::default()).unwrap();
            assert!(out.converged, "flip at {flip}");
            assert_eq!(out.hard, cw);
        }
    }

    #[test]
    fn all_zero_input_never_converges() {
        let code = toy();
        let out = ldpc_decode(&code, &vec![0.0; 12], &LdpcParams::default()).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, LdpcParams::default().max_iterations);
        assert!(out.posterior.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn warm_decode_in_two_activations_matches_one_cold_run() {
        // Splitting the budget across warm activations replays the exact
        // layered schedule: same channel LLRs, same rebuilt posteriors,
        // bitwise-equal results (nothing here reaches the internal clamp).
        let code = toy();
        let one = LdpcParams { max_iterations: 1, scale: 0.75 };
        let two = LdpcParams { max_iterations: 2, scale: 0.75 };
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut split_cases = 0;
        for _ in 0..200 {
            let llr: Vec<f64> = (0..code.n()).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let mut state = LdpcState::new(&code);
            let first = ldpc_decode_warm(&code, &llr, &one, &mut state).unwrap();
            if first.converged {
                continue;
            }
            let second = ldpc_decode_warm(&code, &llr, &one, &mut state).unwrap();
            let cold = ldpc_decode(&code, &llr, &two).unwrap();
            assert_eq!(second.posterior, cold.posterior);
            assert_eq!(second.hard, cold.hard);
            assert_eq!(second.converged, cold.converged);
            split_cases += 1;
        }
        assert!(split_cases > 100, "only {split_cases} non-converged first passes");
    }

    #[test]
    fn clean_codeword_converges_immediately() {
        let code = toy();
        let cw = code.encode(&[1, 0, 1, 1, 0, 0]).unwrap();
        let llr: Vec<f64> = cw.iter().map(|&b| if b == 0 { 9.0 } else { -9.0 }).collect();
        let out = ldpc_decode(&code, &llr, &LdpcParams::default()).unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 1);
        assert_eq!(out.hard, cw);
    }

    fn lists_from_bits(cw: &[u8], per_use: usize, metric_true: f64) -> Vec<Vec<ScoredCandidate>> {
        cw.chunks(per_use)
            .map(|chunk| {
                let truth: Vec<i8> = chunk.iter().map(|&b| 1 - 2 * b as i8).collect();
                let mut flipped = truth.clone();
                flipped[0] = -flipped[0];
                vec![
                    ScoredCandidate { bits: truth, metric: metric_true },
                    ScoredCandidate { bits: flipped, metric: metric_true + 2.0 },
                ]
            })
            .collect()
    }

    #[test]
    fn outer_loop_decodes_clean_lists_in_one_pass() {
        let code = toy();
        let cw = code.encode(&[0, 1, 1, 0, 1, 0]).unwrap();
        let lists = lists_from_bits(&cw, 4, 0.2);
        let out = iterate_decode(&lists, 1.0, &code, &IterationConfig::default()).unwrap();
        assert_eq!(out.outer_used, 1);
        assert!(out.per_iteration[0].ldpc_converged);
        assert_eq!(out.bits, cw);
    }

    #[test]
    fn infinite_epsilon_runs_exactly_one_iteration() {
        let code = toy();
        let cw = code.encode(&[1, 1, 0, 0, 1, 1]).unwrap();
        // Adversarial metrics: the decoder would want more rounds.
        let mut lists = lists_from_bits(&cw, 4, 1.0);
        lists[0][1].metric = 0.5;
        let cfg = IterationConfig { epsilon: f64::INFINITY, max_outer: 8, ..Default::default() };
        let out = iterate_decode(&lists, 1.0, &code, &cfg).unwrap();
        assert_eq!(out.outer_used, 1);
    }

    #[test]
    fn priors_rerank_candidates_that_differ_at_other_bits() {
        // A misranked candidate pair differing at both bits: with flat
        // priors the cheaper (wrong) candidate wins bit 1; a prior on bit 0
        // alone penalizes it enough to flip bit 1's LLR sign.
        let cands = vec![
            ScoredCandidate { bits: vec![1, 1], metric: 1.0 },
            ScoredCandidate { bits: vec![-1, -1], metric: 0.5 },
        ];
        let flat = llr_extrinsic(&cands, &[0.0, 0.0], 1.0, 25.0).unwrap();
        assert!((flat[1] + 0.25).abs() < 1e-12);
        let steered = llr_extrinsic(&cands, &[4.0, 0.0], 1.0, 25.0).unwrap();
        assert!((steered[1] - 3.75).abs() < 1e-12);
    }

    #[test]
    fn stalled_loop_keeps_snapshotting_until_the_cap() {
        let code = toy();
        let cw = code.encode(&[0, 0, 1, 0, 1, 1]).unwrap();
        let bip: Vec<i8> = cw.iter().map(|&b| 1 - 2 * b as i8).collect();
        // Flips at globals {5,7} and {9} poison each other's checks (rows
        // 1, 2 and 4 tie them together), so min-sum stalls short of a
        // codeword and the outer loop must run to its cap.
        let mk = |lo: usize, flips: &[usize], margin: f64| -> Vec<ScoredCandidate> {
            let truth: Vec<i8> = bip[lo..lo + 4].to_vec();
            let mut wrong = truth.clone();
            for &f in flips {
                wrong[f - lo] = -wrong[f - lo];
            }
            vec![
                ScoredCandidate { bits: wrong, metric: 1.0 - margin },
                ScoredCandidate { bits: truth, metric: 1.0 },
            ]
        };
        let lists = vec![mk(0, &[], 0.5), mk(4, &[5, 7], 0.1), mk(8, &[9], 0.1)];
        let cfg = IterationConfig { epsilon: 1e-9, max_outer: 4, ..Default::default() };
        let out = iterate_decode(&lists, 1.0, &code, &cfg).unwrap();
        assert_eq!(out.outer_used, 4);
        assert_eq!(out.per_iteration.len(), 4);
        let first_errs = out.per_iteration[0].hard.iter().zip(&cw).filter(|(a, b)| a != b).count();
        assert!(first_errs > 0);
        for snap in &out.per_iteration {
            assert!(!snap.ldpc_converged);
            assert!(snap.mean_change.is_finite());
        }
    }

    #[test]
    fn loop_rejects_mismatched_widths() {
        let code = toy();
        let lists = vec![vec![ScoredCandidate { bits: vec![1; 10], metric: 0.0 }]];
        assert!(matches!(iterate_decode(&lists, 1.0, &code, &IterationConfig::default()), Err(Error::Shape(_))));
        let empty: Vec<Vec<ScoredCandidate>> = vec![Vec::new()];
        assert!(matches!(iterate_decode(&empty, 1.0, &code, &IterationConfig::default()), Err(Error::Domain(_))));
    }

    #[test]
    fn shipped_code_is_regular_full_rank_and_four_cycle_free() {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../codes/peg_576_288.txt");
        let code = LdpcCode::load(&path).unwrap();
        assert_eq!(code.n(), 576);
        assert_eq!(code.k(), 288);
        assert_eq!(code.rows().len(), 288);
        assert!(code.rows().iter().all(|r| r.len() == 6));
        let mut col_deg = vec![0usize; code.n()];
        for row in code.rows() {
            for &c in row {
                col_deg[c] += 1;
            }
        }
        assert!(col_deg.iter().all(|&d| d == 3));
        assert!(has_girth_at_least_six(&code));

        let mut rng = ChaCha8Rng::seed_from_u64(94);
        let info: Vec<u8> = (0..code.k()).map(|_| rng.gen_range(0..2)).collect();
        let cw = code.encode(&info).unwrap();
        assert!(code.check(&cw));
        // Light BPSK-style noise decodes to the transmitted word.
        let llr: Vec<f64> = cw
            .iter()
            .map(|&b| (1.0 - 2.0 * b as f64) * 4.0 + rng.gen_range(-1.5..1.5))
            .collect();
        let out = ldpc_decode(&code, &llr, &LdpcParams::default()).unwrap();
        assert!(out.converged);
        assert_eq!(out.hard, cw);
    }
}
