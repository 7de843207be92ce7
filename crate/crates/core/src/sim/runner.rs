//! Monte-Carlo BER sweeps over the detection pipeline.
//!
//! Determinism guarantees: every trial draws from ChaCha substreams keyed
//! by (seed, global trial id, stream label), trials run in fixed-size
//! batches whose results are reduced in trial order, and early stopping is
//! evaluated only at batch boundaries. The output is therefore
//! byte-identical for any worker thread count.

use nalgebra::{Complex, DMatrix, DVector};
use rayon::prelude::*;

use crate::channel::{add_awgn, noise_variance_from_snr, random_bits, sample_channel, substream, StreamLabel};
use crate::fixedpoint::{Arith, RangeTracker, Recorder};
use crate::kbest::kbest_search_with;
use crate::lattice::{lll_reduce_bounded, LllParams};
use crate::linalg::{qr_cordic_reduce, CordicConfig};
use crate::model::{
    complexify_symbols, demap, modulate, mmse_extend, quantize_to_constellation, realify, realify_vector,
    shift_scale, unshift, ComplexSystem,
};
use crate::sim::config::{ArithmeticMode, ExperimentConfig, GroupFormats, GroupQuantizers, GroupRanges};
use crate::softdec::{iterate_decode, IterationConfig, LdpcCode, LdpcParams, ScoredCandidate};
use crate::{Error, Result};

type Complex64 = Complex<f64>;

/// One (snr, iteration) cell of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct BerRecord {
    pub snr_db: f64,
    /// Outer iteration, 1-based. Uncoded runs report iteration 1 only.
    pub iteration: usize,
    pub bits_sent: u64,
    pub bit_errors: u64,
    pub ber: f64,
    /// Mean K-best expansions per channel use.
    pub nodes_mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Per-stage arithmetic hooks for one trial.
pub struct StageArith<'a> {
    pub channel: &'a dyn Arith,
    pub lll: &'a dyn Arith,
    pub ped: &'a dyn Arith,
    pub llr: &'a dyn Arith,
}

impl<'a> StageArith<'a> {
    fn from_quantizers(q: &'a GroupQuantizers) -> Self {
        StageArith { channel: &q.channel, lll: &q.lll, ped: &q.ped, llr: &q.llr }
    }
}

struct TrialOutput {
    /// Info-bit errors indexed by outer iteration (carried forward after
    /// early convergence). Uncoded trials have a single entry.
    errors: Vec<u64>,
    bits: u64,
    nodes: u64,
    uses: u64,
}

struct PointEnv<'a> {
    cfg: &'a ExperimentConfig,
    code: Option<&'a LdpcCode>,
    sigma2: f64,
    point: u64,
    itercfg: IterationConfig,
    cordic: CordicConfig,
    lll_params: LllParams,
}

/// Runs the whole receive chain for one channel use and scores the K-best
/// candidate list against the plain (unextended) system.
fn detect_use(
    env: &PointEnv,
    stages: &StageArith,
    h: DMatrix<Complex64>,
    y_real: DVector<f64>,
) -> Result<(Vec<ScoredCandidate>, u64)> {
    let scheme = env.cfg.mimo.modulation;
    let n_rx = env.cfg.mimo.n_rx;
    let y_c = DVector::from_fn(n_rx, |i, _| Complex64::new(y_real[i], y_real[i + n_rx]));
    let csys = ComplexSystem {
        h,
        y: y_c,
        noise_variance: env.sigma2,
        signal_variance: scheme.avg_symbol_energy(),
    };
    let rsys = realify(&csys);
    let ext = mmse_extend(&rsys, 2.0 * env.sigma2)?;
    let y_shift = shift_scale(&ext);
    let (reduced, tr) = lll_reduce_bounded(&ext.h, &env.lll_params, &stages.lll)?;
    let (r, yq) = qr_cordic_reduce(&reduced, &y_shift, &env.cordic, &stages.channel)?;
    let kb = kbest_search_with(&r, &yq, env.cfg.mimo.k, &stages.ped)?;

    let mut list = Vec::with_capacity(kb.candidates.len());
    for cand in &kb.candidates {
        let z = DVector::from_vec(cand.z.clone());
        let s = unshift(&z, &tr.t)?;
        let s_f = s.map(|v| v as f64);
        let sq = quantize_to_constellation(&s_f, scheme);
        let bits = demap(&complexify_symbols(&sq)?, scheme)?;
        let a = &stages.llr;
        let mut metric = 0.0;
        for i in 0..rsys.h.nrows() {
            let mut e = rsys.y[i];
            for j in 0..rsys.h.ncols() {
                e = a.q(e - a.q(rsys.h[(i, j)] * sq[j] as f64));
            }
            metric = a.q(metric + a.q(e * e));
        }
        list.push(ScoredCandidate {
            bits: bits.iter().map(|&b| 1 - 2 * b as i8).collect(),
            metric,
        });
    }
    Ok((list, kb.stats.nodes_expanded as u64))
}

/// Public entry to the per-use receive chain: same path the sweep takes,
/// for callers that bring their own channel realization and observation.
pub fn detect_single_use(
    cfg: &ExperimentConfig,
    sigma2: f64,
    quant: &GroupQuantizers,
    h: DMatrix<Complex64>,
    y_real: DVector<f64>,
) -> Result<(Vec<ScoredCandidate>, u64)> {
    let env = PointEnv {
        cfg,
        code: None,
        sigma2,
        point: 0,
        itercfg: iteration_config(cfg),
        cordic: CordicConfig::default(),
        lll_params: LllParams::default(),
    };
    let stages = StageArith::from_quantizers(quant);
    detect_use(&env, &stages, h, y_real)
}

fn run_coded_trial(env: &PointEnv, stages: &StageArith, code: &LdpcCode, trial_id: u64) -> Result<TrialOutput> {
    let cfg = env.cfg;
    let seed = cfg.sweep.seed;
    let scheme = cfg.mimo.modulation;
    let mut bits_rng = substream(seed, trial_id, StreamLabel::Bits);
    let mut chan_rng = substream(seed, trial_id, StreamLabel::Channel);
    let mut noise_rng = substream(seed, trial_id, StreamLabel::Noise);

    let info = random_bits(code.k(), &mut bits_rng);
    let cw = code.encode(&info)?;
    let per_use = cfg.bits_per_use();
    let mut lists = Vec::with_capacity(cw.len() / per_use);
    let mut nodes = 0u64;
    for chunk in cw.chunks(per_use) {
        let syms = modulate(chunk, scheme)?;
        let s = DVector::from_vec(syms);
        let h = sample_channel(cfg.mimo.n_rx, cfg.mimo.n_tx, &mut chan_rng);
        let y_clean = realify_vector(&(&h * &s));
        let y = add_awgn(&y_clean, env.sigma2, &mut noise_rng);
        let (list, n) = detect_use(env, stages, h, y)?;
        lists.push(list);
        nodes += n;
    }
    let uses = lists.len() as u64;
    let out = iterate_decode(&lists, env.sigma2, code, &env.itercfg)?;

    let iters = env.itercfg.max_outer;
    let mut errors = Vec::with_capacity(iters);
    for it in 0..iters {
        let snap = &out.per_iteration[it.min(out.per_iteration.len() - 1)];
        let errs = code
            .info_positions()
            .iter()
            .zip(&info)
            .filter(|(&pos, &b)| snap.hard[pos] != b)
            .count() as u64;
        errors.push(errs);
    }
    Ok(TrialOutput { errors, bits: code.k() as u64, nodes, uses })
}

fn run_uncoded_trial(env: &PointEnv, stages: &StageArith, trial_id: u64) -> Result<TrialOutput> {
    let cfg = env.cfg;
    let seed = cfg.sweep.seed;
    let scheme = cfg.mimo.modulation;
    let mut bits_rng = substream(seed, trial_id, StreamLabel::Bits);
    let mut chan_rng = substream(seed, trial_id, StreamLabel::Channel);
    let mut noise_rng = substream(seed, trial_id, StreamLabel::Noise);

    let tx = random_bits(cfg.bits_per_use(), &mut bits_rng);
    let syms = modulate(&tx, scheme)?;
    let s = DVector::from_vec(syms);
    let h = sample_channel(cfg.mimo.n_rx, cfg.mimo.n_tx, &mut chan_rng);
    let y_clean = realify_vector(&(&h * &s));
    let y = add_awgn(&y_clean, env.sigma2, &mut noise_rng);
    let (list, nodes) = detect_use(env, stages, h, y)?;

    // Hard decision from the best-metric candidate, which matches the sign
    // of the flat-prior max-log LLR at every bit.
    let best = list
        .iter()
        .min_by(|a, b| a.metric.partial_cmp(&b.metric).unwrap_or(std::cmp::Ordering::Equal))
        .expect("K >= 1 candidates");
    let errors = tx
        .iter()
        .zip(&best.bits)
        .filter(|(&b, &x)| u8::from(x < 0) != b)
        .count() as u64;
    Ok(TrialOutput { errors: vec![errors], bits: tx.len() as u64, nodes, uses: 1 })
}

fn run_trial(env: &PointEnv, quant: &GroupQuantizers, trial_id: u64) -> Result<TrialOutput> {
    let stages = StageArith::from_quantizers(quant);
    match env.code {
        Some(code) => run_coded_trial(env, &stages, code, trial_id),
        None => run_uncoded_trial(env, &stages, trial_id),
    }
}

/// Trials per scheduling batch; results are reduced in trial order and the
/// stop rule is checked only between batches, independent of thread count.
const TRIAL_BATCH: u64 = 64;

fn run_point(env: &PointEnv, quant: &GroupQuantizers, snr_db: f64) -> Result<Vec<BerRecord>> {
    let sweep = &env.cfg.sweep;
    let iters = if env.code.is_some() { env.itercfg.max_outer } else { 1 };
    let mut errors = vec![0u64; iters];
    let mut bits = 0u64;
    let mut nodes = 0u64;
    let mut uses = 0u64;
    let mut done = 0u64;
    while done < sweep.trials_per_point {
        let batch = TRIAL_BATCH.min(sweep.trials_per_point - done);
        let outs: Vec<TrialOutput> = (done..done + batch)
            .into_par_iter()
            .map(|t| run_trial(env, quant, (env.point << 40) | t))
            .collect::<Result<_>>()?;
        for o in outs {
            for (acc, e) in errors.iter_mut().zip(&o.errors) {
                *acc += e;
            }
            bits += o.bits;
            nodes += o.nodes;
            uses += o.uses;
        }
        done += batch;
        if bits >= sweep.min_bits_per_point && errors[iters - 1] >= sweep.target_bit_errors {
            break;
        }
    }

    let records = errors
        .iter()
        .enumerate()
        .map(|(it, &e)| {
            let ber = e as f64 / bits as f64;
            let half = 3.0 * (ber * (1.0 - ber) / bits as f64).sqrt();
            BerRecord {
                snr_db,
                iteration: it + 1,
                bits_sent: bits,
                bit_errors: e,
                ber,
                nodes_mean: nodes as f64 / uses as f64,
                ci_low: (ber - half).max(0.0),
                ci_high: (ber + half).min(1.0),
            }
        })
        .collect();
    Ok(records)
}

/// Sweeps the configured SNR grid with explicit quantizers.
pub fn run_sweep_with(cfg: &ExperimentConfig, quant: &GroupQuantizers) -> Result<Vec<BerRecord>> {
    let code = cfg.load_code()?;
    let itercfg = iteration_config(cfg);
    let mut records = Vec::new();
    for (point, &snr_db) in cfg.sweep.snr_db.iter().enumerate() {
        let env = PointEnv {
            cfg,
            code: code.as_ref(),
            sigma2: noise_variance_from_snr(snr_db, cfg.mimo.modulation, cfg.mimo.n_rx),
            point: point as u64,
            itercfg,
            cordic: CordicConfig::default(),
            lll_params: LllParams::default(),
        };
        records.extend(run_point(&env, quant, snr_db)?);
    }
    Ok(records)
}

fn iteration_config(cfg: &ExperimentConfig) -> IterationConfig {
    let mut it = IterationConfig {
        max_outer: cfg.sweep.max_outer_iterations,
        epsilon: cfg.sweep.epsilon,
        ..Default::default()
    };
    if let Some(c) = &cfg.coding {
        it.llr_clip = c.llr_clip;
        it.ldpc = LdpcParams { max_iterations: c.max_ldpc_iterations, scale: c.min_sum_scale };
    }
    it
}

/// Builds the stage quantizers called for by the config: float mode, or
/// fixed mode from explicit formats or a profiled uniform word length.
pub fn resolve_quantizers(cfg: &ExperimentConfig) -> Result<GroupQuantizers> {
    match cfg.arithmetic.mode {
        ArithmeticMode::Float => Ok(GroupQuantizers::float()),
        ArithmeticMode::Fixed => {
            let formats = match &cfg.arithmetic.formats {
                Some(f) => GroupFormats::from_explicit(f)?,
                None => GroupFormats::uniform(cfg.arithmetic.word_length, &profile_ranges(cfg)?)?,
            };
            Ok(formats.quantizers())
        }
    }
}

/// Sweeps with the config's own arithmetic mode.
pub fn run_ber_sweep(cfg: &ExperimentConfig) -> Result<Vec<BerRecord>> {
    let quant = resolve_quantizers(cfg)?;
    run_sweep_with(cfg, &quant)
}

/// Trials per grid endpoint used to profile dynamic ranges.
const PROFILE_TRIALS: u64 = 8;

/// Observes per-group value ranges by replaying float trials at both ends
/// of the SNR grid through recording hooks. Serial by construction.
pub fn profile_ranges(cfg: &ExperimentConfig) -> Result<GroupRanges> {
    let code = cfg.load_code()?;
    let itercfg = iteration_config(cfg);
    let trackers: [RangeTracker; 4] = Default::default();
    let endpoints = {
        let g = &cfg.sweep.snr_db;
        if g.len() == 1 {
            vec![g[0]]
        } else {
            vec![g[0], g[g.len() - 1]]
        }
    };
    for (pi, &snr_db) in endpoints.iter().enumerate() {
        let env = PointEnv {
            cfg,
            code: code.as_ref(),
            sigma2: noise_variance_from_snr(snr_db, cfg.mimo.modulation, cfg.mimo.n_rx),
            point: 0xFFF + pi as u64,
            itercfg,
            cordic: CordicConfig::default(),
            lll_params: LllParams::default(),
        };
        let rec = [
            Recorder(&trackers[0]),
            Recorder(&trackers[1]),
            Recorder(&trackers[2]),
            Recorder(&trackers[3]),
        ];
        let stages = StageArith { channel: &rec[0], lll: &rec[1], ped: &rec[2], llr: &rec[3] };
        for t in 0..PROFILE_TRIALS {
            let trial_id = (env.point << 40) | t;
            match env.code {
                Some(c) => run_coded_trial(&env, &stages, c, trial_id)?,
                None => run_uncoded_trial(&env, &stages, trial_id)?,
            };
        }
    }
    let mag = |t: &RangeTracker| -> f64 {
        match t.range() {
            Some((lo, hi)) => lo.abs().max(hi.abs()),
            None => 0.0,
        }
    };
    let clip = cfg.coding.as_ref().map(|c| c.llr_clip).unwrap_or(25.0);
    Ok(GroupRanges {
        channel: mag(&trackers[0]),
        lll: mag(&trackers[1]),
        ped: mag(&trackers[2]),
        llr: mag(&trackers[3]).max(clip),
    })
}

/// Log-linear SNR at which the (snr, ber) curve crosses `target`. Points
/// with zero errors cannot be interpolated through and are skipped.
pub fn snr_at_target(points: &[(f64, f64)], target: f64) -> Option<f64> {
    for w in points.windows(2) {
        let (s0, b0) = w[0];
        let (s1, b1) = w[1];
        if b0 <= 0.0 || b1 <= 0.0 {
            continue;
        }
        if (b0 >= target && b1 <= target) || (b0 <= target && b1 >= target) {
            if b0 == b1 {
                return Some(s0);
            }
            let f = (target.ln() - b0.ln()) / (b1.ln() - b0.ln());
            return Some(s0 + f * (s1 - s0));
        }
    }
    None
}

#[derive(Clone, Debug)]
pub struct CompareRow {
    pub snr_db: f64,
    pub ber_float: f64,
    pub ber_fixed: f64,
}

#[derive(Clone, Debug)]
pub struct CompareReport {
    /// Final-iteration BER per grid point.
    pub rows: Vec<CompareRow>,
    pub target_ber: f64,
    /// SNR penalty of fixed against float at the target BER; None when
    /// either curve does not bracket the target on the grid.
    pub offset_db: Option<f64>,
    pub formats: Option<GroupFormats>,
}

fn final_iteration(records: &[BerRecord]) -> Vec<(f64, f64)> {
    let last = records.iter().map(|r| r.iteration).max().unwrap_or(1);
    records.iter().filter(|r| r.iteration == last).map(|r| (r.snr_db, r.ber)).collect()
}

/// Runs the grid twice from the same seed: once in float, once with the
/// config's fixed formats. Identical arithmetic (a float-mode config)
/// yields identical trials and an offset of exactly zero.
pub fn compare_fixed_float(cfg: &ExperimentConfig, target_ber: f64) -> Result<CompareReport> {
    if !(0.0 < target_ber && target_ber < 1.0) {
        return Err(Error::Domain(format!("target ber {target_ber} outside (0, 1)")));
    }
    let float_recs = run_sweep_with(cfg, &GroupQuantizers::float())?;
    let (fixed_recs, formats) = match cfg.arithmetic.mode {
        ArithmeticMode::Float => (float_recs.clone(), None),
        ArithmeticMode::Fixed => {
            let formats = match &cfg.arithmetic.formats {
                Some(f) => GroupFormats::from_explicit(f)?,
                None => GroupFormats::uniform(cfg.arithmetic.word_length, &profile_ranges(cfg)?)?,
            };
            (run_sweep_with(cfg, &formats.quantizers())?, Some(formats))
        }
    };
    let fl = final_iteration(&float_recs);
    let fx = final_iteration(&fixed_recs);
    let rows = fl
        .iter()
        .zip(&fx)
        .map(|(&(snr, bf), &(_, bx))| CompareRow { snr_db: snr, ber_float: bf, ber_fixed: bx })
        .collect();
    let offset_db = match (snr_at_target(&fl, target_ber), snr_at_target(&fx, target_ber)) {
        (Some(a), Some(b)) => Some(b - a),
        _ => None,
    };
    Ok(CompareReport { rows, target_ber, offset_db, formats })
}

#[derive(Clone, Debug)]
pub struct WlRow {
    pub word_length: u32,
    pub formats: GroupFormats,
    pub offset_db: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct WlReport {
    pub rows: Vec<WlRow>,
    /// Smallest word length whose offset stayed within budget.
    pub chosen: Option<u32>,
    pub target_ber: f64,
    pub budget_db: f64,
}

/// Sweeps uniform word lengths downward from `wl_max`, stopping at the
/// first length that breaks the offset budget (that row is still
/// reported). Ranges are profiled once and reused.
pub fn wordlength_search(
    cfg: &ExperimentConfig,
    wl_max: u32,
    wl_min: u32,
    budget_db: f64,
    target_ber: f64,
) -> Result<WlReport> {
    if wl_min < 2 || wl_max > 63 || wl_min > wl_max {
        return Err(Error::Domain(format!("word length range {wl_min}..={wl_max} invalid")));
    }
    if !(budget_db > 0.0) {
        return Err(Error::Domain("budget must be positive".into()));
    }
    let float_recs = run_sweep_with(cfg, &GroupQuantizers::float())?;
    let fl = final_iteration(&float_recs);
    let fl_snr = snr_at_target(&fl, target_ber)
        .ok_or_else(|| Error::Domain(format!("float curve never crosses ber {target_ber} on the grid")))?;
    let ranges = profile_ranges(cfg)?;

    let mut rows = Vec::new();
    let mut chosen = None;
    for wl in (wl_min..=wl_max).rev() {
        let formats = match GroupFormats::uniform(wl, &ranges) {
            Ok(f) => f,
            Err(_) => break,
        };
        let recs = run_sweep_with(cfg, &formats.quantizers())?;
        let fx = final_iteration(&recs);
        let offset_db = snr_at_target(&fx, target_ber).map(|s| s - fl_snr);
        let within = matches!(offset_db, Some(o) if o <= budget_db);
        rows.push(WlRow { word_length: wl, formats, offset_db });
        if within {
            chosen = Some(wl);
        } else {
            break;
        }
    }
    Ok(WlReport { rows, chosen, target_ber, budget_db })
}
