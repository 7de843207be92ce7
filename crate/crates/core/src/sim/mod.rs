//! Experiment drivers: config loading, BER sweeps, fixed/float comparison,
//! word-length search, and the command-line interface.

pub mod config;
pub mod runner;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::{Error, Result};
pub use config::{ArithmeticMode, ExperimentConfig, GroupFormats, GroupQuantizers, GroupRanges};
pub use runner::{
    compare_fixed_float, detect_single_use, profile_ranges, run_ber_sweep, run_sweep_with, snr_at_target,
    wordlength_search, BerRecord, CompareReport, WlReport,
};

/// Serializes sweep records with a stable header and number formatting, so
/// equal runs produce byte-identical files.
pub fn records_to_csv(records: &[BerRecord]) -> String {
    let mut out = String::from("snr_db,iteration,bits_sent,bit_errors,ber,nodes_mean,ci_low,ci_high\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{:.6e},{:.3},{:.6e},{:.6e}\n",
            r.snr_db, r.iteration, r.bits_sent, r.bit_errors, r.ber, r.nodes_mean, r.ci_low, r.ci_high
        ));
    }
    out
}

pub fn compare_to_csv(report: &CompareReport) -> String {
    let mut out = String::from("snr_db,ber_float,ber_fixed\n");
    for row in &report.rows {
        out.push_str(&format!("{},{:.6e},{:.6e}\n", row.snr_db, row.ber_float, row.ber_fixed));
    }
    out
}

pub fn wl_report_to_csv(report: &WlReport) -> String {
    let mut out = String::from("word_length,channel_fl,lll_fl,ped_fl,llr_fl,offset_db\n");
    for row in &report.rows {
        let f = &row.formats;
        let offset = row.offset_db.map(|o| format!("{o:.4}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.word_length,
            f.channel.fraction_length,
            f.lll.fraction_length,
            f.ped.fraction_length,
            f.llr.fraction_length,
            offset
        ));
    }
    out
}

#[derive(Parser)]
#[command(name = "lrkbest", about = "Lattice-reduction-aided K-best MIMO decoder simulations", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Output does not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Suppress progress output on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// BER sweep over the configured SNR grid.
    Sweep(CommonArgs),
    /// Fixed-point vs float sweep from the same seed, with the SNR offset
    /// at a target BER.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 1e-3)]
        target_ber: f64,
    },
    /// Find the smallest uniform word length meeting an offset budget.
    Wlsearch {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 24)]
        max_wl: u32,
        #[arg(long, default_value_t = 10)]
        min_wl: u32,
        #[arg(long, default_value_t = 0.6)]
        budget_db: f64,
        #[arg(long, default_value_t = 1e-3)]
        target_ber: f64,
    },
    /// Run the built-in property checks and report PASS/FAIL per group.
    Verify {
        #[arg(long)]
        quiet: bool,
    },
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.sweep.seed = seed;
    }
    Ok(cfg)
}

fn emit(common: &CommonArgs, csv: String) -> Result<()> {
    match &common.out {
        Some(path) => std::fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn in_pool<F: FnOnce() -> Result<T> + Send, T: Send>(threads: Option<usize>, f: F) -> Result<T> {
    match threads {
        None => f(),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            pool.install(f)
        }
    }
}

fn run_command(command: Command) -> Result<()> {
    match command {
        Command::Sweep(common) => {
            let cfg = load_config(&common)?;
            let records = in_pool(common.threads, || run_ber_sweep(&cfg))?;
            if !common.quiet {
                for r in records.iter().filter(|r| r.iteration == cfg.sweep.max_outer_iterations || cfg.coding.is_none()) {
                    eprintln!("snr {:>6.2} dB  ber {:.3e}  ({} errs / {} bits)", r.snr_db, r.ber, r.bit_errors, r.bits_sent);
                }
            }
            emit(&common, records_to_csv(&records))
        }
        Command::Compare { common, target_ber } => {
            let cfg = load_config(&common)?;
            let report = in_pool(common.threads, || compare_fixed_float(&cfg, target_ber))?;
            emit(&common, compare_to_csv(&report))?;
            match report.offset_db {
                Some(o) => {
                    if !common.quiet {
                        eprintln!("offset at ber {target_ber:.1e}: {o:.4} dB");
                    }
                    Ok(())
                }
                None => Err(Error::Domain(format!(
                    "grid does not bracket ber {target_ber:.1e} on both curves; partial report written"
                ))),
            }
        }
        Command::Wlsearch { common, max_wl, min_wl, budget_db, target_ber } => {
            let cfg = load_config(&common)?;
            let report =
                in_pool(common.threads, || wordlength_search(&cfg, max_wl, min_wl, budget_db, target_ber))?;
            emit(&common, wl_report_to_csv(&report))?;
            if !common.quiet {
                match report.chosen {
                    Some(wl) => eprintln!("smallest word length within {budget_db} dB: {wl}"),
                    None => eprintln!("no word length in {min_wl}..={max_wl} met the {budget_db} dB budget"),
                }
            }
            Ok(())
        }
        Command::Verify { quiet } => verify_properties(quiet),
    }
}

/// Parsed-args entry point; returns the process exit code. 0 on success,
/// 1 for configuration/usage problems, 2 for runtime failures.
pub fn cli_main(args: Vec<String>) -> i32 {
    let argv = std::iter::once("lrkbest".to_string()).chain(args);
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let benign = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if benign { 0 } else { 1 };
        }
    };
    match run_command(cli.command) {
        Ok(()) => 0,
        Err(Error::Config(msg)) => {
            eprintln!("config error: {msg}");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

/// Quick self-contained property checks over the numeric kernels. Each
/// group prints one PASS/FAIL line; any failure is a runtime error.
fn verify_properties(quiet: bool) -> Result<()> {
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let mut failures = 0;
    let mut report = |name: &str, ok: bool, detail: String| {
        if !ok {
            failures += 1;
        }
        if !quiet || !ok {
            println!("{} {name}{}", if ok { "PASS" } else { "FAIL" }, if ok { String::new() } else { format!(": {detail}") });
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(2024);

    {
        let mut worst_g = 0.0f64;
        let mut worst_c = 0.0f64;
        for _ in 0..20 {
            let a = DMatrix::from_fn(8, 4, |_, _| rng.gen_range(-1.0..1.0));
            let qr = crate::linalg::qr_givens(&a).unwrap();
            worst_g = worst_g.max((&qr.q * &qr.r - &a).norm() / a.norm());
            let c = crate::linalg::qr_cordic(&a, &crate::linalg::CordicConfig::default()).unwrap();
            worst_c = worst_c.max((&c.q * &c.r - &a).norm() / a.norm());
        }
        report("qr-reconstruction", worst_g < 1e-10 && worst_c < 1e-4, format!("givens {worst_g:.2e} cordic {worst_c:.2e}"));
    }

    {
        let mut ok = true;
        let mut detail = String::new();
        for i in 0..20 {
            let b = DMatrix::from_fn(8, 4, |_, _| rng.gen_range(-2.0..2.0));
            match crate::lattice::lll_reduce(&b, &crate::lattice::LllParams::default()) {
                Ok((red, tr)) => {
                    let rep = crate::lattice::verify_reduction(&b, &red, &tr, 0.75);
                    if !rep.all_ok() {
                        ok = false;
                        detail = format!("basis {i}: {rep:?}");
                        break;
                    }
                }
                Err(e) => {
                    ok = false;
                    detail = format!("basis {i}: {e}");
                    break;
                }
            }
        }
        report("lll-validity", ok, detail);
    }

    {
        let ok = crate::kbest::se_enumerate(0.3, 5) == vec![0, 1, -1, 2, -2]
            && crate::kbest::se_enumerate(-0.3, 5) == vec![0, -1, 1, -2, 2]
            && crate::kbest::se_enumerate(0.5, 4) == vec![1, 0, 2, -1];
        report("se-enumeration", ok, "zig-zag order mismatch".into());
    }

    {
        let r = {
            let a = DMatrix::from_fn(16, 16, |_, _| rng.gen_range(-1.0..1.0f64));
            let mut r = a.qr().r();
            for i in 0..16 {
                if r[(i, i)] < 0.0 {
                    for j in 0..16 {
                        r[(i, j)] = -r[(i, j)];
                    }
                }
                r[(i, i)] += 0.5;
            }
            r
        };
        let y = DVector::from_fn(16, |_, _| rng.gen_range(-8.0..8.0));
        let out = crate::kbest::kbest_search(&r, &y, 4).unwrap();
        let bound = 4 * 8 * 4 - 2 * 8;
        report(
            "kbest-node-bound",
            out.stats.nodes_expanded <= bound,
            format!("{} > {bound}", out.stats.nodes_expanded),
        );
    }

    {
        let mut worst = 0.0f64;
        for _ in 0..200 {
            let nbits = rng.gen_range(2..6);
            let cands: Vec<crate::softdec::ScoredCandidate> = (0..rng.gen_range(2..8))
                .map(|_| crate::softdec::ScoredCandidate {
                    bits: (0..nbits).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect(),
                    metric: rng.gen_range(0.0..20.0),
                })
                .collect();
            let priors: Vec<f64> = (0..nbits).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let got = crate::softdec::llr_extrinsic(&cands, &priors, 1.3, 25.0).unwrap();
            for k in 0..nbits {
                let side = |want: i8| {
                    cands
                        .iter()
                        .filter(|c| c.bits[k] == want)
                        .map(|c| {
                            -c.metric / 1.3
                                + c.bits
                                    .iter()
                                    .zip(&priors)
                                    .enumerate()
                                    .filter(|(j, _)| *j != k)
                                    .map(|(_, (&x, la))| x as f64 * la)
                                    .sum::<f64>()
                        })
                        .fold(f64::NEG_INFINITY, f64::max)
                };
                let sub = |v: f64| if v == f64::NEG_INFINITY { -50.0 } else { v };
                let want = (0.5 * (sub(side(1)) - sub(side(-1)))).clamp(-25.0, 25.0);
                worst = worst.max((got[k] - want).abs());
            }
        }
        report("llr-max-log", worst < 1e-12, format!("worst {worst:.2e}"));
    }

    {
        let r2 = crate::lattice::nr_reciprocal(2.0, 4).unwrap();
        let r1 = crate::lattice::nr_reciprocal(1.0, 0).unwrap();
        report("nr-reciprocal", (r2 - 0.5).abs() < 1e-9 && r1 == 1.0, format!("1/2 -> {r2}"));
    }

    if failures == 0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{failures} property group(s) failed")))
    }
}
