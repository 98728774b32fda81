//! Scene generation, the recovery-error metrics, and the Monte Carlo
//! trial harness with CSV output.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::Complex;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{BitAllocation, SystemConfig};
use crate::error::{Error, Result};
use crate::receiver::{regenerate_symbols, Receiver};
use crate::tensor::{fro_norm2, kruskal, CMat, DenseTensor};
use crate::tx::Transmitter;

/// Converts an energy-per-bit ratio in dB into the per-entry noise
/// variance N0 = T / (B 10^(dB/10)).
pub fn ebn0_to_n0(cfg: &SystemConfig, ebn0_db: f64) -> f64 {
    cfg.t as f64 / (cfg.b as f64 * 10f64.powf(ebn0_db / 10.0))
}

/// A synthetic uplink snapshot: who transmitted, over which channels, and
/// the resulting observation.
#[derive(Debug, Clone)]
pub struct Scene {
    pub k_a: usize,
    pub messages: Vec<Vec<u8>>,
    /// Per-mode T_l x K_a transmitted symbol factors.
    pub symbols: Vec<CMat>,
    pub channels: CMat,
    pub n0: f64,
    pub y: DenseTensor,
}

fn complex_normal<R: Rng>(rng: &mut R) -> Complex64 {
    let n = Normal::new(0.0, 1.0).unwrap();
    Complex::new(n.sample(rng), n.sample(rng)) / 2f64.sqrt()
}

pub fn generate_scene<R: Rng>(
    tx: &Transmitter,
    cfg: &SystemConfig,
    k_a: usize,
    ebn0_db: f64,
    rng: &mut R,
) -> Result<Scene> {
    let n0 = ebn0_to_n0(cfg, ebn0_db);
    let mut messages: Vec<Vec<u8>> = Vec::with_capacity(k_a);
    while messages.len() < k_a {
        let msg: Vec<u8> = (0..cfg.b).map(|_| rng.gen_range(0..2u8)).collect();
        if !messages.contains(&msg) {
            messages.push(msg);
        }
    }
    let set = regenerate_symbols(tx, &messages)?;
    let channels = CMat::from_fn(cfg.m, k_a, |_, _| complex_normal(rng));
    let mut factors: Vec<&CMat> = set.symbols.iter().collect();
    factors.push(&channels);
    let mut y = kruskal(&factors)?;
    if n0 > 0.0 {
        let scale = n0.sqrt();
        for v in y.data.iter_mut() {
            *v += complex_normal(rng) * scale;
        }
    }
    Ok(Scene {
        k_a,
        messages,
        symbols: set.symbols,
        channels,
        n0,
        y,
    })
}

/// Stacks per-mode factor matrices into one (sum T_l) x K matrix of
/// concatenated per-device segment columns.
pub fn stack_segments(symbols: &[CMat]) -> CMat {
    let k = symbols.first().map_or(0, |m| m.ncols());
    let rows: usize = symbols.iter().map(|m| m.nrows()).sum();
    let mut out = CMat::zeros(rows, k);
    let mut at = 0;
    for m in symbols {
        out.view_mut((at, 0), (m.nrows(), m.ncols())).copy_from(m);
        at += m.nrows();
    }
    out
}

/// Removes the per-segment phase ambiguity of estimated columns: each
/// segment block is rotated so its detected reference entry is real
/// positive.
pub fn derotate_segments(g: &mut CMat, alloc: &BitAllocation) {
    for c in 0..g.ncols() {
        let mut at = 0;
        for seg in &alloc.segments {
            let allowed = 1usize << seg.pos_bits;
            let mut best = 0;
            let mut best_mag = -1.0;
            for i in 0..allowed.min(seg.t_l) {
                let mag = g[(at + i, c)].norm();
                if mag > best_mag {
                    best_mag = mag;
                    best = i;
                }
            }
            let r = g[(at + best, c)];
            if r.norm() > 0.0 {
                let phase = r / Complex::new(r.norm(), 0.0);
                for i in 0..seg.t_l {
                    g[(at + i, c)] /= phase;
                }
            }
            at += seg.t_l;
        }
    }
}

/// Symbol-recovery error between stacked true and estimated columns. The
/// shorter side is matched against the longer by per-column nearest
/// neighbor; normalization is by the true-side energy.
pub fn rnmse(g_true: &CMat, g_hat: &CMat) -> f64 {
    let (ku, ku_hat) = (g_true.ncols(), g_hat.ncols());
    match (ku, ku_hat) {
        (0, 0) => return 0.0,
        (0, _) | (_, 0) => return 1.0,
        _ => {}
    }
    let denom = g_true.norm_squared();
    let (outer, inner) = if ku_hat >= ku {
        (g_hat, g_true)
    } else {
        (g_true, g_hat)
    };
    let mut total = 0.0;
    for k in 0..outer.ncols() {
        let mut best = f64::INFINITY;
        for i in 0..inner.ncols() {
            let d = (outer.column(k) - inner.column(i)).norm_squared();
            if d < best {
                best = d;
            }
        }
        total += best;
    }
    total / denom
}

pub fn reer(k_u: usize, k_u_hat: usize) -> Result<f64> {
    if k_u == 0 {
        return Err(Error::Degenerate("REER needs K_u >= 1".into()));
    }
    Ok((k_u_hat as f64 - k_u as f64).abs() / k_u as f64)
}

/// Per-user probability of error: missed fraction plus false-alarm
/// fraction; an empty estimate contributes no false alarms.
pub fn pupe(b_true: &[Vec<u8>], b_hat: &[Vec<u8>]) -> Result<f64> {
    if b_true.is_empty() {
        return Err(Error::Degenerate("PUPE needs a non-empty truth set".into()));
    }
    let hit = |set: &[Vec<u8>], m: &Vec<u8>| set.iter().any(|x| x == m);
    let missed = b_true.iter().filter(|m| !hit(b_hat, m)).count();
    let mut out = missed as f64 / b_true.len() as f64;
    if !b_hat.is_empty() {
        let false_alarms = b_hat.iter().filter(|m| !hit(b_true, m)).count();
        out += false_alarms as f64 / b_hat.len() as f64;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    IbrFb,
    Br,
    GmbtdOnly,
}

impl RunMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RunMode::IbrFb => "ibrfb",
            RunMode::Br => "br",
            RunMode::GmbtdOnly => "gmbtd",
        }
    }

    pub fn parse(s: &str) -> Result<RunMode> {
        match s {
            "ibrfb" => Ok(RunMode::IbrFb),
            "br" => Ok(RunMode::Br),
            "gmbtd" => Ok(RunMode::GmbtdOnly),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub trial_index: usize,
    pub mode: RunMode,
    pub preset: String,
    pub k_a: usize,
    pub ebn0_db: f64,
    pub seed: u64,
    pub k_u_hat: usize,
    pub rnmse: f64,
    pub reer: f64,
    /// Absent in decomposition-only mode.
    pub pupe: Option<f64>,
    pub vb_iters: usize,
    pub fb_rounds: usize,
    pub wall_time_ms: f64,
}

pub const CSV_HEADER: &str =
    "trial_index,mode,preset,K_a,ebn0_db,seed,K_u_hat,rnmse,reer,pupe,vb_iters,fb_rounds,wall_time_ms";

/// 9 significant digits.
fn fmt_float(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let s = format!("{v:.8e}");
    // Trim redundant "e0" exponents for readability.
    match s.strip_suffix("e0") {
        Some(m) => m.to_string(),
        None => s,
    }
}

impl TrialResult {
    pub fn csv_row(&self) -> String {
        let mut row = String::new();
        let pupe = self.pupe.map(fmt_float).unwrap_or_default();
        let _ = write!(
            row,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.trial_index,
            self.mode.as_str(),
            self.preset,
            self.k_a,
            fmt_float(self.ebn0_db),
            self.seed,
            self.k_u_hat,
            fmt_float(self.rnmse),
            fmt_float(self.reer),
            pupe,
            self.vb_iters,
            self.fb_rounds,
            fmt_float(self.wall_time_ms),
        );
        row
    }
}

pub fn run_trial(
    rx: &Receiver,
    preset: &str,
    mode: RunMode,
    k_a: usize,
    ebn0_db: f64,
    trial_index: usize,
    seed: u64,
) -> Result<TrialResult> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = generate_scene(&rx.tx, &rx.cfg, k_a, ebn0_db, &mut rng)?;
    let g_true = stack_segments(&scene.symbols);

    let (k_u_hat, x_hat, pupe_val, vb_iters, fb_rounds) = match mode {
        RunMode::GmbtdOnly => {
            let dec = rx.gmbtd_only(&scene.y, &mut rng, false)?;
            (dec.k_u_hat, dec.x_hat, None, dec.iters, 0)
        }
        RunMode::Br => {
            let out = rx.br_single_pass(&scene.y, &mut rng)?;
            let p = pupe(&scene.messages, &out.messages)?;
            (
                out.round1_k_u_hat,
                out.round1_decomposition.x_hat,
                Some(p),
                out.total_vb_iters,
                out.rounds,
            )
        }
        RunMode::IbrFb => {
            let out = rx.ibr_fb(&scene.y, &mut rng, Some(&scene.messages))?;
            let p = pupe(&scene.messages, &out.messages)?;
            (
                out.round1_k_u_hat,
                out.round1_decomposition.x_hat,
                Some(p),
                out.total_vb_iters,
                out.rounds,
            )
        }
    };

    let mut g_hat = stack_segments(&x_hat);
    derotate_segments(&mut g_hat, &rx.tx.alloc);
    let rnmse_val = rnmse(&g_true, &g_hat);
    let reer_val = reer(k_a.max(1), k_u_hat)?;
    debug_assert!(rnmse_val >= 0.0 && reer_val >= 0.0);
    debug_assert!(pupe_val.map_or(true, |p| (0.0..=2.0).contains(&p)));

    Ok(TrialResult {
        trial_index,
        mode,
        preset: preset.to_string(),
        k_a,
        ebn0_db,
        seed,
        k_u_hat,
        rnmse: rnmse_val,
        reer: reer_val,
        pupe: pupe_val,
        vb_iters,
        fb_rounds,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Runs `n_trials` independent trials; trial t uses seed base_seed + t.
pub fn run_trials(
    cfg: &SystemConfig,
    preset: &str,
    mode: RunMode,
    k_a: usize,
    ebn0_db: f64,
    n_trials: usize,
    base_seed: u64,
) -> Result<Vec<TrialResult>> {
    let rx = Receiver::new(cfg)?;
    (0..n_trials)
        .map(|t| run_trial(&rx, preset, mode, k_a, ebn0_db, t, base_seed + t as u64))
        .collect()
}

/// Same trials on a thread pool; per-trial seeds keep the output
/// independent of the thread count.
pub fn run_trials_parallel(
    cfg: &SystemConfig,
    preset: &str,
    mode: RunMode,
    k_a: usize,
    ebn0_db: f64,
    n_trials: usize,
    base_seed: u64,
    threads: usize,
) -> Result<Vec<TrialResult>> {
    if threads <= 1 {
        return run_trials(cfg, preset, mode, k_a, ebn0_db, n_trials, base_seed);
    }
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let rx = Receiver::new(cfg)?;
    pool.install(|| {
        (0..n_trials)
            .into_par_iter()
            .map(|t| run_trial(&rx, preset, mode, k_a, ebn0_db, t, base_seed + t as u64))
            .collect()
    })
}

/// Mean observed per-entry power of a tensor; scenes concentrate around
/// K_a + N0.
pub fn mean_entry_power(y: &DenseTensor) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    fro_norm2(y) / y.len() as f64
}
