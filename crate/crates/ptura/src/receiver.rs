//! Iterative Bayesian receiver with feedback: tensor decomposition, soft
//! Grassmannian demodulation, list decoding, and regeneration of the
//! recovered symbols for the next decomposition round.

use nalgebra::Complex;
use rand::Rng;

use crate::config::SystemConfig;
use crate::error::Result;
use crate::gmbtd::{run as run_gmbtd, DecompositionResult, GmbtdConfig};
use crate::grassmann::{soft_llr, SoftSymbolEstimate};
use crate::tensor::{CMat, DenseTensor};
use crate::tx::Transmitter;

/// Messages recovered so far, with their regenerated per-mode symbol
/// factors. Column r of every factor matrix belongs to `messages[r]`.
#[derive(Debug, Clone)]
pub struct RecoveredSet {
    pub messages: Vec<Vec<u8>>,
    pub symbols: Vec<CMat>,
}

impl RecoveredSet {
    pub fn empty(tx: &Transmitter) -> RecoveredSet {
        RecoveredSet {
            messages: Vec::new(),
            symbols: tx
                .alloc
                .segments
                .iter()
                .map(|seg| CMat::zeros(seg.t_l, 0))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn contains(&self, msg: &[u8]) -> bool {
        self.messages.iter().any(|m| m == msg)
    }
}

/// Rebuilds the per-mode factor matrices for a list of distinct messages
/// through the full transmit pipeline.
pub fn regenerate_symbols(tx: &Transmitter, messages: &[Vec<u8>]) -> Result<RecoveredSet> {
    let mut set = RecoveredSet::empty(tx);
    for msg in messages {
        add_message(tx, &mut set, msg.clone())?;
    }
    Ok(set)
}

fn add_message(tx: &Transmitter, set: &mut RecoveredSet, msg: Vec<u8>) -> Result<()> {
    let syms = tx.transmit(&msg)?;
    for (mat, sym) in set.symbols.iter_mut().zip(&syms) {
        let old = mat.clone();
        *mat = CMat::zeros(old.nrows(), old.ncols() + 1);
        mat.view_mut((0, 0), (old.nrows(), old.ncols())).copy_from(&old);
        for (i, &c) in sym.coords.iter().enumerate() {
            mat[(i, old.ncols())] = c;
        }
    }
    set.messages.push(msg);
    Ok(())
}

/// Maps the demodulator's LLR convention (positive favors bit 1) onto the
/// list decoder's (positive favors bit 0).
pub fn to_decoder_llrs(llrs: &[f64]) -> Vec<f64> {
    llrs.iter().map(|&v| -v).collect()
}

#[derive(Debug, Clone)]
pub struct RoundTrace {
    pub round: usize,
    pub k_u_hat: usize,
    pub vb_iters: usize,
    pub new_messages: usize,
    pub total_messages: usize,
}

#[derive(Debug, Clone)]
pub struct IbrOutcome {
    pub messages: Vec<Vec<u8>>,
    /// Component count reported by the first decomposition, before any
    /// feedback; rank-error metrics use this value.
    pub round1_k_u_hat: usize,
    pub rounds: usize,
    pub total_vb_iters: usize,
    pub trace: Vec<RoundTrace>,
    /// First-round decomposition, kept for the pre-feedback symbol and
    /// rank metrics.
    pub round1_decomposition: DecompositionResult,
}

pub struct Receiver {
    pub cfg: SystemConfig,
    pub tx: Transmitter,
    gm_cfg: GmbtdConfig,
    /// Drop CRC-passing decodes that are not in the supplied truth set
    /// before feeding them back (ablation mode; off by default).
    pub drop_false_alarms: bool,
}

impl Receiver {
    pub fn new(cfg: &SystemConfig) -> Result<Receiver> {
        Ok(Receiver {
            cfg: cfg.clone(),
            tx: Transmitter::new(cfg)?,
            gm_cfg: GmbtdConfig::from_system(cfg),
            drop_false_alarms: false,
        })
    }

    /// Demodulates and decodes every component of a decomposition,
    /// returning the distinct CRC-valid messages.
    fn decode_components(&self, result: &DecompositionResult) -> Result<Vec<Vec<u8>>> {
        let mut out: Vec<Vec<u8>> = Vec::new();
        for k in 0..result.k_u_hat {
            let mut llrs = Vec::with_capacity(self.cfg.b_p);
            let mut ok = true;
            for (l, seg) in self.tx.alloc.segments.iter().enumerate() {
                let x_hat: Vec<Complex<f64>> =
                    result.x_hat[l].column(k).iter().copied().collect();
                let est = SoftSymbolEstimate {
                    x_hat,
                    e: result.e[k][l],
                };
                match soft_llr(&est, seg) {
                    Ok(seg_llrs) => llrs.extend(to_decoder_llrs(&seg_llrs)),
                    Err(_) => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                continue;
            }
            if let Some(msg) = self.tx.chain.decode(&llrs, self.cfg.n_list)? {
                if !out.iter().any(|m| *m == msg) {
                    out.push(msg);
                }
            }
        }
        Ok(out)
    }

    /// Full feedback loop; stops when a round adds no new message or the
    /// round cap is reached.
    pub fn ibr_fb<R: Rng>(
        &self,
        y: &DenseTensor,
        rng: &mut R,
        truth: Option<&[Vec<u8>]>,
    ) -> Result<IbrOutcome> {
        let mut recovered = RecoveredSet::empty(&self.tx);
        let mut trace = Vec::new();
        let mut round1_k_u_hat = 0;
        let mut total_vb_iters = 0;
        let mut rounds = 0;
        let mut first = None;
        for round in 1..=self.cfg.max_fb_rounds {
            rounds = round;
            let result = run_gmbtd(y, recovered.symbols.clone(), &self.gm_cfg, rng, false)?;
            if round == 1 {
                round1_k_u_hat = result.k_u_hat;
            }
            total_vb_iters += result.iters;
            let mut new_messages = 0;
            for msg in self.decode_components(&result)? {
                if recovered.contains(&msg) {
                    continue;
                }
                if self.drop_false_alarms {
                    if let Some(t) = truth {
                        if !t.iter().any(|m| *m == msg) {
                            continue;
                        }
                    }
                }
                add_message(&self.tx, &mut recovered, msg)?;
                new_messages += 1;
            }
            trace.push(RoundTrace {
                round,
                k_u_hat: result.k_u_hat,
                vb_iters: result.iters,
                new_messages,
                total_messages: recovered.len(),
            });
            if first.is_none() {
                first = Some(result);
            }
            if new_messages == 0 {
                break;
            }
        }
        Ok(IbrOutcome {
            messages: recovered.messages,
            round1_k_u_hat,
            rounds,
            total_vb_iters,
            trace,
            round1_decomposition: first.expect("at least one round"),
        })
    }

    /// The Bayesian receiver without feedback: one decomposition and one
    /// decoding pass.
    pub fn br_single_pass<R: Rng>(&self, y: &DenseTensor, rng: &mut R) -> Result<IbrOutcome> {
        let recovered = RecoveredSet::empty(&self.tx);
        let result = run_gmbtd(y, recovered.symbols, &self.gm_cfg, rng, false)?;
        let messages = self.decode_components(&result)?;
        let total = messages.len();
        Ok(IbrOutcome {
            messages,
            round1_k_u_hat: result.k_u_hat,
            rounds: 1,
            total_vb_iters: result.iters,
            trace: vec![RoundTrace {
                round: 1,
                k_u_hat: result.k_u_hat,
                vb_iters: result.iters,
                new_messages: total,
                total_messages: total,
            }],
            round1_decomposition: result,
        })
    }

    /// Decomposition-only run, for rank and symbol metrics without any
    /// decoding.
    pub fn gmbtd_only<R: Rng>(
        &self,
        y: &DenseTensor,
        rng: &mut R,
        collect_trace: bool,
    ) -> Result<DecompositionResult> {
        run_gmbtd(y, Vec::new(), &self.gm_cfg, rng, collect_trace)
    }
}
