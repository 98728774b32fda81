//! System parameters, presets, and the per-segment bit allocation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// All static parameters of a PTURA configuration.
///
/// Immutable after validation; safe to share across threads.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SystemConfig {
    /// Antenna count at the base station.
    pub m: usize,
    /// Number of tensor segments.
    pub l: usize,
    /// Segment lengths; their product must equal `t`.
    pub t_l: Vec<usize>,
    /// Total number of resource elements.
    pub t: usize,
    /// Message bits per device.
    pub b: usize,
    /// CRC-codeword bits.
    pub b_c: usize,
    /// Polar-codeword bits.
    pub b_p: usize,
    /// Per-segment bit budgets; sum must equal `b_p`.
    pub b_p_l: Vec<usize>,
    /// SCL list size.
    pub n_list: usize,
    /// Column-energy pruning threshold.
    pub eps_a: f64,
    /// Relative-change termination threshold for the VB loop.
    pub eps_iter: f64,
    /// Rank-overestimation factor.
    pub c_k: f64,
    pub a0: f64,
    pub b0: f64,
    pub a_lambda: f64,
    pub b_lambda: f64,
    pub a_gamma: f64,
    pub b_gamma: f64,
    /// Hard cap on VB iterations.
    pub max_vb_iters: usize,
    /// Hard cap on receiver feedback rounds.
    pub max_fb_rounds: usize,
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let prod: usize = self.t_l.iter().product();
        if prod != self.t {
            return Err(Error::Config(format!(
                "product of segment lengths {} != T {}",
                prod, self.t
            )));
        }
        if self.t_l.len() != self.l || self.b_p_l.len() != self.l {
            return Err(Error::Config("segment list lengths must equal L".into()));
        }
        let sum: usize = self.b_p_l.iter().sum();
        if sum != self.b_p {
            return Err(Error::Config(format!(
                "segment bit budgets sum {} != B_p {}",
                sum, self.b_p
            )));
        }
        if !(self.b < self.b_c && self.b_c < self.b_p) {
            return Err(Error::Config("need B < B_c < B_p".into()));
        }
        if self.t_l.iter().any(|&t| t < 2) {
            return Err(Error::Config("all segment lengths must be >= 2".into()));
        }
        if self.n_list < 1 {
            return Err(Error::Config("list size must be >= 1".into()));
        }
        if self.eps_a <= 0.0 || self.eps_iter <= 0.0 {
            return Err(Error::Config("thresholds must be positive".into()));
        }
        if self.c_k <= 1.0 {
            return Err(Error::Config("c_K must exceed 1".into()));
        }
        Ok(())
    }

    /// The three configurations from the reference parameter table.
    pub fn preset(name: &str) -> Result<SystemConfig> {
        let (l, t_l, b_p_l): (usize, Vec<usize>, Vec<usize>) = match name {
            "3ptura" => (3, vec![20, 16, 10], vec![55, 44, 27]),
            "4ptura" => (4, vec![10, 8, 8, 5], vec![42, 33, 33, 18]),
            "5ptura" => (5, vec![8, 5, 5, 4, 4], vec![42, 24, 24, 18, 18]),
            other => {
                return Err(Error::Config(format!(
                    "unknown preset '{other}' (expected 3ptura, 4ptura, or 5ptura)"
                )))
            }
        };
        let cfg = SystemConfig {
            m: 50,
            l,
            t_l,
            t: 3200,
            b: 96,
            b_c: 107,
            b_p: 126,
            b_p_l,
            n_list: 8,
            eps_a: 1e-2,
            eps_iter: 1e-6,
            c_k: 1.1,
            a0: 1e-6,
            b0: 1e-6,
            a_lambda: 1e-6,
            b_lambda: 1e-6,
            a_gamma: 1e-6,
            b_gamma: 1e-6,
            max_vb_iters: 200,
            max_fb_rounds: 10,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn preset_names() -> [&'static str; 3] {
        ["3ptura", "4ptura", "5ptura"]
    }
}

/// Real-valued per-segment budgets, proportional splitting of the payload
/// over segments, plus a largest-remainder rounding that conserves the total.
pub fn allocate_bit_budgets(t_l: &[usize], b_p: usize) -> Result<(Vec<f64>, Vec<usize>)> {
    let l = t_l.len();
    let t: usize = t_l.iter().product();
    let log2_t = (t as f64).log2();
    if (b_p as f64) <= log2_t {
        return Err(Error::InfeasibleBudget(format!(
            "B_p = {} does not exceed log2(T) = {:.4}",
            b_p, log2_t
        )));
    }
    if l == 1 {
        return Ok((vec![b_p as f64], vec![b_p]));
    }
    let denom: usize = t_l.iter().sum::<usize>() - l;
    let coef = (b_p as f64 - log2_t) / denom as f64;
    let reals: Vec<f64> = t_l
        .iter()
        .map(|&tl| (tl as f64).log2() + coef * (tl - 1) as f64)
        .collect();
    Ok((reals.clone(), largest_remainder_round(&reals, b_p)))
}

/// Rounds `reals` to integers summing to `total`: floor everything, then hand
/// the shortfall to the entries with the largest fractional parts.
fn largest_remainder_round(reals: &[f64], total: usize) -> Vec<usize> {
    let mut floors: Vec<usize> = reals.iter().map(|r| r.floor() as usize).collect();
    let deficit = total - floors.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..reals.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = reals[a] - reals[a].floor();
        let fb = reals[b] - reals[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(deficit) {
        floors[i] += 1;
    }
    floors
}

/// Integer bit loads for one segment: reference-position bits plus a load for
/// each of the 2(T_l - 1) coordinate halves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentAllocation {
    pub t_l: usize,
    /// Bits selecting the reference position, floor(log2 T_l).
    pub pos_bits: usize,
    /// Bit load per half-coordinate, real half then imaginary half,
    /// non-reference coordinates in ascending order.
    pub half_bits: Vec<usize>,
}

impl SegmentAllocation {
    /// Distributes `total_bits` over one segment: position bits first, the
    /// payload spread as evenly as possible over the halves (the first
    /// `payload mod halves` halves get one extra bit).
    pub fn new(t_l: usize, total_bits: usize) -> Result<SegmentAllocation> {
        let pos_bits = (t_l as f64).log2().floor() as usize;
        if total_bits < pos_bits {
            return Err(Error::InfeasibleBudget(format!(
                "segment budget {} below {} position bits",
                total_bits, pos_bits
            )));
        }
        let payload = total_bits - pos_bits;
        let n_halves = 2 * (t_l - 1);
        let base = payload / n_halves;
        let extra = payload % n_halves;
        let half_bits = (0..n_halves)
            .map(|g| base + usize::from(g < extra))
            .collect();
        Ok(SegmentAllocation {
            t_l,
            pos_bits,
            half_bits,
        })
    }

    /// Test helper: every half carries the same load.
    pub fn uniform(t_l: usize, bits_per_half: usize) -> SegmentAllocation {
        let pos_bits = (t_l as f64).log2().floor() as usize;
        SegmentAllocation {
            t_l,
            pos_bits,
            half_bits: vec![bits_per_half; 2 * (t_l - 1)],
        }
    }

    pub fn total_bits(&self) -> usize {
        self.pos_bits + self.half_bits.iter().sum::<usize>()
    }

    /// Number of distinct symbols in this segment's constellation.
    pub fn constellation_size(&self) -> u128 {
        1u128 << self.total_bits().min(127)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitAllocation {
    pub segments: Vec<SegmentAllocation>,
}

impl BitAllocation {
    pub fn from_config(cfg: &SystemConfig) -> Result<BitAllocation> {
        let segments = cfg
            .t_l
            .iter()
            .zip(&cfg.b_p_l)
            .map(|(&t_l, &bits)| SegmentAllocation::new(t_l, bits))
            .collect::<Result<Vec<_>>>()?;
        Ok(BitAllocation { segments })
    }
}
