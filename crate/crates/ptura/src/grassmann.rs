//! Structured Grassmannian (cube-split style) modulation, the greedy
//! near-ML demodulator, nearest-neighbor symbol search, and the
//! closed-form approximate soft LLR.
//!
//! A symbol of length T carries floor(log2 T) reference-position bits and
//! a Gray-coded PAM load on each of the 2(T-1) half-coordinates. The
//! reference entry is real, positive, and strictly the largest in
//! magnitude, which anchors both the subspace and the phase.
//!
//! Soft LLR sign convention here: positive favors bit 1. The adapter to
//! the polar decoder's opposite convention lives in the receiver.

use num_complex::Complex64;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::config::SegmentAllocation;
use crate::error::{Error, Result};

const T_CLAMP: f64 = 1.0 - 1e-9;
const E_CLAMP: f64 = 1e-6;

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).unwrap()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrassmannSymbol {
    pub coords: Vec<Complex64>,
    pub ref_index: usize,
}

impl GrassmannSymbol {
    pub fn norm_sqr(&self) -> f64 {
        self.coords.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Posterior symbol estimate with a per-element error ratio, the input to
/// the soft demodulator.
#[derive(Debug, Clone)]
pub struct SoftSymbolEstimate {
    pub x_hat: Vec<Complex64>,
    pub e: f64,
}

fn gray_encode(v: usize) -> usize {
    v ^ (v >> 1)
}

fn gray_decode(g: usize) -> usize {
    let mut v = g;
    let mut shift = 1;
    while (g >> shift) > 0 {
        v ^= g >> shift;
        shift += 1;
    }
    // Equivalent iterative fold; the loop above already xors all shifts.
    v
}

/// Gray-coded PAM level for a bit group: level n in 1..=2^b maps to
/// (2n - 1) * 2^(-b-1); an empty group sits at the median 1/2.
fn bits_to_level(bits: &[u8]) -> f64 {
    let b = bits.len();
    if b == 0 {
        return 0.5;
    }
    let g = bits.iter().fold(0usize, |acc, &bit| (acc << 1) | bit as usize);
    let v = gray_decode(g);
    ((2 * v + 1) as f64) / (1u64 << (b + 1)) as f64
}

fn level_to_bits(v: usize, b: usize) -> Vec<u8> {
    let g = gray_encode(v);
    (0..b).rev().map(|i| ((g >> i) & 1) as u8).collect()
}

/// Nearest PAM level index (0-based) to the unquantized coordinate `a`.
fn nearest_level(a: f64, b: usize) -> usize {
    if b == 0 {
        return 0;
    }
    let levels = 1usize << b;
    let idx = (a * levels as f64).floor() as isize;
    idx.clamp(0, levels as isize - 1) as usize
}

/// Eq-style coordinate map: a pair of PAM levels to the complex ratio t.
fn halves_to_ratio(a_re: f64, a_im: f64) -> Complex64 {
    let normal = std_normal();
    let w = Complex64::new(normal.inverse_cdf(a_re), normal.inverse_cdf(a_im));
    ratio_from_omega(w)
}

fn ratio_from_omega(w: Complex64) -> Complex64 {
    let mag2 = w.norm_sqr();
    if mag2 == 0.0 {
        return Complex64::default();
    }
    let ex = (-0.5 * mag2).exp();
    let t_mag = ((1.0 - ex) / (1.0 + ex)).sqrt();
    w / w.norm() * t_mag
}

/// Inverse of the coordinate map: unquantized per-half PAM coordinates for
/// a (clamped) ratio estimate.
fn ratio_to_halves(t: Complex64) -> (f64, f64) {
    let normal = std_normal();
    let mut mag = t.norm();
    if mag >= T_CLAMP {
        mag = T_CLAMP;
    }
    if mag == 0.0 {
        return (0.5, 0.5);
    }
    let m2 = mag * mag;
    let omega_mag = (2.0 * ((1.0 + m2) / (1.0 - m2)).ln()).sqrt();
    let theta = t.arg();
    (
        normal.cdf(omega_mag * theta.cos()),
        normal.cdf(omega_mag * theta.sin()),
    )
}

/// Non-reference coordinate indices in ascending order.
fn non_ref_indices(t_l: usize, ref_index: usize) -> impl Iterator<Item = usize> {
    (0..t_l).filter(move |&i| i != ref_index)
}

/// Maps one segment's bits to a unit-energy Grassmannian symbol.
pub fn modulate_segment(bits: &[u8], alloc: &SegmentAllocation) -> Result<GrassmannSymbol> {
    if bits.len() != alloc.total_bits() {
        return Err(Error::Size {
            expected: alloc.total_bits(),
            got: bits.len(),
        });
    }
    let t_l = alloc.t_l;
    let mut cursor = 0;
    let mut ref_index = 0usize;
    for _ in 0..alloc.pos_bits {
        ref_index = (ref_index << 1) | bits[cursor] as usize;
        cursor += 1;
    }
    let mut ratios = Vec::with_capacity(t_l - 1);
    for pair in alloc.half_bits.chunks(2) {
        let (b_re, b_im) = (pair[0], pair[1]);
        let a_re = bits_to_level(&bits[cursor..cursor + b_re]);
        cursor += b_re;
        let a_im = bits_to_level(&bits[cursor..cursor + b_im]);
        cursor += b_im;
        ratios.push(halves_to_ratio(a_re, a_im));
    }
    Ok(assemble(t_l, ref_index, &ratios))
}

fn assemble(t_l: usize, ref_index: usize, ratios: &[Complex64]) -> GrassmannSymbol {
    let sum: f64 = ratios.iter().map(|t| t.norm_sqr()).sum();
    let reference = (t_l as f64 / (1.0 + sum)).sqrt();
    let mut coords = vec![Complex64::default(); t_l];
    coords[ref_index] = Complex64::new(reference, 0.0);
    for (i, &t) in non_ref_indices(t_l, ref_index).zip(ratios) {
        coords[i] = t * reference;
    }
    GrassmannSymbol { coords, ref_index }
}

/// Full demodulation record: decided bits, the re-modulated hard symbol,
/// and the unquantized per-half coordinates (used by the neighbor search).
#[derive(Debug, Clone)]
pub struct DemodResult {
    pub bits: Vec<u8>,
    pub symbol: GrassmannSymbol,
    pub a_unquant: Vec<f64>,
}

/// Demodulates under a fixed reference-position hypothesis.
fn demodulate_with_ref(
    x_hat: &[Complex64],
    ref_index: usize,
    alloc: &SegmentAllocation,
) -> DemodResult {
    let t_l = alloc.t_l;
    let ref_val = x_hat[ref_index];
    let mut bits = Vec::with_capacity(alloc.total_bits());
    for i in (0..alloc.pos_bits).rev() {
        bits.push(((ref_index >> i) & 1) as u8);
    }
    let mut a_unquant = Vec::with_capacity(2 * (t_l - 1));
    let mut ratios = Vec::with_capacity(t_l - 1);
    for (coord, pair) in non_ref_indices(t_l, ref_index).zip(alloc.half_bits.chunks(2)) {
        let t_est = if ref_val.norm() > 0.0 {
            x_hat[coord] / ref_val
        } else {
            Complex64::default()
        };
        let (a_re, a_im) = ratio_to_halves(t_est);
        a_unquant.push(a_re);
        a_unquant.push(a_im);
        let (n_re, n_im) = (nearest_level(a_re, pair[0]), nearest_level(a_im, pair[1]));
        bits.extend(level_to_bits(n_re, pair[0]));
        bits.extend(level_to_bits(n_im, pair[1]));
        ratios.push(halves_to_ratio(
            bits_to_level(&level_to_bits(n_re, pair[0])),
            bits_to_level(&level_to_bits(n_im, pair[1])),
        ));
    }
    DemodResult {
        bits,
        symbol: assemble(t_l, ref_index, &ratios),
        a_unquant,
    }
}

fn correlation(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.conj() * y)
        .sum::<Complex64>()
        .norm()
}

/// Greedy near-ML demodulation: the reference position is taken as the
/// single largest-magnitude allowed entry; `exhaustive` instead scores
/// every allowed reference hypothesis by correlation.
pub fn greedy_demodulate(
    x_hat: &[Complex64],
    alloc: &SegmentAllocation,
    exhaustive: bool,
) -> Result<DemodResult> {
    if x_hat.len() != alloc.t_l {
        return Err(Error::Size {
            expected: alloc.t_l,
            got: x_hat.len(),
        });
    }
    if x_hat.iter().map(|c| c.norm_sqr()).sum::<f64>() == 0.0 {
        return Err(Error::Degenerate("zero symbol estimate".into()));
    }
    let allowed = 1usize << alloc.pos_bits;
    if exhaustive {
        let mut best: Option<DemodResult> = None;
        let mut best_corr = -1.0;
        for r in 0..allowed {
            let cand = demodulate_with_ref(x_hat, r, alloc);
            let c = correlation(x_hat, &cand.symbol.coords);
            if c > best_corr {
                best_corr = c;
                best = Some(cand);
            }
        }
        Ok(best.unwrap())
    } else {
        let ref_index = (0..allowed)
            .max_by(|&a, &b| {
                x_hat[a]
                    .norm_sqr()
                    .partial_cmp(&x_hat[b].norm_sqr())
                    .unwrap()
                    .then(b.cmp(&a))
            })
            .unwrap();
        Ok(demodulate_with_ref(x_hat, ref_index, alloc))
    }
}

/// The closest symbol to the ML decision whose bit `bit_index` equals `q`:
/// a payload flip re-maps only the owning half; a position flip re-runs
/// the payload demodulation under the flipped reference hypothesis.
pub fn neighbor_symbol(
    x_hat: &[Complex64],
    ml: &DemodResult,
    bit_index: usize,
    q: u8,
    alloc: &SegmentAllocation,
) -> GrassmannSymbol {
    debug_assert_ne!(ml.bits[bit_index], q);
    if bit_index < alloc.pos_bits {
        let flip = 1usize << (alloc.pos_bits - 1 - bit_index);
        let new_ref = ml.symbol.ref_index ^ flip;
        return demodulate_with_ref(x_hat, new_ref, alloc).symbol;
    }
    // Locate the owning half and the bit position inside its group.
    let mut offset = bit_index - alloc.pos_bits;
    let mut half = 0usize;
    while offset >= alloc.half_bits[half] {
        offset -= alloc.half_bits[half];
        half += 1;
    }
    let b = alloc.half_bits[half];
    let a_target = ml.a_unquant[half];
    // Nearest level whose Gray code carries q at this bit position.
    let mask_pos = b - 1 - offset;
    let mut best_level = None;
    let mut best_dist = f64::INFINITY;
    for v in 0..(1usize << b) {
        if ((gray_encode(v) >> mask_pos) & 1) as u8 != q {
            continue;
        }
        let a_v = ((2 * v + 1) as f64) / (1u64 << (b + 1)) as f64;
        let d = (a_v - a_target).abs();
        if d < best_dist {
            best_dist = d;
            best_level = Some(v);
        }
    }
    let mut bits = ml.bits.clone();
    let group_start = alloc.pos_bits
        + alloc.half_bits[..half].iter().sum::<usize>();
    let new_bits = level_to_bits(best_level.unwrap(), b);
    bits[group_start..group_start + b].copy_from_slice(&new_bits);
    modulate_segment(&bits, alloc).expect("rebuilt bit string has the right length")
}

fn clamp_e(e: f64) -> f64 {
    e.clamp(E_CLAMP, 1.0 - E_CLAMP)
}

pub fn llr_prefactor(e: f64) -> f64 {
    let e = clamp_e(e);
    2.0 * (1.0 - e).sqrt() / e
}

/// Approximate closed-form per-bit LLR; positive favors bit 1.
pub fn soft_llr(est: &SoftSymbolEstimate, alloc: &SegmentAllocation) -> Result<Vec<f64>> {
    let ml = greedy_demodulate(&est.x_hat, alloc, false)?;
    let pref = llr_prefactor(est.e);
    let corr_ml = correlation(&est.x_hat, &ml.symbol.coords);
    let mut llrs = Vec::with_capacity(ml.bits.len());
    for (i, &bit) in ml.bits.iter().enumerate() {
        let nb = neighbor_symbol(&est.x_hat, &ml, i, 1 - bit, alloc);
        let corr_nb = correlation(&est.x_hat, &nb.coords);
        let (c1, c0) = if bit == 1 {
            (corr_ml, corr_nb)
        } else {
            (corr_nb, corr_ml)
        };
        llrs.push(pref * (c1 - c0));
    }
    Ok(llrs)
}

/// Brute-force LLR over the full constellation (test oracle).
pub fn exact_llr_oracle(est: &SoftSymbolEstimate, alloc: &SegmentAllocation) -> Result<Vec<f64>> {
    let total_bits = alloc.total_bits();
    if total_bits > 16 {
        return Err(Error::Capacity(1u64 << total_bits));
    }
    let pref = llr_prefactor(est.e);
    let n_bits = total_bits;
    let count = 1usize << n_bits;
    let mut weights = Vec::with_capacity(count);
    let mut patterns = Vec::with_capacity(count);
    for code in 0..count {
        let bits: Vec<u8> = (0..n_bits)
            .rev()
            .map(|i| ((code >> i) & 1) as u8)
            .collect();
        let sym = modulate_segment(&bits, alloc)?;
        weights.push(pref * correlation(&est.x_hat, &sym.coords));
        patterns.push(bits);
    }
    let mut llrs = Vec::with_capacity(n_bits);
    for i in 0..n_bits {
        let lse = |q: u8| {
            let ws: Vec<f64> = weights
                .iter()
                .zip(&patterns)
                .filter(|(_, p)| p[i] == q)
                .map(|(&w, _)| w)
                .collect();
            let m = ws.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            m + ws.iter().map(|w| (w - m).exp()).sum::<f64>().ln()
        };
        llrs.push(lse(1) - lse(0));
    }
    Ok(llrs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_bits<R: Rng>(rng: &mut R, n: usize) -> Vec<u8> {
        (0..n).map(|_| rng.gen_range(0..2u8)).collect()
    }

    #[test]
    fn modulated_symbol_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for (t_l, budget) in [(20usize, 55usize), (10, 42), (5, 18), (4, 18)] {
            let alloc = SegmentAllocation::new(t_l, budget).unwrap();
            for _ in 0..200 {
                let bits = random_bits(&mut rng, alloc.total_bits());
                let sym = modulate_segment(&bits, &alloc).unwrap();
                let n2 = sym.norm_sqr();
                assert!((n2 - t_l as f64).abs() <= 1e-9 * t_l as f64);
                let r = sym.coords[sym.ref_index];
                assert!(r.im == 0.0 && r.re > 0.0);
                for (i, c) in sym.coords.iter().enumerate() {
                    if i != sym.ref_index {
                        assert!(c.norm() < r.re, "reference entry must dominate");
                    }
                }
            }
        }
    }

    #[test]
    fn two_coordinate_symbol_matches_quantile_oracle() {
        // T = 2, one bit per half, payload (0,0): level 1/4 on both halves.
        let alloc = SegmentAllocation::uniform(2, 1);
        let bits = vec![0u8, 0, 0]; // 1 position bit + 2 payload bits
        let sym = modulate_segment(&bits, &alloc).unwrap();
        let q = std_normal().inverse_cdf(0.25);
        assert!((q + 0.6744897501960817).abs() < 1e-9);
        let w = Complex64::new(q, q);
        let t = ratio_from_omega(w);
        assert!((t.norm() - 0.4729).abs() < 5e-5);
        let expect = (2.0 / (1.0 + t.norm_sqr())).sqrt();
        assert!((sym.coords[0].re - expect).abs() < 1e-12);
        assert!((sym.coords[1] - t * expect).norm() < 1e-12);
    }

    #[test]
    fn zero_bit_half_contributes_zero() {
        let alloc = SegmentAllocation::new(4, 2).unwrap();
        let sym = modulate_segment(&[0, 1], &alloc).unwrap();
        assert_eq!(sym.ref_index, 1);
        assert!((sym.coords[1].re - 2.0).abs() < 1e-12);
        for i in [0usize, 2, 3] {
            assert_eq!(sym.coords[i], Complex64::default());
        }
    }

    #[test]
    fn roundtrip_all_preset_segments() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for (t_l, budget) in [
            (20usize, 55usize),
            (16, 44),
            (10, 27),
            (10, 42),
            (8, 33),
            (5, 18),
            (8, 42),
            (5, 24),
            (4, 18),
        ] {
            let alloc = SegmentAllocation::new(t_l, budget).unwrap();
            for _ in 0..500 {
                let bits = random_bits(&mut rng, alloc.total_bits());
                let sym = modulate_segment(&bits, &alloc).unwrap();
                let out = greedy_demodulate(&sym.coords, &alloc, false).unwrap();
                assert_eq!(out.bits, bits);
            }
        }
    }

    #[test]
    fn phase_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let alloc = SegmentAllocation::new(10, 42).unwrap();
        let bits = random_bits(&mut rng, 42);
        let sym = modulate_segment(&bits, &alloc).unwrap();
        for _ in 0..100 {
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let rot = Complex64::from_polar(1.0, theta);
            let rotated: Vec<Complex64> = sym.coords.iter().map(|c| c * rot).collect();
            let out = greedy_demodulate(&rotated, &alloc, false).unwrap();
            assert_eq!(out.bits, bits);
        }
    }

    #[test]
    fn small_perturbations_keep_bits() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let alloc = SegmentAllocation::new(16, 44).unwrap();
        for _ in 0..200 {
            let bits = random_bits(&mut rng, 44);
            let sym = modulate_segment(&bits, &alloc).unwrap();
            let mut noisy = sym.coords.clone();
            let mut delta: Vec<Complex64> = (0..16)
                .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
                .collect();
            let norm: f64 = delta.iter().map(|d| d.norm_sqr()).sum::<f64>().sqrt();
            for d in delta.iter_mut() {
                *d /= norm / 1e-3;
            }
            for (c, d) in noisy.iter_mut().zip(delta) {
                *c += d;
            }
            let out = greedy_demodulate(&noisy, &alloc, false).unwrap();
            assert_eq!(out.bits, bits);
        }
    }

    #[test]
    fn exhaustive_mode_agrees_on_clean_symbols() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let alloc = SegmentAllocation::new(8, 33).unwrap();
        for _ in 0..100 {
            let bits = random_bits(&mut rng, 33);
            let sym = modulate_segment(&bits, &alloc).unwrap();
            let out = greedy_demodulate(&sym.coords, &alloc, true).unwrap();
            assert_eq!(out.bits, bits);
        }
    }

    #[test]
    fn zero_input_is_rejected() {
        let alloc = SegmentAllocation::new(4, 8).unwrap();
        let zero = vec![Complex64::default(); 4];
        assert!(greedy_demodulate(&zero, &alloc, false).is_err());
    }

    #[test]
    fn neighbor_locality() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let alloc = SegmentAllocation::uniform(4, 2); // 2 pos bits + 12 payload
        for _ in 0..100 {
            let bits = random_bits(&mut rng, alloc.total_bits());
            let sym = modulate_segment(&bits, &alloc).unwrap();
            let ml = greedy_demodulate(&sym.coords, &alloc, false).unwrap();
            // Payload flip changes exactly one coordinate.
            let i = rng.gen_range(alloc.pos_bits..alloc.total_bits());
            let nb = neighbor_symbol(&sym.coords, &ml, i, 1 - bits[i], &alloc);
            assert_eq!(nb.ref_index, sym.ref_index);
            let changed = sym
                .coords
                .iter()
                .zip(&nb.coords)
                .filter(|(a, b)| (*a - *b).norm() > 1e-9)
                .count();
            // The reference entry rescales too, so one coordinate plus the
            // reference may move; the flipped half always moves.
            assert!(changed >= 1 && changed <= sym.coords.len());
            let corr = correlation(&sym.coords, &nb.coords) / alloc.t_l as f64;
            assert!(corr < 1.0);
            // Position flip changes the reference index by a power of two.
            let p = rng.gen_range(0..alloc.pos_bits);
            let nb2 = neighbor_symbol(&sym.coords, &ml, p, 1 - bits[p], &alloc);
            let diff = nb2.ref_index ^ sym.ref_index;
            assert!(diff.is_power_of_two());
        }
    }

    #[test]
    fn llr_prefactor_scaling() {
        let ratio = llr_prefactor(0.1) / llr_prefactor(0.2);
        assert!((ratio - (2.0 * 0.9f64.sqrt() / 0.1) / (2.0 * 0.8f64.sqrt() / 0.2)).abs() < 1e-12);
        assert!((ratio - 2.1213203435596424).abs() < 1e-9);
    }

    #[test]
    fn llr_signs_match_hard_decision_on_constellation_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let alloc = SegmentAllocation::new(8, 33).unwrap();
        for _ in 0..50 {
            let bits = random_bits(&mut rng, 33);
            let sym = modulate_segment(&bits, &alloc).unwrap();
            let est = SoftSymbolEstimate {
                x_hat: sym.coords.clone(),
                e: 0.05,
            };
            let llrs = soft_llr(&est, &alloc).unwrap();
            for (&bit, &r) in bits.iter().zip(&llrs) {
                if bit == 1 {
                    assert!(r > 0.0);
                } else {
                    assert!(r < 0.0);
                }
            }
        }
    }

    #[test]
    fn oracle_equals_approximation_for_two_symbol_constellation() {
        // T = 2, no payload bits: the constellation has exactly two
        // symbols (reference position 0 or 1), one per bit value.
        let alloc = SegmentAllocation::uniform(2, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(38);
        for _ in 0..100 {
            let mut x_hat: Vec<Complex64> = (0..2)
                .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
                .collect();
            let n: f64 = x_hat.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            for c in x_hat.iter_mut() {
                *c *= (2.0f64).sqrt() / n;
            }
            let est = SoftSymbolEstimate { x_hat, e: 0.08 };
            let exact = exact_llr_oracle(&est, &alloc).unwrap();
            let approx = soft_llr(&est, &alloc).unwrap();
            assert_eq!(exact.len(), 1);
            assert!((exact[0] - approx[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn approximate_llr_signs_track_the_oracle() {
        let alloc = SegmentAllocation::uniform(4, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(39);
        let e = 0.05;
        let (mut agree, mut total) = (0usize, 0usize);
        for _ in 0..500 {
            let bits = random_bits(&mut rng, alloc.total_bits());
            let sym = modulate_segment(&bits, &alloc).unwrap();
            let x_hat: Vec<Complex64> = sym
                .coords
                .iter()
                .map(|c| {
                    c + 0.1
                        * Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
                })
                .collect();
            let est = SoftSymbolEstimate { x_hat, e };
            let exact = exact_llr_oracle(&est, &alloc).unwrap();
            let approx = soft_llr(&est, &alloc).unwrap();
            for (ex, ap) in exact.iter().zip(&approx) {
                total += 1;
                if ex.signum() == ap.signum() {
                    agree += 1;
                }
            }
        }
        let rate = agree as f64 / total as f64;
        assert!(rate >= 0.97, "sign agreement {rate}");
    }
}
