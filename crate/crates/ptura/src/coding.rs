//! CRC-11 encoding and a CRC-aided SCL polar codec.
//!
//! The chain follows the 5G-style layout at (126, 107): an 11-bit CRC
//! (generator D^11 + D^10 + D^9 + D^5 + 1, zero initial state, no final
//! XOR) followed by a mother code of length 128 shortened by its last two
//! natural-order output bits. The information set comes from a
//! Gaussian-approximation construction at a 2 dB design SNR; the shortened
//! transform inputs are excluded from it and frozen.
//!
//! Bit strings are most-significant-bit-first everywhere. LLR sign
//! convention at the decoder input: positive means bit 0 is more likely.

use crate::error::{Error, Result};

pub const CRC_BITS: usize = 11;
/// Generator polynomial without the leading D^11 term: D^10 + D^9 + D^5 + 1.
const CRC_POLY: u16 = 0x621;
const CRC_MASK: u16 = 0x7FF;

/// Remainder of bits(x) * x^11 modulo the generator; the input is XORed at
/// the register top, which supplies the x^11 factor implicitly.
fn crc_remainder(bits: &[u8]) -> u16 {
    let mut reg: u16 = 0;
    for &b in bits {
        let fb = ((reg >> 10) & 1) as u8 ^ b;
        reg = (reg << 1) & CRC_MASK;
        if fb == 1 {
            reg ^= CRC_POLY;
        }
    }
    reg
}

/// Appends the 11 CRC bits to `msg`.
pub fn crc_encode(msg: &[u8]) -> Vec<u8> {
    let rem = crc_remainder(msg);
    let mut out = msg.to_vec();
    for i in (0..CRC_BITS).rev() {
        out.push(((rem >> i) & 1) as u8);
    }
    out
}

/// True iff `bits` is a valid CRC codeword.
pub fn crc_check(bits: &[u8]) -> bool {
    crc_remainder(bits) == 0
}

/// Gaussian-approximation tracking function ln(phi(m)) for the check-node
/// degradation of a BI-AWGN LLR mean, after Chung et al.
fn ln_phi(m: f64) -> f64 {
    if m <= 0.0 {
        return 0.0;
    }
    if m < 10.0 {
        -0.4527 * m.powf(0.86) + 0.0218
    } else {
        0.5 * (std::f64::consts::PI / m).ln() - m / 4.0 + (1.0 - 10.0 / (7.0 * m)).ln_1p()
    }
}

fn ln_phi_inverse(target: f64) -> f64 {
    // ln_phi is monotone decreasing in m; bisect.
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while ln_phi(hi) > target && hi < 1e9 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ln_phi(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Check-node update of the LLR mean: phi_inv(1 - (1 - phi(m))^2),
/// evaluated in the log domain to survive large means.
fn ga_check(m: f64) -> f64 {
    let lp = ln_phi(m);
    // ln(2 phi - phi^2) = ln 2 + ln phi + ln(1 - phi/2)
    let ln_target = std::f64::consts::LN_2 + lp + (-0.5 * lp.exp()).ln_1p();
    ln_phi_inverse(ln_target)
}

/// Per-input reliability proxies (LLR means) for a length-`n` polar
/// transform at the given design mean.
fn ga_means(n: usize, m0: f64) -> Vec<f64> {
    let levels = n.trailing_zeros();
    let mut means = vec![m0];
    for _ in 0..levels {
        let mut next = Vec::with_capacity(means.len() * 2);
        for &m in &means {
            next.push(ga_check(m));
            next.push(2.0 * m);
        }
        means = next;
    }
    means
}

#[derive(Debug, Clone)]
pub struct PolarCodec {
    /// Mother-code length (power of two).
    n: usize,
    /// Transmitted codeword length after shortening.
    pub code_len: usize,
    /// Information (CRC codeword) length.
    pub info_len: usize,
    /// Information positions in ascending natural order.
    info_set: Vec<usize>,
    is_info: Vec<bool>,
    /// Inputs frozen because their outputs are shortened away.
    n_shortened: usize,
}

impl PolarCodec {
    /// Design SNR (Eb/N0, dB) of the Gaussian-approximation construction.
    pub const DESIGN_SNR_DB: f64 = 2.0;

    pub fn new(code_len: usize, info_len: usize) -> Result<PolarCodec> {
        if info_len == 0 || info_len > code_len {
            return Err(Error::Config(format!(
                "bad polar dimensions ({code_len}, {info_len})"
            )));
        }
        let n = code_len.next_power_of_two();
        let n_shortened = n - code_len;
        let rate = info_len as f64 / code_len as f64;
        let m0 = 4.0 * rate * 10f64.powf(Self::DESIGN_SNR_DB / 10.0);
        let means = ga_means(n, m0);
        // Shortened inputs are the last n_shortened natural-order positions;
        // they are excluded from the information set.
        let mut candidates: Vec<usize> = (0..code_len).collect();
        candidates.sort_by(|&a, &b| means[b].partial_cmp(&means[a]).unwrap().then(a.cmp(&b)));
        let mut info_set: Vec<usize> = candidates[..info_len].to_vec();
        info_set.sort_unstable();
        let mut is_info = vec![false; n];
        for &i in &info_set {
            is_info[i] = true;
        }
        Ok(PolarCodec {
            n,
            code_len,
            info_len,
            info_set,
            is_info,
            n_shortened,
        })
    }

    /// x = u F^{kron n}: recursive butterfly, in place.
    fn transform(u: &mut [u8]) {
        let n = u.len();
        if n <= 1 {
            return;
        }
        let h = n / 2;
        let (left, right) = u.split_at_mut(h);
        Self::transform(left);
        Self::transform(right);
        for j in 0..h {
            left[j] ^= right[j];
        }
    }

    pub fn encode(&self, cw: &[u8]) -> Result<Vec<u8>> {
        if cw.len() != self.info_len {
            return Err(Error::Size {
                expected: self.info_len,
                got: cw.len(),
            });
        }
        let mut u = vec![0u8; self.n];
        for (&pos, &bit) in self.info_set.iter().zip(cw) {
            u[pos] = bit;
        }
        Self::transform(&mut u);
        u.truncate(self.code_len);
        Ok(u)
    }

    /// LLR of the next undecided input bit of a node, given the node's
    /// channel LLRs and the bits already decided inside it.
    fn next_llr(y: &[f64], u_past: &[u8]) -> f64 {
        let n = y.len();
        if n == 1 {
            return y[0];
        }
        let h = n / 2;
        if u_past.len() < h {
            let a: Vec<f64> = (0..h)
                .map(|j| {
                    let (p, q) = (y[j], y[j + h]);
                    p.signum() * q.signum() * p.abs().min(q.abs())
                })
                .collect();
            Self::next_llr(&a, u_past)
        } else {
            let (ul, ur) = u_past.split_at(h);
            let mut s = ul.to_vec();
            Self::transform(&mut s);
            let b: Vec<f64> = (0..h)
                .map(|j| y[j + h] + if s[j] == 1 { -y[j] } else { y[j] })
                .collect();
            Self::next_llr(&b, ur)
        }
    }

    /// List decoding; returns the CRC codeword of the best surviving path
    /// that passes `accept`, or None.
    pub fn decode_scl<F>(&self, llrs: &[f64], n_list: usize, accept: F) -> Result<Option<Vec<u8>>>
    where
        F: Fn(&[u8]) -> bool,
    {
        if llrs.len() != self.code_len {
            return Err(Error::Size {
                expected: self.code_len,
                got: llrs.len(),
            });
        }
        if n_list == 0 {
            return Err(Error::Config("list size must be >= 1".into()));
        }
        // Shortened outputs are known zero.
        const SHORT_LLR: f64 = 1e30;
        let mut channel = llrs.to_vec();
        channel.extend(std::iter::repeat(SHORT_LLR).take(self.n_shortened));

        struct Path {
            metric: f64,
            bits: Vec<u8>,
        }
        let mut paths = vec![Path {
            metric: 0.0,
            bits: Vec::with_capacity(self.n),
        }];
        for phase in 0..self.n {
            if self.is_info[phase] {
                let mut children: Vec<Path> = Vec::with_capacity(paths.len() * 2);
                for p in paths {
                    let llr = Self::next_llr(&channel, &p.bits);
                    let hard = u8::from(llr < 0.0);
                    for bit in [0u8, 1u8] {
                        let penalty = if bit == hard { 0.0 } else { llr.abs() };
                        let mut bits = p.bits.clone();
                        bits.push(bit);
                        children.push(Path {
                            metric: p.metric + penalty,
                            bits,
                        });
                    }
                }
                // Ties broken by insertion order (lower path index wins).
                children.sort_by(|a, b| a.metric.partial_cmp(&b.metric).unwrap());
                children.truncate(n_list);
                paths = children;
            } else {
                for p in paths.iter_mut() {
                    let llr = Self::next_llr(&channel, &p.bits);
                    if llr < 0.0 {
                        p.metric += llr.abs();
                    }
                    p.bits.push(0);
                }
            }
        }
        paths.sort_by(|a, b| a.metric.partial_cmp(&b.metric).unwrap());
        for p in &paths {
            let cw: Vec<u8> = self.info_set.iter().map(|&i| p.bits[i]).collect();
            if accept(&cw) {
                return Ok(Some(cw));
            }
        }
        Ok(None)
    }
}

/// The (B_p, B_c) chain used by the receiver: CA-SCL over the shortened
/// mother code, CRC as the list selector.
#[derive(Debug, Clone)]
pub struct CodingChain {
    pub codec: PolarCodec,
    pub msg_len: usize,
}

impl CodingChain {
    pub fn new(b: usize, b_c: usize, b_p: usize) -> Result<CodingChain> {
        if b + CRC_BITS != b_c {
            return Err(Error::Config(format!(
                "B_c must equal B + {CRC_BITS} (got B={b}, B_c={b_c})"
            )));
        }
        Ok(CodingChain {
            codec: PolarCodec::new(b_p, b_c)?,
            msg_len: b,
        })
    }

    pub fn encode(&self, msg: &[u8]) -> Result<Vec<u8>> {
        if msg.len() != self.msg_len {
            return Err(Error::Size {
                expected: self.msg_len,
                got: msg.len(),
            });
        }
        self.codec.encode(&crc_encode(msg))
    }

    /// Positive LLR favors bit 0. Returns the message if some list path
    /// passes the CRC.
    pub fn decode(&self, llrs: &[f64], n_list: usize) -> Result<Option<Vec<u8>>> {
        Ok(self
            .codec
            .decode_scl(llrs, n_list, crc_check)?
            .map(|cw| cw[..self.msg_len].to_vec()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_bits<R: Rng>(rng: &mut R, n: usize) -> Vec<u8> {
        (0..n).map(|_| rng.gen_range(0..2u8)).collect()
    }

    #[test]
    fn crc_zero_message_has_zero_remainder() {
        let out = crc_encode(&vec![0u8; 96]);
        assert_eq!(out, vec![0u8; 107]);
        assert!(crc_check(&out));
    }

    #[test]
    fn crc_roundtrip_and_single_flip_detection() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10_000 {
            let msg = random_bits(&mut rng, 96);
            let mut cw = crc_encode(&msg);
            assert!(crc_check(&cw));
            let flip = rng.gen_range(0..cw.len());
            cw[flip] ^= 1;
            assert!(!crc_check(&cw));
        }
    }

    #[test]
    fn crc_detects_all_double_flips_and_nearly_all_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..10_000 {
            let msg = random_bits(&mut rng, 96);
            let mut cw = crc_encode(&msg);
            let (a, b) = (rng.gen_range(0..107), rng.gen_range(0..107));
            cw[a] ^= 1;
            if b != a {
                cw[b] ^= 1;
            }
            assert!(!crc_check(&cw));
        }
        // A few weight-3 patterns slip through (the code has weight-3
        // codewords at this length), but the fraction is under 0.1%.
        let mut undetected = 0;
        for _ in 0..10_000 {
            let msg = random_bits(&mut rng, 96);
            let mut cw = crc_encode(&msg);
            let mut positions = std::collections::BTreeSet::new();
            while positions.len() < 3 {
                positions.insert(rng.gen_range(0..cw.len()));
            }
            for p in positions {
                cw[p] ^= 1;
            }
            if crc_check(&cw) {
                undetected += 1;
            }
        }
        assert!(undetected <= 30, "undetected weight-3 count {undetected}");
    }

    #[test]
    fn polar_all_zero_and_linearity() {
        let codec = PolarCodec::new(126, 107).unwrap();
        assert_eq!(codec.encode(&vec![0u8; 107]).unwrap(), vec![0u8; 126]);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let x = random_bits(&mut rng, 107);
            let y = random_bits(&mut rng, 107);
            let xy: Vec<u8> = x.iter().zip(&y).map(|(a, b)| a ^ b).collect();
            let ex = codec.encode(&x).unwrap();
            let ey = codec.encode(&y).unwrap();
            let exy = codec.encode(&xy).unwrap();
            let sum: Vec<u8> = ex.iter().zip(&ey).map(|(a, b)| a ^ b).collect();
            assert_eq!(exy, sum);
        }
    }

    #[test]
    fn noiseless_roundtrip() {
        let chain = CodingChain::new(96, 107, 126).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for n_list in [1usize, 8] {
            for _ in 0..100 {
                let msg = random_bits(&mut rng, 96);
                let cw = chain.encode(&msg).unwrap();
                let llrs: Vec<f64> = cw.iter().map(|&b| if b == 0 { 20.0 } else { -20.0 }).collect();
                let got = chain.decode(&llrs, n_list).unwrap();
                assert_eq!(got.as_deref(), Some(&msg[..]));
            }
        }
    }

    #[test]
    fn incoherent_llrs_mostly_rejected() {
        // Pure-noise LLR vectors should rarely survive the CRC gate: with
        // a list of 8 the false-accept chance per block is about 8/2048.
        let chain = CodingChain::new(96, 107, 126).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let mut accepts = 0;
        for _ in 0..200 {
            let llrs: Vec<f64> = (0..126)
                .map(|_| 4.0 * rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            if chain.decode(&llrs, 8).unwrap().is_some() {
                accepts += 1;
            }
        }
        assert!(accepts <= 5, "too many false accepts: {accepts}");
    }

    #[test]
    fn bler_decreases_with_snr() {
        let chain = CodingChain::new(96, 107, 126).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let mut bler = Vec::new();
        for snr_db in [0.0f64, 2.0, 4.0] {
            let sigma2 = 1.0 / (2.0 * (107.0 / 126.0) * 10f64.powf(snr_db / 10.0));
            let mut errors = 0;
            let trials = 60;
            for _ in 0..trials {
                let msg = random_bits(&mut rng, 96);
                let cw = chain.encode(&msg).unwrap();
                let llrs: Vec<f64> = cw
                    .iter()
                    .map(|&b| {
                        let s = if b == 0 { 1.0 } else { -1.0 };
                        let noise: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal)
                            * sigma2.sqrt();
                        2.0 * (s + noise) / sigma2
                    })
                    .collect();
                if chain.decode(&llrs, 8).unwrap().as_deref() != Some(&msg[..]) {
                    errors += 1;
                }
            }
            bler.push(errors as f64 / trials as f64);
        }
        assert!(bler[0] >= bler[1] && bler[1] >= bler[2]);
        assert!(bler[2] < 0.2, "high-SNR BLER too large: {:?}", bler);
    }
}
