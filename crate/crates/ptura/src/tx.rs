//! Transmit chain: message bits to one Grassmannian symbol per segment.
//! The receiver reuses it to regenerate symbols for decoded messages.

use crate::coding::CodingChain;
use crate::config::{BitAllocation, SystemConfig};
use crate::error::{Error, Result};
use crate::grassmann::{modulate_segment, GrassmannSymbol};

#[derive(Debug, Clone)]
pub struct Transmitter {
    pub chain: CodingChain,
    pub alloc: BitAllocation,
    seg_budgets: Vec<usize>,
}

impl Transmitter {
    pub fn new(cfg: &SystemConfig) -> Result<Transmitter> {
        let chain = CodingChain::new(cfg.b, cfg.b_c, cfg.b_p)?;
        let alloc = BitAllocation::from_config(cfg)?;
        Ok(Transmitter {
            chain,
            alloc,
            seg_budgets: cfg.b_p_l.clone(),
        })
    }

    /// Splits a full codeword into per-segment bit slices.
    pub fn split_codeword<'a>(&self, cw: &'a [u8]) -> Result<Vec<&'a [u8]>> {
        let total: usize = self.seg_budgets.iter().sum();
        if cw.len() != total {
            return Err(Error::Size {
                expected: total,
                got: cw.len(),
            });
        }
        let mut out = Vec::with_capacity(self.seg_budgets.len());
        let mut start = 0;
        for &n in &self.seg_budgets {
            out.push(&cw[start..start + n]);
            start += n;
        }
        Ok(out)
    }

    /// CRC, polar encode, segment, and modulate.
    pub fn transmit(&self, msg: &[u8]) -> Result<Vec<GrassmannSymbol>> {
        let cw = self.chain.encode(msg)?;
        self.modulate_codeword(&cw)
    }

    pub fn modulate_codeword(&self, cw: &[u8]) -> Result<Vec<GrassmannSymbol>> {
        self.split_codeword(cw)?
            .iter()
            .zip(&self.alloc.segments)
            .map(|(bits, seg)| modulate_segment(bits, seg))
            .collect()
    }
}
