//! Integer arithmetic coder driven by per-step model distributions.
//!
//! A 32-bit interval coder with underflow (pending-bit) handling. Each step's
//! probabilities are quantized to integer frequencies with total at most
//! `2^24`; every token with positive probability keeps a frequency of at
//! least one, so anything the model deems possible stays encodable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PRECISION: u32 = 32;
const TOP: u64 = (1 << PRECISION) - 1;
const HALF: u64 = 1 << (PRECISION - 1);
const QUARTER: u64 = 1 << (PRECISION - 2);
pub const FREQ_TOTAL: u64 = 1 << 24;

/// Cumulative frequencies, `cum[i]..cum[i + 1]` for token `i`.
fn quantize(probs: &[f64]) -> Result<Vec<u64>> {
    let sum: f64 = probs.iter().sum();
    if probs.is_empty() || probs.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Domain(format!(
            "probability vector must be finite, non-negative and sum to 1 (sum {sum})"
        )));
    }
    let k = probs.len() as u64;
    if k >= FREQ_TOTAL {
        return Err(Error::Domain("alphabet too large for the coder".into()));
    }
    let scale = (FREQ_TOTAL - k) as f64;
    let mut cum = Vec::with_capacity(probs.len() + 1);
    cum.push(0u64);
    let mut acc = 0u64;
    for &p in probs {
        if p > 0.0 {
            acc += (p * scale).floor() as u64 + 1;
        }
        cum.push(acc);
    }
    Ok(cum)
}

#[derive(Debug, Default)]
struct BitWriter {
    bytes: Vec<u8>,
    nbits: u64,
}

impl BitWriter {
    fn push(&mut self, bit: bool) {
        if self.nbits % 8 == 0 {
            self.bytes.push(0);
        }
        if bit {
            *self.bytes.last_mut().unwrap() |= 0x80 >> (self.nbits % 8);
        }
        self.nbits += 1;
    }

    fn push_with_pending(&mut self, bit: bool, pending: &mut u64) {
        self.push(bit);
        for _ in 0..*pending {
            self.push(!bit);
        }
        *pending = 0;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Encoded {
    pub bytes: Vec<u8>,
    pub nbits: u64,
}

pub fn encode(probs: &[Vec<f64>], tokens: &[u32]) -> Result<Encoded> {
    if probs.len() != tokens.len() {
        return Err(Error::Contract("one distribution per token is required".into()));
    }
    let (mut low, mut high) = (0u64, TOP);
    let mut pending = 0u64;
    let mut out = BitWriter::default();
    for (p, &tok) in probs.iter().zip(tokens) {
        let cum = quantize(p)?;
        let t = tok as usize;
        if t >= p.len() || cum[t + 1] == cum[t] {
            return Err(Error::Coder(format!("token {tok} has zero probability")));
        }
        let total = *cum.last().unwrap();
        let range = high - low + 1;
        high = low + range * cum[t + 1] / total - 1;
        low += range * cum[t] / total;
        loop {
            if high < HALF {
                out.push_with_pending(false, &mut pending);
            } else if low >= HALF {
                out.push_with_pending(true, &mut pending);
                low -= HALF;
                high -= HALF;
            } else if low >= QUARTER && high < HALF + QUARTER {
                pending += 1;
                low -= QUARTER;
                high -= QUARTER;
            } else {
                break;
            }
            low <<= 1;
            high = (high << 1) | 1;
        }
    }
    pending += 1;
    out.push_with_pending(low >= QUARTER, &mut pending);
    Ok(Encoded {
        bytes: out.bytes,
        nbits: out.nbits,
    })
}

pub fn decode(enc: &Encoded, probs: &[Vec<f64>]) -> Result<Vec<u32>> {
    let bit = |i: u64| -> u64 {
        if i < enc.nbits {
            ((enc.bytes[(i / 8) as usize] >> (7 - i % 8)) & 1) as u64
        } else {
            0
        }
    };
    let mut pos = 0u64;
    let mut value = 0u64;
    for _ in 0..PRECISION {
        value = (value << 1) | bit(pos);
        pos += 1;
    }
    let (mut low, mut high) = (0u64, TOP);
    let mut out = Vec::with_capacity(probs.len());
    for p in probs {
        let cum = quantize(p)?;
        let total = *cum.last().unwrap();
        let range = high - low + 1;
        let scaled = ((value - low + 1) * total - 1) / range;
        // first symbol whose upper cumulative bound exceeds `scaled`
        let t = cum[1..].partition_point(|&c| c <= scaled);
        if t >= p.len() {
            return Err(Error::Coder("decoder ran past the alphabet".into()));
        }
        out.push(t as u32);
        high = low + range * cum[t + 1] / total - 1;
        low += range * cum[t] / total;
        loop {
            if high < HALF {
            } else if low >= HALF {
                value -= HALF;
                low -= HALF;
                high -= HALF;
            } else if low >= QUARTER && high < HALF + QUARTER {
                value -= QUARTER;
                low -= QUARTER;
                high -= QUARTER;
            } else {
                break;
            }
            low <<= 1;
            high = (high << 1) | 1;
            value = (value << 1) | bit(pos);
            pos += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodeLength {
    /// Bits actually emitted.
    pub bits: u64,
    /// `sum_t -log2 p_t(x_t)` under the unquantized distributions.
    pub ideal_bits: f64,
    pub tokens: usize,
}

/// Encodes, decodes and checks the round trip; errors with
/// [`Error::Coder`] if decoding does not reproduce the input.
pub fn arithmetic_code_length(probs: &[Vec<f64>], tokens: &[u32]) -> Result<CodeLength> {
    let enc = encode(probs, tokens)?;
    let back = decode(&enc, probs)?;
    if back != tokens {
        return Err(Error::Coder("decoded tokens differ from the input".into()));
    }
    let ideal_bits = probs
        .iter()
        .zip(tokens)
        .map(|(p, &t)| -p[t as usize].log2())
        .sum();
    Ok(CodeLength {
        bits: enc.nbits,
        ideal_bits,
        tokens: tokens.len(),
    })
}
