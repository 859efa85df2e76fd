//! Finite 0/1 words over integer intervals: restrictions of the B-free
//! configuration (exact, via sieve over the actual integers) and of
//! truncated generic configurations (via residue arithmetic at a finite
//! level), plus the shift action and agreement metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scheme::{InternalPoint, ModuliSet, Scheme};

/// Sieve segment size in positions. Purely an efficiency choice; results are
/// bit-identical to a single pass.
pub const SIEVE_BLOCK: usize = 1 << 16;

/// Where a patch's bits came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    /// Restriction of the integer orbit shifted by `base`: bit at `n` is the
    /// B-freeness of `base + n`.
    ExactIntegerOrbit { base: i64 },
    /// Restriction of a truncated generic configuration at the given level.
    TruncatedGeneric { level: usize },
    /// Coding of a circle point under an interval set.
    RotationCoding,
    /// Coordinate-wise product of two patches.
    Product,
}

impl Provenance {
    fn shifted(&self, g: i64) -> Provenance {
        match *self {
            Provenance::ExactIntegerOrbit { base } => {
                Provenance::ExactIntegerOrbit { base: base + g }
            }
            ref other => other.clone(),
        }
    }
}

/// A 0/1 word over an inclusive interval of integers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    start: i64,
    bits: Vec<bool>,
    provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct PatchFile {
    interval: [i64; 2],
    bits: String,
    provenance: Provenance,
}

impl Patch {
    pub fn new(start: i64, bits: Vec<bool>, provenance: Provenance) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::EmptyInterval(start, start - 1));
        }
        Ok(Patch {
            start,
            bits,
            provenance,
        })
    }

    /// Inclusive endpoints.
    pub fn interval(&self) -> (i64, i64) {
        (self.start, self.start + self.bits.len() as i64 - 1)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Bit at absolute position `n`, or `None` outside the interval.
    pub fn bit(&self, n: i64) -> Option<bool> {
        let idx = n.checked_sub(self.start)?;
        if idx < 0 {
            return None;
        }
        self.bits.get(idx as usize).copied()
    }

    /// Positions of the 1-bits, ascending.
    pub fn ones(&self) -> impl Iterator<Item = i64> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|&(_, &b)| b)
            .map(move |(i, _)| self.start + i as i64)
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// The shift action: bit of the result at `n + g` equals the bit of the
    /// input at `n`.
    pub fn shift(&self, g: i64) -> Patch {
        Patch {
            start: self.start + g,
            bits: self.bits.clone(),
            provenance: self.provenance.shifted(g),
        }
    }

    pub fn bits_string(&self) -> String {
        self.bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    pub fn from_bits_str(s: &str, start: i64, provenance: Provenance) -> Result<Self> {
        let bits: Result<Vec<bool>> = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::InvalidPatch(format!("bad bit character {other:?}"))),
            })
            .collect();
        Patch::new(start, bits?, provenance)
    }

    pub fn to_json(&self) -> String {
        let file = PatchFile {
            interval: [self.start, self.start + self.bits.len() as i64 - 1],
            bits: self.bits_string(),
            provenance: self.provenance.clone(),
        };
        serde_json::to_string(&file).expect("patch serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PatchFile =
            serde_json::from_str(text).map_err(|e| Error::InvalidPatch(e.to_string()))?;
        let patch = Patch::from_bits_str(&file.bits, file.interval[0], file.provenance)?;
        if patch.interval() != (file.interval[0], file.interval[1]) {
            return Err(Error::InvalidPatch(format!(
                "interval {:?} does not match {} bits",
                file.interval,
                patch.len()
            )));
        }
        Ok(patch)
    }
}

fn check_interval(interval: (i64, i64)) -> Result<(i64, i64)> {
    if interval.1 < interval.0 {
        return Err(Error::EmptyInterval(interval.0, interval.1));
    }
    Ok(interval)
}

/// B-freeness indicator of the integers `lo..=hi`: entry `i` is true iff
/// `lo + i` is divisible by no modulus of `b`. Zero is divisible by every
/// modulus, so its entry is false.
///
/// Only moduli up to the largest absolute value in range can divide a
/// nonzero member, so truncating the tail family there is exact. Segments
/// are sieved independently and concatenated in order, which keeps the
/// output identical for any worker count.
pub fn bfree_indicator(b: &ModuliSet, lo: i64, hi: i64) -> Result<Vec<bool>> {
    check_interval((lo, hi))?;
    let max_abs = lo.unsigned_abs().max(hi.unsigned_abs());
    let moduli = b.members_up_to(max_abs)?;
    let blocks: Vec<(i64, i64)> = {
        let mut out = Vec::new();
        let mut a = lo;
        while a <= hi {
            let end = (a + SIEVE_BLOCK as i64 - 1).min(hi);
            out.push((a, end));
            a = end + 1;
        }
        out
    };
    let parts: Vec<Vec<bool>> = blocks
        .par_iter()
        .map(|&(a, e)| sieve_segment(&moduli, a, e))
        .collect();
    Ok(parts.concat())
}

fn sieve_segment(moduli: &[u64], lo: i64, hi: i64) -> Vec<bool> {
    let len = (hi - lo + 1) as usize;
    let mut free = vec![true; len];
    if lo <= 0 && 0 <= hi {
        free[(-lo) as usize] = false;
    }
    for &q in moduli {
        let q = q as i64;
        // First multiple of q at or above lo.
        let mut v = lo + (-lo).rem_euclid(q);
        while v <= hi {
            free[(v - lo) as usize] = false;
            v += q;
        }
    }
    free
}

/// Restriction of the integer configuration shifted by `m`: bit at `n` is 1
/// iff `m + n` is B-free.
pub fn exact_patch(m: i64, interval: (i64, i64), b: &ModuliSet) -> Result<Patch> {
    let (lo, hi) = check_interval(interval)?;
    let bits = bfree_indicator(b, m + lo, m + hi)?;
    Patch::new(lo, bits, Provenance::ExactIntegerOrbit { base: m })
}

/// Restriction of the truncated generic configuration of `h`: bit at `n` is
/// 1 iff `(r_b + n) mod b` avoids the forbidden set for every modulus of
/// `h`'s level. Forbidden residues are struck out along arithmetic
/// progressions.
pub fn generic_patch(h: &InternalPoint, scheme: &Scheme, interval: (i64, i64)) -> Result<Patch> {
    let (lo, hi) = check_interval(interval)?;
    let len = (hi - lo + 1) as usize;
    let mut bits = vec![true; len];
    for (&b, &r) in h.moduli().iter().zip(h.residues()) {
        if !scheme.moduli().contains(b) {
            return Err(Error::LevelMismatch(b));
        }
        let bi = b as i64;
        for &f in scheme.forbidden(b) {
            // Positions with (r + n) mod b == f, i.e. n == f - r (mod b).
            let target = (f as i64 - r as i64).rem_euclid(bi);
            let mut n = lo + (target - lo).rem_euclid(bi);
            while n <= hi {
                bits[(n - lo) as usize] = false;
                n += bi;
            }
        }
    }
    Patch::new(
        lo,
        bits,
        Provenance::TruncatedGeneric { level: h.level() },
    )
}

/// Largest `L >= 0` such that both patches are defined and equal on
/// `[center-L, center+L]`; `-1` when they disagree at the center itself.
pub fn agreement_length(p1: &Patch, p2: &Patch, center: i64) -> Result<i64> {
    let b1 = p1.bit(center).ok_or(Error::CenterOutOfRange(center))?;
    let b2 = p2.bit(center).ok_or(Error::CenterOutOfRange(center))?;
    if b1 != b2 {
        return Ok(-1);
    }
    let mut l = 0i64;
    loop {
        let probe = l + 1;
        let left = match (p1.bit(center - probe), p2.bit(center - probe)) {
            (Some(a), Some(b)) => a == b,
            _ => false,
        };
        let right = match (p1.bit(center + probe), p2.bit(center + probe)) {
            (Some(a), Some(b)) => a == b,
            _ => false,
        };
        if left && right {
            l = probe;
        } else {
            return Ok(l);
        }
    }
}
