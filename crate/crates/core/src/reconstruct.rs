//! Recovering the internal point from a configuration patch. Each 1-bit at
//! position `n` certifies that `(r_b + n) mod b` avoids the forbidden set
//! for every modulus `b`, so per modulus the candidate residues shrink as
//! 1-bits accumulate. A 0-bit is a disjunction over moduli and carries no
//! per-modulus information; 0-bits enter only through the global
//! cross-check against the fully reconstructed point.

use num::BigUint;

use crate::arith::lcm_big;
use crate::error::{Error, Result};
use crate::patch::{generic_patch, Patch};
use crate::scheme::{InternalPoint, Scheme};

/// Hard ceiling on determining-radius searches.
pub const RADIUS_CAP_CEILING: u64 = 1_000_000;

/// Per-modulus reconstruction outcome.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModulusOutcome {
    /// Exactly one residue is consistent with the patch's 1-bits;
    /// `min_radius` is the smallest radius around the patch midpoint whose
    /// 1-bits already single it out.
    Determined { residue: u64, min_radius: u64 },
    /// Two or more residues remain.
    Ambiguous { candidates: Vec<u64> },
    /// No residue is consistent: the patch restricts no generic
    /// configuration at this level.
    Inconsistent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconstructionStatus {
    /// All moduli determined and the reconstructed point reproduces the
    /// patch bit for bit.
    Determined,
    /// At least one modulus keeps several candidates.
    Ambiguous,
    /// Some modulus has an empty candidate set.
    Inconsistent,
    /// Every modulus is determined but the resulting point fails to
    /// reproduce the patch (a 0-bit the point does not explain, or
    /// CRT-incompatible residues).
    InconsistentGlobal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    pub outcomes: Vec<(u64, ModulusOutcome)>,
    pub status: ReconstructionStatus,
    pub point: Option<InternalPoint>,
}

/// Reconstructs the internal point at `level` from a patch.
pub fn reconstruct(patch: &Patch, level: &[u64], scheme: &Scheme) -> Result<ReconstructionResult> {
    for &b in level {
        if !scheme.moduli().contains(b) {
            return Err(Error::LevelMismatch(b));
        }
    }
    let (lo, hi) = patch.interval();
    let center = (lo + hi).div_euclid(2);
    let ones: Vec<i64> = patch.ones().collect();

    let mut outcomes = Vec::with_capacity(level.len());
    let mut inconsistent = false;
    let mut ambiguous = false;
    for &b in level {
        let outcome = per_modulus(b, scheme.forbidden(b), &ones, center);
        match &outcome {
            ModulusOutcome::Inconsistent => inconsistent = true,
            ModulusOutcome::Ambiguous { .. } => ambiguous = true,
            ModulusOutcome::Determined { .. } => {}
        }
        outcomes.push((b, outcome));
    }

    if inconsistent {
        return Ok(ReconstructionResult {
            outcomes,
            status: ReconstructionStatus::Inconsistent,
            point: None,
        });
    }
    if ambiguous {
        return Ok(ReconstructionResult {
            outcomes,
            status: ReconstructionStatus::Ambiguous,
            point: None,
        });
    }

    let residues: Vec<u64> = outcomes
        .iter()
        .map(|(_, o)| match o {
            ModulusOutcome::Determined { residue, .. } => *residue,
            _ => unreachable!("all determined"),
        })
        .collect();
    // Determined residues can still be jointly impossible (CRT) or fail to
    // explain some 0-bit; both mean the patch is no generic restriction.
    let point = match InternalPoint::new(level.to_vec(), residues) {
        Ok(p) => p,
        Err(_) => {
            return Ok(ReconstructionResult {
                outcomes,
                status: ReconstructionStatus::InconsistentGlobal,
                point: None,
            })
        }
    };
    let replay = generic_patch(&point, scheme, patch.interval())?;
    if replay.bits_string() != patch.bits_string() {
        return Ok(ReconstructionResult {
            outcomes,
            status: ReconstructionStatus::InconsistentGlobal,
            point: None,
        });
    }
    Ok(ReconstructionResult {
        outcomes,
        status: ReconstructionStatus::Determined,
        point: Some(point),
    })
}

fn per_modulus(b: u64, forbidden: &[u64], ones: &[i64], center: i64) -> ModulusOutcome {
    let mut alive = vec![true; b as usize];
    let mut count = b;
    let mut min_radius = 0u64;

    // Constraints ordered by distance from the midpoint give the minimal
    // determining radius for free.
    let mut ordered: Vec<i64> = ones.to_vec();
    ordered.sort_by_key(|&n| ((n - center).unsigned_abs(), n));

    for &n in &ordered {
        for &f in forbidden {
            let r = (f as i64 - n).rem_euclid(b as i64) as u64;
            if alive[r as usize] {
                alive[r as usize] = false;
                count -= 1;
                if count == 1 {
                    min_radius = (n - center).unsigned_abs();
                }
            }
        }
        if count == 0 {
            return ModulusOutcome::Inconsistent;
        }
    }

    match count {
        0 => ModulusOutcome::Inconsistent,
        1 => {
            let residue = alive.iter().position(|&a| a).unwrap() as u64;
            ModulusOutcome::Determined {
                residue,
                min_radius,
            }
        }
        _ => ModulusOutcome::Ambiguous {
            candidates: (0..b).filter(|&r| alive[r as usize]).collect(),
        },
    }
}

/// Smallest radius `R` such that the patch of `h` on `[-R, R]` determines
/// the residue at `modulus`; `None` when the cap (16 times the level lcm,
/// at most `RADIUS_CAP_CEILING`) is exhausted first.
pub fn determining_radius(h: &InternalPoint, scheme: &Scheme, modulus: u64) -> Result<Option<u64>> {
    let lcm = lcm_big(h.moduli());
    let cap = (lcm * BigUint::from(16u64))
        .min(BigUint::from(RADIUS_CAP_CEILING))
        .to_u64_digits()
        .first()
        .copied()
        .unwrap_or(RADIUS_CAP_CEILING);
    determining_radius_with_cap(h, scheme, modulus, cap)
}

pub fn determining_radius_with_cap(
    h: &InternalPoint,
    scheme: &Scheme,
    modulus: u64,
    cap: u64,
) -> Result<Option<u64>> {
    let idx = h
        .moduli()
        .iter()
        .position(|&b| b == modulus)
        .ok_or(Error::LevelMismatch(modulus))?;
    for &b in h.moduli() {
        if !scheme.moduli().contains(b) {
            return Err(Error::LevelMismatch(b));
        }
    }
    let forbidden = scheme.forbidden(modulus);
    if forbidden.is_empty() {
        // No residue is ever excluded at this modulus.
        return Ok(None);
    }

    let b = h.moduli()[idx] as i64;
    let constraints: Vec<(i64, i64, Vec<u64>)> = h
        .moduli()
        .iter()
        .zip(h.residues())
        .map(|(&m, &r)| (m as i64, r as i64, scheme.forbidden(m).to_vec()))
        .collect();

    let config_bit = |n: i64| -> bool {
        constraints
            .iter()
            .all(|(m, r, f)| !f.contains(&((r + n).rem_euclid(*m) as u64)))
    };

    let mut alive = vec![true; b as usize];
    let mut count = b as u64;
    let mut apply = |n: i64, alive: &mut Vec<bool>, count: &mut u64| {
        if !config_bit(n) {
            return;
        }
        for &f in forbidden {
            let r = (f as i64 - n).rem_euclid(b) as usize;
            if alive[r] {
                alive[r] = false;
                *count -= 1;
            }
        }
    };

    for radius in 0..=cap {
        if radius == 0 {
            apply(0, &mut alive, &mut count);
        } else {
            apply(-(radius as i64), &mut alive, &mut count);
            apply(radius as i64, &mut alive, &mut count);
        }
        if count <= 1 {
            debug_assert_eq!(count, 1, "the true residue always survives");
            return Ok(Some(radius));
        }
    }
    Ok(None)
}

/// Outcome of verifying `reconstruct(shift(patch, g)) = h + Delta(g)` over a
/// range of shifts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EquivarianceReport {
    pub base_determined: bool,
    pub all_pass: bool,
    pub failures: Vec<i64>,
    pub checked: (i64, i64),
}

pub fn equivariance_check(
    h: &InternalPoint,
    scheme: &Scheme,
    g_range: (i64, i64),
    interval: (i64, i64),
) -> Result<EquivarianceReport> {
    let base = generic_patch(h, scheme, interval)?;
    let base_rec = reconstruct(&base, h.moduli(), scheme)?;
    let base_determined = base_rec.status == ReconstructionStatus::Determined
        && base_rec.point.as_ref() == Some(h);

    let mut failures = Vec::new();
    for g in g_range.0..=g_range.1 {
        let shifted = base.shift(g);
        let rec = reconstruct(&shifted, h.moduli(), scheme)?;
        let expected = h.translate(g);
        let pass = rec.status == ReconstructionStatus::Determined
            && rec.point.as_ref() == Some(&expected);
        if !pass {
            failures.push(g);
        }
    }
    Ok(EquivarianceReport {
        base_determined,
        all_pass: base_determined && failures.is_empty(),
        failures,
        checked: g_range,
    })
}
