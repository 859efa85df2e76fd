//! Cylinder frequencies of the invariant measure carried by the truncated
//! internal group: exact rationals through two independent routes
//! (inclusion-exclusion over coprime moduli, and counting over one lcm
//! period), truncation tail bounds for infinite modulus families, and
//! empirical Birkhoff counts along the integer orbit.

use std::collections::BTreeMap;

use num::{BigInt, BigRational, BigUint, One, ToPrimitive, Zero};
use rayon::prelude::*;

use crate::arith::{lcm_big, lcm_u64};
use crate::error::{Error, Result};
use crate::patch::bfree_indicator;
use crate::scheme::{pairwise_coprime, ModuliSet, Scheme, DEFAULT_ENUM_BOUND};

/// Cap on the number of zero-constrained positions in the
/// inclusion-exclusion route (2^cap subset terms).
pub const DEFAULT_ZEROS_CAP: usize = 20;

/// A finite map `position -> required bit`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternQuery {
    req: BTreeMap<i64, bool>,
}

impl PatternQuery {
    pub fn new(pairs: &[(i64, bool)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyPattern);
        }
        let mut req = BTreeMap::new();
        for &(pos, bit) in pairs {
            if req.insert(pos, bit).is_some() {
                return Err(Error::DuplicatePosition(pos));
            }
        }
        Ok(PatternQuery { req })
    }

    /// Consecutive bits starting at `start`, e.g. `"101"` at 0 is
    /// `{0->1, 1->0, 2->1}`.
    pub fn from_word(word: &str, start: i64) -> Result<Self> {
        let pairs: Result<Vec<(i64, bool)>> = word
            .chars()
            .enumerate()
            .map(|(i, c)| match c {
                '0' => Ok((start + i as i64, false)),
                '1' => Ok((start + i as i64, true)),
                other => Err(Error::InvalidPatch(format!("bad bit character {other:?}"))),
            })
            .collect();
        PatternQuery::new(&pairs?)
    }

    pub fn positions(&self) -> impl Iterator<Item = (i64, bool)> + '_ {
        self.req.iter().map(|(&p, &b)| (p, b))
    }

    pub fn ones(&self) -> Vec<i64> {
        self.req.iter().filter(|&(_, &b)| b).map(|(&p, _)| p).collect()
    }

    pub fn zeros(&self) -> Vec<i64> {
        self.req.iter().filter(|&(_, &b)| !b).map(|(&p, _)| p).collect()
    }

    /// Inclusive span endpoints.
    pub fn span(&self) -> (i64, i64) {
        let lo = *self.req.keys().next().expect("nonempty");
        let hi = *self.req.keys().next_back().expect("nonempty");
        (lo, hi)
    }

    pub fn span_len(&self) -> u64 {
        let (lo, hi) = self.span();
        (hi - lo + 1) as u64
    }

    pub fn shifted(&self, g: i64) -> Self {
        PatternQuery {
            req: self.req.iter().map(|(&p, &b)| (p + g, b)).collect(),
        }
    }

    pub fn with_position(&self, pos: i64, bit: bool) -> Result<Self> {
        let mut pairs: Vec<(i64, bool)> = self.positions().collect();
        pairs.push((pos, bit));
        PatternQuery::new(&pairs)
    }

    pub fn len(&self) -> usize {
        self.req.len()
    }

    pub fn is_empty(&self) -> bool {
        self.req.is_empty()
    }
}

/// An exact frequency together with the truncation error bound that applies
/// to it (`None` when no summable bound exists for the tail family).
#[derive(Debug, Clone, PartialEq)]
pub struct CylinderFrequency {
    pub exact: BigRational,
    pub tail_error: Option<f64>,
    pub level: Vec<u64>,
}

impl CylinderFrequency {
    /// `[exact - tail_error, exact + tail_error]` clipped to `[0, 1]`;
    /// brackets the untruncated frequency when the bound applies.
    pub fn bracket(&self) -> (f64, f64) {
        let x = self.exact.to_f64().unwrap_or(0.0);
        let e = self.tail_error.unwrap_or(0.0);
        ((x - e).max(0.0), (x + e).min(1.0))
    }
}

/// Residue bitset for one modulus.
#[derive(Clone)]
struct ResidueMask {
    words: Vec<u64>,
    modulus: u64,
}

impl ResidueMask {
    fn full(modulus: u64) -> Self {
        let n = modulus as usize;
        let mut words = vec![u64::MAX; n.div_ceil(64)];
        let rem = n % 64;
        if rem != 0 {
            *words.last_mut().unwrap() = (1u64 << rem) - 1;
        }
        ResidueMask { words, modulus }
    }

    fn clear(&mut self, r: u64) {
        self.words[(r / 64) as usize] &= !(1u64 << (r % 64));
    }

    fn intersect(&mut self, other: &ResidueMask) {
        for (w, o) in self.words.iter_mut().zip(&other.words) {
            *w &= o;
        }
    }

    fn count(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }
}

/// Mask of residues `r` with `(r + n) mod b` outside the forbidden set.
fn allowed_mask(b: u64, forbidden: &[u64], n: i64) -> ResidueMask {
    let mut mask = ResidueMask::full(b);
    for &f in forbidden {
        mask.clear((f as i64 - n).rem_euclid(b as i64) as u64);
    }
    mask
}

/// Exact frequency by inclusion-exclusion over the zero-constrained
/// positions; valid because coprime coordinates are Haar-independent:
///
/// `freq = sum over S of zeros of (-1)^|S| prod_b p_b(ones + S)`,
/// `p_b(T) = #{r : (r+n) mod b not forbidden for all n in T} / b`.
pub fn frequency_inclusion_exclusion(
    q: &PatternQuery,
    level: &[u64],
    scheme: &Scheme,
) -> Result<BigRational> {
    frequency_inclusion_exclusion_with_cap(q, level, scheme, DEFAULT_ZEROS_CAP)
}

pub fn frequency_inclusion_exclusion_with_cap(
    q: &PatternQuery,
    level: &[u64],
    scheme: &Scheme,
    zeros_cap: usize,
) -> Result<BigRational> {
    if !pairwise_coprime(level) {
        return Err(Error::RequiresCoprime);
    }
    for &b in level {
        if !scheme.moduli().contains(b) {
            return Err(Error::LevelMismatch(b));
        }
    }
    let zeros = q.zeros();
    if zeros.len() > zeros_cap {
        return Err(Error::ExponentialBlowup {
            zeros: zeros.len(),
            cap: zeros_cap,
        });
    }

    // Survivor masks after the one-constraints, then a DFS over the zero
    // positions adding constraints one at a time.
    let mut base: Vec<ResidueMask> = level.iter().map(|&b| ResidueMask::full(b)).collect();
    for n in q.ones() {
        for (mask, &b) in base.iter_mut().zip(level) {
            mask.intersect(&allowed_mask(b, scheme.forbidden(b), n));
        }
    }

    let mut acc = BigInt::zero();
    dfs_subsets(&zeros, 0, &base, level, scheme, false, &mut acc);

    let mut den = BigInt::one();
    for &b in level {
        den *= BigInt::from(b);
    }
    if den.is_zero() {
        den = BigInt::one();
    }
    Ok(BigRational::new(acc, den))
}

fn dfs_subsets(
    zeros: &[i64],
    idx: usize,
    masks: &[ResidueMask],
    level: &[u64],
    scheme: &Scheme,
    odd: bool,
    acc: &mut BigInt,
) {
    if idx == zeros.len() {
        let mut term = BigUint::one();
        for mask in masks {
            term *= BigUint::from(mask.count());
        }
        let term = BigInt::from(term);
        if odd {
            *acc -= term;
        } else {
            *acc += term;
        }
        return;
    }
    // Exclude zeros[idx].
    dfs_subsets(zeros, idx + 1, masks, level, scheme, odd, acc);
    // Include it: constrain every modulus with its allowed mask.
    let mut next: Vec<ResidueMask> = masks.to_vec();
    for (mask, &b) in next.iter_mut().zip(level) {
        mask.intersect(&allowed_mask(b, scheme.forbidden(b), zeros[idx]));
    }
    dfs_subsets(zeros, idx + 1, &next, level, scheme, !odd, acc);
}

/// Exact frequency by direct counting over one period of length
/// `lcm(level)`, which must stay within `DEFAULT_ENUM_BOUND`.
pub fn frequency_enumeration(
    q: &PatternQuery,
    level: &[u64],
    scheme: &Scheme,
) -> Result<BigRational> {
    frequency_enumeration_with_bound(q, level, scheme, DEFAULT_ENUM_BOUND)
}

pub fn frequency_enumeration_with_bound(
    q: &PatternQuery,
    level: &[u64],
    scheme: &Scheme,
    bound: u64,
) -> Result<BigRational> {
    for &b in level {
        if !scheme.moduli().contains(b) {
            return Err(Error::LevelMismatch(b));
        }
    }
    let lcm = match lcm_u64(level) {
        Some(l) if l <= bound => l,
        _ => {
            return Err(Error::LcmOverflow {
                lcm: lcm_big(level).to_string(),
                bound,
            })
        }
    };
    // Indicator of the level-truncated configuration over one period.
    let mut free = vec![true; lcm as usize];
    for &b in level {
        for &f in scheme.forbidden(b) {
            let mut x = f;
            while x < lcm {
                free[x as usize] = false;
                x += b;
            }
        }
    }
    let positions: Vec<(i64, bool)> = q.positions().collect();
    let lcm_i = lcm as i64;
    let mut count = 0u64;
    for n0 in 0..lcm_i {
        if positions
            .iter()
            .all(|&(p, bit)| free[(n0 + p).rem_euclid(lcm_i) as usize] == bit)
        {
            count += 1;
        }
    }
    Ok(BigRational::new(BigInt::from(count), BigInt::from(lcm)))
}

/// Exact cylinder frequency at a truncation level, dispatching to the
/// inclusion-exclusion route for coprime levels and to period counting
/// otherwise, with the applicable tail bound attached.
pub fn pattern_frequency_exact(
    q: &PatternQuery,
    level: &[u64],
    scheme: &Scheme,
) -> Result<CylinderFrequency> {
    let exact = if pairwise_coprime(level) {
        frequency_inclusion_exclusion(q, level, scheme)?
    } else {
        frequency_enumeration(q, level, scheme)?
    };
    let tail = match tail_error(q, scheme, level) {
        Ok(e) => Some(e),
        Err(Error::TailNotEnumerable(_)) => None,
        Err(other) => return Err(other),
    };
    Ok(CylinderFrequency {
        exact,
        tail_error: tail,
        level: level.to_vec(),
    })
}

/// Upper bound on the probability that a modulus missing from `level`
/// (explicit beyond the truncation, or a tail-family member) alters any
/// queried position: `span(q) * sum 1/b` over the missing moduli, with the
/// family part bounded analytically.
pub fn tail_error(q: &PatternQuery, scheme: &Scheme, level: &[u64]) -> Result<f64> {
    let span = q.span_len() as f64;
    let largest = level.last().copied().unwrap_or(0);
    let moduli = scheme.moduli();

    let mut per_modulus = 0.0f64;
    for &b in moduli.explicit() {
        if b > largest && !level.contains(&b) {
            per_modulus += scheme.forbidden(b).len() as f64 / b as f64;
        }
    }
    if let Some(family) = moduli.tail() {
        let family_bound = family.tail_sum_bound(largest).ok_or_else(|| {
            Error::TailNotEnumerable(format!(
                "family {} has no summable tail bound",
                family.name()
            ))
        })?;
        per_modulus += family_bound;
        // The analytic bound assumes one forbidden residue per member;
        // overridden family members beyond the level add their excess.
        for (&b, f) in scheme.window().overrides() {
            if b > largest && family.contains(b) && f.len() > 1 {
                per_modulus += (f.len() - 1) as f64 / b as f64;
            }
        }
    }
    Ok(span * per_modulus)
}

/// Number of `m in [1, n]` whose exact configuration matches the pattern,
/// i.e. `m + p` is B-free exactly at the 1-positions. Streaming sieve over
/// the value range; deterministic for any worker count.
pub fn empirical_count(q: &PatternQuery, b: &ModuliSet, n: u64) -> Result<u64> {
    assert!(n >= 1, "empirical count needs n >= 1");
    let (lo, hi) = q.span();
    let free = bfree_indicator(b, 1 + lo, n as i64 + hi)?;
    let positions: Vec<(i64, bool)> = q.positions().collect();
    let base = 1 + lo;
    let count = (1..=n as i64)
        .into_par_iter()
        .filter(|&m| {
            positions
                .iter()
                .all(|&(p, bit)| free[(m + p - base) as usize] == bit)
        })
        .count();
    Ok(count as u64)
}

/// Birkhoff frequency of the pattern along the integer orbit.
pub fn empirical_frequency(q: &PatternQuery, b: &ModuliSet, n: u64) -> Result<f64> {
    Ok(empirical_count(q, b, n)? as f64 / n as f64)
}

/// Exact truncated density of the configuration's 1s, with tail bound and
/// an empirical Birkhoff estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityReport {
    pub exact: BigRational,
    pub tail_error: Option<f64>,
    pub empirical: f64,
    pub n: u64,
    pub level: Vec<u64>,
}

pub fn density(scheme: &Scheme, level: &[u64], n: u64) -> Result<DensityReport> {
    let q = PatternQuery::new(&[(0, true)]).expect("single position");
    let freq = if level.is_empty() {
        CylinderFrequency {
            exact: BigRational::one(),
            tail_error: match tail_error(&q, scheme, level) {
                Ok(e) => Some(e),
                Err(Error::TailNotEnumerable(_)) => None,
                Err(other) => return Err(other),
            },
            level: Vec::new(),
        }
    } else {
        pattern_frequency_exact(&q, level, scheme)?
    };
    let empirical = empirical_frequency(&q, scheme.moduli(), n)?;
    Ok(DensityReport {
        exact: freq.exact,
        tail_error: freq.tail_error,
        empirical,
        n,
        level: level.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheme::TailFamily;

    fn scheme(moduli: &[u64]) -> Scheme {
        Scheme::with_default_window(ModuliSet::validate(moduli, None).unwrap())
    }

    fn rational(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn single_position_frequency() {
        let s = scheme(&[2, 3]);
        let q = PatternQuery::new(&[(0, true)]).unwrap();
        assert_eq!(
            frequency_inclusion_exclusion(&q, &[2, 3], &s).unwrap(),
            rational(1, 3)
        );
        assert_eq!(
            frequency_enumeration(&q, &[2, 3], &s).unwrap(),
            rational(1, 3)
        );
    }

    #[test]
    fn consecutive_ones_impossible_mod_two() {
        let s = scheme(&[2, 3]);
        let q = PatternQuery::new(&[(0, true), (1, true)]).unwrap();
        assert_eq!(
            pattern_frequency_exact(&q, &[2, 3], &s).unwrap().exact,
            rational(0, 1)
        );
    }

    #[test]
    fn parity_alternation() {
        let s = scheme(&[2]);
        let q = PatternQuery::new(&[(0, true), (1, false)]).unwrap();
        assert_eq!(
            frequency_inclusion_exclusion(&q, &[2], &s).unwrap(),
            rational(1, 2)
        );
    }

    #[test]
    fn routes_agree_on_patterns_up_to_length_six() {
        for moduli in [vec![2u64, 3], vec![2, 3, 5], vec![3, 4, 5], vec![2, 7, 9]] {
            let s = scheme(&moduli);
            for len in 1..=6usize {
                for word in 0..(1u32 << len) {
                    let pairs: Vec<(i64, bool)> = (0..len)
                        .map(|i| (i as i64 - 2, word >> i & 1 == 1))
                        .collect();
                    let q = PatternQuery::new(&pairs).unwrap();
                    let a = frequency_inclusion_exclusion(&q, &moduli, &s).unwrap();
                    let b = frequency_enumeration(&q, &moduli, &s).unwrap();
                    assert_eq!(a, b, "moduli {moduli:?} len {len} word {word:b}");
                }
            }
        }
    }

    #[test]
    fn non_coprime_levels_use_enumeration() {
        let s = scheme(&[2, 4]);
        let q = PatternQuery::new(&[(0, true)]).unwrap();
        assert_eq!(
            frequency_inclusion_exclusion(&q, &[2, 4], &s),
            Err(Error::RequiresCoprime)
        );
        // Survivors mod 4 of "odd and not 0 mod 4": residues 1 and 3.
        assert_eq!(
            pattern_frequency_exact(&q, &[2, 4], &s).unwrap().exact,
            rational(1, 2)
        );
    }

    #[test]
    fn zeros_cap_is_enforced() {
        let s = scheme(&[2]);
        let pairs: Vec<(i64, bool)> = (0..25).map(|i| (i, false)).collect();
        let q = PatternQuery::new(&pairs).unwrap();
        assert_eq!(
            frequency_inclusion_exclusion(&q, &[2], &s),
            Err(Error::ExponentialBlowup { zeros: 25, cap: 20 })
        );
        assert!(frequency_inclusion_exclusion_with_cap(&q, &[2], &s, 25).is_ok());
    }

    #[test]
    fn additivity_in_an_unconstrained_position() {
        let s = scheme(&[2, 3, 5]);
        let level = [2u64, 3, 5];
        let q = PatternQuery::new(&[(0, true), (2, false)]).unwrap();
        let whole = pattern_frequency_exact(&q, &level, &s).unwrap().exact;
        let q0 = q.with_position(1, false).unwrap();
        let q1 = q.with_position(1, true).unwrap();
        let split = pattern_frequency_exact(&q0, &level, &s).unwrap().exact
            + pattern_frequency_exact(&q1, &level, &s).unwrap().exact;
        assert_eq!(whole, split);
    }

    #[test]
    fn shift_invariance() {
        let s = scheme(&[2, 3, 5]);
        let level = [2u64, 3, 5];
        let q = PatternQuery::new(&[(-1, true), (1, false), (4, true)]).unwrap();
        let base = pattern_frequency_exact(&q, &level, &s).unwrap().exact;
        for g in [-17i64, -1, 1, 9, 30] {
            let shifted = pattern_frequency_exact(&q.shifted(g), &level, &s)
                .unwrap()
                .exact;
            assert_eq!(base, shifted, "g={g}");
        }
    }

    #[test]
    fn frequency_bounded_by_single_position_minimum() {
        let s = scheme(&[2, 3, 5]);
        let level = [2u64, 3, 5];
        let q = PatternQuery::new(&[(0, true), (3, true), (5, false)]).unwrap();
        let joint = pattern_frequency_exact(&q, &level, &s).unwrap().exact;
        for (p, bit) in q.positions() {
            let single = PatternQuery::new(&[(p, bit)]).unwrap();
            let f = pattern_frequency_exact(&single, &level, &s).unwrap().exact;
            assert!(joint <= f);
        }
    }

    #[test]
    fn tail_error_examples() {
        // Finite explicit sets truncated at full level have no tail at all.
        let s = scheme(&[2, 3, 5]);
        let q = PatternQuery::new(&[(0, true)]).unwrap();
        assert_eq!(tail_error(&q, &s, &[2, 3, 5]).unwrap(), 0.0);
        // Truncating a finite set counts the skipped explicit members.
        assert_eq!(tail_error(&q, &s, &[2, 3]).unwrap(), 1.0 / 5.0);

        // Prime squares truncated at 97^2: bound 1/100 per spanned position.
        let b = ModuliSet::validate(&[], Some(TailFamily::PrimeSquares)).unwrap();
        let s = Scheme::with_default_window(b);
        let level = s.moduli().level_moduli(25).unwrap();
        assert_eq!(*level.last().unwrap(), 97 * 97);
        let e1 = tail_error(&q, &s, &level).unwrap();
        assert_eq!(e1, 0.01);
        let q2 = PatternQuery::new(&[(0, true), (1, false)]).unwrap();
        assert_eq!(tail_error(&q2, &s, &level).unwrap(), 2.0 * e1);

        let b = ModuliSet::validate(&[], Some(TailFamily::Primes)).unwrap();
        let s = Scheme::with_default_window(b);
        assert!(matches!(
            tail_error(&q, &s, &[2, 3]),
            Err(Error::TailNotEnumerable(_))
        ));
    }

    #[test]
    fn empirical_parity_is_exact() {
        let b = ModuliSet::validate(&[2], None).unwrap();
        let q = PatternQuery::new(&[(0, true)]).unwrap();
        assert_eq!(empirical_frequency(&q, &b, 1_000_000).unwrap(), 0.5);
    }

    #[test]
    fn empirical_equals_exact_on_full_periods() {
        let b = ModuliSet::validate(&[2, 3], None).unwrap();
        let s = Scheme::with_default_window(b.clone());
        let q = PatternQuery::new(&[(0, true)]).unwrap();
        let n = 600_000u64;
        let count = empirical_count(&q, &b, n).unwrap();
        assert_eq!(count, n / 3);
        let exact = pattern_frequency_exact(&q, &[2, 3], &s).unwrap().exact;
        assert_eq!(exact, rational(1, 3));
    }

    #[test]
    fn empirical_error_bounded_by_period_over_n() {
        let b = ModuliSet::validate(&[2, 3, 5], None).unwrap();
        let s = Scheme::with_default_window(b.clone());
        let n = 10_007u64; // deliberately not a multiple of 30
        for len in 1..=4usize {
            for word in 0..(1u32 << len) {
                let pairs: Vec<(i64, bool)> =
                    (0..len).map(|i| (i as i64, word >> i & 1 == 1)).collect();
                let q = PatternQuery::new(&pairs).unwrap();
                let emp = empirical_frequency(&q, &b, n).unwrap();
                let exact = pattern_frequency_exact(&q, &[2, 3, 5], &s)
                    .unwrap()
                    .exact
                    .to_f64()
                    .unwrap();
                assert!(
                    (emp - exact).abs() <= 30.0 / n as f64 + 1e-12,
                    "len {len} word {word:b}: {emp} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn density_examples() {
        let s = scheme(&[2, 3, 5]);
        let report = density(&s, &[2, 3, 5], 30_000).unwrap();
        assert_eq!(report.exact, rational(4, 15));
        assert_eq!(report.empirical, 4.0 / 15.0);

        // Truncation level zero constrains nothing.
        let report = density(&s, &[], 100).unwrap();
        assert_eq!(report.exact, rational(1, 1));
    }

    #[test]
    fn squarefree_partial_products_decrease_toward_limit() {
        let b = ModuliSet::validate(&[], Some(TailFamily::PrimeSquares)).unwrap();
        let s = Scheme::with_default_window(b);
        let q = PatternQuery::new(&[(0, true)]).unwrap();
        let target = 6.0 / (std::f64::consts::PI * std::f64::consts::PI);
        let mut prev = 1.0f64;
        for k in [2usize, 4, 8, 16, 32] {
            let level = s.moduli().level_moduli(k).unwrap();
            let x = frequency_inclusion_exclusion(&q, &level, &s)
                .unwrap()
                .to_f64()
                .unwrap();
            assert!(x < prev);
            assert!(x > target);
            prev = x;
        }
        assert!(prev - target < 2e-3);
    }

    #[test]
    fn pattern_query_validation() {
        assert_eq!(PatternQuery::new(&[]), Err(Error::EmptyPattern));
        assert_eq!(
            PatternQuery::new(&[(3, true), (3, false)]),
            Err(Error::DuplicatePosition(3))
        );
        let q = PatternQuery::from_word("101", -1).unwrap();
        assert_eq!(q.ones(), vec![-1, 1]);
        assert_eq!(q.zeros(), vec![0]);
        assert_eq!(q.span(), (-1, 1));
    }
}
