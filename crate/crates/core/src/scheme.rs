//! Cut-and-project data for B-free systems over the integers: a set of
//! moduli (possibly an infinite named family), a window given by per-modulus
//! forbidden residue sets, and internal points represented as CRT-compatible
//! residue vectors at a finite truncation level.
//!
//! The full internal group is the closure of the diagonally embedded
//! integers inside the product of all residue rings; it is never
//! materialized. Every operation factors through a finite list of moduli,
//! where membership in the closure is exactly pairwise CRT compatibility.

use std::collections::BTreeMap;

use num::{BigUint, One, Zero};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arith::{factorize, gcd, is_prime, isqrt, lcm_big, lcm_u64, next_prime_after, primes_up_to};
use crate::error::{Error, Result};

/// Largest sieve range we are willing to allocate when enumerating tail
/// family members.
pub const TAIL_SIEVE_CAP: u64 = 1 << 26;

/// Default cap on lcm-sized enumerations (periods, cylinder counts).
pub const DEFAULT_ENUM_BOUND: u64 = 10_000_000;

/// Named infinite modulus families with a computable membership test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailFamily {
    /// Squares of the primes: 4, 9, 25, 49, ...
    PrimeSquares,
    /// The primes themselves: 2, 3, 5, 7, ...
    Primes,
}

impl TailFamily {
    pub fn name(self) -> &'static str {
        match self {
            TailFamily::PrimeSquares => "prime-squares",
            TailFamily::Primes => "primes",
        }
    }

    /// All family members `<= bound`, ascending.
    pub fn members_up_to(self, bound: u64) -> Result<Vec<u64>> {
        match self {
            TailFamily::PrimeSquares => {
                let root = isqrt(bound);
                if root > TAIL_SIEVE_CAP {
                    return Err(Error::TailNotEnumerable(format!(
                        "prime-squares up to {bound} needs a sieve past {TAIL_SIEVE_CAP}"
                    )));
                }
                Ok(primes_up_to(root).into_iter().map(|p| p * p).collect())
            }
            TailFamily::Primes => {
                if bound > TAIL_SIEVE_CAP {
                    return Err(Error::TailNotEnumerable(format!(
                        "primes up to {bound} exceed the sieve cap {TAIL_SIEVE_CAP}"
                    )));
                }
                Ok(primes_up_to(bound))
            }
        }
    }

    pub fn contains(self, b: u64) -> bool {
        match self {
            TailFamily::PrimeSquares => {
                let r = isqrt(b);
                r * r == b && is_prime(r)
            }
            TailFamily::Primes => is_prime(b),
        }
    }

    /// Upper bound on the reciprocal sum of family members strictly greater
    /// than `largest`. `None` when the family has no summable tail (primes).
    ///
    /// For prime squares the members beyond `largest` are p^2 with
    /// p >= q := next prime after isqrt(largest), and
    /// sum_{p >= q} 1/p^2 <= sum_{n >= q} 1/n^2 < 1/(q-1).
    pub fn tail_sum_bound(self, largest: u64) -> Option<f64> {
        match self {
            TailFamily::PrimeSquares => {
                let q = next_prime_after(isqrt(largest));
                Some(1.0 / (q - 1) as f64)
            }
            TailFamily::Primes => None,
        }
    }
}

/// The set B of moduli: an ascending explicit list plus an optional tail
/// family, with validity flags computed on construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuliSet {
    explicit: Vec<u64>,
    tail: Option<TailFamily>,
    pairwise_coprime: bool,
    primitive: bool,
}

impl ModuliSet {
    /// Checks ranges and duplicates, sorts ascending, and computes the
    /// coprimality and primitivity flags over explicit and tail members.
    pub fn validate(raw: &[u64], tail: Option<TailFamily>) -> Result<Self> {
        if raw.is_empty() && tail.is_none() {
            return Err(Error::EmptyModuli);
        }
        for &b in raw {
            if b < 2 {
                return Err(Error::ModulusTooSmall(b));
            }
        }
        let mut explicit = raw.to_vec();
        explicit.sort_unstable();
        for w in explicit.windows(2) {
            if w[0] == w[1] {
                return Err(Error::DuplicateModulus(w[0]));
            }
        }
        let (pairwise_coprime, primitive) = Self::flags(&explicit, tail);
        Ok(ModuliSet {
            explicit,
            tail,
            pairwise_coprime,
            primitive,
        })
    }

    fn flags(explicit: &[u64], tail: Option<TailFamily>) -> (bool, bool) {
        let mut coprime = true;
        let mut primitive = true;
        for (i, &a) in explicit.iter().enumerate() {
            for &b in &explicit[i + 1..] {
                if gcd(a, b) != 1 {
                    coprime = false;
                }
                if b % a == 0 {
                    primitive = false;
                }
            }
        }
        // Tail members interact with an explicit modulus b exactly through
        // the prime factorization of b; both families are internally coprime
        // and primitive.
        if let Some(family) = tail {
            for &b in explicit {
                let factors = factorize(b);
                match family {
                    TailFamily::PrimeSquares => {
                        // Coprime to every p^2 != b requires b itself to be a
                        // prime square. Primitive fails if some p^2 properly
                        // divides b, or b is prime (then b | b^2).
                        if !(factors.len() == 1 && factors[0].1 == 2) {
                            coprime = false;
                        }
                        let is_prime_square = factors.len() == 1 && factors[0].1 == 2;
                        let has_square_divisor = factors.iter().any(|&(_, e)| e >= 2);
                        let is_p = factors.len() == 1 && factors[0].1 == 1;
                        if (has_square_divisor && !is_prime_square) || is_p {
                            primitive = false;
                        }
                    }
                    TailFamily::Primes => {
                        let is_p = factors.len() == 1 && factors[0].1 == 1;
                        if !is_p {
                            coprime = false;
                            primitive = false;
                        }
                    }
                }
            }
        }
        (coprime, primitive)
    }

    pub fn explicit(&self) -> &[u64] {
        &self.explicit
    }

    pub fn tail(&self) -> Option<TailFamily> {
        self.tail
    }

    pub fn is_finite(&self) -> bool {
        self.tail.is_none()
    }

    pub fn is_pairwise_coprime(&self) -> bool {
        self.pairwise_coprime
    }

    pub fn is_primitive(&self) -> bool {
        self.primitive
    }

    pub fn contains(&self, b: u64) -> bool {
        self.explicit.binary_search(&b).is_ok()
            || self.tail.is_some_and(|family| family.contains(b))
    }

    /// All moduli `<= bound` (explicit and tail), ascending and deduped.
    pub fn members_up_to(&self, bound: u64) -> Result<Vec<u64>> {
        let mut out: Vec<u64> = self.explicit.iter().copied().filter(|&b| b <= bound).collect();
        if let Some(family) = self.tail {
            out.extend(family.members_up_to(bound)?);
            out.sort_unstable();
            out.dedup();
        }
        Ok(out)
    }

    /// The first `k` moduli of the merged ascending stream.
    pub fn level_moduli(&self, k: usize) -> Result<Vec<u64>> {
        if k == 0 {
            return Ok(Vec::new());
        }
        if self.tail.is_none() {
            if k > self.explicit.len() {
                return Err(Error::LevelUnavailable {
                    requested: k,
                    available: self.explicit.len(),
                });
            }
            return Ok(self.explicit[..k].to_vec());
        }
        let mut bound = 64u64;
        loop {
            let members = self.members_up_to(bound)?;
            if members.len() >= k {
                return Ok(members[..k].to_vec());
            }
            bound = bound.checked_mul(2).ok_or_else(|| {
                Error::TailNotEnumerable("modulus stream exhausted u64".into())
            })?;
        }
    }

    /// Bound on the reciprocal sum of tail-family members beyond `largest`.
    /// `Some(0)` for finite sets, `None` when no summable bound exists.
    pub fn family_tail_bound(&self, largest: u64) -> Option<f64> {
        match self.tail {
            None => Some(0.0),
            Some(family) => family.tail_sum_bound(largest),
        }
    }
}

/// Per-modulus forbidden residue sets; any modulus without an explicit
/// override forbids exactly residue 0.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Window {
    overrides: BTreeMap<u64, Vec<u64>>,
}

const DEFAULT_FORBIDDEN: &[u64] = &[0];

impl Window {
    /// The window of the classical B-free construction: F_b = {0} everywhere.
    pub fn all_zero() -> Self {
        Window::default()
    }

    /// Overrides the forbidden set of one modulus. The set must stay a
    /// proper subset of Z/bZ so the window keeps positive Haar measure.
    pub fn set_forbidden(&mut self, modulus: u64, residues: &[u64]) -> Result<()> {
        if modulus < 2 {
            return Err(Error::ModulusTooSmall(modulus));
        }
        let mut set = residues.to_vec();
        set.sort_unstable();
        set.dedup();
        for &r in &set {
            if r >= modulus {
                return Err(Error::ResidueOutOfRange {
                    modulus,
                    residue: r,
                });
            }
        }
        if set.len() as u64 >= modulus {
            return Err(Error::WindowFull(modulus));
        }
        self.overrides.insert(modulus, set);
        Ok(())
    }

    /// Sorted forbidden residues of `modulus`.
    pub fn forbidden(&self, modulus: u64) -> &[u64] {
        self.overrides
            .get(&modulus)
            .map(|v| v.as_slice())
            .unwrap_or(DEFAULT_FORBIDDEN)
    }

    pub fn overrides(&self) -> &BTreeMap<u64, Vec<u64>> {
        &self.overrides
    }
}

#[derive(Serialize, Deserialize)]
struct SchemeFile {
    moduli: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tail: Option<TailFamily>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    window: Option<BTreeMap<String, Vec<u64>>>,
}

/// A moduli set coupled with its window. This is the unit the CLI reads
/// from a scheme description file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scheme {
    moduli: ModuliSet,
    window: Window,
}

impl Scheme {
    /// Couples a window to a moduli set; every overridden modulus must
    /// belong to the set.
    pub fn new(moduli: ModuliSet, window: Window) -> Result<Self> {
        for &b in window.overrides.keys() {
            if !moduli.contains(b) {
                return Err(Error::LevelMismatch(b));
            }
        }
        Ok(Scheme { moduli, window })
    }

    /// The default-window scheme for a moduli set.
    pub fn with_default_window(moduli: ModuliSet) -> Self {
        Scheme {
            moduli,
            window: Window::all_zero(),
        }
    }

    pub fn moduli(&self) -> &ModuliSet {
        &self.moduli
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn forbidden(&self, modulus: u64) -> &[u64] {
        self.window.forbidden(modulus)
    }

    pub fn level_moduli(&self, k: usize) -> Result<Vec<u64>> {
        self.moduli.level_moduli(k)
    }

    /// Parses the scheme description format:
    /// `{"moduli": [..], "tail": "prime-squares"|"primes"|null,
    ///   "window": {"<b>": [forbidden residues], ...}}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: SchemeFile = serde_json::from_str(text)
            .map_err(|e| Error::InvalidScheme(e.to_string()))?;
        let moduli = ModuliSet::validate(&file.moduli, file.tail)?;
        let mut window = Window::all_zero();
        if let Some(map) = file.window {
            for (key, residues) in map {
                let b: u64 = key
                    .parse()
                    .map_err(|_| Error::InvalidScheme(format!("bad window key {key:?}")))?;
                window.set_forbidden(b, &residues)?;
            }
        }
        Scheme::new(moduli, window)
    }

    pub fn to_json(&self) -> String {
        let file = SchemeFile {
            moduli: self.moduli.explicit.clone(),
            tail: self.moduli.tail,
            window: if self.window.overrides.is_empty() {
                None
            } else {
                Some(
                    self.window
                        .overrides
                        .iter()
                        .map(|(b, f)| (b.to_string(), f.clone()))
                        .collect(),
                )
            },
        };
        serde_json::to_string(&file).expect("scheme serialization cannot fail")
    }
}

/// An internal point at finite truncation: one residue per modulus in its
/// level, pairwise CRT-compatible.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InternalPoint {
    moduli: Vec<u64>,
    residues: Vec<u64>,
}

impl InternalPoint {
    /// Builds a point from residues, checking ranges and pairwise
    /// compatibility (`r_a = r_b mod gcd(a,b)`), which characterizes
    /// membership in the truncated closure of the embedded integers.
    pub fn new(moduli: Vec<u64>, residues: Vec<u64>) -> Result<Self> {
        if moduli.len() != residues.len() {
            return Err(Error::InvalidScheme(format!(
                "{} moduli with {} residues",
                moduli.len(),
                residues.len()
            )));
        }
        for (&b, &r) in moduli.iter().zip(&residues) {
            if b < 2 {
                return Err(Error::ModulusTooSmall(b));
            }
            if r >= b {
                return Err(Error::ResidueOutOfRange {
                    modulus: b,
                    residue: r,
                });
            }
        }
        for i in 0..moduli.len() {
            for j in i + 1..moduli.len() {
                let g = gcd(moduli[i], moduli[j]);
                if residues[i] % g != residues[j] % g {
                    return Err(Error::IncompatibleResidues {
                        a: moduli[i],
                        ra: residues[i],
                        b: moduli[j],
                        rb: residues[j],
                    });
                }
            }
        }
        Ok(InternalPoint { moduli, residues })
    }

    /// The canonical embedding of an integer: residue `n mod b` per modulus,
    /// with non-negative representatives.
    pub fn delta_embed(n: i64, moduli: &[u64]) -> Self {
        let residues = moduli
            .iter()
            .map(|&b| n.rem_euclid(b as i64) as u64)
            .collect();
        InternalPoint {
            moduli: moduli.to_vec(),
            residues,
        }
    }

    /// `delta_embed` for arbitrary-precision `n >= 0`.
    pub fn delta_embed_big(n: &BigUint, moduli: &[u64]) -> Self {
        let residues = moduli
            .iter()
            .map(|&b| {
                let r = n % BigUint::from(b);
                r.to_u64_digits().first().copied().unwrap_or(0)
            })
            .collect();
        InternalPoint {
            moduli: moduli.to_vec(),
            residues,
        }
    }

    /// Exact Haar sampling on the truncated closure: a uniform draw of
    /// `n in [0, lcm)` pushed through `delta_embed`. Deterministic in `seed`.
    pub fn haar_sample(moduli: &[u64], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::haar_sample_with(moduli, &mut rng)
    }

    /// As `haar_sample`, drawing from a caller-provided stream.
    pub fn haar_sample_with<R: RngCore>(moduli: &[u64], rng: &mut R) -> Self {
        let lcm = lcm_big(moduli);
        let n = uniform_below(&lcm, rng);
        Self::delta_embed_big(&n, moduli)
    }

    pub fn moduli(&self) -> &[u64] {
        &self.moduli
    }

    pub fn residues(&self) -> &[u64] {
        &self.residues
    }

    pub fn level(&self) -> usize {
        self.moduli.len()
    }

    pub fn residue(&self, modulus: u64) -> Option<u64> {
        self.moduli
            .iter()
            .position(|&b| b == modulus)
            .map(|i| self.residues[i])
    }

    /// The group action of the integers: `h + Delta(g)` residue-wise.
    pub fn translate(&self, g: i64) -> Self {
        let residues = self
            .moduli
            .iter()
            .zip(&self.residues)
            .map(|(&b, &r)| (r as i64 + g).rem_euclid(b as i64) as u64)
            .collect();
        InternalPoint {
            moduli: self.moduli.clone(),
            residues,
        }
    }

    /// Extends the truncation by one modulus, keeping CRT compatibility.
    pub fn extend(&self, modulus: u64, residue: u64) -> Result<Self> {
        let mut moduli = self.moduli.clone();
        let mut residues = self.residues.clone();
        moduli.push(modulus);
        residues.push(residue);
        InternalPoint::new(moduli, residues)
    }

    pub fn lcm(&self) -> BigUint {
        lcm_big(&self.moduli)
    }
}

/// Rejection-samples a uniform BigUint below `bound` (which must be >= 1).
fn uniform_below<R: RngCore>(bound: &BigUint, rng: &mut R) -> BigUint {
    if bound.is_one() {
        return BigUint::zero();
    }
    let bits = bound.bits();
    let bytes = bits.div_ceil(8) as usize;
    let excess = (bytes as u64 * 8 - bits) as u32;
    let mask = 0xffu8 >> excess;
    loop {
        let mut buf = vec![0u8; bytes];
        rng.fill_bytes(&mut buf);
        buf[bytes - 1] &= mask;
        let candidate = BigUint::from_bytes_le(&buf);
        if &candidate < bound {
            return candidate;
        }
    }
}

/// True iff every residue of `h` avoids the forbidden set of its modulus.
/// The point must live inside the scheme's modulus universe.
pub fn window_contains(h: &InternalPoint, scheme: &Scheme) -> Result<bool> {
    for (&b, &r) in h.moduli.iter().zip(&h.residues) {
        if !scheme.moduli().contains(b) {
            return Err(Error::LevelMismatch(b));
        }
        if scheme.forbidden(b).binary_search(&r).is_ok() {
            return Ok(false);
        }
    }
    Ok(true)
}

/// A Haar-measure query: per-modulus allowed residue sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CylinderConstraint {
    moduli: Vec<u64>,
    allowed: Vec<Vec<u64>>,
}

impl CylinderConstraint {
    /// `pairs` maps each modulus to its allowed residues (may be empty,
    /// which flags the constraint as empty-measure).
    pub fn new(pairs: Vec<(u64, Vec<u64>)>) -> Result<Self> {
        let mut moduli = Vec::with_capacity(pairs.len());
        let mut allowed = Vec::with_capacity(pairs.len());
        for (b, mut set) in pairs {
            if b < 2 {
                return Err(Error::ModulusTooSmall(b));
            }
            set.sort_unstable();
            set.dedup();
            for &r in &set {
                if r >= b {
                    return Err(Error::ResidueOutOfRange {
                        modulus: b,
                        residue: r,
                    });
                }
            }
            moduli.push(b);
            allowed.push(set);
        }
        Ok(CylinderConstraint { moduli, allowed })
    }

    pub fn is_empty_measure(&self) -> bool {
        self.allowed.iter().any(|s| s.is_empty())
    }

    pub fn moduli(&self) -> &[u64] {
        &self.moduli
    }
}

/// Exact Haar measure of the cylinder set `{h : h_b in S_b for all b}`, as
/// a reduced rational. Pairwise coprime moduli use the product formula
/// `prod |S_b|/b`; otherwise the residues are counted over one period of
/// length `lcm`, which must stay within `DEFAULT_ENUM_BOUND`.
pub fn cylinder_measure(constraint: &CylinderConstraint) -> Result<num::BigRational> {
    cylinder_measure_with_bound(constraint, DEFAULT_ENUM_BOUND)
}

pub fn cylinder_measure_with_bound(
    constraint: &CylinderConstraint,
    bound: u64,
) -> Result<num::BigRational> {
    use num::BigInt;
    let coprime = pairwise_coprime(&constraint.moduli);
    if coprime {
        let mut num = BigInt::one();
        let mut den = BigInt::one();
        for (&b, set) in constraint.moduli.iter().zip(&constraint.allowed) {
            num *= BigInt::from(set.len());
            den *= BigInt::from(b);
        }
        return Ok(num::BigRational::new(num, den));
    }
    let lcm = match lcm_u64(&constraint.moduli) {
        Some(l) if l <= bound => l,
        _ => {
            return Err(Error::LcmOverflow {
                lcm: lcm_big(&constraint.moduli).to_string(),
                bound,
            })
        }
    };
    let masks: Vec<Vec<bool>> = constraint
        .moduli
        .iter()
        .zip(&constraint.allowed)
        .map(|(&b, set)| {
            let mut mask = vec![false; b as usize];
            for &r in set {
                mask[r as usize] = true;
            }
            mask
        })
        .collect();
    let mut count = 0u64;
    for n in 0..lcm {
        if constraint
            .moduli
            .iter()
            .zip(&masks)
            .all(|(&b, mask)| mask[(n % b) as usize])
        {
            count += 1;
        }
    }
    Ok(num::BigRational::new(BigInt::from(count), BigInt::from(lcm)))
}

pub fn pairwise_coprime(moduli: &[u64]) -> bool {
    for (i, &a) in moduli.iter().enumerate() {
        for &b in &moduli[i + 1..] {
            if gcd(a, b) != 1 {
                return false;
            }
        }
    }
    true
}

/// The subgroup of level-K internal points whose translation leaves the
/// window invariant modulo Haar-null sets, together with the induced
/// aperiodicity verdict.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPeriods {
    pub elements: Vec<InternalPoint>,
    pub aperiodic: bool,
}

/// Computes the window period group at truncation level `level`.
///
/// Per modulus the periods of the forbidden set form a subgroup of Z/bZ,
/// hence the multiples of some divisor m_b of b; a compatible vector is a
/// period iff every coordinate is, i.e. iff it is a multiple of
/// lcm(m_b) inside Z/lcm(level).
pub fn window_period_group(scheme: &Scheme, level: &[u64]) -> Result<WindowPeriods> {
    window_period_group_with_bound(scheme, level, 1_000_000)
}

pub fn window_period_group_with_bound(
    scheme: &Scheme,
    level: &[u64],
    listing_bound: u64,
) -> Result<WindowPeriods> {
    let mut step = BigUint::one();
    for &b in level {
        if !scheme.moduli().contains(b) {
            return Err(Error::LevelMismatch(b));
        }
        let m_b = per_modulus_period_step(b, scheme.forbidden(b));
        step = num::integer::lcm(step, BigUint::from(m_b));
    }
    let lcm = lcm_big(level);
    let order = &lcm / &step;
    if order > BigUint::from(listing_bound) {
        return Err(Error::GroupTooLarge {
            order: order.to_string(),
            bound: listing_bound,
        });
    }
    let order = order.to_u64_digits().first().copied().unwrap_or(0).max(1);
    let mut elements = Vec::with_capacity(order as usize);
    let mut n = BigUint::zero();
    for _ in 0..order {
        elements.push(InternalPoint::delta_embed_big(&n, level));
        n += &step;
    }
    Ok(WindowPeriods {
        aperiodic: elements.len() == 1,
        elements,
    })
}

/// Smallest positive generator of `{t : F + t = F}` in Z/bZ (equal to b for
/// the trivial group). Exhaustive over all translations.
fn per_modulus_period_step(b: u64, forbidden: &[u64]) -> u64 {
    let mut periods = Vec::new();
    for t in 0..b {
        let mut shifted: Vec<u64> = forbidden.iter().map(|&f| (f + t) % b).collect();
        shifted.sort_unstable();
        if shifted == forbidden {
            periods.push(t);
        }
    }
    // Subgroups of a cyclic group are cyclic: the periods are exactly the
    // multiples of b / |periods|.
    let m = b / periods.len() as u64;
    debug_assert!(periods.iter().enumerate().all(|(i, &t)| t == i as u64 * m));
    m
}
