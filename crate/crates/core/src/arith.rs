//! Small integer helpers: gcd/lcm, deterministic primality by trial division,
//! plain prime sieve. Everything here is u64-sized; big values go through
//! `num::BigUint` at the call sites.

use num::BigUint;

pub fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = b;
        b = a % b;
        a = t;
    }
    a
}

pub fn lcm_checked(a: u64, b: u64) -> Option<u64> {
    if a == 0 || b == 0 {
        return Some(0);
    }
    (a / gcd(a, b)).checked_mul(b)
}

/// lcm of a list, or `None` on u64 overflow. Empty list has lcm 1.
pub fn lcm_u64(moduli: &[u64]) -> Option<u64> {
    moduli.iter().try_fold(1u64, |acc, &b| lcm_checked(acc, b))
}

/// lcm of a list in arbitrary precision. Empty list has lcm 1.
pub fn lcm_big(moduli: &[u64]) -> BigUint {
    let mut acc = BigUint::from(1u64);
    for &b in moduli {
        acc = num::integer::lcm(acc, BigUint::from(b));
    }
    acc
}

pub fn isqrt(n: u64) -> u64 {
    let mut s = (n as f64).sqrt() as u64;
    while s > 0 && s.checked_mul(s).is_none_or(|v| v > n) {
        s -= 1;
    }
    while (s + 1).checked_mul(s + 1).is_some_and(|v| v <= n) {
        s += 1;
    }
    s
}

/// Trial division with 6k±1 stepping; fine for the modulus sizes we validate.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    if n < 4 {
        return true;
    }
    if n % 2 == 0 || n % 3 == 0 {
        return false;
    }
    let mut d = 5u64;
    while d.checked_mul(d).is_some_and(|v| v <= n) {
        if n % d == 0 || n % (d + 2) == 0 {
            return false;
        }
        d += 6;
    }
    true
}

pub fn next_prime_after(n: u64) -> u64 {
    let mut c = n + 1;
    loop {
        if is_prime(c) {
            return c;
        }
        c += 1;
    }
}

pub fn factorize(mut n: u64) -> Vec<(u64, u32)> {
    let mut out = Vec::new();
    let mut push = |p: u64, n: &mut u64| {
        let mut e = 0u32;
        while *n % p == 0 {
            *n /= p;
            e += 1;
        }
        if e > 0 {
            out.push((p, e));
        }
    };
    push(2, &mut n);
    push(3, &mut n);
    let mut d = 5u64;
    while d.checked_mul(d).is_some_and(|v| v <= n) {
        push(d, &mut n);
        push(d + 2, &mut n);
        d += 6;
    }
    if n > 1 {
        out.push((n, 1));
    }
    out
}

/// Primes in [2, n] by the plain sieve of Eratosthenes.
pub fn primes_up_to(n: u64) -> Vec<u64> {
    if n < 2 {
        return Vec::new();
    }
    let n = n as usize;
    let mut composite = vec![false; n + 1];
    let mut out = Vec::new();
    for p in 2..=n {
        if composite[p] {
            continue;
        }
        out.push(p as u64);
        let mut m = p * p;
        while m <= n {
            composite[m] = true;
            m += p;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gcd_lcm_basics() {
        assert_eq!(gcd(12, 18), 6);
        assert_eq!(gcd(7, 0), 7);
        assert_eq!(lcm_u64(&[2, 3, 5]), Some(30));
        assert_eq!(lcm_u64(&[2, 4]), Some(4));
        assert_eq!(lcm_u64(&[]), Some(1));
        assert!(lcm_u64(&[u64::MAX, u64::MAX - 1]).is_none());
    }

    #[test]
    fn isqrt_edges() {
        for n in 0..2000u64 {
            let s = isqrt(n);
            assert!(s * s <= n && (s + 1) * (s + 1) > n, "n={n} s={s}");
        }
        assert_eq!(isqrt(u64::MAX), (1u64 << 32) - 1);
    }

    #[test]
    fn primality_agrees_with_sieve() {
        let primes = primes_up_to(10_000);
        let set: std::collections::HashSet<u64> = primes.iter().copied().collect();
        for n in 0..=10_000u64 {
            assert_eq!(is_prime(n), set.contains(&n), "n={n}");
        }
        assert_eq!(next_prime_after(97), 101);
    }

    #[test]
    fn factorization_reassembles() {
        for n in 2..5000u64 {
            let f = factorize(n);
            let back: u64 = f.iter().map(|&(p, e)| p.pow(e)).product();
            assert_eq!(back, n);
            assert!(f.iter().all(|&(p, _)| is_prime(p)));
        }
    }
}
