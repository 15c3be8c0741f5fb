//! Prime-field arithmetic in GF(q) and univariate polynomials over it.
//!
//! Messages over the extension field GF(q^m) are carried as length-m
//! coordinate vectors over GF(q); every protocol operation scales messages by
//! base-field constants only, so no extension-field multiplication exists here.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// A prime field GF(q) with `q < 2^16`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FieldParams {
    q: u16,
}

impl FieldParams {
    pub fn new(q: u32) -> Result<Self> {
        if q >= 1 << 16 || !is_prime(q) {
            return Err(Error::NotPrime(q));
        }
        Ok(Self { q: q as u16 })
    }

    #[inline]
    pub fn modulus(&self) -> u16 {
        self.q
    }

    /// Reduces an arbitrary integer into the field.
    #[inline]
    pub fn elem(&self, value: u64) -> FieldElement {
        FieldElement {
            value: (value % self.q as u64) as u16,
            q: self.q,
        }
    }

    /// Builds an element from an already-reduced residue.
    pub fn try_elem(&self, value: u16) -> Result<FieldElement> {
        if value >= self.q {
            return Err(Error::InvalidParams(format!(
                "residue {value} not below q = {}",
                self.q
            )));
        }
        Ok(FieldElement { value, q: self.q })
    }

    #[inline]
    pub fn zero(&self) -> FieldElement {
        FieldElement {
            value: 0,
            q: self.q,
        }
    }

    #[inline]
    pub fn one(&self) -> FieldElement {
        self.elem(1)
    }

    /// Iterates over all elements `0, 1, ..., q-1`.
    pub fn elements(&self) -> impl Iterator<Item = FieldElement> + '_ {
        let q = self.q;
        (0..q).map(move |value| FieldElement { value, q })
    }

    /// Iterates over the multiplicative group, `1, ..., q-1`.
    pub fn nonzero_elements(&self) -> impl Iterator<Item = FieldElement> + '_ {
        self.elements().skip(1)
    }

    /// Uniform draw from the multiplicative group.
    pub fn random_nonzero<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> FieldElement {
        FieldElement {
            value: rng.random_range(1..self.q),
            q: self.q,
        }
    }

    pub fn random<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> FieldElement {
        FieldElement {
            value: rng.random_range(0..self.q),
            q: self.q,
        }
    }
}

/// Trial division; `q` is at most 16 bits so this is cheap.
pub fn is_prime(n: u32) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2u32;
    while d * d <= n {
        if n.is_multiple_of(d) {
            return false;
        }
        d += 1;
    }
    true
}

/// Smallest prime `>= n`.
pub fn next_prime(n: u32) -> u32 {
    (n.max(2)..)
        .find(|&c| is_prime(c))
        .expect("primes are unbounded")
}

/// A residue in `[0, q)` tagged with its modulus.
///
/// The operator impls panic when the moduli differ; the `try_*` methods
/// report the mismatch as an error instead.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FieldElement {
    value: u16,
    q: u16,
}

impl FieldElement {
    #[inline]
    pub fn value(self) -> u16 {
        self.value
    }

    #[inline]
    pub fn params(self) -> FieldParams {
        FieldParams { q: self.q }
    }

    #[inline]
    pub fn is_zero(self) -> bool {
        self.value == 0
    }

    #[inline]
    fn check(self, other: Self) -> Result<()> {
        if self.q != other.q {
            return Err(Error::ParamMismatch {
                left: self.q,
                right: other.q,
            });
        }
        Ok(())
    }

    pub fn try_add(self, other: Self) -> Result<Self> {
        self.check(other)?;
        let s = self.value as u32 + other.value as u32;
        let q = self.q as u32;
        Ok(Self {
            value: if s >= q { s - q } else { s } as u16,
            q: self.q,
        })
    }

    pub fn try_sub(self, other: Self) -> Result<Self> {
        self.check(other)?;
        self.try_add(-other)
    }

    pub fn try_mul(self, other: Self) -> Result<Self> {
        self.check(other)?;
        Ok(Self {
            value: ((self.value as u32 * other.value as u32) % self.q as u32) as u16,
            q: self.q,
        })
    }

    /// Multiplicative inverse by the extended Euclidean algorithm.
    pub fn try_inv(self) -> Result<Self> {
        if self.value == 0 {
            return Err(Error::DivisionByZero(self.q));
        }
        let (mut r0, mut r1) = (self.q as i32, self.value as i32);
        let (mut t0, mut t1) = (0i32, 1i32);
        while r1 != 0 {
            let quot = r0 / r1;
            (r0, r1) = (r1, r0 - quot * r1);
            (t0, t1) = (t1, t0 - quot * t1);
        }
        debug_assert_eq!(r0, 1);
        Ok(Self {
            value: t0.rem_euclid(self.q as i32) as u16,
            q: self.q,
        })
    }

    pub fn try_div(self, other: Self) -> Result<Self> {
        self.check(other)?;
        self.try_mul(other.try_inv()?)
    }

    /// Panics on zero; use [`FieldElement::try_inv`] for the fallible form.
    pub fn inv(self) -> Self {
        self.try_inv().expect("inverse of zero")
    }

    pub fn pow(self, mut exp: u64) -> Self {
        let q = self.q as u64;
        let mut base = self.value as u64;
        let mut acc = 1 % q;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = acc * base % q;
            }
            base = base * base % q;
            exp >>= 1;
        }
        Self {
            value: acc as u16,
            q: self.q,
        }
    }
}

impl fmt::Debug for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

impl Add for FieldElement {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        self.try_add(rhs).expect("field mismatch")
    }
}

impl Sub for FieldElement {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        self.try_sub(rhs).expect("field mismatch")
    }
}

impl Mul for FieldElement {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        self.try_mul(rhs).expect("field mismatch")
    }
}

impl Neg for FieldElement {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self {
            value: if self.value == 0 {
                0
            } else {
                self.q - self.value
            },
            q: self.q,
        }
    }
}

/// A polynomial over GF(q); `coeffs[i]` is the coefficient of `x^i`.
///
/// Trailing zeros are trimmed, so the zero polynomial has no coefficients.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Polynomial {
    field: FieldParams,
    coeffs: Vec<FieldElement>,
}

impl Polynomial {
    pub fn new(field: FieldParams, coeffs: Vec<FieldElement>) -> Result<Self> {
        for c in &coeffs {
            if c.q != field.q {
                return Err(Error::ParamMismatch {
                    left: field.q,
                    right: c.q,
                });
            }
        }
        let mut p = Self { field, coeffs };
        p.trim();
        Ok(p)
    }

    pub fn zero(field: FieldParams) -> Self {
        Self {
            field,
            coeffs: Vec::new(),
        }
    }

    pub fn one(field: FieldParams) -> Self {
        Self {
            field,
            coeffs: vec![field.one()],
        }
    }

    /// Monic polynomial `∏ (x - r)` over the given roots.
    pub fn from_roots(field: FieldParams, roots: &[FieldElement]) -> Result<Self> {
        let mut coeffs = vec![field.one()];
        for &r in roots {
            if r.q != field.q {
                return Err(Error::ParamMismatch {
                    left: field.q,
                    right: r.q,
                });
            }
            // multiply by (x - r)
            let mut next = vec![field.zero(); coeffs.len() + 1];
            for (i, &c) in coeffs.iter().enumerate() {
                next[i + 1] = next[i + 1] + c;
                next[i] = next[i] - c * r;
            }
            coeffs = next;
        }
        Ok(Self { field, coeffs })
    }

    pub fn field(&self) -> FieldParams {
        self.field
    }

    pub fn coeffs(&self) -> &[FieldElement] {
        &self.coeffs
    }

    /// `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn is_monic(&self) -> bool {
        self.coeffs.last().is_some_and(|c| c.value == 1)
    }

    /// Horner evaluation.
    pub fn eval(&self, x: FieldElement) -> Result<FieldElement> {
        if x.q != self.field.q {
            return Err(Error::ParamMismatch {
                left: self.field.q,
                right: x.q,
            });
        }
        Ok(self
            .coeffs
            .iter()
            .rev()
            .fold(self.field.zero(), |acc, &c| acc * x + c))
    }

    fn trim(&mut self) {
        while self.coeffs.last().is_some_and(|c| c.is_zero()) {
            self.coeffs.pop();
        }
    }
}
