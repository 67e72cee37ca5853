//! Arbitrary-precision fixed-point arithmetic for re-evaluating bound
//! formulas independently of `f64`.
//!
//! Values are `mantissa / 2^FRAC_BITS` with a `BigInt` mantissa, giving a
//! little over 130 decimal digits. Transcendentals use classical series:
//! `ln` via the atanh expansion after range reduction to `[1, 2)`, `exp`
//! via Taylor after reduction modulo `ln 2`, and `pow(x, a) = exp(a ln x)`.

use num_bigint::BigInt;

const FRAC_BITS: u32 = 448;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct BigFixed(BigInt);

impl BigFixed {
    pub fn zero() -> Self {
        BigFixed(BigInt::from(0))
    }

    pub fn one() -> Self {
        BigFixed(BigInt::from(1) << FRAC_BITS)
    }

    pub fn from_u64(v: u64) -> Self {
        BigFixed(BigInt::from(v) << FRAC_BITS)
    }

    /// Exact conversion from a finite f64.
    pub fn from_f64(x: f64) -> Self {
        assert!(x.is_finite(), "BigFixed::from_f64({x})");
        if x == 0.0 {
            return Self::zero();
        }
        let bits = x.to_bits();
        let sign = if bits >> 63 == 1 { -1 } else { 1 };
        let exp_bits = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (mantissa, exp) = if exp_bits == 0 {
            (frac, -1074_i64) // subnormal
        } else {
            (frac | (1u64 << 52), exp_bits - 1075)
        };
        let shift = FRAC_BITS as i64 + exp;
        let m = BigInt::from(mantissa) * sign;
        if shift >= 0 {
            BigFixed(m << shift)
        } else {
            // Would drop nonzero bits only for magnitudes below 2^-FRAC_BITS,
            // far outside the input range these tests use.
            let dropped = &m & ((BigInt::from(1) << (-shift)) - 1);
            assert_eq!(dropped, BigInt::from(0), "f64 input below oracle precision");
            BigFixed(m >> (-shift))
        }
    }

    pub fn to_f64(&self) -> f64 {
        use num_bigint::Sign;
        let (sign, mag) = self.0.clone().into_parts();
        let bits = mag.bits();
        // Keep the top 80 bits and track the discarded scale to stay in
        // f64 range during conversion.
        let (mag_f, extra_shift) = if bits > 80 {
            let shift = bits - 80;
            let top: BigInt = BigInt::from(mag) >> shift;
            (bigint_to_f64_small(&top), shift as i64)
        } else {
            (bigint_to_f64_small(&BigInt::from(mag)), 0)
        };
        let v = mag_f * (2.0_f64).powi(extra_shift as i32 - FRAC_BITS as i32);
        match sign {
            Sign::Minus => -v,
            _ => v,
        }
    }

    pub fn is_negative(&self) -> bool {
        self.0.sign() == num_bigint::Sign::Minus
    }

    pub fn add(&self, other: &Self) -> Self {
        BigFixed(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &Self) -> Self {
        BigFixed(&self.0 - &other.0)
    }

    pub fn mul(&self, other: &Self) -> Self {
        BigFixed((&self.0 * &other.0) >> FRAC_BITS)
    }

    pub fn div(&self, other: &Self) -> Self {
        assert!(other.0 != BigInt::from(0), "division by zero");
        BigFixed((&self.0 << FRAC_BITS) / &other.0)
    }

    pub fn sqrt(&self) -> Self {
        assert!(!self.is_negative(), "sqrt of negative");
        BigFixed((self.0.clone() << FRAC_BITS).sqrt())
    }

    /// Natural log of a strictly positive value.
    pub fn ln(&self) -> Self {
        assert!(self.0 > BigInt::from(0), "ln of non-positive");
        // Range-reduce: self = m * 2^k with m in [1, 2).
        let bits = self.0.bits() as i64;
        let k = bits - 1 - FRAC_BITS as i64;
        let m = if k >= 0 {
            BigFixed(&self.0 >> k)
        } else {
            BigFixed(&self.0 << (-k))
        };
        // atanh series: ln m = 2 * sum u^(2i+1)/(2i+1), u = (m-1)/(m+1).
        let one = Self::one();
        let u = m.sub(&one).div(&m.add(&one));
        let u2 = u.mul(&u);
        let mut term = u.clone();
        let mut acc = Self::zero();
        let mut i: u64 = 0;
        loop {
            let denom = BigFixed::from_u64(2 * i + 1);
            acc = acc.add(&term.div(&denom));
            term = term.mul(&u2);
            if term.0.magnitude().bits() == 0 {
                break;
            }
            i += 1;
            assert!(i < 10_000, "ln series did not terminate");
        }
        let ln_m = acc.add(&acc); // times 2
        ln_m.add(&ln2().mul(&BigFixed(BigInt::from(k) << FRAC_BITS)))
    }

    /// exp with range reduction modulo ln 2.
    pub fn exp(&self) -> Self {
        let l2 = ln2();
        // k = round(self / ln2)
        let q = self.div(&l2);
        let half = BigFixed(BigInt::from(1) << (FRAC_BITS - 1));
        let k_int = (&q.add(&half).0) >> FRAC_BITS; // floor(q + 1/2)
        let k = BigFixed(&k_int << FRAC_BITS);
        let r = self.sub(&k.mul(&l2));
        // Taylor on |r| <= ln2/2.
        let mut term = Self::one();
        let mut acc = Self::one();
        let mut n: u64 = 1;
        loop {
            term = term.mul(&r).div(&BigFixed::from_u64(n));
            if term.0.magnitude().bits() == 0 {
                break;
            }
            acc = acc.add(&term);
            n += 1;
            assert!(n < 10_000, "exp series did not terminate");
        }
        // Scale by 2^k.
        let shift: i64 = i64::try_from(&k_int).expect("exp overflow");
        if shift >= 0 {
            BigFixed(acc.0 << shift)
        } else {
            BigFixed(acc.0 >> (-shift))
        }
    }

    /// x^a for x >= 0 (0^a = 0 for a > 0, 0^0 = 1).
    pub fn powf(&self, a: &Self) -> Self {
        assert!(!self.is_negative(), "powf of negative base");
        if self.0 == BigInt::from(0) {
            return if a.0 == BigInt::from(0) {
                Self::one()
            } else {
                Self::zero()
            };
        }
        a.mul(&self.ln()).exp()
    }
}

fn bigint_to_f64_small(v: &BigInt) -> f64 {
    // v fits comfortably in f64 exponent range here (<= 80 bits).
    let mut acc = 0.0_f64;
    for (i, digit) in v.iter_u64_digits().enumerate() {
        acc += digit as f64 * (2.0_f64).powi(64 * i as i32);
    }
    acc
}

fn ln2() -> BigFixed {
    // ln 2 = 2 atanh(1/3).
    let third = BigFixed::one().div(&BigFixed::from_u64(3));
    let u2 = third.mul(&third);
    let mut term = third.clone();
    let mut acc = BigFixed::zero();
    let mut i: u64 = 0;
    loop {
        acc = acc.add(&term.div(&BigFixed::from_u64(2 * i + 1)));
        term = term.mul(&u2);
        if term.0.magnitude().bits() == 0 {
            break;
        }
        i += 1;
        assert!(i < 10_000);
    }
    acc.add(&acc)
}

#[cfg(test)]
mod self_checks {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn known_constants() {
        assert!(close(ln2().to_f64(), std::f64::consts::LN_2, 1e-15));
        assert!(close(
            BigFixed::from_u64(2).sqrt().to_f64(),
            std::f64::consts::SQRT_2,
            1e-15
        ));
        assert!(close(
            BigFixed::one().exp().to_f64(),
            std::f64::consts::E,
            1e-15
        ));
        assert!(close(
            BigFixed::from_u64(10).ln().to_f64(),
            std::f64::consts::LN_10,
            1e-15
        ));
    }

    #[test]
    fn powf_matches_f64_on_easy_inputs() {
        for (x, a) in [(0.3, 1.0 / 1.1), (50.0, 0.1 / 1.1), (2.0, 0.5), (1.7, 2.3)] {
            let got = BigFixed::from_f64(x).powf(&BigFixed::from_f64(a)).to_f64();
            assert!(close(got, x.powf(a), 1e-13), "{x}^{a}: {got}");
        }
    }

    #[test]
    fn roundtrip_is_exact() {
        for x in [0.1, -3.75, 1e-9, 12345.6789, 0.0] {
            assert_eq!(BigFixed::from_f64(x).to_f64(), x);
        }
    }
}
