use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

/// Renders `value` as a decimal with at most six fractional digits,
/// rounding half to even and trimming trailing zeros.
pub fn fmt_decimal(value: &BigRational) -> String {
    let scale = BigInt::from(1_000_000u32);
    let negative = value.is_negative();
    let abs = value.abs();
    let scaled_num = abs.numer() * &scale;
    let (mut q, r) = scaled_num.div_rem(abs.denom());
    let twice = &r * 2u32;
    match twice.cmp(abs.denom()) {
        std::cmp::Ordering::Greater => q += 1u32,
        std::cmp::Ordering::Equal if q.is_odd() => q += 1u32,
        _ => {}
    }

    let (int, frac) = q.div_rem(&scale);
    let mut s = String::new();
    if negative && !q.is_zero() {
        s.push('-');
    }
    s.push_str(&int.to_string());
    if !frac.is_zero() {
        let digits = format!("{:06}", frac);
        s.push('.');
        s.push_str(digits.trim_end_matches('0'));
    }
    s
}

pub fn ratio(num: impl Into<BigInt>, den: impl Into<BigInt>) -> BigRational {
    BigRational::new(num.into(), den.into())
}

pub fn int(v: impl Into<BigInt>) -> BigRational {
    BigRational::from_integer(v.into())
}

/// RFC 3550 running jitter kept as `numer / 2^exp`: the 1/16 smoothing step
/// only ever introduces powers of two into the denominator, so the exact
/// value stays dyadic and never needs a gcd.
#[derive(Debug, Clone)]
pub(crate) struct DyadicJitter {
    numer: BigInt,
    exp: u64,
}

impl DyadicJitter {
    pub fn zero() -> Self {
        DyadicJitter {
            numer: BigInt::zero(),
            exp: 0,
        }
    }

    /// `J <- J + (|d| - J) / 16`, i.e. `(15 J + |d|) / 16`.
    pub fn update(&mut self, abs_d: u64) {
        let scaled = BigInt::from(abs_d) << self.exp;
        self.numer = &self.numer * 15u32 + scaled;
        self.exp += 4;
        if self.numer.is_zero() {
            self.exp = 0;
            return;
        }
        let tz = self.numer.trailing_zeros().unwrap_or(0).min(self.exp);
        if tz > 0 {
            self.numer >>= tz;
            self.exp -= tz;
        }
    }

    pub fn to_rational(&self) -> BigRational {
        BigRational::new_raw(self.numer.clone(), BigInt::one() << self.exp)
    }
}
