//! Exact dyadic complex numbers `(a + b i) / 2^k`.

use std::fmt;

use num::{BigInt, Integer, One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::Rational;

/// A complex number with dyadic rational coordinates, kept in canonical form
/// (`k` minimal, so `a` or `b` is odd whenever `k > 0`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DyadicPoint {
    re: i64,
    im: i64,
    k: u32,
}

impl DyadicPoint {
    pub const ZERO: DyadicPoint = DyadicPoint { re: 0, im: 0, k: 0 };
    pub const ONE: DyadicPoint = DyadicPoint { re: 1, im: 0, k: 0 };
    pub const MINUS_ONE: DyadicPoint = DyadicPoint {
        re: -1,
        im: 0,
        k: 0,
    };
    pub const I: DyadicPoint = DyadicPoint { re: 0, im: 1, k: 0 };

    pub fn new(re: i64, im: i64, k: u32) -> Self {
        let mut p = DyadicPoint { re, im, k };
        p.canonicalize();
        p
    }

    fn canonicalize(&mut self) {
        while self.k > 0 && self.re % 2 == 0 && self.im % 2 == 0 {
            self.re /= 2;
            self.im /= 2;
            self.k -= 1;
        }
        if self.re == 0 && self.im == 0 {
            self.k = 0;
        }
    }

    pub fn re_num(&self) -> i64 {
        self.re
    }
    pub fn im_num(&self) -> i64 {
        self.im
    }
    pub fn scale_exp(&self) -> u32 {
        self.k
    }

    pub fn re(&self) -> Rational {
        Rational::new(self.re as i128, 1i128 << self.k)
    }
    pub fn im(&self) -> Rational {
        Rational::new(self.im as i128, 1i128 << self.k)
    }

    /// Both coordinates brought to the common exponent `k`.
    fn lift(&self, k: u32) -> (i64, i64) {
        let s = 1i64 << (k - self.k);
        (self.re * s, self.im * s)
    }

    pub fn add(&self, o: &DyadicPoint) -> DyadicPoint {
        let k = self.k.max(o.k);
        let (a, b) = self.lift(k);
        let (c, d) = o.lift(k);
        DyadicPoint::new(a + c, b + d, k)
    }

    pub fn sub(&self, o: &DyadicPoint) -> DyadicPoint {
        self.add(&o.neg())
    }

    pub fn neg(&self) -> DyadicPoint {
        DyadicPoint {
            re: -self.re,
            im: -self.im,
            k: self.k,
        }
    }

    pub fn conj(&self) -> DyadicPoint {
        DyadicPoint {
            re: self.re,
            im: -self.im,
            k: self.k,
        }
    }

    /// Multiplication by `i`.
    pub fn mul_i(&self) -> DyadicPoint {
        DyadicPoint {
            re: -self.im,
            im: self.re,
            k: self.k,
        }
    }

    pub fn half(&self) -> DyadicPoint {
        DyadicPoint::new(self.re, self.im, self.k + 1)
    }

    /// Exact squared modulus.
    pub fn norm_sq(&self) -> Rational {
        let a = self.re as i128;
        let b = self.im as i128;
        Rational::new(a * a + b * b, 1i128 << (2 * self.k))
    }

    /// Exact squared Euclidean distance.
    pub fn dist_sq(&self, o: &DyadicPoint) -> Rational {
        self.sub(o).norm_sq()
    }

    pub fn to_f64(&self) -> (f64, f64) {
        let s = (self.k as f64).exp2();
        (self.re as f64 / s, self.im as f64 / s)
    }

    pub fn dist_f64(&self, o: &DyadicPoint) -> f64 {
        let (x, y) = self.sub(o).to_f64();
        x.hypot(y)
    }

    /// Builds a point from two dyadic rationals; fails on non-dyadic input.
    pub fn from_rationals(re: &Rational, im: &Rational) -> Option<DyadicPoint> {
        let k = dyadic_exp(re.denom())?.max(dyadic_exp(im.denom())?);
        let s = 1i128 << k;
        let a = re.numer() * (s / re.denom());
        let b = im.numer() * (s / im.denom());
        Some(DyadicPoint::new(
            i64::try_from(a).ok()?,
            i64::try_from(b).ok()?,
            k,
        ))
    }
}

fn dyadic_exp(d: &i128) -> Option<u32> {
    if *d > 0 && (*d & (*d - 1)) == 0 && d.trailing_zeros() < 62 {
        Some(d.trailing_zeros())
    } else {
        None
    }
}

impl fmt::Display for DyadicPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {})",
            fmt_rational(&self.re()),
            fmt_rational(&self.im())
        )
    }
}

impl Serialize for DyadicPoint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [fmt_dyadic(&self.re()), fmt_dyadic(&self.im())].serialize(s)
    }
}

impl<'de> Deserialize<'de> for DyadicPoint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [re, im] = <[String; 2]>::deserialize(d)?;
        let re = parse_rational(&re).map_err(serde::de::Error::custom)?;
        let im = parse_rational(&im).map_err(serde::de::Error::custom)?;
        DyadicPoint::from_rationals(&re, &im)
            .ok_or_else(|| serde::de::Error::custom("coordinate is not dyadic"))
    }
}

/// Formats a rational as `p` or `p/q`.
pub fn fmt_rational(r: &Rational) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Formats a dyadic rational as `a` or `a/2^k`.
pub fn fmt_dyadic(r: &Rational) -> String {
    match dyadic_exp(r.denom()) {
        Some(0) => r.numer().to_string(),
        Some(k) => format!("{}/2^{k}", r.numer()),
        None => fmt_rational(r),
    }
}

/// Parses `p`, `p/q`, `p/2^k` or a finite decimal such as `0.125`.
pub fn parse_rational(s: &str) -> Result<Rational, String> {
    let s = s.trim();
    let bad = || format!("invalid rational `{s}`");
    if let Some((p, q)) = s.split_once('/') {
        let p: i128 = p.trim().parse().map_err(|_| bad())?;
        let q: i128 = match q.trim().split_once('^') {
            Some(("2", k)) => {
                let k: u32 = k.parse().map_err(|_| bad())?;
                1i128.checked_shl(k).filter(|_| k < 127).ok_or_else(bad)?
            }
            Some(_) => return Err(bad()),
            None => q.trim().parse().map_err(|_| bad())?,
        };
        if q == 0 {
            return Err(format!("zero denominator in `{s}`"));
        }
        return Ok(Rational::new(p, q));
    }
    if let Some((int, frac)) = s.split_once('.') {
        if frac.is_empty() || frac.len() > 30 || !frac.bytes().all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let neg = int.starts_with('-');
        let ip: i128 = if int.is_empty() || int == "-" {
            0
        } else {
            int.parse().map_err(|_| bad())?
        };
        let fp: i128 = frac.parse().map_err(|_| bad())?;
        let scale = 10i128.pow(frac.len() as u32);
        let mag = ip.abs() * scale + fp;
        return Ok(Rational::new(if neg { -mag } else { mag }, scale));
    }
    s.parse::<i128>()
        .map(Rational::from_integer)
        .map_err(|_| bad())
}

/// `2^e` for a possibly negative exponent.
pub fn pow2(e: i32) -> Rational {
    if e >= 0 {
        Rational::from_integer(1i128 << e)
    } else {
        Rational::new(1, 1i128 << (-e))
    }
}

/// Exact square root of a rational that is a perfect square.
pub fn exact_sqrt(r: &Rational) -> Option<Rational> {
    if r.is_negative() {
        return None;
    }
    let n = isqrt(*r.numer())?;
    let d = isqrt(*r.denom())?;
    Some(Rational::new(n, d))
}

fn isqrt(v: i128) -> Option<i128> {
    let big = BigInt::from(v);
    let s = big.sqrt();
    if &s * &s == big {
        i128::try_from(s).ok()
    } else {
        None
    }
}

/// `r^n` by repeated multiplication.
pub fn rpow(r: &Rational, n: u32) -> Rational {
    let mut out = Rational::one();
    for _ in 0..n {
        out *= *r;
    }
    out
}

pub fn to_f64(r: &Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

pub(crate) fn lcm(a: i128, b: i128) -> i128 {
    if a.is_zero() {
        b
    } else {
        a.lcm(&b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dyadic_strings() {
        let p = DyadicPoint::new(-15, 1, 4);
        let v = serde_json::to_value(p).unwrap();
        assert_eq!(v, serde_json::json!(["-15/2^4", "1/2^4"]));
        assert_eq!(serde_json::from_value::<DyadicPoint>(v).unwrap(), p);
        assert_eq!(parse_rational("3/2^2"), Ok(Rational::new(3, 4)));
        assert!(parse_rational("3/3^2").is_err());
        assert_eq!(fmt_dyadic(&Rational::from_integer(-1)), "-1");
    }

    #[test]
    fn canonical_form() {
        let p = DyadicPoint::new(4, -2, 3);
        assert_eq!(p, DyadicPoint::new(2, -1, 2));
        assert_eq!(DyadicPoint::new(0, 0, 9), DyadicPoint::ZERO);
    }

    #[test]
    fn arithmetic() {
        let h = DyadicPoint::ONE.half();
        assert_eq!(h.add(&h), DyadicPoint::ONE);
        assert_eq!(DyadicPoint::ONE.mul_i(), DyadicPoint::I);
        assert_eq!(DyadicPoint::I.conj(), DyadicPoint::I.neg());
        assert_eq!(
            DyadicPoint::ONE.dist_sq(&DyadicPoint::I),
            Rational::from_integer(2)
        );
    }

    #[test]
    fn rational_parsing() {
        assert_eq!(parse_rational("3/6").unwrap(), Rational::new(1, 2));
        assert_eq!(parse_rational("-0.125").unwrap(), Rational::new(-1, 8));
        assert_eq!(parse_rational("7").unwrap(), Rational::from_integer(7));
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("x").is_err());
        assert_eq!(fmt_rational(&Rational::new(-1, 2)), "-1/2");
    }

    #[test]
    fn sqrt_of_squares() {
        assert_eq!(exact_sqrt(&Rational::new(9, 16)), Some(Rational::new(3, 4)));
        assert_eq!(exact_sqrt(&Rational::from_integer(2)), None);
    }

    #[test]
    fn dyadic_roundtrip() {
        let p = DyadicPoint::new(-3, 5, 4);
        let q = DyadicPoint::from_rationals(&p.re(), &p.im()).unwrap();
        assert_eq!(p, q);
        assert!(DyadicPoint::from_rationals(&Rational::new(1, 3), &Rational::zero()).is_none());
    }
}
