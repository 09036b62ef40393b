//! Fixed-point decimals with four fractional digits.
//!
//! Consensus-relevant quantities (kWh, tariffs, payments, temperatures) are
//! stored as scaled integers so that state roots never depend on binary
//! floating point.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, Neg, Sub};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const SCALE: i64 = 10_000;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Fixed(i64);

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum FixedError {
    #[error("malformed decimal `{0}`")]
    Malformed(String),
    #[error("decimal `{0}` has more than 4 fractional digits")]
    TooPrecise(String),
    #[error("decimal overflow")]
    Overflow,
}

/// Divides with round-half-even. `den` must be positive.
pub(crate) fn div_round_half_even(num: i128, den: i128) -> i128 {
    debug_assert!(den > 0);
    let q = num.div_euclid(den);
    let r = num.rem_euclid(den);
    match (2 * r).cmp(&den) {
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => {
            if q % 2 == 0 {
                q
            } else {
                q + 1
            }
        }
    }
}

impl Fixed {
    pub const ZERO: Fixed = Fixed(0);

    pub const fn from_raw(raw: i64) -> Fixed {
        Fixed(raw)
    }

    pub const fn from_int(v: i64) -> Fixed {
        Fixed(v * SCALE)
    }

    pub const fn raw(self) -> i64 {
        self.0
    }

    pub fn is_positive(self) -> bool {
        self.0 > 0
    }

    /// Product rounded half-even back to four digits.
    pub fn mul(self, other: Fixed) -> Result<Fixed, FixedError> {
        let wide = div_round_half_even(self.0 as i128 * other.0 as i128, SCALE as i128);
        i64::try_from(wide).map(Fixed).map_err(|_| FixedError::Overflow)
    }

    /// Mean of `sum` over `count` samples, rounded half-even.
    pub fn mean(sum: i128, count: usize) -> Result<Fixed, FixedError> {
        if count == 0 {
            return Err(FixedError::Overflow);
        }
        i64::try_from(div_round_half_even(sum, count as i128))
            .map(Fixed)
            .map_err(|_| FixedError::Overflow)
    }

    /// Nearest fixed value to a float, half-even on exact ties.
    pub fn from_f64_round(v: f64) -> Result<Fixed, FixedError> {
        let scaled = v * SCALE as f64;
        if !scaled.is_finite() || scaled.abs() >= i64::MAX as f64 {
            return Err(FixedError::Overflow);
        }
        Ok(Fixed(scaled.round_ties_even() as i64))
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / SCALE as f64
    }

    pub fn checked_add(self, other: Fixed) -> Result<Fixed, FixedError> {
        self.0.checked_add(other.0).map(Fixed).ok_or(FixedError::Overflow)
    }
}

impl Add for Fixed {
    type Output = Fixed;
    fn add(self, rhs: Fixed) -> Fixed {
        Fixed(self.0 + rhs.0)
    }
}

impl Sub for Fixed {
    type Output = Fixed;
    fn sub(self, rhs: Fixed) -> Fixed {
        Fixed(self.0 - rhs.0)
    }
}

impl Neg for Fixed {
    type Output = Fixed;
    fn neg(self) -> Fixed {
        Fixed(-self.0)
    }
}

impl Sum for Fixed {
    fn sum<I: Iterator<Item = Fixed>>(iter: I) -> Fixed {
        iter.fold(Fixed::ZERO, Add::add)
    }
}

impl FromStr for Fixed {
    type Err = FixedError;

    fn from_str(s: &str) -> Result<Fixed, FixedError> {
        let malformed = || FixedError::Malformed(s.to_owned());
        let (neg, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
        if int_part.is_empty()
            || !int_part.bytes().all(|b| b.is_ascii_digit())
            || !frac_part.bytes().all(|b| b.is_ascii_digit())
            || (body.contains('.') && frac_part.is_empty())
        {
            return Err(malformed());
        }
        if frac_part.len() > 4 {
            return Err(FixedError::TooPrecise(s.to_owned()));
        }
        let int: i64 = int_part.parse().map_err(|_| FixedError::Overflow)?;
        let frac: i64 = format!("{frac_part:0<4}").parse().map_err(|_| malformed())?;
        let raw = int
            .checked_mul(SCALE)
            .and_then(|v| v.checked_add(frac))
            .ok_or(FixedError::Overflow)?;
        Ok(Fixed(if neg { -raw } else { raw }))
    }
}

impl fmt::Display for Fixed {
    /// Always four fractional digits, e.g. `1.5000`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:04}", abs / SCALE as u64, abs % SCALE as u64)
    }
}

impl fmt::Debug for Fixed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Decimals travel through canonical values as strings.
impl From<Fixed> for crate::codec::Value {
    fn from(v: Fixed) -> Self {
        crate::codec::Value::Str(v.to_string())
    }
}

impl Serialize for Fixed {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

/// Accepts JSON strings or numbers. Numbers are read through their shortest
/// decimal rendering, so `15.5` parses exactly.
impl<'de> Deserialize<'de> for Fixed {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = serde_json::Value::deserialize(d)?;
        let text = match &raw {
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Number(n) => n.to_string(),
            other => return Err(serde::de::Error::custom(format!("expected decimal, found {other}"))),
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fx(s: &str) -> Fixed {
        s.parse().unwrap()
    }

    #[test]
    fn parse_and_display() {
        assert_eq!(fx("15.5").raw(), 155_000);
        assert_eq!(fx("0.1").to_string(), "0.1000");
        assert_eq!(fx("-2.25").to_string(), "-2.2500");
        assert_eq!(fx("14").to_string(), "14.0000");
        assert!(matches!("1.23456".parse::<Fixed>(), Err(FixedError::TooPrecise(_))));
        for bad in ["", ".5", "1.", "1e3", "abc", "--1"] {
            assert!(bad.parse::<Fixed>().is_err(), "{bad}");
        }
    }

    #[test]
    fn half_even_rounding() {
        assert_eq!(div_round_half_even(5, 2), 2);
        assert_eq!(div_round_half_even(7, 2), 4);
        assert_eq!(div_round_half_even(-5, 2), -2);
        assert_eq!(div_round_half_even(10, 4), 2);
        assert_eq!(div_round_half_even(11, 4), 3);
        // 0.0001 * 0.5 = 0.00005 -> 0.0000 ; 0.0003 * 0.5 = 0.00015 -> 0.0002
        assert_eq!(fx("0.0001").mul(fx("0.5")).unwrap(), Fixed::ZERO);
        assert_eq!(fx("0.0003").mul(fx("0.5")).unwrap(), fx("0.0002"));
    }

    #[test]
    fn surplus_payment_arithmetic() {
        assert_eq!(fx("1.5").mul(fx("0.10")).unwrap(), fx("0.15"));
        assert_eq!(fx("12").mul(fx("0.7")).unwrap(), fx("8.4"));
    }

    #[test]
    fn json_numbers_parse_exactly() {
        let v: Fixed = serde_json::from_str("15.5").unwrap();
        assert_eq!(v, fx("15.5"));
        let v: Fixed = serde_json::from_str("0.1").unwrap();
        assert_eq!(v, fx("0.1"));
        let v: Fixed = serde_json::from_str("\"0.7\"").unwrap();
        assert_eq!(v, fx("0.7"));
    }
}
