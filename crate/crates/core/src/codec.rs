//! Scores as three-digit decompositions and their textual output pattern.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decimal weight `10^-t` of digit position `t`.
pub const POSITION_WEIGHTS: [f64; 3] = [1.0, 0.1, 0.01];

/// The three assessment dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Visual,
    Editing,
    Preservation,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [Dimension::Visual, Dimension::Editing, Dimension::Preservation];

    pub fn label(self) -> &'static str {
        match self {
            Dimension::Visual => "visual",
            Dimension::Editing => "editing",
            Dimension::Preservation => "preservation",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Dimension {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "visual" => Ok(Dimension::Visual),
            "editing" => Ok(Dimension::Editing),
            "preservation" => Ok(Dimension::Preservation),
            other => Err(Error::Config(format!(
                "unknown dimension {other:?} (expected visual, editing or preservation)"
            ))),
        }
    }
}

/// Ones, tenths and hundredths digits of a score in `[0.00, 9.99]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DigitTriple([u8; 3]);

impl DigitTriple {
    pub fn new(d0: u8, d1: u8, d2: u8) -> Result<Self> {
        if d0 > 9 || d1 > 9 || d2 > 9 {
            return Err(Error::domain(format!("digits must be 0-9, got ({d0},{d1},{d2})")));
        }
        Ok(DigitTriple([d0, d1, d2]))
    }

    /// Builds the triple for an integer number of hundredths in `0..=999`.
    pub fn from_cents(cents: u16) -> Result<Self> {
        if cents > 999 {
            return Err(Error::domain(format!("{cents} hundredths exceeds 9.99")));
        }
        Ok(DigitTriple([
            (cents / 100) as u8,
            (cents / 10 % 10) as u8,
            (cents % 10) as u8,
        ]))
    }

    /// Rounds a real value to two decimals (half away from zero) and splits it.
    pub fn quantize(value: f64) -> Result<Self> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::domain(format!("cannot quantize {value}")));
        }
        let cents = (value * 100.0).round();
        if cents > 999.0 {
            return Err(Error::domain(format!("{value} rounds above 9.99")));
        }
        Self::from_cents(cents as u16)
    }

    pub fn digits(self) -> [u8; 3] {
        self.0
    }

    pub fn digit(self, position: usize) -> u8 {
        self.0[position]
    }

    pub fn cents(self) -> u16 {
        let [a, b, c] = self.0;
        a as u16 * 100 + b as u16 * 10 + c as u16
    }

    pub fn value(self) -> f64 {
        triple_value(self)
    }
}

impl fmt::Display for DigitTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c] = self.0;
        write!(f, "{a}.{b}{c}")
    }
}

impl FromStr for DigitTriple {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_score(s)
    }
}

/// `d0 + d1/10 + d2/100`, computed from the integer hundredths so the result
/// is the double nearest the two-decimal value.
pub fn triple_value(triple: DigitTriple) -> f64 {
    triple.cents() as f64 / 100.0
}

/// Parses `X.XX` or `X.X` into its digits. A single decimal zero-pads the
/// hundredths.
pub fn parse_score(text: &str) -> Result<DigitTriple> {
    let err = |position: usize, reason: String| Error::Parse {
        text: text.to_string(),
        position,
        reason,
    };
    let chars: Vec<char> = text.chars().collect();
    let digit_at = |i: usize| -> Result<u8> {
        match chars.get(i) {
            Some(c) if c.is_ascii_digit() => Ok(*c as u8 - b'0'),
            Some(c) => Err(err(i, format!("expected a digit, found {c:?}"))),
            None => Err(err(i, "unexpected end of input, expected a digit".into())),
        }
    };

    let d0 = digit_at(0)?;
    match chars.get(1) {
        Some('.') => {}
        Some(c) => return Err(err(1, format!("expected '.', found {c:?}"))),
        None => return Err(err(1, "unexpected end of input, expected '.'".into())),
    }
    let d1 = digit_at(2)?;
    let d2 = match chars.get(3) {
        None => 0,
        Some(_) => digit_at(3)?,
    };
    if let Some(c) = chars.get(4) {
        return Err(err(4, format!("unexpected trailing {c:?}")));
    }
    DigitTriple::new(d0, d1, d2)
}

/// Renders `"<dimension> score: <d0>.<d1><d2>"`.
pub fn format_prediction(dimension: Dimension, triple: DigitTriple) -> String {
    format!("{} score: {}", dimension.label(), triple)
}

/// Inverse of [`format_prediction`].
pub fn parse_prediction(text: &str) -> Result<(Dimension, DigitTriple)> {
    let (label, rest) = text.split_once(" score: ").ok_or_else(|| Error::Parse {
        text: text.to_string(),
        position: 0,
        reason: "missing \" score: \" separator".into(),
    })?;
    let dimension = label.parse()?;
    let triple = parse_score(rest).map_err(|e| match e {
        Error::Parse { position, reason, .. } => Error::Parse {
            text: text.to_string(),
            position: position + label.len() + " score: ".len(),
            reason,
        },
        other => other,
    })?;
    Ok((dimension, triple))
}

/// A two-decimal score on one dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    triple: DigitTriple,
    dimension: Dimension,
}

impl Score {
    pub fn new(triple: DigitTriple, dimension: Dimension) -> Self {
        Score { triple, dimension }
    }

    pub fn triple(&self) -> DigitTriple {
        self.triple
    }

    pub fn dimension(&self) -> Dimension {
        self.dimension
    }

    pub fn value(&self) -> f64 {
        self.triple.value()
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_prediction(self.dimension, self.triple))
    }
}

/// Admissible MOS range, in hundredths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRange {
    lo: u16,
    hi: u16,
}

impl Default for ScoreRange {
    fn default() -> Self {
        ScoreRange { lo: 100, hi: 500 }
    }
}

impl ScoreRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        let lo_t = DigitTriple::quantize(lo)?;
        let hi_t = DigitTriple::quantize(hi)?;
        if lo_t >= hi_t {
            return Err(Error::Config(format!("score range [{lo}, {hi}] is empty")));
        }
        Ok(ScoreRange {
            lo: lo_t.cents(),
            hi: hi_t.cents(),
        })
    }

    pub fn lo(&self) -> f64 {
        self.lo as f64 / 100.0
    }

    pub fn hi(&self) -> f64 {
        self.hi as f64 / 100.0
    }

    pub fn lo_cents(&self) -> u16 {
        self.lo
    }

    pub fn hi_cents(&self) -> u16 {
        self.hi
    }

    pub fn contains(&self, triple: DigitTriple) -> bool {
        (self.lo..=self.hi).contains(&triple.cents())
    }

    pub fn clamp_cents(&self, cents: u16) -> u16 {
        cents.clamp(self.lo, self.hi)
    }
}
