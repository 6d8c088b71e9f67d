//! `start:stop:step` ranges with an inclusive stop, or a single value.

use std::fmt;
use std::str::FromStr;

use serde::{Serialize, Serializer};

/// Hard cap on expanded points, so a typo cannot allocate the machine away.
pub const MAX_POINTS: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Range {
    text: String,
    values: Vec<f64>,
}

impl Range {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// The points as nonnegative integers, for depth-valued ranges.
    pub fn as_depths(&self) -> Result<Vec<usize>, String> {
        self.values
            .iter()
            .map(|&x| {
                if x >= 0.0 && x.fract() == 0.0 {
                    Ok(x as usize)
                } else {
                    Err(format!("range {:?} must contain nonnegative integers, found {x}", self.text))
                }
            })
            .collect()
    }
}

fn number(part: &str, what: &str, text: &str) -> Result<f64, String> {
    let x: f64 = part
        .trim()
        .parse()
        .map_err(|_| format!("range {text:?}: {what} {part:?} is not a number (expected start:stop:step or a single value)"))?;
    if !x.is_finite() {
        return Err(format!("range {text:?}: {what} must be finite"));
    }
    Ok(x)
}

impl FromStr for Range {
    type Err = String;

    fn from_str(text: &str) -> Result<Self, String> {
        let parts: Vec<&str> = text.split(':').collect();
        let values = match parts.as_slice() {
            [one] => vec![number(one, "value", text)?],
            [a, b, c] => {
                let (start, stop, step) = (number(a, "start", text)?, number(b, "stop", text)?, number(c, "step", text)?);
                if !(step > 0.0) {
                    return Err(format!("range {text:?}: step must be positive"));
                }
                if stop < start {
                    return Err(format!("range {text:?}: stop is below start"));
                }
                // Tolerate rounding in the last step so 0:1:0.1 ends at 1.
                let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
                if count > MAX_POINTS {
                    return Err(format!("range {text:?} expands to {count} points (limit {MAX_POINTS})"));
                }
                (0..count).map(|i| start + i as f64 * step).collect()
            }
            _ => return Err(format!("range {text:?}: expected start:stop:step or a single value")),
        };
        Ok(Self { text: text.to_string(), values })
    }
}

impl fmt::Display for Range {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

impl Serialize for Range {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.text)
    }
}
