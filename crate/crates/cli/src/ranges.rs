//! Range arguments: `N`, `LO:HI` for integers and `X`, `LO:HI:STEP` for floats.

use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IntRange {
    pub lo: u32,
    pub hi: u32,
}

impl IntRange {
    pub fn values(&self) -> impl Iterator<Item = u32> {
        self.lo..=self.hi
    }
}

impl FromStr for IntRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse = |v: &str| v.trim().parse::<u32>().map_err(|e| format!("{v:?}: {e}"));
        let (lo, hi) = match s.split_once(':') {
            Some((a, b)) => (parse(a)?, parse(b)?),
            None => {
                let v = parse(s)?;
                (v, v)
            }
        };
        if lo > hi {
            return Err(format!("empty range {lo}:{hi}"));
        }
        Ok(IntRange { lo, hi })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloatRange {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl FloatRange {
    /// Points `lo + k·step` up to `hi`, with a little slack for rounding.
    pub fn values(&self) -> Vec<f64> {
        if self.lo == self.hi {
            return vec![self.lo];
        }
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|k| self.lo + k as f64 * self.step).collect()
    }
}

impl FromStr for FloatRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(':')
            .map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}")))
            .collect::<Result<_, _>>()?;
        let r = match parts[..] {
            [x] => FloatRange {
                lo: x,
                hi: x,
                step: 1.0,
            },
            [lo, hi, step] => FloatRange { lo, hi, step },
            _ => return Err(format!("expected X or LO:HI:STEP, got {s:?}")),
        };
        if !(r.lo.is_finite() && r.hi.is_finite() && r.lo >= 0.0) {
            return Err(format!("range bounds must be finite and >= 0, got {s:?}"));
        }
        if r.lo > r.hi || !(r.step.is_finite() && r.step > 0.0) {
            return Err(format!("empty range or non-positive step in {s:?}"));
        }
        Ok(r)
    }
}
