//! Grid syntax and CSV number formatting.

use std::fmt;
use std::str::FromStr;

/// Either a single value or an inclusive grid `start:stop:count`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl Grid {
    pub fn single(value: f64) -> Self {
        Self {
            start: value,
            stop: value,
            count: 1,
        }
    }

    pub fn is_axis(&self) -> bool {
        self.count > 1
    }

    /// Grid points, endpoints included exactly.
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.start];
        }
        let last = (self.count - 1) as f64;
        (0..self.count)
            .map(|i| {
                if i + 1 == self.count {
                    self.stop
                } else {
                    self.start + (self.stop - self.start) * i as f64 / last
                }
            })
            .collect()
    }

    /// The value of a non-axis grid.
    pub fn scalar(&self) -> f64 {
        self.start
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridError(String);

impl fmt::Display for GridError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for GridError {}

impl FromStr for Grid {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let num = |t: &str| -> Result<f64, GridError> {
            let v: f64 = t
                .trim()
                .parse()
                .map_err(|_| GridError(format!("'{t}' is not a number")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(GridError(format!("'{t}' is not finite")))
            }
        };
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            [v] => Ok(Self::single(num(v)?)),
            [a, b, n] => {
                let count: usize = n
                    .trim()
                    .parse()
                    .map_err(|_| GridError(format!("grid count '{n}' is not a positive integer")))?;
                if count < 2 {
                    return Err(GridError("a grid needs at least 2 points".into()));
                }
                Ok(Self {
                    start: num(a)?,
                    stop: num(b)?,
                    count,
                })
            }
            _ => Err(GridError(format!("'{s}' is neither a value nor start:stop:count"))),
        }
    }
}

/// `x` with 12 significant digits, like C's `%.12g`.
pub fn sig12(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        let g: Grid = "0:0.9:10".parse().unwrap();
        let v = g.values();
        assert_eq!(v.len(), 10);
        assert_eq!((v[0], v[9]), (0.0, 0.9));
        assert!((v[1] - 0.1).abs() < 1e-15);
        assert!(g.is_axis());
        let s: Grid = "0.25".parse().unwrap();
        assert_eq!(s.values(), vec![0.25]);
        assert!(!s.is_axis());
        assert!("0:1:1".parse::<Grid>().is_err());
        assert!("0:1".parse::<Grid>().is_err());
        assert!("a:1:3".parse::<Grid>().is_err());
        assert!("nan".parse::<Grid>().is_err());
    }

    #[test]
    fn significant_digits() {
        assert_eq!(sig12(0.5), "0.5");
        assert_eq!(sig12(1.0 / 3.0), "0.333333333333");
        assert_eq!(sig12(2.0 / 3.0 * 1e-9), "6.66666666667e-10");
        assert_eq!(sig12(123456.0), "123456");
        assert_eq!(sig12(-0.000123456789012345), "-0.000123456789012");
        assert_eq!(sig12(1e15), "1e15");
        assert_eq!(sig12(0.0), "0");
        assert_eq!(sig12(4.76241825426e-5), "4.76241825426e-5");
        assert_eq!(sig12(0.9999999999999), "1");
    }
}
