//! Checked inequalities emitted by every certified step.

use serde::{Deserialize, Serialize};

/// One evaluated inequality `lhs ≤ rhs`. Names ending in `(ln)` compare logarithms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inequality {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

impl Inequality {
    pub fn le(name: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        // NaN on either side fails.
        let pass = lhs <= rhs;
        Inequality { name: name.into(), lhs, rhs, pass }
    }

    pub fn lt(name: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        let pass = lhs < rhs;
        Inequality { name: name.into(), lhs, rhs, pass }
    }
}

pub fn all_pass(list: &[Inequality]) -> bool {
    list.iter().all(|i| i.pass)
}

/// `ln(n!)` by direct summation.
pub fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// `ln(x)` with `ln(0) = -inf`.
pub fn ln0(x: f64) -> f64 {
    if x == 0.0 {
        f64::NEG_INFINITY
    } else {
        x.ln()
    }
}

/// `ln(e^a + e^b)` without overflow.
pub fn ln_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inequality_semantics() {
        assert!(Inequality::le("a", 1.0, 1.0).pass);
        assert!(!Inequality::lt("a", 1.0, 1.0).pass);
        assert!(!Inequality::le("a", f64::NAN, 1.0).pass);
        assert!(Inequality::le("a", f64::NEG_INFINITY, -1e300).pass);
    }

    #[test]
    fn log_helpers() {
        assert!((ln_factorial(5) - 120f64.ln()).abs() < 1e-13);
        assert!((ln_add(2f64.ln(), 3f64.ln()) - 5f64.ln()).abs() < 1e-15);
        assert_eq!(ln_add(f64::NEG_INFINITY, 0.0), 0.0);
    }
}
