//! Independent reference values for the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};

/// Erlang-B by the standard recursion `B(k) = a·B(k−1) / (k + a·B(k−1))`.
pub fn erlang_b(servers: u32, offered_load: f64) -> f64 {
    let mut b = 1.0;
    for k in 1..=servers {
        b = offered_load * b / (f64::from(k) + offered_load * b);
    }
    b
}

/// Erlang-B from the truncated Poisson sum, for cross-checking the recursion.
pub fn erlang_b_direct(servers: u32, a: f64) -> f64 {
    let mut term = 1.0;
    let mut total = 1.0;
    for k in 1..=servers {
        term *= a / f64::from(k);
        total += term;
    }
    term / total
}

/// States reachable from `(0, R)` under the station transition rules,
/// enumerated by brute force over the bounding box.
pub fn reachable_states(s: u32, r: u32) -> BTreeSet<(u32, u32)> {
    let step = |(n, j): (u32, u32)| -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        if n < s {
            out.push((n + 1, j));
        } else if j > 0 {
            out.push((n + 1, j - 1));
        }
        if n > 0 {
            out.push((n - 1, j));
        }
        if j < r && n < s {
            out.push((n, j + 1));
        }
        out
    };
    let mut seen = BTreeSet::from([(0, r)]);
    let mut queue = VecDeque::from([(0, r)]);
    while let Some(x) = queue.pop_front() {
        for y in step(x) {
            assert!(y.0 <= s + r && y.1 <= r, "left the bounding box");
            if seen.insert(y) {
                queue.push_back(y);
            }
        }
    }
    seen
}

/// Mean and variance of Beta(a, b).
pub fn beta_moments(a: f64, b: f64) -> (f64, f64) {
    let mean = a / (a + b);
    let var = a * b / ((a + b).powi(2) * (a + b + 1.0));
    (mean, var)
}

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}
