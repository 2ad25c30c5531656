//! Reference implementations used to check the library. Each one follows the
//! textbook definition as directly as possible and shares no code with the crate.

#![allow(dead_code)]

use std::collections::{HashMap, HashSet};

use num::{BigInt, BigRational};

pub type Key = (i32, i32, i32);

/// State order: unobserved, occupied, free.
pub fn oracle_transition(s: f64) -> [[f64; 3]; 3] {
    let mut a = [[0.0; 3]; 3];
    // Column j holds the probabilities of leaving state j.
    let columns = [
        [s, (1.0 - s) / 2.0, (1.0 - s) / 2.0],
        [0.0, s, 1.0 - s],
        [0.0, 1.0 - s, s],
    ];
    for (j, col) in columns.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            a[i][j] = v;
        }
    }
    a
}

/// `normalize(diag(0, L, 1 - L) · A · x)`.
pub fn oracle_hmm_step(x: [f64; 3], l: f64, s: f64) -> [f64; 3] {
    let a = oracle_transition(s);
    let b = [[0.0, 0.0, 0.0], [0.0, l, 0.0], [0.0, 0.0, 1.0 - l]];
    let mut ba = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for m in 0..3 {
                ba[i][j] += b[i][m] * a[m][j];
            }
        }
    }
    let mut y = [0.0; 3];
    for i in 0..3 {
        for j in 0..3 {
            y[i] += ba[i][j] * x[j];
        }
    }
    let eta = y.iter().sum::<f64>();
    [y[0] / eta, y[1] / eta, y[2] / eta]
}

/// Updates needed for `state` (1 occupied, 2 free) to exceed `p_min`, starting
/// from the certain belief `start`. `None` if it never happens within `cap`.
pub fn oracle_latch_latency(
    start: [f64; 3],
    l: f64,
    s: f64,
    p_min: f64,
    state: usize,
    cap: usize,
) -> Option<usize> {
    let mut x = start;
    for n in 1..=cap {
        x = oracle_hmm_step(x, l, s);
        if x[state] > p_min {
            return Some(n);
        }
    }
    None
}

/// Bresenham via its closed form: along the dominant axis D, step `i` moves a
/// minor axis with extent `d` to `floor((2·i·d + D) / 2D)`.
pub fn oracle_bresenham(a: Key, b: Key) -> Vec<Key> {
    let s = [a.0 as i64, a.1 as i64, a.2 as i64];
    let e = [b.0 as i64, b.1 as i64, b.2 as i64];
    let d: Vec<i64> = (0..3).map(|i| (e[i] - s[i]).abs()).collect();
    let sign: Vec<i64> = (0..3).map(|i| if e[i] >= s[i] { 1 } else { -1 }).collect();
    let major = if d[0] >= d[1] && d[0] >= d[2] {
        0
    } else if d[1] >= d[2] {
        1
    } else {
        2
    };
    let n = d[major];
    if n == 0 {
        return vec![a];
    }
    (0..=n)
        .map(|i| {
            let mut p = [0i64; 3];
            for ax in 0..3 {
                let off = if ax == major {
                    i
                } else {
                    (2 * i * d[ax] + n).div_euclid(2 * n)
                };
                p[ax] = s[ax] + sign[ax] * off;
            }
            (p[0] as i32, p[1] as i32, p[2] as i32)
        })
        .collect()
}

/// Nearest-hit Euclidean distance by scanning every hit, capped at `trunc`.
pub fn oracle_edf(observed: &[Key], hits: &[Key], delta: f64, trunc: f64) -> HashMap<Key, f64> {
    observed
        .iter()
        .map(|&o| {
            let best = hits
                .iter()
                .map(|&h| {
                    let dx = (o.0 - h.0) as f64;
                    let dy = (o.1 - h.1) as f64;
                    let dz = (o.2 - h.2) as f64;
                    delta * (dx * dx + dy * dy + dz * dz).sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            (o, best.min(trunc))
        })
        .collect()
}

/// Otsu by evaluating the between-class variance `w0·w1·(μ0 − μ1)²` for every
/// split in exact rational arithmetic. Returns the lowest best `t`, where the
/// classes are `{s < t}` and `{s ≥ t}`.
pub fn oracle_otsu(hist: &[u64]) -> Option<u32> {
    let total: u64 = hist.iter().sum();
    let mut best: Option<(u32, BigRational)> = None;
    for t in 1..hist.len() {
        let (lo, hi) = hist.split_at(t);
        let n0: u64 = lo.iter().sum();
        let n1: u64 = hi.iter().sum();
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let mean = |part: &[u64], base: usize, n: u64| {
            let s: u64 = part
                .iter()
                .enumerate()
                .map(|(i, &h)| (i + base) as u64 * h)
                .sum();
            BigRational::new(BigInt::from(s), BigInt::from(n))
        };
        let mu0 = mean(lo, 0, n0);
        let mu1 = mean(hi, t, n1);
        let w0 = BigRational::new(BigInt::from(n0), BigInt::from(total));
        let w1 = BigRational::new(BigInt::from(n1), BigInt::from(total));
        let diff = mu0 - mu1;
        let var = w0 * w1 * diff.clone() * diff;
        match &best {
            Some((_, b)) if var <= *b => {}
            _ => best = Some((t as u32, var)),
        }
    }
    best.map(|(t, _)| t)
}

/// For every query, the number of changed keys within Chebyshev `radius`.
pub fn oracle_convolution(queries: &[Key], changed: &[Key], radius: i32) -> HashMap<Key, u32> {
    let changed: HashSet<Key> = changed.iter().copied().collect();
    queries
        .iter()
        .map(|&q| {
            let n = changed
                .iter()
                .filter(|c| {
                    (c.0 - q.0).abs() <= radius
                        && (c.1 - q.1).abs() <= radius
                        && (c.2 - q.2).abs() <= radius
                })
                .count() as u32;
            (q, n)
        })
        .collect()
}

pub fn chebyshev(a: Key, b: Key) -> i32 {
    (a.0 - b.0)
        .abs()
        .max((a.1 - b.1).abs())
        .max((a.2 - b.2).abs())
}
