//! Independent reference implementations used as test oracles. Deliberately naive.
#![allow(dead_code)]

use statrs::distribution::{ContinuousCDF, Normal};

/// Two-sided Wilcoxon p by enumerating all 2^n sign patterns of the midranks.
pub fn wilcoxon_enumerated(d: &[f64]) -> f64 {
    let d: Vec<f64> = d.iter().copied().filter(|v| *v != 0.0).collect();
    let n = d.len();
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks: Vec<f64> = abs
        .iter()
        .map(|&a| {
            let less = abs.iter().filter(|&&b| b < a).count() as f64;
            let eq = abs.iter().filter(|&&b| b == a).count() as f64;
            less + (eq + 1.0) / 2.0
        })
        .collect();
    let observed: f64 = ranks.iter().zip(&d).filter(|(_, v)| **v > 0.0).map(|(r, _)| r).sum();
    let (mut le, mut ge) = (0u64, 0u64);
    for mask in 0u64..(1 << n) {
        let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if s <= observed + 1e-9 {
            le += 1;
        }
        if s >= observed - 1e-9 {
            ge += 1;
        }
    }
    let total = (1u64 << n) as f64;
    (2.0 * (le.min(ge) as f64) / total).min(1.0)
}

/// Holm by definition: adjusted p_(i) = max_{j <= i} min(1, (m - j + 1) p_(j)).
pub fn holm_reference(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap().then(a.cmp(&b)));
    let mut out = vec![0.0; m];
    for (i, &oi) in order.iter().enumerate() {
        let mut best: f64 = 0.0;
        for (j, &oj) in order.iter().enumerate().take(i + 1) {
            best = best.max(((m - j) as f64 * p[oj]).min(1.0));
        }
        out[oi] = best;
    }
    out
}

pub fn cliffs_brute(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0i64;
    for x in a {
        for y in b {
            if x > y {
                s += 1;
            } else if x < y {
                s -= 1;
            }
        }
    }
    s as f64 / (a.len() * b.len()) as f64
}

/// Kruskal–Wallis H from hand-ranked data (average ranks, explicit tie correction).
pub fn kruskal_reference(groups: &[Vec<f64>]) -> f64 {
    let all: Vec<f64> = groups.iter().flatten().copied().collect();
    let n = all.len() as f64;
    let rank = |v: f64| {
        let less = all.iter().filter(|&&b| b < v).count() as f64;
        let eq = all.iter().filter(|&&b| b == v).count() as f64;
        less + (eq + 1.0) / 2.0
    };
    let mut h = 0.0;
    for g in groups {
        let r: f64 = g.iter().map(|&v| rank(v)).sum();
        h += r * r / g.len() as f64;
    }
    h = 12.0 / (n * (n + 1.0)) * h - 3.0 * (n + 1.0);
    let mut distinct = all.clone();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    let ties: f64 = distinct
        .iter()
        .map(|&v| {
            let t = all.iter().filter(|&&b| b == v).count() as f64;
            t * t * t - t
        })
        .sum();
    h / (1.0 - ties / (n * n * n - n))
}

/// Reference BCa: explicit z0 (mid-rank share below the estimate) and jackknife acceleration,
/// percentile endpoints by linear interpolation, widened to include the estimate.
pub fn bca_reference(x: &[f64], stat: impl Fn(&[f64]) -> f64, replicates: &[f64], level: f64) -> (f64, f64, f64) {
    let theta = stat(x);
    let b = replicates.len() as f64;
    let mut below = 0.0;
    for &r in replicates {
        if r < theta {
            below += 1.0;
        } else if r == theta {
            below += 0.5;
        }
    }
    let nrm = Normal::new(0.0, 1.0).unwrap();
    let mut sorted = replicates.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pick = |q: f64| {
        let h = (sorted.len() - 1) as f64 * q;
        let f = h.floor();
        let lo = sorted[f as usize];
        let hi = sorted[(f as usize + 1).min(sorted.len() - 1)];
        lo + (h - f) * (hi - lo)
    };
    let alpha = 1.0 - level;
    let share = below / b;
    let (ql, qh) = if share == 0.0 || share == 1.0 {
        (alpha / 2.0, 1.0 - alpha / 2.0)
    } else {
        let z0 = nrm.inverse_cdf(share);
        let n = x.len();
        let mut jack = Vec::with_capacity(n);
        for i in 0..n {
            let mut rest = x.to_vec();
            rest.remove(i);
            jack.push(stat(&rest));
        }
        let jbar = jack.iter().sum::<f64>() / n as f64;
        let mut s2 = 0.0;
        let mut s3 = 0.0;
        for t in &jack {
            s2 += (jbar - t) * (jbar - t);
            s3 += (jbar - t) * (jbar - t) * (jbar - t);
        }
        let a = if s2 == 0.0 { 0.0 } else { s3 / (6.0 * s2.powf(1.5)) };
        let zl = nrm.inverse_cdf(alpha / 2.0);
        let zh = nrm.inverse_cdf(1.0 - alpha / 2.0);
        (
            nrm.cdf(z0 + (z0 + zl) / (1.0 - a * (z0 + zl))),
            nrm.cdf(z0 + (z0 + zh) / (1.0 - a * (z0 + zh))),
        )
    };
    (theta, pick(ql).min(theta), pick(qh).max(theta))
}

/// Fraction of all n^2 ordered pairs with `s[j] - s[i] > d`.
pub fn rrf_brute(s: &[f64], d: f64) -> f64 {
    let mut c = 0usize;
    for a in s {
        for b in s {
            if b - a > d {
                c += 1;
            }
        }
    }
    c as f64 / (s.len() * s.len()) as f64
}

pub fn median_ref(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 }
}

/// Splitmix-style deterministic stream for generating oracle inputs.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_f64(&mut self) -> f64 {
        self.0 = self.0.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_f64() * n as f64) as usize
    }
}
