//! Shapiro–Wilk W with Royston's coefficient and p-value approximations.

use statrs::distribution::{ContinuousCDF, Normal};

use super::{StatsError, TestKind, TestResult};

const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056];
const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
const C3: [f64; 4] = [0.5440, -0.39978, 0.025054, -6.714e-4];
const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

/// Half of the antisymmetric coefficient vector (largest first).
fn coefficients(n: usize, norm: &Normal) -> Vec<f64> {
    let half = n / 2;
    if n == 3 {
        return vec![std::f64::consts::FRAC_1_SQRT_2];
    }
    let an25 = n as f64 + 0.25;
    let m: Vec<f64> =
        (1..=half).map(|i| norm.inverse_cdf((i as f64 - 0.375) / an25)).collect();
    let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
    let ssumm2 = summ2.sqrt();
    let rsn = 1.0 / (n as f64).sqrt();
    let a1 = poly(&C1, rsn) - m[0] / ssumm2;
    let mut a = vec![0.0; half];
    a[0] = a1;
    let (first, fac) = if n > 5 {
        let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
        a[1] = a2;
        let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1])
            / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2))
            .sqrt();
        (2, fac)
    } else {
        (1, ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt())
    };
    for i in first..half {
        a[i] = -m[i] / fac;
    }
    a
}

/// W statistic and upper-tail p-value. Requires 3 ≤ n ≤ 5000 and a non-constant sample.
pub fn shapiro_wilk(x: &[f64]) -> Result<TestResult, StatsError> {
    let n = x.len();
    if n < 3 {
        return Err(StatsError::InsufficientData(format!("Shapiro-Wilk needs n >= 3, got {n}")));
    }
    if n > 5000 {
        return Err(StatsError::InvalidInput(format!("Shapiro-Wilk supports n <= 5000, got {n}")));
    }
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    if s[n - 1] - s[0] < 1e-19 * s[n - 1].abs().max(1.0) {
        return Err(StatsError::DegenerateSample("constant sample".into()));
    }
    let norm = Normal::new(0.0, 1.0).expect("unit normal");
    let a = coefficients(n, &norm);
    let mean = s.iter().sum::<f64>() / n as f64;
    let ss: f64 = s.iter().map(|v| (v - mean).powi(2)).sum();
    let num: f64 = a.iter().enumerate().map(|(i, ai)| ai * (s[n - 1 - i] - s[i])).sum();
    let w = (num * num / ss).min(1.0);

    let p = if n == 3 {
        let pi6 = 6.0 / std::f64::consts::PI;
        let stqr = std::f64::consts::PI / 3.0;
        (pi6 * (w.sqrt().asin() - stqr)).max(0.0)
    } else {
        let w1 = (1.0 - w).ln();
        let nf = n as f64;
        let (z, m, sd) = if n <= 11 {
            let gamma = -2.273 + 0.459 * nf;
            if w1 >= gamma {
                return Ok(TestResult { test: TestKind::ShapiroWilk, statistic: w, p_value: 0.0, n });
            }
            (-(gamma - w1).ln(), poly(&C3, nf), poly(&C4, nf).exp())
        } else {
            let ln_n = nf.ln();
            (w1, poly(&C5, ln_n), poly(&C6, ln_n).exp())
        };
        norm.sf((z - m) / sd)
    };
    Ok(TestResult { test: TestKind::ShapiroWilk, statistic: w, p_value: p.clamp(0.0, 1.0), n })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_points_exact() {
        // Equally spaced triple: W = 1, p = 1.
        let r = shapiro_wilk(&[1.0, 2.0, 3.0]).unwrap();
        assert!((r.statistic - 1.0).abs() < 1e-12);
        assert!((r.p_value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn outlier_gives_low_w() {
        let mut x = vec![1.0; 19];
        for (i, v) in x.iter_mut().enumerate() {
            *v += i as f64 * 1e-3;
        }
        x.push(10.0);
        let r = shapiro_wilk(&x).unwrap();
        assert!(r.statistic < 0.9);
        assert!(r.p_value < 1e-4);
    }

    #[test]
    fn guards() {
        assert!(matches!(shapiro_wilk(&[1.0, 2.0]), Err(StatsError::InsufficientData(_))));
        assert!(matches!(shapiro_wilk(&[2.0; 10]), Err(StatsError::DegenerateSample(_))));
    }
}
