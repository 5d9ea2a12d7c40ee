//! Small statistics helpers used by the experiment modules.

use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, Normal};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than 2 values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Linear interpolation quantile, `q` in `[0, 1]`.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y = intercept + slope * x`.
pub fn ols(xs: &[f64], ys: &[f64]) -> LinearFit {
    let mx = mean(xs);
    let my = mean(ys);
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) };
    LinearFit {
        slope,
        intercept,
        r_squared,
    }
}

/// `P(X >= k)` for `X ~ Binomial(n, p)`.
pub fn binomial_upper_tail(k: u64, n: u64, p: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let b = Binomial::new(p, n).expect("valid binomial parameters");
    1.0 - b.cdf(k - 1)
}

/// Normal-approximation 95% half-width of a proportion.
pub fn proportion_ci95(successes: u64, n: u64) -> f64 {
    let p = successes as f64 / n as f64;
    Z95 * (p * (1.0 - p) / n as f64).sqrt()
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// One-sided Mann-Whitney test of `H1: values in `a` tend to be smaller
/// than values in `b``. Returns `(U_a, p_value)` where `U_a` counts pairs
/// with `a < b` (ties count one half). Exact permutation distribution when
/// `C(n_a + n_b, n_a) <= 200_000`, normal approximation otherwise.
pub fn mann_whitney_less(a: &[f64], b: &[f64]) -> (f64, f64) {
    let u_of = |xs: &[f64], ys: &[f64]| -> f64 {
        xs.iter()
            .map(|x| {
                ys.iter()
                    .map(|y| {
                        if x < y {
                            1.0
                        } else if x == y {
                            0.5
                        } else {
                            0.0
                        }
                    })
                    .sum::<f64>()
            })
            .sum()
    };
    let u = u_of(a, b);
    let (na, nb) = (a.len(), b.len());
    let total = na + nb;
    if binomial_coefficient(total, na) <= 200_000.0 {
        let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
        let mut at_least = 0u64;
        let mut count = 0u64;
        let mut chosen = Vec::with_capacity(na);
        enumerate_subsets(total, na, 0, &mut chosen, &mut |idx| {
            let mut in_a = vec![false; total];
            idx.iter().for_each(|&i| in_a[i] = true);
            let xa: Vec<f64> = (0..total).filter(|&i| in_a[i]).map(|i| pooled[i]).collect();
            let xb: Vec<f64> = (0..total).filter(|&i| !in_a[i]).map(|i| pooled[i]).collect();
            if u_of(&xa, &xb) >= u - 1e-9 {
                at_least += 1;
            }
            count += 1;
        });
        (u, at_least as f64 / count as f64)
    } else {
        let mu = (na * nb) as f64 / 2.0;
        let sd = ((na * nb * (total + 1)) as f64 / 12.0).sqrt();
        (u, 1.0 - normal_cdf((u - 0.5 - mu) / sd))
    }
}

fn binomial_coefficient(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn enumerate_subsets(n: usize, k: usize, start: usize, chosen: &mut Vec<usize>, visit: &mut impl FnMut(&[usize])) {
    if chosen.len() == k {
        visit(chosen);
        return;
    }
    for i in start..n {
        if n - i < k - chosen.len() {
            break;
        }
        chosen.push(i);
        enumerate_subsets(n, k, i + 1, chosen, visit);
        chosen.pop();
    }
}
