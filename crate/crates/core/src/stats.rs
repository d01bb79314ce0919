//! Small summary statistics used by tests and the experiment runner.

use statrs::distribution::{ChiSquared, ContinuousCDF};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn std_error(xs: &[f64]) -> f64 {
    std_dev(xs) / (xs.len() as f64).sqrt()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    crate::sampler::log_sum_exp_f64(xs)
}

pub fn log_mean_exp(xs: &[f64]) -> f64 {
    log_sum_exp(xs) - (xs.len() as f64).ln()
}

/// Pearson chi-square statistic and upper-tail p-value of `counts` against `probs`.
///
/// Cells with zero expected probability are skipped; they must also have zero counts.
pub fn chi_square(counts: &[u64], probs: &[f64]) -> (f64, f64) {
    let n: u64 = counts.iter().sum();
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&c, &p) in counts.iter().zip(probs) {
        if p <= 0.0 {
            if c > 0 {
                return (f64::INFINITY, 0.0);
            }
            continue;
        }
        let e = n as f64 * p;
        stat += (c as f64 - e).powi(2) / e;
        cells += 1;
    }
    if cells < 2 {
        return (stat, 1.0);
    }
    let dist = ChiSquared::new((cells - 1) as f64).expect("positive degrees of freedom");
    (stat, 1.0 - dist.cdf(stat))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        assert!((std_dev(&xs) - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((std_error(&xs) - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
        assert!((log_mean_exp(&[0.0, 0.0]) - 0.0).abs() < 1e-15);
        assert!((log_mean_exp(&[1000.0, 1000.0]) - 1000.0).abs() < 1e-12);
    }

    #[test]
    fn chi_square_reference() {
        // scipy.stats.chisquare([10, 20, 30], [20, 20, 20]) -> (10.0, 0.006737946999085467)
        let (s, p) = chi_square(&[10, 20, 30], &[1.0 / 3.0; 3]);
        assert!((s - 10.0).abs() < 1e-12);
        assert!((p - 0.006737946999085467).abs() < 1e-12);
        assert_eq!(chi_square(&[1, 0], &[0.0, 1.0]).1, 0.0);
    }
}
