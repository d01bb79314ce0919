//! Distribution families and their log densities.
//!
//! Normal takes a standard deviation. Where a model writes a variance `exp(v)` the model
//! definition passes `exp(v / 2)`; where it writes a plain variance it passes `sqrt`.

use std::f64::consts::{LN_2, PI};

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::expr::Expr;

/// A distribution family with parameter expressions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DistSpec {
    Normal { mean: Expr, std: Expr },
    HalfCauchy { scale: Expr },
    Bernoulli { logits: Expr },
    NegativeBinomial { total_count: Expr, logits: Expr },
    Binomial { total_count: Expr, logits: Expr },
}

impl DistSpec {
    pub fn normal(mean: Expr, std: Expr) -> Self {
        DistSpec::Normal { mean, std }
    }

    pub fn std_normal() -> Self {
        DistSpec::Normal { mean: Expr::Const(0.0), std: Expr::Const(1.0) }
    }

    pub fn params(&self) -> Vec<&Expr> {
        match self {
            DistSpec::Normal { mean, std } => vec![mean, std],
            DistSpec::HalfCauchy { scale } => vec![scale],
            DistSpec::Bernoulli { logits } => vec![logits],
            DistSpec::NegativeBinomial { total_count, logits }
            | DistSpec::Binomial { total_count, logits } => vec![total_count, logits],
        }
    }

    pub fn family(&self) -> Family {
        match self {
            DistSpec::Normal { .. } => Family::Normal,
            DistSpec::HalfCauchy { .. } => Family::HalfCauchy,
            DistSpec::Bernoulli { .. } => Family::Bernoulli,
            DistSpec::NegativeBinomial { .. } => Family::NegativeBinomial,
            DistSpec::Binomial { .. } => Family::Binomial,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Normal,
    HalfCauchy,
    Bernoulli,
    NegativeBinomial,
    Binomial,
}

impl Family {
    pub fn is_discrete(self) -> bool {
        matches!(self, Family::Bernoulli | Family::NegativeBinomial | Family::Binomial)
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Normal => "normal",
            Family::HalfCauchy => "half_cauchy",
            Family::Bernoulli => "bernoulli",
            Family::NegativeBinomial => "negative_binomial",
            Family::Binomial => "binomial",
        }
    }
}

/// Log of the logistic sigmoid, accurate for large `|x|`.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn is_count(v: f64) -> bool {
    v >= 0.0 && v.fract() == 0.0 && v.is_finite()
}

/// Log density (or mass) of `value` with resolved parameters `p`.
///
/// Values outside the support give `-inf`. Parameters must already be checked finite and
/// inside their domain.
pub fn log_prob(family: Family, p: &[f64], value: f64) -> f64 {
    match family {
        Family::Normal => {
            let (mean, std) = (p[0], p[1]);
            let z = (value - mean) / std;
            -0.5 * z * z - std.ln() - 0.5 * (2.0 * PI).ln()
        }
        Family::HalfCauchy => {
            let s = p[0];
            if value < 0.0 {
                return f64::NEG_INFINITY;
            }
            let z = value / s;
            LN_2 - PI.ln() - s.ln() - z.mul_add(z, 1.0).ln()
        }
        Family::Bernoulli => {
            let l = p[0];
            if value == 1.0 {
                log_sigmoid(l)
            } else if value == 0.0 {
                log_sigmoid(-l)
            } else {
                f64::NEG_INFINITY
            }
        }
        Family::NegativeBinomial => {
            let (r, l) = (p[0], p[1]);
            if !is_count(value) {
                return f64::NEG_INFINITY;
            }
            ln_gamma(value + r) - ln_gamma(r) - ln_gamma(value + 1.0)
                + value * log_sigmoid(l)
                + r * log_sigmoid(-l)
        }
        Family::Binomial => {
            let (n, l) = (p[0], p[1]);
            if !is_count(value) || value > n {
                return f64::NEG_INFINITY;
            }
            ln_gamma(n + 1.0) - ln_gamma(value + 1.0) - ln_gamma(n - value + 1.0)
                + value * log_sigmoid(l)
                + (n - value) * log_sigmoid(-l)
        }
    }
}

/// Checks parameter domains; returns a description of the first violation.
pub fn check_params(family: Family, p: &[f64]) -> Result<(), String> {
    let names: &[&str] = match family {
        Family::Normal => &["mean", "std"],
        Family::HalfCauchy => &["scale"],
        Family::Bernoulli => &["logits"],
        Family::NegativeBinomial | Family::Binomial => &["total_count", "logits"],
    };
    for (v, n) in p.iter().zip(names) {
        if !v.is_finite() {
            return Err(format!("parameter `{n}` of {} is {v}", family.name()));
        }
    }
    let bad = match family {
        Family::Normal => (p[1] <= 0.0).then_some("std must be positive"),
        Family::HalfCauchy => (p[0] <= 0.0).then_some("scale must be positive"),
        Family::Bernoulli => None,
        Family::NegativeBinomial => (p[0] <= 0.0).then_some("total_count must be positive"),
        Family::Binomial => (!is_count(p[0])).then_some("total_count must be a nonnegative integer"),
    };
    match bad {
        Some(m) => Err(format!("{}: {m} (got {:?})", family.name(), p)),
        None => Ok(()),
    }
}

pub fn sample<R: Rng + ?Sized>(family: Family, p: &[f64], rng: &mut R) -> f64 {
    match family {
        Family::Normal => {
            let z: f64 = StandardNormal.sample(rng);
            p[0] + p[1] * z
        }
        Family::HalfCauchy => {
            let u: f64 = rng.random();
            (p[0] * (0.5 * PI * u).tan()).abs()
        }
        Family::Bernoulli => {
            let u: f64 = rng.random();
            if u < sigmoid(p[0]) {
                1.0
            } else {
                0.0
            }
        }
        Family::NegativeBinomial => {
            // Gamma-Poisson mixture with mean r * exp(logits).
            let g = Gamma::new(p[0], p[1].exp()).expect("validated gamma parameters");
            let lambda: f64 = g.sample(rng);
            if lambda <= 0.0 {
                0.0
            } else {
                Poisson::new(lambda).map(|d| d.sample(rng)).unwrap_or(f64::INFINITY)
            }
        }
        Family::Binomial => {
            let b = Binomial::new(p[0] as u64, sigmoid(p[1])).expect("validated binomial");
            b.sample(rng) as f64
        }
    }
}
