use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;

use super::{forward_fill, Analytic, ZooEntry, P};
use crate::error::{Error, Result};
use crate::model::{DistSpec, Expr, LatentDecl, ModelGraph, ObservationDecl, PlateDecl};

fn normal(mean: Expr, std: f64) -> DistSpec {
    DistSpec::normal(mean, Expr::c(std))
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (x - mean).powi(2) / var)
}

/// `z1 ~ N(0, 1)`, `z_j ~ N(z_{j-1}, 1)`, `x ~ N(z_{depth-1}, 1)`, with independent proposals
/// equal to the prior marginals `N(0, j)`.
pub(super) fn chain(p: &P) -> Result<ZooEntry> {
    let depth = p.size("depth", 12)?;
    if depth < 2 {
        return Err(Error::Usage("conjugate-chain needs depth >= 2".into()));
    }
    let x = p.get("x");
    let exact = p.get("exact_q") != 0.0;
    if exact && depth != 2 {
        return Err(Error::Usage("exact_q is available for depth 2 only".into()));
    }
    let d = depth as f64;
    let mut latents = Vec::new();
    let mut analytic = Analytic { log_evidence: log_normal(x, 0.0, d), ..Default::default() };
    for j in 1..depth {
        let name = format!("z{j}");
        let prior = if j == 1 { normal(Expr::c(0.0), 1.0) } else { normal(Expr::parent(&format!("z{}", j - 1)), 1.0) };
        let parents: Vec<String> = if j == 1 { vec![] } else { vec![format!("z{}", j - 1)] };
        let pr: Vec<&str> = parents.iter().map(String::as_str).collect();
        let jf = j as f64;
        let q = if exact { normal(Expr::c(x / 2.0), 0.5f64.sqrt()) } else { normal(Expr::c(0.0), jf.sqrt()) };
        latents.push(LatentDecl::new(&name, &[], &pr, prior, q));
        analytic.posterior.insert(name, (jf * x / d, jf - jf * jf / d));
    }
    let last = format!("z{}", depth - 1);
    let graph = ModelGraph {
        name: "conjugate-chain".into(),
        latents,
        observations: vec![ObservationDecl::new("x", &[], &[&last], normal(Expr::parent(&last), 1.0), vec![x])],
        ..Default::default()
    };
    Ok(ZooEntry { name: String::new(), train: graph, test: None, analytic: Some(analytic) })
}

/// Depth-2 chain whose proposal is the exact posterior `N(x/2, 1/2)`.
pub fn chain_exact_posterior(x: f64) -> ModelGraph {
    let p = [("depth".to_string(), 2.0), ("x".to_string(), x), ("exact_q".to_string(), 1.0)].into_iter().collect();
    chain(&P { params: &p }).expect("valid parameters").train
}

/// `GlobalMean ~ N(0, 1)`, `GroupMean[g] ~ N(GlobalMean, 1)`, `x[g, n] ~ N(GroupMean[g], 1)`.
pub(super) fn tree(p: &P, rng: &mut ChaCha8Rng) -> Result<ZooEntry> {
    let g = p.size("G", 50)?;
    let n = p.size("N", 50)?;
    let mut graph = ModelGraph {
        name: "conjugate-tree".into(),
        plates: vec![PlateDecl::new("Groups", g, None), PlateDecl::new("Obs", n, Some("Groups"))],
        latents: vec![
            LatentDecl::new("GlobalMean", &[], &[], DistSpec::std_normal(), DistSpec::std_normal()),
            LatentDecl::new("GroupMean", &["Groups"], &["GlobalMean"], normal(Expr::parent("GlobalMean"), 1.0), normal(Expr::c(0.0), 2f64.sqrt())),
        ],
        observations: vec![ObservationDecl::new("x", &["Groups", "Obs"], &["GroupMean"], normal(Expr::parent("GroupMean"), 1.0), vec![0.0; g * n])],
        ..Default::default()
    };
    forward_fill(&mut graph, rng, |_, _| true)?;
    let x = &graph.observations[0].data;
    let cov = |a: usize, b: usize| 1.0 + f64::from(u8::from(a / n == b / n)) + f64::from(u8::from(a == b));
    let log_evidence = linear_gaussian_log_evidence(x, cov)?;

    // GlobalMean has covariance 1 with every datum.
    let m = DMatrix::from_fn(x.len(), x.len(), cov);
    let chol = m.cholesky().ok_or_else(|| Error::InvalidTensor("covariance is not positive definite".into()))?;
    let ones = DVector::from_element(x.len(), 1.0);
    let s_inv_ones = chol.solve(&ones);
    let mean = s_inv_ones.dot(&DVector::from_column_slice(x));
    let var = 1.0 - s_inv_ones.dot(&ones);
    let mut analytic = Analytic { log_evidence, ..Default::default() };
    analytic.posterior.insert("GlobalMean".into(), (mean, var));
    Ok(ZooEntry { name: String::new(), train: graph, test: None, analytic: Some(analytic) })
}

/// `log N(x; 0, S)` for a dense covariance given entrywise, via a Cholesky factorization.
pub fn linear_gaussian_log_evidence(x: &[f64], cov: impl Fn(usize, usize) -> f64) -> Result<f64> {
    let n = x.len();
    let m = DMatrix::from_fn(n, n, cov);
    let chol = m.cholesky().ok_or_else(|| Error::InvalidTensor("covariance is not positive definite".into()))?;
    let xv = DVector::from_column_slice(x);
    let quad = xv.dot(&chol.solve(&xv));
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(-0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + quad))
}
