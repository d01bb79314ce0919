//! The `verify` verb: engine against brute-force enumeration on one configured model.

use std::fmt;

use mpis::estimators::{conditional_row, Inference64, MomentQuery};
use mpis::oracle::{enumerate, JointTable};
use mpis::sampler::{draw, SampleStore};

use crate::config::{ExperimentConfig, Method};
use crate::runner::Experiment;
use crate::CliError;

pub const TOLERANCE: f64 = 1e-9;

/// Largest absolute engine/oracle difference per quantity at one K.
#[derive(Clone, Debug, PartialEq)]
pub struct Discrepancies {
    pub k: usize,
    pub log_evidence: f64,
    pub marginal_weights: f64,
    pub expectations: f64,
    pub conditionals: f64,
}

impl Discrepancies {
    pub fn max(&self) -> f64 {
        [self.log_evidence, self.marginal_weights, self.expectations, self.conditionals].into_iter().fold(0.0, f64::max)
    }
}

impl fmt::Display for Discrepancies {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "K={}: log_evidence {:.3e}  marginal_weights {:.3e}  expectations {:.3e}  conditionals {:.3e}",
            self.k, self.log_evidence, self.marginal_weights, self.expectations, self.conditionals
        )
    }
}

fn diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs()
    }
}

/// Compares every engine quantity on one set of parallel samples.
pub fn compare(model: &mpis::model::Model, store: &SampleStore) -> Result<Discrepancies, CliError> {
    let table: JointTable = enumerate(model, store).map_err(|e| match e {
        mpis::error::Error::SizeCap { .. } => CliError::Config(format!("{e}; reduce the model sizes in the config or the K values")),
        other => other.into(),
    })?;
    let k = store.k();
    let inf = Inference64::new(model, store)?;
    let mut d = Discrepancies { k, log_evidence: diff(inf.log_evidence()?, table.normalizer), marginal_weights: 0.0, expectations: 0.0, conditionals: 0.0 };

    let weights = inf.marginal_weights()?;
    let joints = inf.joint_tables()?;
    for (i, site) in model.latents().iter().enumerate() {
        for inst in 0..site.instances {
            let want = table.marginal(i, inst);
            for (kk, w) in want.iter().enumerate() {
                d.marginal_weights = d.marginal_weights.max(diff(weights[i].data()[inst * k + kk], *w));
            }
        }
        for c in 0..site.dim {
            let got = inf.expectation(&MomentQuery::Identity { latent: i, component: c })?;
            for inst in 0..site.instances {
                let slot = table.slot(i, inst).expect("slot");
                let want = table.moment(|idx| store.value(i, inst, idx[slot])[c]);
                d.expectations = d.expectations.max(diff(got.data()[inst], want));
            }
        }
        let parents = site.p_parents.len() as u32;
        for inst in 0..site.instances {
            for flat in 0..k.pow(parents) {
                let parent_k: Vec<usize> = (0..parents).rev().map(|p| flat / k.pow(p) % k).collect();
                let got = conditional_row(model, &joints[i], i, inst, &parent_k).ok();
                let want = table.conditional(model, i, inst, &parent_k);
                let e = match (got, want) {
                    (None, None) => 0.0,
                    (Some(g), Some(w)) => g.iter().zip(&w).map(|(a, b)| diff(*a, *b)).fold(0.0, f64::max),
                    _ => f64::INFINITY,
                };
                d.conditionals = d.conditionals.max(e);
            }
        }
    }
    Ok(d)
}

/// One comparison per configured K, on the training model.
pub fn verify(cfg: &ExperimentConfig) -> Result<Vec<Discrepancies>, CliError> {
    let exp = Experiment::build(cfg)?;
    cfg.k_values
        .iter()
        .map(|&k| {
            let store = draw(&exp.train, k, cfg.job_seed(Method::Mp, k), 0)?;
            compare(&exp.train, &store)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::parse(text).unwrap()
    }

    #[test]
    fn chain_agrees() {
        let r = verify(&cfg(r#"{"model": "conjugate-chain", "k_values": [1, 3]}"#)).unwrap();
        assert!(r.iter().all(|d| d.max() < TOLERANCE), "{r:?}");
    }

    #[test]
    fn discrete_occupancy_agrees() {
        let c = cfg(r#"{"model": "occupancy", "sizes": {"J": 1, "M": 1, "I": 1, "R": 2}, "k_values": [2]}"#);
        let r = verify(&c).unwrap();
        assert!(r[0].max() < TOLERANCE, "{r:?}");
    }

    #[test]
    fn oversized_models_are_size_errors() {
        let e = verify(&cfg(r#"{"model": "bus", "k_values": [4]}"#)).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("reduce"), "{e}");
    }
}
