use rand::Rng;

use super::IndexSample;
use crate::error::{Error, Result};
use crate::model::{Model, Which};
use crate::sampler::SampleStore;
use crate::stats::log_mean_exp;

/// Log of the test-data likelihood averaged over posterior samples.
///
/// Test latents that also exist in the training model (same name, same instance count, not
/// in a fresh plate) take the training sample chosen by each index sample. The rest are
/// drawn from their prior given the values of their parents.
pub fn predictive_log_likelihood<R: Rng + ?Sized>(
    train: &Model,
    test: &Model,
    store: &SampleStore,
    samples: &[IndexSample],
    rng: &mut R,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Usage("at least one posterior sample is required".into()));
    }
    let source: Vec<Option<usize>> = test
        .latents()
        .iter()
        .map(|s| {
            train.latent_index(&s.name).filter(|&i| {
                let t = train.latent(i);
                !s.fresh && t.instances == s.instances && t.dim == s.dim
            })
        })
        .collect();

    let mut lls = Vec::with_capacity(samples.len());
    for sample in samples {
        let mut values: Vec<Vec<f64>> = test.latents().iter().map(|s| vec![0.0; s.instances * s.dim]).collect();
        for &j in test.order() {
            let site = test.latent(j);
            let d = site.dim;
            match source[j] {
                Some(i) => {
                    for inst in 0..site.instances {
                        values[j][inst * d..(inst + 1) * d].copy_from_slice(sample.value(store, i, inst));
                    }
                }
                None => {
                    let mut out = vec![0.0; site.instances * d];
                    for inst in 0..site.instances {
                        let parents = parents_of(test, &values, site, inst);
                        test.sample(site, Which::P, inst, &parents, rng, &mut out[inst * d..(inst + 1) * d])?;
                    }
                    values[j] = out;
                }
            }
        }
        let mut ll = 0.0;
        for site in test.observations() {
            for inst in 0..site.instances {
                let parents = parents_of(test, &values, site, inst);
                ll += test.log_prob(site, Which::P, inst, &site.data[inst..inst + 1], &parents)?;
            }
        }
        lls.push(if ll.is_nan() { f64::NEG_INFINITY } else { ll });
    }
    Ok(log_mean_exp(&lls))
}

fn parents_of<'v>(model: &Model, values: &'v [Vec<f64>], site: &crate::model::Site, inst: usize) -> Vec<&'v [f64]> {
    site.p_parents
        .iter()
        .enumerate()
        .map(|(s, &j)| {
            let d = model.latent(j).dim;
            let pi = site.parent_instance(Which::P, s, inst);
            &values[j][pi * d..(pi + 1) * d]
        })
        .collect()
}
