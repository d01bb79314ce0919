//! Brute-force reference: every combination of sample indices, evaluated directly.
//!
//! Nothing here goes through factor tensors or contraction plans, so agreement with the
//! engine is an independent check of both.

use crate::error::{Error, Result};
use crate::model::{Model, Site, Which};
use crate::sampler::{ProposalKind, SampleStore};

pub const DEFAULT_CAP: u128 = 10_000_000;

/// `log r` for every index combination, with the log evidence estimate as normalizer.
#[derive(Clone, Debug)]
pub struct JointTable {
    /// `(latent, instance)` of each index, in the order combinations are laid out (row-major).
    pub slots: Vec<(usize, usize)>,
    pub k: usize,
    pub log_r: Vec<f64>,
    pub normalizer: f64,
}

fn lse(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn next(idx: &mut [usize], k: usize) -> bool {
    for d in (0..idx.len()).rev() {
        idx[d] += 1;
        if idx[d] < k {
            return true;
        }
        idx[d] = 0;
    }
    false
}

fn parents<'a>(store: &'a SampleStore, site: &Site, which: Which, inst: usize, chosen: impl Fn(usize, usize) -> usize) -> Vec<&'a [f64]> {
    site.parents(which)
        .iter()
        .enumerate()
        .map(|(s, &j)| {
            let pi = site.parent_instance(which, s, inst);
            store.value(j, pi, chosen(j, pi))
        })
        .collect()
}

pub fn enumerate(model: &Model, store: &SampleStore) -> Result<JointTable> {
    enumerate_with_cap(model, store, DEFAULT_CAP)
}

pub fn enumerate_with_cap(model: &Model, store: &SampleStore, cap: u128) -> Result<JointTable> {
    if store.kind() != ProposalKind::Parallel {
        return Err(Error::Usage("enumeration is defined for parallel proposal samples".into()));
    }
    let k = store.k();
    let slots: Vec<(usize, usize)> =
        model.latents().iter().enumerate().flat_map(|(i, s)| (0..s.instances).map(move |n| (i, n))).collect();
    let volume = model
        .latents()
        .iter()
        .chain(model.observations())
        .map(|s| s.instances as u128)
        .max()
        .unwrap_or(1)
        .max(1);
    let combos = (k as u128).checked_pow(slots.len() as u32).unwrap_or(u128::MAX);
    let entries = combos.saturating_mul(volume);
    if entries > cap {
        return Err(Error::SizeCap { entries, cap });
    }
    let mut slot_of: Vec<Vec<usize>> = model.latents().iter().map(|s| vec![0; s.instances]).collect();
    for (n, &(i, inst)) in slots.iter().enumerate() {
        slot_of[i][inst] = n;
    }

    // Proposal: mixture over every combination of proposal-parent samples.
    let mut log_q = vec![vec![0.0; k]; slots.len()];
    for (n, &(i, inst)) in slots.iter().enumerate() {
        let site = model.latent(i);
        let np = site.q_parents.len();
        for (kk, lq) in log_q[n].iter_mut().enumerate() {
            let z = store.value(i, inst, kk);
            let mut pk = vec![0usize; np];
            let mut terms = Vec::new();
            loop {
                let ps: Vec<&[f64]> = site
                    .q_parents
                    .iter()
                    .enumerate()
                    .map(|(s, &j)| store.value(j, site.parent_instance(Which::Q, s, inst), pk[s]))
                    .collect();
                terms.push(model.log_prob(site, Which::Q, inst, z, &ps)?);
                if !next(&mut pk, k) {
                    break;
                }
            }
            *lq = lse(&terms) - np as f64 * (k as f64).ln();
        }
    }

    let mut log_r = Vec::with_capacity(combos as usize);
    let mut idx = vec![0usize; slots.len()];
    loop {
        let chosen = |j: usize, pi: usize| idx[slot_of[j][pi]];
        let mut total = 0.0;
        for (n, &(i, inst)) in slots.iter().enumerate() {
            let site = model.latent(i);
            let z = store.value(i, inst, idx[n]);
            let lp = model.log_prob(site, Which::P, inst, z, &parents(store, site, Which::P, inst, chosen))?;
            total += lp - log_q[n][idx[n]];
        }
        for site in model.observations() {
            for inst in 0..site.instances {
                let ps = parents(store, site, Which::P, inst, chosen);
                total += model.log_prob(site, Which::P, inst, &site.data[inst..inst + 1], &ps)?;
            }
        }
        log_r.push(if total.is_nan() { f64::NEG_INFINITY } else { total });
        if !next(&mut idx, k) {
            break;
        }
    }
    let normalizer = lse(&log_r) - slots.len() as f64 * (k as f64).ln();
    Ok(JointTable { slots, k, log_r, normalizer })
}

impl JointTable {
    pub fn len(&self) -> usize {
        self.log_r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_r.is_empty()
    }

    /// Posterior probability of every combination.
    pub fn probs(&self) -> Vec<f64> {
        let z = lse(&self.log_r);
        self.log_r.iter().map(|l| (l - z).exp()).collect()
    }

    pub fn slot(&self, latent: usize, inst: usize) -> Option<usize> {
        self.slots.iter().position(|&s| s == (latent, inst))
    }

    /// Index of each slot in combination `c`.
    pub fn indices(&self, c: usize) -> Vec<usize> {
        let mut rem = c;
        let mut out = vec![0; self.slots.len()];
        for d in (0..out.len()).rev() {
            out[d] = rem % self.k;
            rem /= self.k;
        }
        out
    }

    /// Posterior mean of `f` applied to the index vector.
    pub fn moment(&self, f: impl Fn(&[usize]) -> f64) -> f64 {
        self.probs().iter().enumerate().map(|(c, p)| if *p == 0.0 { 0.0 } else { p * f(&self.indices(c)) }).sum()
    }

    /// Posterior distribution over the index of one slot.
    pub fn marginal(&self, latent: usize, inst: usize) -> Vec<f64> {
        let s = self.slot(latent, inst).expect("slot");
        let mut out = vec![0.0; self.k];
        for (c, p) in self.probs().iter().enumerate() {
            out[self.indices(c)[s]] += p;
        }
        out
    }

    /// Posterior distribution over several slots jointly, row-major in the given order.
    pub fn joint_marginal(&self, slots: &[(usize, usize)]) -> Vec<f64> {
        let ids: Vec<usize> = slots.iter().map(|&(i, n)| self.slot(i, n).expect("slot")).collect();
        let mut out = vec![0.0; self.k.pow(ids.len() as u32)];
        for (c, p) in self.probs().iter().enumerate() {
            let idx = self.indices(c);
            let flat = ids.iter().fold(0, |acc, &s| acc * self.k + idx[s]);
            out[flat] += p;
        }
        out
    }

    /// Distribution of `k_i` at `inst` given its generative parents' indices; `None` if the
    /// parents' configuration has zero probability.
    pub fn conditional(&self, model: &Model, latent: usize, inst: usize, parent_k: &[usize]) -> Option<Vec<f64>> {
        let site = model.latent(latent);
        let mut slots = vec![(latent, inst)];
        for (s, &j) in site.p_parents.iter().enumerate() {
            slots.push((j, site.parent_instance(Which::P, s, inst)));
        }
        let joint = self.joint_marginal(&slots);
        let off = parent_k.iter().fold(0, |acc, &k| acc * self.k + k);
        let stride = self.k.pow(parent_k.len() as u32);
        let row: Vec<f64> = (0..self.k).map(|kk| joint[kk * stride + off]).collect();
        let total: f64 = row.iter().sum();
        (total > 0.0).then(|| row.iter().map(|r| r / total).collect())
    }

    /// Exact posterior-weighted test likelihood, for test models whose latents all exist in
    /// the training model.
    pub fn predictive_log_likelihood(&self, train: &Model, test: &Model, store: &SampleStore) -> Result<f64> {
        let map: Vec<usize> = test
            .latents()
            .iter()
            .map(|s| {
                train
                    .latent_index(&s.name)
                    .filter(|&i| train.latent(i).instances == s.instances && !s.fresh)
                    .ok_or_else(|| Error::Usage(format!("test latent `{}` has no training counterpart", s.name)))
            })
            .collect::<Result<_>>()?;
        let probs = self.probs();
        let mut terms = Vec::new();
        for (c, p) in probs.iter().enumerate() {
            if *p == 0.0 {
                continue;
            }
            let idx = self.indices(c);
            let chosen = |j: usize, pi: usize| idx[self.slot(map[j], pi).unwrap()];
            let mut ll = 0.0;
            for site in test.observations() {
                for inst in 0..site.instances {
                    let ps: Vec<&[f64]> = site
                        .p_parents
                        .iter()
                        .enumerate()
                        .map(|(s, &j)| {
                            let pi = site.parent_instance(Which::P, s, inst);
                            store.value(map[j], pi, chosen(j, pi))
                        })
                        .collect();
                    ll += test.log_prob(site, Which::P, inst, &site.data[inst..inst + 1], &ps)?;
                }
            }
            terms.push(p.ln() + ll);
        }
        Ok(lse(&terms))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DistSpec, Expr, LatentDecl, ModelGraph, ObservationDecl, PlateDecl};
    use crate::sampler::draw;

    fn two_independent() -> Model {
        let g = ModelGraph {
            name: "pair".into(),
            latents: vec![
                LatentDecl::new("a", &[], &[], DistSpec::std_normal(), DistSpec::normal(Expr::c(0.3), Expr::c(1.2))),
                LatentDecl::new("b", &[], &[], DistSpec::std_normal(), DistSpec::normal(Expr::c(-0.2), Expr::c(0.8))),
            ],
            observations: vec![
                ObservationDecl::new("xa", &[], &["a"], DistSpec::normal(Expr::parent("a"), Expr::c(1.0)), vec![0.5]),
                ObservationDecl::new("xb", &[], &["b"], DistSpec::normal(Expr::parent("b"), Expr::c(1.0)), vec![-1.0]),
            ],
            ..Default::default()
        };
        Model::compile(&g).unwrap()
    }

    #[test]
    fn k_one_is_a_single_ratio() {
        let m = two_independent();
        let s = draw(&m, 1, 3, 0).unwrap();
        let t = enumerate(&m, &s).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.normalizer, t.log_r[0]);
    }

    #[test]
    fn independent_latents_separate() {
        let m = two_independent();
        let s = draw(&m, 3, 4, 0).unwrap();
        let t = enumerate(&m, &s).unwrap();
        let p = t.probs();
        let (ma, mb) = (t.marginal(0, 0), t.marginal(1, 0));
        for c in 0..9 {
            let ix = t.indices(c);
            assert!((p[c] - ma[ix[0]] * mb[ix[1]]).abs() < 1e-12);
        }
        assert!((t.moment(|_| 1.0) - 1.0).abs() < 1e-12);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rows_normalize_and_cap_is_enforced() {
        let g = ModelGraph {
            name: "chain".into(),
            plates: vec![PlateDecl::new("P", 2, None)],
            latents: vec![
                LatentDecl::new("a", &[], &[], DistSpec::std_normal(), DistSpec::normal(Expr::c(0.0), Expr::c(2.0))),
                LatentDecl::new("b", &["P"], &["a"], DistSpec::normal(Expr::parent("a"), Expr::c(1.0)), DistSpec::normal(Expr::c(0.0), Expr::c(2.0))),
            ],
            observations: vec![ObservationDecl::new("x", &["P"], &["b"], DistSpec::normal(Expr::parent("b"), Expr::c(1.0)), vec![1.0, 2.0])],
            ..Default::default()
        };
        let m = Model::compile(&g).unwrap();
        let s = draw(&m, 3, 1, 0).unwrap();
        let t = enumerate(&m, &s).unwrap();
        assert_eq!(t.len(), 27);
        for inst in 0..2 {
            for pk in 0..3 {
                let row = t.conditional(&m, 1, inst, &[pk]).unwrap();
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        assert!(matches!(enumerate_with_cap(&m, &s, 10), Err(Error::SizeCap { .. })));
    }

    #[test]
    fn does_not_use_the_engine() {
        let src = include_str!("oracle.rs");
        let body = &src[..src.find("#[cfg(test)]").unwrap()];
        for banned in ["contraction", "build_factors", "tape", "log_q_mp", "tensor"] {
            assert!(!body.contains(&format!("{banned}::")) && !body.contains(&format!("::{banned}")), "{banned}");
        }
    }
}
