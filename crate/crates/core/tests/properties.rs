mod common;

use common::{case, conditional_rows, discrepancies};
use mpis::contraction::{Planner, SourceTerm};
use mpis::estimators::{Inference64, MomentQuery};
use mpis::sampler::plate_axes;
use mpis::tensor::{Axis, LogTensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, failure_persistence: None, ..ProptestConfig::default() }
}

fn marginal_signature(c: &common::Case, i: usize) -> (Vec<Axis>, Vec<usize>) {
    let mut sig = plate_axes(c.model.latent(i));
    sig.push((Axis::K(i as u32), c.store.k()));
    sig.into_iter().unzip()
}

proptest! {
    #![proptest_config(config(100))]

    #[test]
    fn engine_matches_enumeration(seed in any::<u64>()) {
        let c = case(seed);
        let d = discrepancies(&c);
        prop_assert!(d.iter().all(|&x| x < 1e-9), "seed {seed}: {d:?}");
    }
}

proptest! {
    #![proptest_config(config(48))]

    #[test]
    fn weights_and_rows_normalize(seed in any::<u64>()) {
        let c = case(seed);
        let inf = Inference64::new(&c.model, &c.store).unwrap();
        let k = c.store.k();
        for w in inf.marginal_weights().unwrap() {
            for row in w.data().chunks(k) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            }
        }
        for row in conditional_rows(&c) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn expectations_are_weighted_sums_of_samples(seed in any::<u64>()) {
        let c = case(seed);
        let inf = Inference64::new(&c.model, &c.store).unwrap();
        let k = c.store.k();
        let w = inf.marginal_weights().unwrap();
        for i in 0..c.model.num_latents() {
            let e = inf.expectation(&MomentQuery::Identity { latent: i, component: 0 }).unwrap();
            for inst in 0..c.model.latent(i).instances {
                let direct: f64 = (0..k).map(|kk| w[i].data()[inst * k + kk] * c.store.value(i, inst, kk)[0]).sum();
                prop_assert!((e.data()[inst] - direct).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn permuting_slots_only_permutes_weights(seed in any::<u64>()) {
        let mut c = case(seed);
        let k = c.store.k();
        let (le, w) = {
            let inf = Inference64::new(&c.model, &c.store).unwrap();
            (inf.log_evidence().unwrap(), inf.marginal_weights().unwrap())
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let i = rng.random_range(0..c.model.num_latents());
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut rng);
        c.store.permute_slots(i, &perm);
        let inf = Inference64::new(&c.model, &c.store).unwrap();
        prop_assert!((inf.log_evidence().unwrap() - le).abs() < 1e-12);
        let w2 = inf.marginal_weights().unwrap();
        for inst in 0..c.model.latent(i).instances {
            for (kk, &p) in perm.iter().enumerate() {
                prop_assert!((w2[i].data()[inst * k + kk] - w[i].data()[inst * k + p]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn elimination_order_does_not_matter(seed in any::<u64>(), other in any::<u64>()) {
        let c = case(seed);
        let base = Inference64::new(&c.model, &c.store).unwrap();
        let alt = Inference64::new(&c.model, &c.store).unwrap().with_planner(Planner::Random(other));
        prop_assert!((base.log_evidence().unwrap() - alt.log_evidence().unwrap()).abs() < 1e-10);
        for (a, b) in base.marginal_weights().unwrap().iter().zip(alt.marginal_weights().unwrap()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn source_gradients_match_finite_differences(seed in any::<u64>()) {
        let c = case(seed);
        let inf = Inference64::new(&c.model, &c.store).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(!seed);
        let sources: Vec<SourceTerm<f64>> = (0..c.model.num_latents())
            .map(|i| {
                let (axes, shape) = marginal_signature(&c, i);
                let n = shape.iter().product();
                let vals = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
                SourceTerm::Additive(LogTensor::new(axes, shape, vals).unwrap())
            })
            .collect();
        let (_, grads) = inf.differentiate(&sources).unwrap();
        let value_with = |s: usize, e: usize, delta: f64| {
            let mut moved = sources.clone();
            let SourceTerm::Additive(t) = &mut moved[s] else { unreachable!() };
            let mut raw = t.as_tensor().clone();
            raw.data_mut()[e] += delta;
            moved[s] = SourceTerm::Additive(LogTensor::from_tensor(raw).unwrap());
            inf.differentiate(&moved).unwrap().0
        };
        let h = 1e-5;
        for (s, g) in grads.iter().enumerate() {
            for (e, &an) in g.data().iter().enumerate() {
                let fd = (value_with(s, e, h) - value_with(s, e, -h)) / (2.0 * h);
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-3);
                prop_assert!(rel < 1e-6, "seed {seed} source {s} entry {e}: {an} vs {fd}");
            }
        }
    }
}
