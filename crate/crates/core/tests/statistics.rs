mod common;

use mpis::estimators::{global_is, mp_log_evidence, Inference64};
use mpis::model::Model;
use mpis::oracle::enumerate;
use mpis::sampler::RngStream;
use mpis::stats::{chi_square, log_sum_exp, mean, std_error};
use mpis::zoo::{build, Params};

fn chain() -> (Model, f64) {
    let e = build("conjugate-chain", &Params::new(), 0).unwrap();
    (Model::compile(&e.train).unwrap(), e.analytic.unwrap().log_evidence)
}

#[test]
fn estimators_are_unbiased_and_below_the_evidence_in_log() {
    let (m, truth) = chain();
    let mut prev = [f64::NEG_INFINITY; 2];
    for k in [1, 4, 16] {
        let runs: Vec<[f64; 2]> = (0..400u64)
            .map(|s| [mp_log_evidence(&m, k, 11, s).unwrap(), global_is(&m, k, 12, s).unwrap().log_evidence])
            .collect();
        for (j, prev) in prev.iter_mut().enumerate() {
            let logs: Vec<f64> = runs.iter().map(|r| r[j]).collect();
            let p: Vec<f64> = logs.iter().map(|l| l.exp()).collect();
            assert!((mean(&p) - truth.exp()).abs() < 4.0 * std_error(&p), "K={k} method {j}");
            let ml = mean(&logs);
            let se = std_error(&logs);
            assert!(ml < truth + 2.0 * se, "K={k} method {j}: {ml}");
            if k == 1 {
                assert!(ml < truth, "K={k} method {j}: {ml}");
            }
            assert!(ml > *prev - 2.0 * se, "K={k} method {j}");
            *prev = ml;
        }
    }
}

#[test]
fn posterior_draws_match_the_enumerated_joint() {
    let mut tested = 0;
    for seed in 0..200u64 {
        let c = common::case(seed);
        let table = enumerate(&c.model, &c.store).unwrap();
        if table.len() > 64 || table.len() < 4 {
            continue;
        }
        let inf = Inference64::new(&c.model, &c.store).unwrap();
        let mut rng = RngStream::new(seed, 0, 7).rng();
        let mut counts = vec![0u64; table.len()];
        let draws = inf.posterior_sample(&mut rng, 20_000).unwrap();
        for d in &draws {
            let flat = table.slots.iter().fold(0, |acc, &(i, n)| acc * table.k + d.k[i][n]);
            counts[flat] += 1;
        }
        let (_, p) = chi_square(&counts, &table.probs());
        assert!(p > 1e-4, "seed {seed}: p = {p}");
        tested += 1;
        if tested == 8 {
            break;
        }
    }
    assert_eq!(tested, 8);
}

#[test]
fn oracle_normalizer_is_the_log_mean_ratio() {
    let c = common::case(3);
    let t = enumerate(&c.model, &c.store).unwrap();
    let want = log_sum_exp(&t.log_r) - (t.log_r.len() as f64).ln();
    assert!((t.normalizer - want).abs() < 1e-12);
}
