use super::*;
use crate::estimators::mp_log_evidence;
use crate::model::validate;

fn build_default(name: &str, seed: u64) -> ZooEntry {
    build(name, &Params::new(), seed).unwrap()
}

#[test]
fn every_entry_validates() {
    for name in NAMES {
        for seed in 0..3 {
            let e = build_default(name, seed);
            assert!(validate(&e.train).is_empty(), "{name}: {:?}", validate(&e.train));
            if let Some(t) = &e.test {
                assert!(validate(t).is_empty(), "{name} test: {:?}", validate(t));
            }
            let back = ModelGraph::from_json(&e.train.to_json()).unwrap();
            assert_eq!(back, e.train);
        }
    }
}

#[test]
fn names_and_errors() {
    assert_eq!(build_default("movielens-like", 1).name, "movielens");
    assert!(matches!(build("nope", &Params::new(), 0), Err(Error::UnknownModel(_))));
    let bad: Params = [("Q".to_string(), 1.0)].into_iter().collect();
    assert!(build("bus", &bad, 0).is_err());
    let frac: Params = [("Y".to_string(), 1.5)].into_iter().collect();
    assert!(build("bus", &frac, 0).is_err());
}

#[test]
fn builds_are_deterministic() {
    let a = build_default("occupancy", 9);
    let b = build_default("occupancy", 9);
    assert_eq!(a.train, b.train);
    assert_ne!(a.train.observations[0].data, build_default("occupancy", 10).train.observations[0].data);
}

#[test]
fn conjugate_chain_closed_form() {
    let e = build_default("conjugate-chain", 0);
    let a = e.analytic.unwrap();
    let want = -0.5 * (4.0 * std::f64::consts::PI).ln() - 0.25;
    assert!((a.log_evidence - want).abs() < 1e-15);
    assert!((a.log_evidence - -1.515513).abs() < 1e-6);
    assert_eq!(a.posterior["z1"], (0.5, 0.5));

    let deep: Params = [("depth".to_string(), 4.0), ("x".to_string(), 2.0)].into_iter().collect();
    let a = build("conjugate-chain", &deep, 0).unwrap().analytic.unwrap();
    assert!((a.posterior["z3"].0 - 1.5).abs() < 1e-15);
    assert!((a.posterior["z2"].1 - 1.0).abs() < 1e-15);
}

#[test]
fn exact_posterior_proposal_has_zero_variance() {
    let g = chain_exact_posterior(1.0);
    let m = Model::compile(&g).unwrap();
    let want = -0.5 * (4.0 * std::f64::consts::PI).ln() - 0.25;
    for k in [1, 3, 16] {
        for run in 0..5 {
            let v = mp_log_evidence(&m, k, 3, run).unwrap();
            assert!((v - want).abs() < 1e-12, "K={k}: {v}");
        }
    }
}

#[test]
fn bus_structure() {
    let e = build_default("bus", 2);
    let names: Vec<&str> = e.train.latents.iter().map(|l| l.id.as_str()).collect();
    assert_eq!(
        names,
        ["GlobalMean", "GlobalVariance", "YearMean", "YearVariance", "YearBoroughWeight", "CompanyWeight", "JourneyTypeWeight"]
    );
    assert_eq!(e.train.latents[5].dim, 5);
    assert_eq!(e.train.latents[6].dim, 3);
    let test = e.test.unwrap();
    for g in [&e.train, &test] {
        let d = &g.observations[0].data;
        assert_eq!(d.len(), 3 * 3 * 4);
        assert!(d.iter().all(|&v| (0.0..=130.0).contains(&v) && v.fract() == 0.0));
    }
}

#[test]
fn chimpanzee_repeats_split_three_to_one() {
    let e = build_default("chimpanzees", 0);
    assert_eq!(e.train.plate("Repeats").unwrap().size, 3);
    assert_eq!(e.test.unwrap().plate("Repeats").unwrap().size, 1);
}

#[test]
fn held_out_instances_are_fresh() {
    let e = build_default("movielens", 0);
    let test = Model::compile(e.test.as_ref().unwrap()).unwrap();
    let z = test.latent(test.latent_index("z").unwrap());
    assert!(z.fresh);
    assert!(!test.latent(test.latent_index("mu").unwrap()).fresh);
    let occ = build_default("occupancy", 0);
    assert_eq!(occ.test.unwrap().plate("Routes").unwrap().size, 2);
}

#[test]
fn split_slices_the_right_entries() {
    let mut g = ModelGraph {
        name: "s".into(),
        plates: vec![PlateDecl::new("A", 2, None), PlateDecl::new("B", 3, Some("A"))],
        covariates: vec![crate::model::CovariateDecl::new("c", &["A", "B"], 2, (0..12).map(f64::from).collect())],
        ..Default::default()
    };
    g.observations.push(crate::model::ObservationDecl::new(
        "x",
        &["B", "A"],
        &[],
        crate::model::DistSpec::std_normal(),
        (0..6).map(f64::from).collect(),
    ));
    let (a, b) = split(&g, "B", 2).unwrap();
    assert_eq!(a.covariates[0].values, vec![0.0, 1.0, 2.0, 3.0, 6.0, 7.0, 8.0, 9.0]);
    assert_eq!(b.covariates[0].values, vec![4.0, 5.0, 10.0, 11.0]);
    assert_eq!(a.observations[0].data, vec![0.0, 1.0, 3.0, 4.0]);
    assert_eq!(b.observations[0].data, vec![2.0, 5.0]);
}

use crate::model::PlateDecl;

/// Evidence of the tree by integrating the global mean numerically, each group's likelihood
/// given the global mean being Gaussian with covariance `I + 11^T`.
fn tree_evidence_by_quadrature(x: &[f64], groups: usize, n: usize) -> f64 {
    let group_ll = |gm: f64, xs: &[f64]| {
        // (I + 11^T)^{-1} = I - 11^T / (1 + n); det = 1 + n.
        let d: Vec<f64> = xs.iter().map(|v| v - gm).collect();
        let s: f64 = d.iter().sum();
        let quad = d.iter().map(|v| v * v).sum::<f64>() - s * s / (1.0 + n as f64);
        -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + (1.0 + n as f64).ln() + quad)
    };
    let (lo, hi, steps) = (-12.0, 12.0, 24_000);
    let h = (hi - lo) / steps as f64;
    let mut total = 0.0;
    for s in 0..=steps {
        let gm = lo + s as f64 * h;
        let w = if s == 0 || s == steps { 0.5 } else { 1.0 };
        let ll: f64 = (0..groups).map(|g| group_ll(gm, &x[g * n..(g + 1) * n])).sum::<f64>()
            - 0.5 * (2.0 * std::f64::consts::PI).ln()
            - 0.5 * gm * gm;
        total += w * ll.exp();
    }
    (total * h).ln()
}

#[test]
fn tree_evidence_matches_sequential_marginalization() {
    for seed in 0..4 {
        let e = build_default("conjugate-tree", seed);
        let x = &e.train.observations[0].data;
        let want = tree_evidence_by_quadrature(x, 3, 2);
        let got = e.analytic.unwrap().log_evidence;
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}
