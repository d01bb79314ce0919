use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{forward_fill, split, ZooEntry, P};
use crate::error::Result;
use crate::model::{CovariateDecl, DistSpec, Expr, LatentDecl, ModelGraph, ObservationDecl, PlateDecl};

fn n(mean: Expr, std: Expr) -> DistSpec {
    DistSpec::normal(mean, std)
}

fn n01() -> DistSpec {
    DistSpec::std_normal()
}

fn par(s: &str) -> Expr {
    Expr::parent(s)
}

fn logvar_std(s: &str) -> Expr {
    Expr::std_from_log_var(par(s))
}

fn categories(rng: &mut ChaCha8Rng, count: usize, classes: usize) -> Vec<f64> {
    (0..count).map(|_| rng.random_range(0..classes) as f64).collect()
}

fn coins(rng: &mut ChaCha8Rng, count: usize) -> Vec<f64> {
    (0..count).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect()
}

fn entry(train: ModelGraph, test: ModelGraph) -> ZooEntry {
    ZooEntry { name: String::new(), train, test: Some(test), analytic: None }
}

/// Delays over years, boroughs and bus ids. Company and journey type weights are vector
/// latents indexed by per-journey category covariates. Train and test halves split the ids.
pub(super) fn bus(p: &P, rng: &mut ChaCha8Rng) -> Result<ZooEntry> {
    let (y, b, i) = (p.size("Y", 100)?, p.size("B", 100)?, p.size("I", 10_000)?);
    let (c, j) = (p.size("C", 1000)?, p.size("J", 1000)?);
    let total = y * b * 2 * i;
    let logits = par("YearBoroughWeight")
        .add(Expr::lookup("CompanyWeight", "Company"))
        .add(Expr::lookup("JourneyTypeWeight", "Journey"));
    let mut g = ModelGraph {
        name: "bus".into(),
        plates: vec![
            PlateDecl::new("Years", y, None),
            PlateDecl::new("Boroughs", b, Some("Years")),
            PlateDecl::new("Ids", 2 * i, Some("Boroughs")),
        ],
        latents: vec![
            LatentDecl::new("GlobalMean", &[], &[], n01(), n01()),
            LatentDecl::new("GlobalVariance", &[], &[], n01(), n01()),
            LatentDecl::new("YearMean", &["Years"], &["GlobalMean", "GlobalVariance"], n(par("GlobalMean"), logvar_std("GlobalVariance")), n01()),
            LatentDecl::new("YearVariance", &["Years"], &[], n01(), n01()),
            LatentDecl::new(
                "YearBoroughWeight",
                &["Years", "Boroughs"],
                &["YearMean", "YearVariance"],
                n(par("YearMean"), logvar_std("YearVariance")),
                n01(),
            ),
            LatentDecl::new("CompanyWeight", &[], &[], n01(), n01()).with_dim(c),
            LatentDecl::new("JourneyTypeWeight", &[], &[], n01(), n01()).with_dim(j),
        ],
        covariates: vec![
            CovariateDecl::new("Company", &["Years", "Boroughs", "Ids"], 1, categories(rng, total, c)),
            CovariateDecl::new("Journey", &["Years", "Boroughs", "Ids"], 1, categories(rng, total, j)),
        ],
        observations: vec![ObservationDecl::new(
            "Delay",
            &["Years", "Boroughs", "Ids"],
            &["YearBoroughWeight", "CompanyWeight", "JourneyTypeWeight"],
            DistSpec::NegativeBinomial { total_count: Expr::c(131.0), logits },
            vec![0.0; total],
        )],
        ..Default::default()
    };
    forward_fill(&mut g, rng, |_, v| v <= 130.0)?;
    let (train, test) = split(&g, "Ids", i)?;
    Ok(entry(train, test))
}

/// Lever pulls per actor, block and repeat, with varying intercepts and a condition-dependent
/// prosocial slope. The last `max(1, round(R / 6))` repeats are held out.
pub(super) fn chimpanzees(p: &P, rng: &mut ChaCha8Rng) -> Result<ZooEntry> {
    let (a, b, r) = (p.size("A", 100)?, p.size("B", 100)?, p.size("R", 1000)?);
    if r < 2 {
        return Err(crate::error::Error::Usage("chimpanzees needs R >= 2 to hold out repeats".into()));
    }
    let test_r = ((r as f64 / 6.0).round() as usize).max(1);
    let total = a * b * r;
    let wide = || Expr::c(10f64.sqrt());
    let logits = par("alpha")
        .add(par("alpha_actor"))
        .add(par("alpha_block"))
        .add(par("beta_P").add(par("beta_PC").mul(Expr::cov("Condition"))).mul(Expr::cov("ProsocLeft")));
    let hc = || DistSpec::HalfCauchy { scale: Expr::c(1.0) };
    let abr = ["Actors", "Blocks", "Repeats"];
    let mut g = ModelGraph {
        name: "chimpanzees".into(),
        plates: vec![
            PlateDecl::new("Actors", a, None),
            PlateDecl::new("Blocks", b, Some("Actors")),
            PlateDecl::new("Repeats", r, Some("Blocks")),
        ],
        latents: vec![
            LatentDecl::new("sigma_actor", &[], &[], hc(), hc()),
            LatentDecl::new("sigma_block", &[], &[], hc(), hc()),
            LatentDecl::new("beta_PC", &[], &[], n(Expr::c(0.0), wide()), n(Expr::c(0.0), wide())),
            LatentDecl::new("beta_P", &[], &[], n(Expr::c(0.0), wide()), n(Expr::c(0.0), wide())),
            LatentDecl::new("alpha", &[], &[], n(Expr::c(0.0), wide()), n(Expr::c(0.0), wide())),
            LatentDecl::new("alpha_actor", &["Actors"], &["sigma_actor"], n(Expr::c(0.0), par("sigma_actor").sqrt()), n01()),
            LatentDecl::new("alpha_block", &["Actors", "Blocks"], &["sigma_block"], n(Expr::c(0.0), par("sigma_block").sqrt()), n01()),
        ],
        covariates: vec![
            CovariateDecl::new("Condition", &abr, 1, coins(rng, total)),
            CovariateDecl::new("ProsocLeft", &abr, 1, coins(rng, total)),
        ],
        observations: vec![ObservationDecl::new(
            "y",
            &abr,
            &["alpha", "alpha_actor", "alpha_block", "beta_P", "beta_PC"],
            DistSpec::Bernoulli { logits },
            vec![0.0; total],
        )],
        ..Default::default()
    };
    forward_fill(&mut g, rng, |_, _| true)?;
    let (train, test) = split(&g, "Repeats", r - test_r)?;
    Ok(entry(train, test))
}

/// Binary ratings of films by users with per-user preference vectors over film features.
/// The test set is an equally sized group of new users.
pub(super) fn movielens(p: &P, rng: &mut ChaCha8Rng) -> Result<ZooEntry> {
    let (m, films, f) = (p.size("M", 10_000)?, p.size("N", 10_000)?, p.size("F", 100)?);
    let mut g = ModelGraph {
        name: "movielens".into(),
        plates: vec![PlateDecl::new("Users", 2 * m, None), PlateDecl::new("Films", films, Some("Users"))],
        latents: vec![
            LatentDecl::new("mu", &[], &[], n01(), n01()).with_dim(f),
            LatentDecl::new("psi", &[], &[], n01(), n01()).with_dim(f),
            LatentDecl::new("z", &["Users"], &["mu", "psi"], n(par("mu"), logvar_std("psi")), n01()).with_dim(f),
        ],
        covariates: vec![CovariateDecl::new("x", &["Films"], f, coins(rng, films * f))],
        observations: vec![ObservationDecl::new(
            "Rating",
            &["Users", "Films"],
            &["z"],
            DistSpec::Bernoulli { logits: par("z").dot(Expr::cov("x")) },
            vec![0.0; 2 * m * films],
        )],
        ..Default::default()
    };
    forward_fill(&mut g, rng, |_, _| true)?;
    let (train, mut test) = split(&g, "Users", m)?;
    test.fresh_plates = vec!["Users".into()];
    Ok(entry(train, test))
}

/// Detections per bird species, year, route and repeat, with a discrete true-presence latent
/// per species, year and route. Test routes are new routes.
pub(super) fn occupancy(p: &P, rng: &mut ChaCha8Rng) -> Result<ZooEntry> {
    let (j, m, i, r) = (p.size("J", 100)?, p.size("M", 100)?, p.size("I", 10_000)?, p.size("R", 100)?);
    let test_i = (i / 2).max(1);
    let routes = i + test_i;
    let weather: Vec<f64> = (0..m * routes).map(|_| rng.sample(StandardNormal)).collect();
    let jmir = ["Birds", "Years", "Routes", "Repeats"];
    let z_logits = par("BirdYearMean").mul(par("WeatherWeight")).mul(Expr::cov("Weather"));
    let y_logits = par("z")
        .mul(par("QualityWeight"))
        .mul(Expr::cov("Quality"))
        .add(Expr::c(1.0).sub(par("z")).mul(Expr::c(-10.0)));
    let hyper = |id: &str| LatentDecl::new(id, &[], &[], n01(), n01());
    let mut g = ModelGraph {
        name: "occupancy".into(),
        plates: vec![
            PlateDecl::new("Birds", j, None),
            PlateDecl::new("Years", m, Some("Birds")),
            PlateDecl::new("Routes", routes, Some("Years")),
            PlateDecl::new("Repeats", r, Some("Routes")),
        ],
        latents: vec![
            hyper("mu_BirdMean"),
            hyper("sigma_BirdMean"),
            hyper("mu_QualityWeight"),
            hyper("sigma_QualityWeight"),
            hyper("mu_WeatherWeight"),
            hyper("sigma_WeatherWeight"),
            LatentDecl::new(
                "QualityWeight",
                &["Birds"],
                &["mu_QualityWeight", "sigma_QualityWeight"],
                n(par("mu_QualityWeight"), logvar_std("sigma_QualityWeight")),
                n01(),
            ),
            LatentDecl::new(
                "WeatherWeight",
                &["Birds"],
                &["mu_WeatherWeight", "sigma_WeatherWeight"],
                n(par("mu_WeatherWeight"), logvar_std("sigma_WeatherWeight")),
                n01(),
            ),
            LatentDecl::new("BirdMean", &["Birds"], &["mu_BirdMean", "sigma_BirdMean"], n(par("mu_BirdMean"), logvar_std("sigma_BirdMean")), n01()),
            LatentDecl::new("BirdYearMean", &["Birds", "Years"], &["BirdMean"], n(par("BirdMean"), Expr::c(1.0)), n01()),
            LatentDecl::new(
                "z",
                &["Birds", "Years", "Routes"],
                &["BirdYearMean", "WeatherWeight"],
                DistSpec::Bernoulli { logits: z_logits.clone() },
                DistSpec::Bernoulli { logits: z_logits },
            )
            .with_q_parents(&["BirdYearMean", "WeatherWeight"]),
        ],
        covariates: vec![
            CovariateDecl::new("Weather", &["Years", "Routes"], 1, weather),
            CovariateDecl::new("Quality", &jmir, 1, coins(rng, j * m * routes * r)),
        ],
        observations: vec![ObservationDecl::new(
            "y",
            &jmir,
            &["z", "QualityWeight"],
            DistSpec::Bernoulli { logits: y_logits },
            vec![0.0; j * m * routes * r],
        )],
        ..Default::default()
    };
    forward_fill(&mut g, rng, |_, _| true)?;
    let (train, mut test) = split(&g, "Routes", i)?;
    test.fresh_plates = vec!["Routes".into()];
    Ok(entry(train, test))
}
