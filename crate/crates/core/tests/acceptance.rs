//! End-to-end acceptance checks, one test per criterion. Each test runs the
//! corresponding named experiment through the public runner and prints a
//! single pass/fail line (visible with `--nocapture`) before asserting.

use std::fs;
use std::sync::OnceLock;

use perelman_lab::cli::{emit_all, run_experiment, ExperimentConfig, RunReport};

fn report_for(text: &str, slot: &'static OnceLock<RunReport>) -> &'static RunReport {
    slot.get_or_init(|| {
        let cfg = ExperimentConfig::parse(text).unwrap();
        run_experiment(&cfg)
    })
}

static ENTROPY_W: OnceLock<RunReport> = OnceLock::new();
static FLOW_MONO: OnceLock<RunReport> = OnceLock::new();
static LGEO: OnceLock<RunReport> = OnceLock::new();

fn entropy_w() -> &'static RunReport {
    report_for("experiment = entropy_w\n", &ENTROPY_W)
}

fn flow_monotonicity() -> &'static RunReport {
    report_for("experiment = flow_monotonicity\n", &FLOW_MONO)
}

fn lgeo_identities() -> &'static RunReport {
    report_for("experiment = lgeo_identities\n", &LGEO)
}

/// Assert that the named checks of `report` all passed, printing one
/// summary line for the criterion.
fn assert_criterion(n: u32, desc: &str, report: &RunReport, names: &[&str]) {
    let mut failures = Vec::new();
    for name in names {
        match report.checks.iter().find(|c| c.name == *name) {
            Some(c) if c.pass => {}
            Some(c) => failures.push(format!(
                "{} = {} (tolerance {}){}",
                c.name,
                c.value,
                c.tolerance,
                c.detail.as_deref().map(|d| format!(": {d}")).unwrap_or_default()
            )),
            None => failures.push(format!("{name}: check missing from report")),
        }
    }
    let wall_ms: u128 = report
        .checks
        .iter()
        .filter(|c| names.contains(&c.name.as_str()))
        .map(|c| c.wall_ms)
        .sum();
    let ok = failures.is_empty();
    println!(
        "criterion {n} ({desc}): {} [{} checks, {wall_ms} ms]",
        if ok { "PASS" } else { "FAIL" },
        names.len()
    );
    assert!(ok, "criterion {n} ({desc}) failed:\n{}", failures.join("\n"));
}

fn all_names(report: &RunReport) -> Vec<&str> {
    report.checks.iter().map(|c| c.name.as_str()).collect()
}

#[test]
fn criterion_01_flat_space_energy_law() {
    assert_criterion(
        1,
        "flat-space energy of the Gaussian trajectory matches n/(2(t0-t))",
        entropy_w(),
        &["euclidean-energy-law-max-error"],
    );
}

#[test]
fn criterion_02_measure_conservation_and_order() {
    assert_criterion(
        2,
        "coupled torus run conserves the weighted measure at second order",
        flow_monotonicity(),
        &[
            "measure-conservation-max-deviation",
            "measure-conservation-refinement-ratio",
        ],
    );
}

#[test]
fn criterion_03_first_variations_match_finite_differences() {
    let report = {
        let cfg = ExperimentConfig::parse("experiment = variation_oracle\n").unwrap();
        run_experiment(&cfg)
    };
    let names = all_names(&report);
    assert_eq!(names.len(), 20, "expected 20 seeded variation checks");
    assert_criterion(
        3,
        "first variations of all four functionals match central differences",
        &report,
        &names,
    );
}

#[test]
fn criterion_04_monotonicity_and_production() {
    assert_criterion(
        4,
        "energy and ground-state quantities are non-decreasing; rate matches \
         production",
        flow_monotonicity(),
        &[
            "energy-monotone-slack",
            "lambda-monotone-slack",
            "lambda-k2-monotone-slack",
            "schrodinger-monotone-slack",
            "energy-rate-vs-production",
        ],
    );
}

#[test]
fn criterion_05_entropy_suite() {
    assert_criterion(
        5,
        "soliton entropy vanishes, flat entropy is nonnegative, scaling laws \
         hold, infimum rises toward zero",
        entropy_w(),
        &[
            "soliton-entropy-max",
            "soliton-production-max",
            "random-flat-entropy-min",
            "energy-scaling-residual",
            "entropy-scaling-residual",
            "mu-smallest-tau",
            "mu-monotone-slack",
            "mu-approach-zero-max",
        ],
    );
}

#[test]
fn criterion_06_geodesic_exactness_and_frames() {
    assert_criterion(
        6,
        "flat-space geodesics, lengths and boundary solves are exact; \
         transport frames obey the scaling law on all backends",
        lgeo_identities(),
        &["euclid-geodesic-max-error", "frame-gram-max-deviation"],
    );
}

#[test]
fn criterion_07_distance_identities_and_hessian_bounds() {
    assert_criterion(
        7,
        "distance identities hold at second order; Hessian and Laplacian \
         comparisons respect their bounds",
        lgeo_identities(),
        &[
            "sphere-identity-residual-max",
            "sphere-laplacian-slack-min",
            "sphere-identity-refinement-ratio",
            "torus-identity-residual-max",
            "torus-laplacian-slack-min",
            "torus-hessian-slack-min",
            "euclid-hessian-equality-max",
            "euclid-speed-ratio",
        ],
    );
}

#[test]
fn criterion_08_reduced_volume() {
    let report = {
        let cfg = ExperimentConfig::parse("experiment = reduced_volume\n").unwrap();
        run_experiment(&cfg)
    };
    let names = all_names(&report);
    assert_criterion(
        8,
        "reduced volume is constant on flat space, monotone and bounded on \
         the torus; scalar floor holds",
        &report,
        &names,
    );
}

#[test]
fn criterion_09_variant_flows() {
    let list = {
        let cfg = ExperimentConfig::parse("experiment = list_flow\n").unwrap();
        run_experiment(&cfg)
    };
    let rym = {
        let cfg = ExperimentConfig::parse("experiment = rym_flow\n").unwrap();
        run_experiment(&cfg)
    };
    let names = all_names(&list);
    assert_criterion(
        9,
        "scalar-coupled flow: reduction, nonnegative production, infimum \
         monotonicity",
        &list,
        &names,
    );
    let names = all_names(&rym);
    assert_criterion(
        9,
        "connection-coupled flow: reduction, rate match, ground-state \
         monotonicity, Yang-Mills decay",
        &rym,
        &names,
    );
}

#[test]
fn criterion_10_deterministic_reports() {
    let text = "experiment = entropy_w\n\
                seed = 42\n\
                backend.resolution = 16\n\
                sweep.tau = 0.2, 0.1\n\
                sweep.t = 0.0, 0.5\n";
    let cfg = ExperimentConfig::parse(text).unwrap();
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    emit_all(&run_experiment(&cfg), d1.path()).unwrap();
    emit_all(&run_experiment(&cfg), d2.path()).unwrap();

    let mut names: Vec<String> = fs::read_dir(d1.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(names.contains(&"report.json".to_string()));
    assert!(names.contains(&"checks.csv".to_string()));
    let mut failures = Vec::new();
    for name in &names {
        let a = fs::read(d1.path().join(name)).unwrap();
        let b = fs::read(d2.path().join(name)).unwrap();
        if a != b {
            failures.push(name.clone());
        }
    }
    let ok = failures.is_empty();
    println!(
        "criterion 10 (identical config and seed reproduce every report byte): {}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "files differ between identical runs: {failures:?}");
}
