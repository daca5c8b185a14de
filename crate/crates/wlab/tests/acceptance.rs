//! Acceptance suite: one line per criterion, run on the shipped configs.
//!
//! Criterion 8 asks for a blow-up of `Ψ(Q)` that the discretised functional
//! does not reach within three halvings (its growth rate is 2^{1/8} per
//! halving, for a cumulative 1.27 against the required 2). It is run at full
//! strength and reported as FAIL; every other criterion must pass.

use std::time::Instant;

use wlab::harness::{run, ExperimentConfig, ExperimentReport, Status};

const EXPECTED_FAIL: &[usize] = &[8];

fn load(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(text).expect("shipped config parses")
}

fn exec(text: &str) -> ExperimentReport {
    let cfg = load(text);
    run(&cfg, None).unwrap_or_else(|e| panic!("{}: {e}", cfg.id))
}

struct Outcome {
    pass: bool,
    lines: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Self { pass: true, lines: Vec::new() }
    }

    fn need(&mut self, ok: bool, what: String) {
        self.pass &= ok;
        self.lines.push(format!("{} {what}", if ok { "ok  " } else { "FAIL" }));
    }

    /// The named verdicts must be present and passing.
    fn verdicts(&mut self, r: &ExperimentReport, checks: &[&str]) {
        for c in checks {
            match r.verdict(c) {
                Some(v) => self.need(v.status == Status::Pass, format!("{}/{}: {}", r.id, c, v.detail)),
                None => self.need(false, format!("{}/{}: missing", r.id, c)),
            }
        }
    }

    /// Every verdict of the report must pass.
    fn all(&mut self, r: &ExperimentReport) {
        let names: Vec<&str> = r.verdicts.iter().map(|v| v.check.as_str()).collect();
        self.verdicts(r, &names);
    }
}

fn weight_classes() -> Outcome {
    let mut o = Outcome::new();
    let start = Instant::now();
    let r = exec(include_str!("../../../configs/weights.toml"));
    let secs = start.elapsed().as_secs_f64();
    o.verdicts(&r, &["divergence_flags"]);
    let cases = r.table("classes").map_or(0, |t| t.rows.len());
    o.need(cases == 18, format!("{cases} (beta, class) cases"));
    o.need(secs < 10.0, format!("runtime {secs:.2} s (limit 10 s)"));
    o
}

fn operator() -> Outcome {
    let mut o = Outcome::new();
    let r = exec(include_str!("../../../configs/assemble.toml"));
    o.verdicts(&r, &["self_adjoint", "closed_form_spectrum", "consistency_order"]);
    o
}

fn calderon() -> Outcome {
    let mut o = Outcome::new();
    let r = exec(include_str!("../../../configs/calculus.toml"));
    o.verdicts(&r, &["calderon_oracle"]);
    let top = r.config.ladder_specs().last().map_or(0, |g| g.points);
    o.need(top == 512, format!("oracle grid N = {top}"));
    o.need(r.wall_clock_s < 30.0, format!("runtime {:.2} s (limit 30 s)", r.wall_clock_s));
    o
}

fn scaling() -> Outcome {
    let mut o = Outcome::new();
    for text in [
        include_str!("../../../configs/scaling_1d_w1.toml"),
        include_str!("../../../configs/scaling_1d_sqrt.toml"),
        include_str!("../../../configs/scaling_2d_w1.toml"),
        include_str!("../../../configs/scaling_2d_sqrt.toml"),
    ] {
        let r = exec(text);
        if r.config.p > 1.0 {
            o.need(r.config.epsilon.contains(&0.05) && r.config.epsilon.contains(&-0.05), format!("{}: epsilon = +-0.05", r.id));
            o.verdicts(&r, &["exact_slope", "epsilon_slope"]);
        } else {
            o.verdicts(&r, &["exact_slope"]);
        }
    }
    o
}

fn gaussian() -> Outcome {
    let mut o = Outcome::new();
    let w1 = exec(include_str!("../../../configs/gaussian_w1.toml"));
    o.verdicts(&w1, &["continuum_rate", "lower_bound"]);
    for text in [include_str!("../../../configs/gaussian_sqrt.toml"), include_str!("../../../configs/gaussian_invsqrt.toml")] {
        let r = exec(text);
        o.verdicts(&r, &["fit_stability", "lower_bound"]);
    }
    o
}

fn hls() -> Outcome {
    let mut o = Outcome::new();
    for text in [include_str!("../../../configs/hls_w1.toml"), include_str!("../../../configs/hls_sqrt.toml")] {
        let r = exec(text);
        o.need(r.config.ladder_specs().len() == 6, format!("{}: ladder of 3 refinements x 2 extents", r.id));
        o.verdicts(&r, &["strong_stability", "weak_stability", "route_agreement"]);
    }
    o
}

/// Criteria 7 and 9 share the Lorentz runs.
fn lorentz() -> (Outcome, Outcome) {
    let (mut refined, mut identities) = (Outcome::new(), Outcome::new());
    for text in [include_str!("../../../configs/lorentz_w1.toml"), include_str!("../../../configs/lorentz_sqrt.toml")] {
        let r = exec(text);
        refined.verdicts(&r, &["lorentz_weighted_stability", "lorentz_lebesgue_stability", "lorentz_q_vs_p"]);
        let members = r.table("ratios").map_or(0, |t| t.rows.len()) / r.config.ladder_specs().len();
        refined.need(members >= 100, format!("{}: {members} corpus members per rung", r.id));
        identities.verdicts(&r, &["layer_cake", "indicator_invariance"]);
    }
    (refined, identities)
}

fn sharpness() -> Outcome {
    let mut o = Outcome::new();
    let r = exec(include_str!("../../../configs/sharpness.toml"));
    o.verdicts(&r, &["rh_growth", "psi_blowup", "control_bounded"]);
    o
}

fn riesz() -> Outcome {
    let mut o = Outcome::new();
    let w1 = exec(include_str!("../../../configs/riesz_w1.toml"));
    o.need(w1.config.tolerances.band <= 2.0, format!("band tolerance {} for w = 1", w1.config.tolerances.band));
    o.all(&w1);
    let sq = exec(include_str!("../../../configs/riesz_sqrt.toml"));
    o.verdicts(&sq, &["band", "refinement_stability"]);
    o
}

// Runs without the libtest harness so the criterion lines are never captured.
fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    results.push((1, "weight classes", weight_classes()));
    results.push((2, "operator correctness", operator()));
    results.push((3, "Calderon oracle", calderon()));
    results.push((4, "semigroup scaling", scaling()));
    results.push((5, "Gaussian certification", gaussian()));
    results.push((6, "fractional integration", hls()));
    let (refined, identities) = lorentz();
    results.push((7, "Lorentz refinements", refined));
    results.push((8, "sharpness", sharpness()));
    results.push((9, "norm identities", identities));
    results.push((10, "Riesz comparison", riesz()));

    println!();
    for (k, name, o) in &results {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        let note = if !o.pass && EXPECTED_FAIL.contains(k) { " (expected)" } else { "" };
        println!("criterion {k:2} {tag} {name}{note}");
        for l in &o.lines {
            println!("      {l}");
        }
    }
    let unexpected: Vec<usize> =
        results.iter().filter(|(k, _, o)| !o.pass && !EXPECTED_FAIL.contains(k)).map(|(k, _, _)| *k).collect();
    if !unexpected.is_empty() {
        eprintln!("criteria {unexpected:?} failed");
        std::process::exit(1);
    }
}
