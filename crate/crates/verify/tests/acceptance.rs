//! Acceptance gate: runs every criterion and prints one PASS/FAIL line each.
//! Exits nonzero when any criterion fails.

use std::time::Instant;

use wsbo::runner::{Algorithm, GainCurve, HistoryFile, Instance};
use wsbo_verify::experiments::{self, StudySettings};
use wsbo_verify::{suites, Check};

fn band_overlap(a: &GainCurve, b: &GainCurve, t: usize) -> bool {
    let (alo, ahi) = a.band(t);
    let (blo, bhi) = b.band(t);
    alo <= bhi && blo <= ahi
}

fn fmt_curve(c: &GainCurve, t: usize) -> String {
    format!("{} {:.4}±{:.4}", c.algorithm, c.mean[t - 1], 2.0 * c.se[t - 1].unwrap_or(0.0))
}

fn degeneracy() -> Check {
    let start = Instant::now();
    let rb1 = Instance::named("RB1").unwrap();
    let result = experiments::fit(&rb1, 30, &HistoryFile::empty(), 41).and_then(|hp| experiments::degeneracy(&rb1, &hp, 5, 25, 400));
    let secs = start.elapsed().as_secs_f64();
    match result {
        Ok((matched, total)) => Check::new(
            "WSKG without history equals KG",
            matched == total && secs < 120.0,
            format!("{matched}/{total} RB1 replications trace-identical, {secs:.1}s"),
        ),
        Err(e) => Check::new("WSKG without history equals KG", false, e.to_string()),
    }
}

fn rosenbrock() -> (Check, Check) {
    let settings = StudySettings {
        replications: 100,
        seed: 5000,
        pilot: 30,
        history_budget: 25,
        disc_size: 500,
    };
    let study = match experiments::rosenbrock_study(&settings, 5, 25) {
        Ok(s) => s,
        Err(e) => {
            let msg = e.to_string();
            return (Check::new("Rosenbrock warm start", false, msg.clone()), Check::new("KG vs EGO on Rosenbrock", false, msg));
        }
    };
    let minutes = study.seconds / 60.0;

    let mut ahead_everywhere = true;
    let mut separated = 0;
    let mut parts = Vec::new();
    for ic in study.per_instance.iter().filter(|c| c.instance != "RB1") {
        let (w, k) = (ic.get(Algorithm::Wskg).unwrap(), ic.get(Algorithm::Kg).unwrap());
        let ahead = (1..=5).all(|t| w.mean[t - 1] > k.mean[t - 1]);
        let apart = !band_overlap(w, k, 2);
        ahead_everywhere &= ahead;
        separated += apart as usize;
        parts.push(format!(
            "{}: t=2 {} vs {}, ahead t=1..5 {}, separated {}",
            ic.instance,
            fmt_curve(w, 2),
            fmt_curve(k, 2),
            ahead,
            apart
        ));
    }
    let failures: usize = study.per_instance.iter().map(|c| c.failures).sum();
    let warm = Check::new(
        "Rosenbrock warm start",
        ahead_everywhere && separated >= 2 && minutes < 30.0,
        format!(
            "{}; {} history points; {} failed replications; {minutes:.1} min",
            parts.join("; "),
            study.history_len,
            failures
        ),
    );

    let mut behind = 0;
    let mut behind_apart = 0;
    let mut parts = Vec::new();
    for ic in &study.per_instance {
        let (k, e) = (ic.get(Algorithm::Kg).unwrap(), ic.get(Algorithm::Ego).unwrap());
        let t = k.budget();
        if k.mean[t - 1] < e.mean[t - 1] {
            behind += 1;
            behind_apart += !band_overlap(k, e, t) as usize;
        }
        parts.push(format!("{}: t={t} {} vs {}", ic.instance, fmt_curve(k, t), fmt_curve(e, t)));
    }
    let order = Check::new(
        "KG vs EGO on Rosenbrock",
        behind <= 1 && behind_apart == 0,
        format!("{}; KG behind on {behind} variant(s)", parts.join("; ")),
    );
    (warm, order)
}

fn ato() -> Check {
    let settings = StudySettings {
        replications: 100,
        seed: 7000,
        pilot: 40,
        history_budget: 50,
        disc_size: 1000,
    };
    match experiments::ato_study(&settings, 10, 500) {
        Ok(study) => {
            let c = &study.curves;
            let (w, k) = (c.get(Algorithm::Wskg).unwrap(), c.get(Algorithm::Kg).unwrap());
            let unpaired = (w.se[9].unwrap_or(0.0).powi(2) + k.se[9].unwrap_or(0.0).powi(2)).sqrt();
            // both algorithms see the same initial data in every replication,
            // so the difference is judged on paired replications
            match c.paired_difference(Algorithm::Wskg, Algorithm::Kg, 10) {
                Some((diff, se, n)) => Check::new(
                    "ATO warm start",
                    diff > 2.0 * se,
                    format!(
                        "ATO3 t=10 {} vs {}; paired difference {diff:.4} vs 2 SE {:.4} over {n} replications (unpaired 2 SE {:.4}); \
                         {} history points; {} failed replications; {:.1} min",
                        fmt_curve(w, 10),
                        fmt_curve(k, 10),
                        2.0 * se,
                        2.0 * unpaired,
                        study.history_len,
                        c.failures,
                        study.seconds / 60.0
                    ),
                ),
                None => Check::new("ATO warm start", false, "fewer than 2 paired replications".to_string()),
            }
        }
        Err(e) => Check::new("ATO warm start", false, e.to_string()),
    }
}

fn main() {
    // Under `cargo test` extra arguments (filters, --list) may be passed; a
    // listing request must not start the experiments.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let report = |n: usize, c: &Check| {
        println!("criterion {n} {}", c.line());
        c.passed
    };
    let mut passed = true;
    passed &= report(1, &suites::gp_oracle(60, 1));
    passed &= report(2, &suites::kg_oracle(50, 1_000_000, 10, 100_000, 2));
    passed &= report(3, &suites::gradient_oracle(10, 3));
    passed &= report(4, &degeneracy());
    let (warm, order) = rosenbrock();
    passed &= report(5, &warm);
    passed &= report(6, &order);
    passed &= report(7, &ato());
    passed &= report(8, &suites::invariants());
    if !passed {
        std::process::exit(1);
    }
}
