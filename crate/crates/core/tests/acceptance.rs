//! One PASS/FAIL line per acceptance criterion. Runs as a plain binary
//! (`harness = false`) so the lines show up in `cargo test` output.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::Check;

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Check,
}

fn toy_training() -> Check {
    let r = common::toy_training(8, 200)?;
    let detail = format!(
        "loss {:.4} -> {:.4}, held-out normalized score {:.4} (untrained {:.4})",
        r.initial_loss, r.final_loss, r.held_out, r.untrained_held_out
    );
    if r.final_loss < 0.02 && r.held_out >= 0.90 {
        Ok(detail)
    } else {
        Err(format!("{detail} (need loss < 0.02 and score >= 0.90)"))
    }
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let criteria = [
        Criterion {
            name: "cosine and soft pair loss unit suite",
            budget: secs(1),
            run: common::loss_unit_suite,
        },
        Criterion {
            name: "gradient verification (20 seeds, 6 windows, 16x16, FC 4)",
            budget: secs(30),
            run: || common::gradient_check(20),
        },
        Criterion {
            name: "constrained search equals exhaustive DP on 100 random 8x8",
            budget: secs(10),
            run: || common::dijkstra_matches_dp(100, 8),
        },
        Criterion {
            name: "path structural invariants over 1000 searches",
            budget: secs(30),
            run: || common::path_invariants(1000),
        },
        Criterion {
            name: "R-peak recovery at 50/75/120 bpm, 20 seeds each",
            budget: secs(10),
            run: || common::r_peak_suite(20),
        },
        Criterion {
            name: "ground-truth matrix identities",
            budget: secs(10),
            run: common::ground_truth_identities,
        },
        Criterion {
            name: "synthetic sync, phase oracle, noise 0 (>= 0.98)",
            budget: secs(10),
            run: || common::synthetic_sync(0.0, 0.98, 1),
        },
        Criterion {
            name: "synthetic sync, phase oracle, feature noise 0.1 (>= 0.93)",
            budget: secs(10),
            run: || common::synthetic_sync(0.1, 0.93, 1),
        },
        Criterion {
            name: "toy training, 8 videos, 200 epochs",
            budget: secs(300),
            run: toy_training,
        },
        Criterion {
            name: "normalization identity and zero trim",
            budget: secs(10),
            run: common::normalization_identity,
        },
        Criterion {
            name: "pipeline determinism",
            budget: secs(60),
            run: common::determinism,
        },
    ];

    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let result = (c.run)();
        let took = start.elapsed();
        let verdict = match result {
            Ok(detail) if took <= c.budget => ("PASS", detail),
            Ok(detail) => ("FAIL", format!("{detail}; took {took:.1?}, budget {:?}", c.budget)),
            Err(reason) => ("FAIL", reason),
        };
        if verdict.0 == "FAIL" {
            failed += 1;
        }
        println!("{} {}: {} [{:.2?}]", verdict.0, c.name, verdict.1, took);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
