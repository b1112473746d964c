//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails the
//! process if any criterion fails. A positional argument restricts the run
//! to criteria whose name contains it.

mod experiments;
mod gradients;
mod oracles;

use std::process::ExitCode;
use std::time::Instant;

pub struct Outcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

type Criterion = (&'static str, fn() -> Outcome);

const CRITERIA: &[Criterion] = &[
    ("gradient fidelity", gradients::gradient_fidelity),
    ("distribution invariants", oracles::distribution_invariants),
    ("closed-form KL", oracles::kl_oracle_check),
    ("copy-mixture oracle", oracles::copy_mixture),
    ("metric oracle", oracles::metric_fixture),
    ("overfit check", experiments::overfit),
    ("planted-topic recovery", experiments::planted_recovery),
    ("directional topic benefit", experiments::topic_benefit),
    ("ablation structure", oracles::ablation_structure),
    ("reproducibility", experiments::reproducibility),
];

fn main() -> ExitCode {
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    let mut ran = 0;
    for (name, run) in CRITERIA {
        if filter.as_ref().is_some_and(|f| !name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        ran += 1;
        let verdict = if outcome.passed { "PASS" } else { "FAIL" };
        println!(
            "{verdict} {}: {} ({:.1}s)",
            outcome.name,
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
        if !outcome.passed {
            failed += 1;
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
