//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//! `ACCEPTANCE_ONLY=4,5` restricts the run to the listed criteria.

mod anchors;
mod gradients;
mod masks;
mod metrics;
mod parsers;
mod retrieval;
mod shapes;
mod training;
mod util;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use util::Outcome;

struct Criterion {
    id: usize,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

const fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

const CRITERIA: [Criterion; 10] = [
    Criterion { id: 1, name: "gradient integrity", budget: secs(120), run: gradients::run },
    Criterion { id: 2, name: "mask soundness", budget: secs(60), run: masks::run },
    Criterion { id: 3, name: "analytic loss anchors", budget: secs(60), run: anchors::run },
    Criterion { id: 4, name: "stage-2 retrieval transfer", budget: secs(300), run: training::retrieval_transfer },
    Criterion { id: 5, name: "stage-3 memorization", budget: secs(600), run: training::memorization },
    Criterion { id: 6, name: "metric oracles", budget: secs(120), run: metrics::run },
    Criterion { id: 7, name: "retrieval pipeline equivalence", budget: secs(120), run: retrieval::run },
    Criterion { id: 8, name: "determinism and staging", budget: secs(300), run: training::determinism },
    Criterion { id: 9, name: "parsers", budget: secs(120), run: parsers::run },
    Criterion { id: 10, name: "full-size shapes", budget: secs(60), run: shapes::run },
];

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        for c in &CRITERIA {
            println!("criterion_{}: test", c.id);
        }
        return ExitCode::SUCCESS;
    }
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    std::panic::set_hook(Box::new(|_| {}));

    let mut failed = 0;
    let mut ran = 0;
    for c in CRITERIA.iter().filter(|c| only.as_ref().is_none_or(|o| o.contains(&c.id))) {
        ran += 1;
        let t0 = Instant::now();
        let result = match catch_unwind(AssertUnwindSafe(c.run)) {
            Ok(r) => r,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .map_or("panicked".into(), |m| format!("panicked: {m}"))),
        };
        let took = t0.elapsed();
        let result = match result {
            Ok(d) if took > c.budget => Err(format!("{d}; over the {}s budget", c.budget.as_secs())),
            r => r,
        };
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("[{tag}] {:>2} {} ({detail}) {:.1}s", c.id, c.name, took.as_secs_f64());
        if result.is_err() {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
