//! Acceptance gate. Runs every primary criterion and prints one line each.

mod clusters;
mod end_to_end;
mod nifti;
mod numerics;
mod oracle;
mod scoring;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

pub type Check = Result<String, String>;

/// Fails the enclosing check with a formatted message.
#[macro_export]
macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err(format!($($arg)+));
        }
    };
}

struct Criterion {
    id: &'static str,
    title: &'static str,
    budget: Option<Duration>,
    run: fn() -> Check,
}

fn criteria() -> Vec<Criterion> {
    let secs = |s| Some(Duration::from_secs(s));
    vec![
        Criterion { id: "A1", title: "OLS vs exact normal equations", budget: secs(5), run: numerics::a1_ols_oracle },
        Criterion { id: "A2", title: "SMO vs projected-gradient QP", budget: secs(30), run: numerics::a2_svr_qp_oracle },
        Criterion { id: "A3", title: "SVR trivial limits", budget: None, run: numerics::a3_svr_trivial_limits },
        Criterion { id: "A4", title: "linear backfitting equals OLS", budget: None, run: numerics::a4_backfitting_linear },
        Criterion { id: "A5", title: "F-test calibration under the null", budget: secs(120), run: end_to_end::a5_null_calibration },
        Criterion { id: "A6", title: "synthetic pipeline recovers effect", budget: secs(180), run: end_to_end::a6_pipeline_replication },
        Criterion { id: "A7", title: "best-fit labels deterministic and invariant", budget: None, run: end_to_end::a7_best_fit_labels },
        Criterion { id: "A8", title: "cluster filter vs flood fill", budget: None, run: clusters::a8_flood_fill_oracle },
        Criterion { id: "A9", title: "z transform, PRSS and VN-PRSS", budget: None, run: scoring::a9_scores },
        Criterion { id: "A10", title: "grid search weighting and seeding", budget: None, run: scoring::a10_grid_search },
        Criterion { id: "A11", title: "NIfTI round trip and scaling", budget: None, run: nifti::a11_round_trip },
    ]
}

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for c in criteria() {
        if !filter.is_empty() && !filter.iter().any(|f| f.eq_ignore_ascii_case(c.id)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match (outcome, c.budget) {
            (Ok(_), Some(b)) if elapsed > b => Err(format!("took {:.1} s, budget {} s", elapsed.as_secs_f64(), b.as_secs())),
            (o, _) => o,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{:<4} {tag} {:<44} {:>7.2} s  {detail}", c.id, c.title, elapsed.as_secs_f64());
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
