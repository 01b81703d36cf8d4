//! Acceptance criteria at desk scale. Prints one line per criterion and exits nonzero
//! if any fails.

use std::process::ExitCode;

use memlb_core::verify::{self, Profile, SuiteReport};

struct Line {
    id: u32,
    title: &'static str,
    passed: bool,
    detail: String,
}

fn from_suite(id: u32, title: &'static str, s: &SuiteReport) -> Line {
    Line {
        id,
        title,
        passed: s.passed,
        detail: s.line(),
    }
}

fn timed(id: u32, title: &'static str, s: &SuiteReport, limit: f64) -> Line {
    let mut line = from_suite(id, title, s);
    if s.seconds >= limit {
        line.passed = false;
        line.detail.push_str(&format!(" [over the {limit:.0}s limit]"));
    }
    line
}

fn failed(id: u32, title: &'static str, e: impl std::fmt::Display) -> Line {
    Line {
        id,
        title,
        passed: false,
        detail: format!("error: {e}"),
    }
}

fn main() -> ExitCode {
    let p = Profile::desk();
    let mut lines = Vec::new();

    lines.push(timed(1, "regularity", &verify::regularity(&p), 30.0));
    let runs = match verify::driver_runs(&p) {
        Ok(r) => r,
        Err(e) => {
            println!("FAIL driver runs: {e}");
            return ExitCode::FAILURE;
        }
    };
    lines.push(from_suite(2, "approximate orthogonality", &verify::orthogonality(&runs)));
    lines.push(from_suite(3, "robust independence", &verify::independence(&runs, &p)));
    lines.push(match verify::suboptimality(&p) {
        Ok(s) => from_suite(4, "suboptimality necessity", &s),
        Err(e) => failed(4, "suboptimality necessity", e),
    });
    lines.push(from_suite(5, "optimal witness", &verify::witness(&p)));
    lines.push(match verify::consistency(&runs, &p) {
        Ok(s) => from_suite(6, "adaptive/static consistency", &s),
        Err(e) => failed(6, "adaptive/static consistency", e),
    });
    lines.push(timed(7, "hypercube base", &verify::hypercube_base(&p), 60.0));
    lines.push(from_suite(8, "robust set algebra", &verify::algebra_helper(&p)));
    lines.push(from_suite(9, "lifting", &verify::lifting(&p)));
    lines.push(from_suite(10, "game protocol", &verify::game_protocol(&p)));
    lines.push(from_suite(11, "reduction end-to-end", &verify::reduction(&p)));
    lines.push(match verify::memory_and_replay(&runs, &p) {
        Ok(s) => from_suite(12, "memory accounting and replay", &s),
        Err(e) => failed(12, "memory accounting and replay", e),
    });
    lines.push(match verify::tradeoff(&p) {
        Ok(s) => from_suite(13, "tradeoff signal", &s),
        Err(e) => failed(13, "tradeoff signal", e),
    });

    for l in &lines {
        println!(
            "criterion {:>2} {:<30} {}  {}",
            l.id,
            l.title,
            if l.passed { "PASS" } else { "FAIL" },
            l.detail
        );
    }
    let validity = verify::subgradient_validity(&p, None);
    println!("extra        subgradient validity            {}", validity.line());

    let failures = lines.iter().filter(|l| !l.passed).count() + usize::from(!validity.passed);
    println!("acceptance: {} of {} criteria passed", lines.len() - failures.min(lines.len()), lines.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
