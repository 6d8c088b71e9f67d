//! The full acceptance suite, one PASS/FAIL line per criterion.
//!
//! Runs sequentially in a single test so the time budgets are measured
//! without other tests competing for the CPU.

use hardwall_cli::verify;

#[test]
fn acceptance() {
    let all = verify::select(None).unwrap();
    let results = verify::run(&all, 1, |r| println!("{}", r.summary_line()));
    let failed: Vec<String> = results.iter().filter(|r| !r.passed).map(|r| format!("{} {}", r.id, r.name)).collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    assert!(failed.is_empty(), "failed criteria: {}", failed.join(", "));
}
