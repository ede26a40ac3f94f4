//! Runs every acceptance criterion at its stated tolerance and prints one
//! PASS/FAIL line per criterion.

use std::sync::Mutex;

use dynaclear::validation::{run_criterion, Options};

// Criteria carry wall-clock budgets, so they run one at a time.
static SERIAL: Mutex<()> = Mutex::new(());

fn criterion(id: u32) {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let result = run_criterion(id, &Options { jobs: 0 }).expect("known criterion");
    println!("{}", result.line());
    println!("{}", result.detail());
    assert!(result.passed, "{}\n{}", result.line(), result.detail());
}

#[test]
fn criterion_01_basel_identity() {
    criterion(1);
}

#[test]
fn criterion_02_assignment_exactness() {
    criterion(2);
}

#[test]
fn criterion_03_static_monte_carlo() {
    criterion(3);
}

#[test]
fn criterion_04_abs_walk() {
    criterion(4);
}

#[test]
fn criterion_05_greedy_waiting_law() {
    criterion(5);
}

#[test]
fn criterion_06_greedy_cost_growth() {
    criterion(6);
}

#[test]
fn criterion_07_critical_regime() {
    criterion(7);
}

#[test]
fn criterion_08_supercritical_regime() {
    criterion(8);
}

#[test]
fn criterion_09_waiting_regimes() {
    criterion(9);
}

#[test]
fn criterion_10_fcfs_cost() {
    criterion(10);
}

#[test]
fn criterion_11_balanced_schedule() {
    criterion(11);
}

#[test]
fn criterion_12_decay_free_lunch() {
    criterion(12);
}

#[test]
fn criterion_13_engine_tapes() {
    criterion(13);
}

#[test]
fn criterion_14_appendix_constants() {
    criterion(14);
}
