//! Acceptance criteria AC1–AC10, one test each. Every test prints a single
//! `ACn PASS|FAIL ...` line. Tests hold a shared lock so that wall-clock
//! limits are measured without competing runs.

use std::io::Write;
use std::sync::{Mutex, MutexGuard};

use mrac::suite::{self, CriterionResult, SweepSettings};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Written straight to stderr so the line shows even for passing tests.
fn report(r: CriterionResult) {
    let _ = writeln!(std::io::stderr(), "{}", r.line());
    assert!(r.passed, "{}", r.line());
}

#[test]
fn ac01_gain_table() {
    let _g = serial();
    report(suite::ac1_gain_table());
}

#[test]
fn ac02_matching_identity() {
    let _g = serial();
    report(suite::ac2_matching_identity(1));
}

#[test]
fn ac03_regression_form() {
    let _g = serial();
    report(suite::ac3_regression_form());
}

#[test]
fn ac04_tracking() {
    let _g = serial();
    report(suite::ac4_tracking());
}

#[test]
fn ac05_tuning_gain() {
    let _g = serial();
    report(suite::ac5_tuning_gain());
}

#[test]
fn ac06_least_squares() {
    let _g = serial();
    report(suite::ac6_least_squares());
}

#[test]
fn ac07_swapping_lemma() {
    let _g = serial();
    report(suite::ac7_swapping(11));
}

#[test]
fn ac08_baseline() {
    let _g = serial();
    report(suite::ac8_baseline());
}

#[test]
fn ac09_relative_degree() {
    let _g = serial();
    let (r, outcomes) = suite::ac9_relative_degree(20, SweepSettings::default());
    for o in outcomes.iter().filter(|o| !o.passed) {
        let _ = writeln!(
            std::io::stderr(),
            "  n*={} seed {} kp {}: ratio {:.3e}, switches {}, abort {:?}",
            o.n_star, o.seed, o.kp, o.tracking_ratio, o.sigma_switch_count, o.aborted
        );
    }
    report(r);
}

#[test]
fn ac10_numerics() {
    let _g = serial();
    report(suite::ac10_numerics());
}
