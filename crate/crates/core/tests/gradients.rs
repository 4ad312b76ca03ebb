//! Reverse-mode gradients against central finite differences, in f64.

mod common;

use common::grad_cases::{self, Labeled};
use common::GRAD_TOL;

fn assert_passes((what, r): &Labeled) {
    println!("{what}: {} entries, max rel err {:.2e} at {}", r.checked, r.max_rel_error, r.worst);
    assert!(r.checked > 0);
    assert!(r.max_rel_error <= GRAD_TOL, "{what}: {} > {GRAD_TOL} at {}", r.max_rel_error, r.worst);
}

#[test]
fn intra_view_attention() {
    grad_cases::intra_view().iter().for_each(assert_passes);
}

#[test]
fn cross_view_attention() {
    grad_cases::cross_view().iter().for_each(assert_passes);
}

#[test]
fn full_attention_stage() {
    assert_passes(&grad_cases::hybrid_stage());
}

#[test]
fn adaptive_fusion() {
    assert_passes(&grad_cases::adaptive_fusion());
}

#[test]
fn focal_loss() {
    grad_cases::focal_loss().iter().for_each(assert_passes);
}

#[test]
fn whole_network_at_32_cubed() {
    assert_passes(&grad_cases::whole_network());
}
