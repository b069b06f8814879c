//! Shared fixtures for the integration suites.
#![allow(dead_code)] // each test binary uses its own subset

use std::collections::BTreeMap;

use rfbypass::field::{
    Condition, ConditionedFieldSpec, GaussianMixture, Guidance, MixtureComponent,
};

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn origin() -> Condition {
    Condition::labeled("origin")
}

pub fn edit_cond() -> Condition {
    Condition::labeled("edit")
}

/// Spec with single-Gaussian origin/edit mixtures (an affine velocity field
/// per condition).
pub fn single_pair_spec(
    origin_mean: [f64; 2],
    edit_mean: [f64; 2],
    origin_sd: f64,
    edit_sd: f64,
) -> ConditionedFieldSpec<f64> {
    let mut labeled = BTreeMap::new();
    labeled.insert(
        "origin".to_string(),
        GaussianMixture::single(origin_mean.to_vec(), origin_sd).unwrap(),
    );
    labeled.insert(
        "edit".to_string(),
        GaussianMixture::single(edit_mean.to_vec(), edit_sd).unwrap(),
    );
    ConditionedFieldSpec::new(labeled, None).unwrap()
}

/// Spec with two-component origin and edit mixtures (genuinely nonlinear).
pub fn bimodal_pair_spec() -> ConditionedFieldSpec<f64> {
    let mut labeled = BTreeMap::new();
    labeled.insert(
        "origin".to_string(),
        GaussianMixture::new(vec![
            MixtureComponent {
                weight: 0.5,
                mean: vec![-1.5, 0.0],
                stddev: 0.8,
            },
            MixtureComponent {
                weight: 0.5,
                mean: vec![1.5, 0.5],
                stddev: 0.6,
            },
        ])
        .unwrap(),
    );
    labeled.insert(
        "edit".to_string(),
        GaussianMixture::new(vec![
            MixtureComponent {
                weight: 0.5,
                mean: vec![0.5, 1.5],
                stddev: 0.7,
            },
            MixtureComponent {
                weight: 0.5,
                mean: vec![-0.5, -1.0],
                stddev: 0.9,
            },
        ])
        .unwrap(),
    );
    ConditionedFieldSpec::new(labeled, None).unwrap()
}

/// Bimodal origin at `±2`; edit is the same mixture translated by `delta` in
/// both coordinates. Shrinking `delta` shrinks the trajectory gap linearly.
pub fn shifted_bimodal_spec(delta: f64) -> ConditionedFieldSpec<f64> {
    let mut labeled = BTreeMap::new();
    labeled.insert(
        "origin".to_string(),
        GaussianMixture::new(vec![
            MixtureComponent {
                weight: 0.5,
                mean: vec![-2.0, 0.0],
                stddev: 0.4,
            },
            MixtureComponent {
                weight: 0.5,
                mean: vec![2.0, 0.0],
                stddev: 0.4,
            },
        ])
        .unwrap(),
    );
    labeled.insert(
        "edit".to_string(),
        GaussianMixture::new(vec![
            MixtureComponent {
                weight: 0.5,
                mean: vec![-2.0 + delta, delta],
                stddev: 0.4,
            },
            MixtureComponent {
                weight: 0.5,
                mean: vec![2.0 + delta, delta],
                stddev: 0.4,
            },
        ])
        .unwrap(),
    );
    ConditionedFieldSpec::new(labeled, None).unwrap()
}

/// Origin-conditioned inversion guidance at scale 1 (positive == negative
/// collapses to a single conditional evaluation).
pub fn origin_guidance() -> Guidance<f64> {
    Guidance::new(origin(), origin(), 1.0)
}

/// Edit-positive, origin-negative reconstruction guidance.
pub fn edit_guidance(scale: f64) -> Guidance<f64> {
    Guidance::new(edit_cond(), origin(), scale)
}
