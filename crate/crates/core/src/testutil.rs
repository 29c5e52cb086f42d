//! Shared generators for the unit-test suites.

use crate::channel::{Dmc, InputDistribution};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random channel with strictly positive transitions, a free letter, and
/// row sums exact to the last ulp.
pub(crate) fn random_positive_channel(rng: &mut ChaCha8Rng, max_x: usize, max_y: usize) -> Dmc {
    let nx = rng.gen_range(2..=max_x);
    let ny = rng.gen_range(2..=max_y);
    let mut transition = Vec::with_capacity(nx);
    for _ in 0..nx {
        let mut row: Vec<f64> = (0..ny).map(|_| rng.gen_range(0.02..1.0)).collect();
        let s: f64 = row.iter().sum();
        for p in &mut row {
            *p /= s;
        }
        let s2: f64 = row.iter().sum();
        row[ny - 1] += 1.0 - s2;
        transition.push(row);
    }
    let mut costs: Vec<f64> = (0..nx).map(|_| rng.gen_range(0.0..4.0)).collect();
    costs[0] = 0.0;
    Dmc::new(transition, costs).unwrap()
}

pub(crate) fn random_distribution(rng: &mut ChaCha8Rng, len: usize) -> InputDistribution {
    let mut v: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..1.0) + 1e-6).collect();
    let s: f64 = v.iter().sum();
    for p in &mut v {
        *p /= s;
    }
    let s2: f64 = v.iter().sum();
    v[len - 1] += 1.0 - s2;
    InputDistribution::new(v).unwrap()
}
