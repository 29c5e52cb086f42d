//! The cost-constrained divergence envelope `D(P)`.
//!
//! `D(P)` maximizes `sum_k phi_k D_k` over input distributions with average
//! cost at most `P`. Because the objective and constraint are both linear,
//! the optimum is the upper concave envelope of the points `(rho_k, D_k)`:
//! piecewise linear, non-decreasing, flat once the best letter is affordable,
//! and achieved by mixing at most two letters. The envelope is built exactly
//! with a Graham-scan over the letter points, which also yields the segment
//! slopes `gamma_D` and the sparse optimizers the reliability solver needs.

use crate::channel::{Dmc, InputDistribution};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DivergenceError {
    /// Some `D_k` is infinite (the channel has a zero transition reachable
    /// from another letter); the zero-error scheme applies instead.
    #[error("letter {letter} has infinite divergence; use the zero-error path")]
    ZeroErrorRegime { letter: usize },
}

/// A vertex of the envelope: letter `letter` sits at `(p, d)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeVertex {
    pub p: f64,
    pub d: f64,
    pub letter: usize,
}

/// Piecewise-linear concave envelope of the per-letter divergences.
#[derive(Debug, Clone)]
pub struct DivergenceCurve {
    n_inputs: usize,
    /// Envelope vertices ordered by cost, starting at `p = 0`.
    pub vertices: Vec<EnvelopeVertex>,
    /// Cost beyond which the envelope is flat at `max_k D_k`.
    pub saturation_cost: f64,
}

/// Envelope value at one power with its sparse optimizer and slope.
#[derive(Debug, Clone)]
pub struct DivergencePoint {
    pub d: f64,
    pub phi: InputDistribution,
    /// Supergradient of `D` at the queried power (right slope at vertices).
    pub gamma: f64,
}

pub fn build_divergence_curve(dmc: &Dmc) -> Result<DivergenceCurve, DivergenceError> {
    let ld = dmc.letter_divergences();
    if let Some(letter) = ld.d.iter().position(|v| v.is_infinite()) {
        return Err(DivergenceError::ZeroErrorRegime { letter });
    }
    let n = dmc.n_inputs();

    // One candidate point per distinct cost: keep the best divergence,
    // breaking ties toward the lowest letter index.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        dmc.costs[a]
            .partial_cmp(&dmc.costs[b])
            .unwrap()
            .then(ld.d[b].partial_cmp(&ld.d[a]).unwrap())
            .then(a.cmp(&b))
    });
    let mut points: Vec<EnvelopeVertex> = Vec::new();
    for &k in &order {
        let (p, d) = (dmc.costs[k], ld.d[k]);
        match points.last() {
            Some(last) if (last.p - p).abs() < 1e-15 => continue,
            _ => points.push(EnvelopeVertex { p, d, letter: k }),
        }
    }

    // Drop points dominated by a cheaper letter, so divergence is strictly
    // increasing along the candidate chain.
    let mut rising: Vec<EnvelopeVertex> = Vec::new();
    for pt in points {
        if rising.last().map_or(true, |last| pt.d > last.d + 0.0) {
            rising.push(pt);
        }
    }

    // Upper concave hull: slopes must strictly decrease.
    let mut hull: Vec<EnvelopeVertex> = Vec::new();
    for pt in rising {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            let s_ab = (b.d - a.d) / (b.p - a.p);
            let s_bp = (pt.d - b.d) / (pt.p - b.p);
            if s_bp >= s_ab {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(pt);
    }

    debug_assert_eq!(hull[0].p, 0.0, "a zero-cost letter anchors the envelope");
    let saturation_cost = hull.last().unwrap().p;
    Ok(DivergenceCurve {
        n_inputs: n,
        vertices: hull,
        saturation_cost,
    })
}

impl DivergenceCurve {
    pub fn d_max(&self) -> f64 {
        self.vertices.last().unwrap().d
    }

    /// Envelope value at `p` (flat beyond saturation).
    pub fn evaluate(&self, p: f64) -> f64 {
        self.at(p).d
    }

    /// Envelope value with the (at most 2-sparse) optimizer and slope.
    pub fn at(&self, p: f64) -> DivergencePoint {
        assert!(p >= 0.0, "power must be non-negative");
        let v = &self.vertices;
        if p >= self.saturation_cost {
            let last = v.last().unwrap();
            return DivergencePoint {
                d: last.d,
                phi: InputDistribution::point_mass(last.letter, self.n_inputs),
                gamma: 0.0,
            };
        }
        // Locate the segment [v[i], v[i+1]) containing p; using the segment
        // to the right of a vertex makes the reported slope the right-hand
        // supergradient there.
        let i = v.partition_point(|vert| vert.p <= p) - 1;
        let (a, b) = (v[i], v[i + 1]);
        let gamma = (b.d - a.d) / (b.p - a.p);
        let w_b = (p - a.p) / (b.p - a.p);
        let mut weights = vec![0.0; self.n_inputs];
        weights[a.letter] += 1.0 - w_b;
        weights[b.letter] += w_b;
        DivergencePoint {
            d: a.d + gamma * (p - a.p),
            phi: InputDistribution::from_weights(weights),
            gamma,
        }
    }

    /// One-sided slopes of the envelope at `p` (left slope at 0 is `+inf`).
    pub fn slopes_at(&self, p: f64) -> (f64, f64) {
        let v = &self.vertices;
        let seg_slope = |i: usize| (v[i + 1].d - v[i].d) / (v[i + 1].p - v[i].p);
        // queries solved to ~1e-9 land this close to an exact vertex
        let eps = 1e-7 * self.saturation_cost.max(1.0);
        let left = if p <= eps {
            f64::INFINITY
        } else if p >= self.saturation_cost - eps {
            if p > self.saturation_cost + eps || v.len() == 1 {
                0.0
            } else {
                seg_slope(v.len() - 2)
            }
        } else {
            let i = v.partition_point(|vert| vert.p < p - eps) - 1;
            seg_slope(i)
        };
        let right = if p >= self.saturation_cost - eps {
            0.0
        } else {
            let i = v.partition_point(|vert| vert.p <= p + eps) - 1;
            seg_slope(i)
        };
        (left, right)
    }

    /// CSV emission of the breakpoints: `p,d,gamma` per row, where `gamma` is
    /// the slope of the segment leaving each breakpoint.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("p,d,gamma\n");
        for (i, vert) in self.vertices.iter().enumerate() {
            let gamma = if i + 1 < self.vertices.len() {
                (self.vertices[i + 1].d - vert.d) / (self.vertices[i + 1].p - vert.p)
            } else {
                0.0
            };
            out.push_str(&format!("{},{},{}\n", vert.p, vert.d, gamma));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;
    use crate::channel::Dmc;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exact maximum of `sum phi_k D_k` under `cost <= p` over all supports of
    /// size at most two (single letters included).
    fn two_sparse_oracle(dmc: &Dmc, p: f64) -> f64 {
        let ld = dmc.letter_divergences();
        let n = dmc.n_inputs();
        let mut best = f64::NEG_INFINITY;
        for a in 0..n {
            if dmc.costs[a] <= p {
                best = best.max(ld.d[a]);
            }
            for b in (a + 1)..n {
                let (ca, cb) = (dmc.costs[a], dmc.costs[b]);
                let (da, db) = (ld.d[a], ld.d[b]);
                if (ca - cb).abs() < 1e-15 {
                    continue; // mixing equal costs never beats the better letter
                }
                // weight on a meeting the cost budget with equality
                let w = (p - cb) / (ca - cb);
                if (0.0..=1.0).contains(&w) {
                    best = best.max(w * da + (1.0 - w) * db);
                }
            }
        }
        best
    }

    /// Brute-force maximization over a simplex grid of compositions.
    fn simplex_grid_oracle(dmc: &Dmc, p: f64, steps: usize) -> f64 {
        let ld = dmc.letter_divergences();
        let n = dmc.n_inputs();
        let mut best: f64 = 0.0;
        let mut comp = vec![0usize; n];
        fn rec(
            idx: usize,
            left: usize,
            comp: &mut Vec<usize>,
            best: &mut f64,
            dmc: &Dmc,
            d: &[f64],
            p: f64,
            steps: usize,
        ) {
            if idx == comp.len() - 1 {
                comp[idx] = left;
                let cost: f64 = comp
                    .iter()
                    .zip(&dmc.costs)
                    .map(|(&c, &rho)| c as f64 * rho)
                    .sum::<f64>()
                    / steps as f64;
                if cost <= p + 1e-12 {
                    let val: f64 = comp
                        .iter()
                        .zip(d)
                        .map(|(&c, &dk)| c as f64 * dk)
                        .sum::<f64>()
                        / steps as f64;
                    if val > *best {
                        *best = val;
                    }
                }
                return;
            }
            for c in 0..=left {
                comp[idx] = c;
                rec(idx + 1, left - c, comp, best, dmc, d, p, steps);
            }
        }
        rec(0, steps, &mut comp, &mut best, dmc, &ld.d, p, steps);
        best
    }

    #[test]
    fn free_symbol_channel_envelope() {
        let alpha = 0.1f64;
        let dmc = builtin::bsc_with_free_symbol(alpha);
        let curve = build_divergence_curve(&dmc).unwrap();
        let d0 = 0.5 * (1.0 / (4.0 * alpha * (1.0 - alpha))).ln();
        let d1 = (1.0 - 2.0 * alpha) * ((1.0 - alpha) / alpha).ln();
        assert_eq!(curve.vertices.len(), 2);
        assert!((curve.vertices[0].d - d0).abs() < 1e-12);
        assert_eq!(curve.vertices[0].letter, 0);
        assert!((curve.vertices[1].d - d1).abs() < 1e-12);
        assert_eq!(curve.vertices[1].letter, 1); // letter 2 ties but 1 is kept
        assert_eq!(curve.saturation_cost, 1.0);
        // D(x) = D_0 + (D_1 - D_0) x on [0, 1], flat after
        for i in 0..=10 {
            let x = i as f64 / 10.0;
            assert!((curve.evaluate(x) - (d0 + (d1 - d0) * x)).abs() < 1e-12);
        }
        assert_eq!(curve.evaluate(3.0), d1);
        // sparse optimizers
        let at0 = curve.at(0.0);
        assert_eq!(at0.phi.probs(), &[1.0, 0.0, 0.0]);
        assert!((at0.d - d0).abs() < 1e-12);
        let at1 = curve.at(1.0);
        assert!((at1.d - d1).abs() < 1e-12);
        assert_eq!(at1.gamma, 0.0);
        let mid = curve.at(0.25);
        assert!((dmc.average_cost(&mid.phi) - 0.25).abs() < 1e-12);
        assert!((mid.gamma - (d1 - d0)).abs() < 1e-12);
    }

    #[test]
    fn three_tier_envelope_breakpoints() {
        let dmc = builtin::three_tier_symmetric();
        let curve = build_divergence_curve(&dmc).unwrap();
        let ps: Vec<f64> = curve.vertices.iter().map(|v| v.p).collect();
        assert_eq!(ps, vec![0.0, 1.0, 4.0]);
        let ld = dmc.letter_divergences();
        assert!((curve.vertices[0].d - ld.d[0]).abs() < 1e-12);
        assert!((curve.vertices[1].d - ld.d[1]).abs() < 1e-12);
        assert!((curve.vertices[2].d - ld.d[3]).abs() < 1e-12);
        assert_eq!(curve.vertices[2].letter, 3);
    }

    #[test]
    fn identical_rows_give_flat_zero() {
        let dmc = Dmc::new(
            vec![vec![0.4, 0.6], vec![0.4, 0.6], vec![0.4, 0.6]],
            vec![0.0, 1.0, 2.0],
        )
        .unwrap();
        let curve = build_divergence_curve(&dmc).unwrap();
        assert_eq!(curve.vertices.len(), 1);
        assert_eq!(curve.evaluate(0.0), 0.0);
        assert_eq!(curve.evaluate(5.0), 0.0);
        assert_eq!(curve.at(2.0).gamma, 0.0);
    }

    #[test]
    fn zero_error_channel_is_rejected() {
        let err = build_divergence_curve(&builtin::z_channel(0.1)).unwrap_err();
        assert!(matches!(err, DivergenceError::ZeroErrorRegime { .. }));
    }

    #[test]
    fn envelope_matches_oracles_on_random_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let dmc = crate::testutil::random_positive_channel(&mut rng, 6, 4);
            let curve = build_divergence_curve(&dmc).unwrap();
            let p_max = dmc.rho_max() * 1.3 + 0.1;
            for _ in 0..50 {
                let p = rng.gen_range(0.0..p_max);
                let got = curve.evaluate(p);
                let sparse = two_sparse_oracle(&dmc, p);
                assert!(
                    (got - sparse).abs() <= 1e-12,
                    "2-sparse mismatch at p={p}: {got} vs {sparse}"
                );
                let pt = curve.at(p);
                assert!(dmc.average_cost(&pt.phi) <= p + 1e-9);
                let realized: f64 = pt
                    .phi
                    .probs()
                    .iter()
                    .zip(&dmc.letter_divergences().d)
                    .map(|(w, d)| w * d)
                    .sum();
                assert!((realized - got).abs() < 1e-9);
            }
            // coarse full-simplex cross-check
            let steps = 12;
            for _ in 0..5 {
                let p = rng.gen_range(0.0..p_max);
                let grid = simplex_grid_oracle(&dmc, p, steps);
                let got = curve.evaluate(p);
                assert!(got >= grid - 1e-9, "envelope below grid at p={p}");
                let slack = 2.0 * curve.d_max() / steps as f64;
                assert!(got - grid <= slack, "envelope too far above grid at p={p}");
            }
        }
    }

    #[test]
    fn supergradient_and_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..10 {
            let dmc = crate::testutil::random_positive_channel(&mut rng, 6, 4);
            let curve = build_divergence_curve(&dmc).unwrap();
            let p_max = dmc.rho_max() * 1.3 + 0.1;
            let ps: Vec<f64> = (0..30).map(|_| rng.gen_range(0.0..p_max)).collect();
            for &p in &ps {
                let at_p = curve.at(p);
                for &q in &ps {
                    assert!(curve.evaluate(q) <= at_p.d + at_p.gamma * (q - p) + 1e-12);
                    if q >= p {
                        assert!(curve.evaluate(q) >= at_p.d - 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn one_sided_slopes() {
        let dmc = builtin::three_tier_symmetric();
        let curve = build_divergence_curve(&dmc).unwrap();
        let ld = dmc.letter_divergences();
        let s1 = ld.d[1] - ld.d[0];
        let s2 = (ld.d[3] - ld.d[1]) / 3.0;
        let (l, r) = curve.slopes_at(0.5);
        assert!((l - s1).abs() < 1e-12 && (r - s1).abs() < 1e-12);
        let (l, r) = curve.slopes_at(1.0);
        assert!((l - s1).abs() < 1e-12 && (r - s2).abs() < 1e-12);
        let (l, r) = curve.slopes_at(4.0);
        assert!((l - s2).abs() < 1e-12 && r == 0.0);
        let (l, r) = curve.slopes_at(0.0);
        assert_eq!(l, f64::INFINITY);
        assert!((r - s1).abs() < 1e-12);
    }
}
