//! The reliability function `E(R, P)` for two-phase feedback coding.
//!
//! A block splits into a data phase of fraction `eta` run at power `P1` and a
//! confirm phase at power `P2`, with `R = eta C(P1)` and
//! `P = eta P1 + (1 - eta) P2`. The achievable error exponent for a split is
//!
//! ```text
//! E(R, P, eta) = (1 - eta) D((P - eta C^{-1}(R/eta)) / (1 - eta))
//! ```
//!
//! and `E(R, P)` maximizes this concave function over the feasible interval
//! of `eta`. Golden-section search does the maximization; a cheap concavity
//! probe falls back to a dense scan if the piecewise-linear curves ever trip
//! the search.

use crate::capacity::{CapacityCurve, CapacityError};
use crate::divergence::DivergenceCurve;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone)]
pub enum ReliabilityError {
    #[error("rate {r} not in (0, {cap})")]
    RateRange { r: f64, cap: f64 },
    #[error("eta {eta} outside the feasible interval [{lo}, {hi}]")]
    EtaInfeasible { eta: f64, lo: f64, hi: f64 },
    #[error(transparent)]
    Capacity(#[from] CapacityError),
}

/// A solved rate/power point of the reliability function.
#[derive(Debug, Clone, Serialize)]
pub struct ReliabilityPoint {
    pub r: f64,
    pub p: f64,
    /// Left endpoint of the feasible interval (unique root of `eta C(p/eta) = r`).
    pub eta_star: f64,
    /// Feasible interval for the phase split.
    pub interval: (f64, f64),
    pub eta_opt: f64,
    pub p1: f64,
    pub p2: f64,
    pub exponent: f64,
}

/// Feasible interval `[eta*, min(1, r/C(0))]`; the upper endpoint is 1 when
/// `C(0) = 0`.
pub fn feasible_interval(
    caps: &CapacityCurve,
    r: f64,
    p: f64,
) -> Result<(f64, f64), ReliabilityError> {
    let cap = caps.evaluate(p);
    if !(r > 0.0 && r < cap) {
        return Err(ReliabilityError::RateRange { r, cap });
    }
    let lo = caps.eta_star(r, p)?;
    let c0 = caps.landmarks.c0;
    let hi = if c0 > 1e-12 {
        (r / c0).min(1.0)
    } else {
        1.0
    };
    Ok((lo, hi.max(lo)))
}

/// Phase powers `(p1, p2)` for a feasible split. `p1` is the minimal-cost
/// preimage `C^{-1}(r/eta)`, never exceeding `P*`.
pub fn phase_powers(
    caps: &CapacityCurve,
    r: f64,
    p: f64,
    eta: f64,
) -> Result<(f64, f64), ReliabilityError> {
    let lm = &caps.landmarks;
    let c = (r / eta).clamp(lm.c0, lm.c_star);
    let p1 = caps.inverse(c)?;
    if 1.0 - eta < 1e-12 {
        return Ok((p1, f64::INFINITY));
    }
    let p2 = (p - eta * p1) / (1.0 - eta);
    Ok((p1, p2.max(0.0)))
}

/// Nominal exponent `(1 - eta) D((p - eta C^{-1}(r/eta)) / (1 - eta))`.
pub fn exponent_at(
    caps: &CapacityCurve,
    divs: &DivergenceCurve,
    r: f64,
    p: f64,
    eta: f64,
) -> Result<f64, ReliabilityError> {
    let (lo, hi) = feasible_interval(caps, r, p)?;
    let slack = 1e-9;
    if !(eta >= lo - slack && eta <= hi + slack) {
        return Err(ReliabilityError::EtaInfeasible { eta, lo, hi });
    }
    let (p1, p2) = phase_powers(caps, r, p, eta)?;
    if 1.0 - eta < 1e-12 {
        return Ok(0.0);
    }
    let budget = p - eta * p1;
    if budget < -1e-9 * p.max(1.0) {
        return Err(ReliabilityError::EtaInfeasible { eta, lo, hi });
    }
    Ok((1.0 - eta) * divs.evaluate(p2))
}

/// Golden-section maximization of a concave function on `[a, b]`.
fn golden_max(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (a, b);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while b - a > tol {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    let xm = 0.5 * (a + b);
    (xm, f(xm))
}

/// Maximizes the exponent over the feasible split interval.
pub fn reliability(
    caps: &CapacityCurve,
    divs: &DivergenceCurve,
    r: f64,
    p: f64,
) -> Result<ReliabilityPoint, ReliabilityError> {
    let (lo, hi) = feasible_interval(caps, r, p)?;
    // eta = 1 empties the confirm phase; the supremum there is a limit of
    // value zero, so evaluation stops just short of it.
    let hi_eval = hi.min(1.0 - 1e-12).max(lo);
    let mut eval = |eta: f64| exponent_at(caps, divs, r, p, eta).unwrap_or(0.0);

    let (eta_opt, exponent) = if hi_eval - lo < 1e-12 {
        (lo, eval(lo))
    } else {
        // Three-chord concavity probe; on failure fall back to a dense scan
        // (guards against envelope-construction bugs at curve breakpoints).
        let probe: Vec<f64> = (0..5)
            .map(|i| lo + (hi_eval - lo) * i as f64 / 4.0)
            .collect();
        let pv: Vec<f64> = probe.iter().map(|&x| eval(x)).collect();
        let concave_ok = (0..3).all(|i| pv[i + 1] >= 0.5 * (pv[i] + pv[i + 2]) - 1e-9);
        let (mut best_x, mut best_f) = if concave_ok {
            golden_max(&mut eval, lo, hi_eval, 1e-10)
        } else {
            let n = 10_000;
            let mut bi = 0usize;
            let mut bf = f64::NEG_INFINITY;
            for i in 0..=n {
                let x = lo + (hi_eval - lo) * i as f64 / n as f64;
                let v = eval(x);
                if v > bf {
                    bf = v;
                    bi = i;
                }
            }
            let a = lo + (hi_eval - lo) * bi.saturating_sub(1) as f64 / n as f64;
            let b = lo + (hi_eval - lo) * (bi + 1).min(n) as f64 / n as f64;
            golden_max(&mut eval, a, b, 1e-12)
        };
        // the maximum may sit exactly on an interval endpoint
        for x in [lo, hi_eval] {
            let v = eval(x);
            if v > best_f {
                best_f = v;
                best_x = x;
            }
        }
        (best_x, best_f)
    };

    let (p1, p2) = phase_powers(caps, r, p, eta_opt)?;
    Ok(ReliabilityPoint {
        r,
        p,
        eta_star: lo,
        interval: (lo, hi),
        eta_opt,
        p1,
        p2,
        exponent,
    })
}

/// `E` at the capacity limit `R -> C(P)^-`, by evaluating at shrinking rate
/// offsets and extrapolating linearly to zero offset.
pub fn reliability_at_capacity(
    caps: &CapacityCurve,
    divs: &DivergenceCurve,
    p: f64,
) -> Result<f64, ReliabilityError> {
    let cap = caps.evaluate(p);
    if cap <= 0.0 {
        return Err(ReliabilityError::RateRange { r: cap, cap });
    }
    let deltas = [1e-3, 1e-4, 1e-5];
    let mut vals = [0.0; 3];
    for (v, d) in vals.iter_mut().zip(deltas) {
        *v = reliability(caps, divs, cap * (1.0 - d), p)?.exponent;
    }
    let (d2, d3) = (deltas[1], deltas[2]);
    let (e2, e3) = (vals[1], vals[2]);
    let limit = (e3 * d2 - e2 * d3) / (d2 - d3);
    Ok(limit.max(0.0))
}

/// Tangent-intercept diagnostic at an interior optimum.
///
/// At a power-minimizing interior split the horizontal-axis intercept of the
/// tangent to `C` at `p1` must overlap the reflected intercept of the tangent
/// to `D` at `p2`; slope discontinuities widen each intercept to an interval.
#[derive(Debug, Clone, Serialize)]
pub struct TangentReport {
    /// False when the optimum sits on the interval boundary (the condition is
    /// one-sided there).
    pub applicable: bool,
    pub c_intercept: (f64, f64),
    pub d_intercept: (f64, f64),
    pub overlap: bool,
    /// Positive distance between the intervals when they fail to overlap.
    pub gap: f64,
}

pub fn tangent_intercept_check(
    caps: &CapacityCurve,
    divs: &DivergenceCurve,
    point: &ReliabilityPoint,
) -> TangentReport {
    let (lo, hi) = point.interval;
    let margin = 1e-7 * (hi - lo).max(1e-7);
    let applicable = point.eta_opt > lo + margin && point.eta_opt < hi - margin;

    let intercept = |x: f64, val: f64, slope: f64| -> f64 {
        if slope.is_infinite() {
            x
        } else if slope <= 1e-15 {
            f64::NEG_INFINITY
        } else {
            x - val / slope
        }
    };

    let c_val = caps.evaluate(point.p1);
    let (cl, cr) = caps.slopes_at(point.p1);
    // decreasing eta moves p1 right (right slope); increasing eta moves it left
    let c_intercept = (intercept(point.p1, c_val, cr), intercept(point.p1, c_val, cl));

    let d_val = divs.evaluate(point.p2);
    let (dl, dr) = divs.slopes_at(point.p2);
    let d_intercept = (intercept(point.p2, d_val, dr), intercept(point.p2, d_val, dl));

    let lo_max = c_intercept.0.max(d_intercept.0);
    let hi_min = c_intercept.1.min(d_intercept.1);
    let overlap = lo_max <= hi_min + 1e-9;
    TangentReport {
        applicable,
        c_intercept,
        d_intercept,
        overlap,
        gap: (lo_max - hi_min).max(0.0),
    }
}

/// Solves the reliability point for every rate in the grid.
pub fn reliability_curve(
    caps: &CapacityCurve,
    divs: &DivergenceCurve,
    p: f64,
    r_grid: &[f64],
) -> Result<Vec<ReliabilityPoint>, ReliabilityError> {
    r_grid
        .iter()
        .map(|&r| reliability(caps, divs, r, p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;
    use crate::capacity::{build_capacity_curve, CapacityCurve, CurveGrid};
    use crate::channel::binary_entropy;
    use crate::divergence::{build_divergence_curve, DivergenceCurve};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn curves(dmc: &crate::Dmc) -> (CapacityCurve, DivergenceCurve) {
        (
            build_capacity_curve(dmc, &CurveGrid::default()).unwrap(),
            build_divergence_curve(dmc).unwrap(),
        )
    }

    fn free_symbol_closed_form(alpha: f64, r: f64, p: f64) -> f64 {
        let cbsc = std::f64::consts::LN_2 - binary_entropy(alpha);
        let d0 = 0.5 * (1.0 / (4.0 * alpha * (1.0 - alpha))).ln();
        let d1 = (1.0 - 2.0 * alpha) * ((1.0 - alpha) / alpha).ln();
        let eta = r / cbsc;
        (1.0 - eta) * d0 + (p - eta) * (d1 - d0)
    }

    #[test]
    fn free_symbol_channel_matches_closed_form() {
        let alpha = 0.1;
        let dmc = builtin::bsc_with_free_symbol(alpha);
        let (caps, divs) = curves(&dmc);
        let cbsc = std::f64::consts::LN_2 - binary_entropy(alpha);
        for &p in &[0.3, 0.5, 0.8, 1.0] {
            for i in 1..=6 {
                let r = caps.evaluate(p) * i as f64 / 7.0;
                let point = reliability(&caps, &divs, r, p).unwrap();
                let want = free_symbol_closed_form(alpha, r, p);
                assert!(
                    (point.exponent - want).abs() < 1e-6,
                    "p={p} r={r}: {} vs {want}",
                    point.exponent
                );
                assert!((point.eta_opt - r / cbsc).abs() < 1e-6);
                assert!((point.p1 - 1.0).abs() < 1e-6);
                // power is split exactly
                assert!(
                    (point.eta_opt * point.p1 + (1.0 - point.eta_opt) * point.p2 - p).abs() < 1e-9
                );
            }
        }
    }

    #[test]
    fn exponent_limits() {
        let dmc = builtin::bsc_with_free_symbol(0.1);
        let (caps, divs) = curves(&dmc);
        let p = 0.6;
        // r -> 0 recovers the full confirm-phase exponent D(p)
        let tiny = reliability(&caps, &divs, 1e-7, p).unwrap();
        assert!((tiny.exponent - divs.evaluate(p)).abs() < 1e-3);
        // infeasible rate errors out
        let err = reliability(&caps, &divs, caps.evaluate(p) + 0.1, p).unwrap_err();
        assert!(matches!(err, ReliabilityError::RateRange { .. }));
    }

    #[test]
    fn eta_star_split_gives_zero_confirm_power() {
        let dmc = builtin::three_tier_symmetric();
        let (caps, divs) = curves(&dmc);
        let (r, p) = (0.8, 2.5);
        let (lo, _) = feasible_interval(&caps, r, p).unwrap();
        let (p1, p2) = phase_powers(&caps, r, p, lo).unwrap();
        assert!(p1 <= p / lo + 1e-6);
        assert!(p2.abs() < 1e-5, "p2 at eta* should vanish, got {p2}");
        let e = exponent_at(&caps, &divs, r, p, lo).unwrap();
        assert!((e - (1.0 - lo) * divs.evaluate(0.0)).abs() < 1e-5);
        // outside the interval the split is infeasible
        assert!(matches!(
            exponent_at(&caps, &divs, r, p, lo - 1e-3),
            Err(ReliabilityError::EtaInfeasible { .. })
        ));
    }

    #[test]
    fn grid_scan_oracle_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for trial in 0..8 {
            let dmc = crate::testutil::random_positive_channel(&mut rng, 5, 4);
            let (caps, divs) = curves(&dmc);
            let p_star = caps.landmarks.p_star.max(0.05);
            let p = rng.gen_range(0.2..1.2) * p_star;
            let r = rng.gen_range(0.1..0.9) * caps.evaluate(p);
            let point = reliability(&caps, &divs, r, p).unwrap();
            let (lo, hi) = point.interval;
            let hi_eval = hi.min(1.0 - 1e-12);
            let n = 10_000;
            let mut best = f64::NEG_INFINITY;
            let mut best_i = 0usize;
            for i in 0..=n {
                let eta = lo + (hi_eval - lo) * i as f64 / n as f64;
                let v = exponent_at(&caps, &divs, r, p, eta).unwrap();
                if v > best {
                    best = v;
                    best_i = i;
                }
            }
            assert!(
                point.exponent >= best - 1e-8,
                "trial {trial}: solver {} under grid {best}",
                point.exponent
            );
            // refine the oracle around its argmax; the two must then agree
            let a = lo + (hi_eval - lo) * best_i.saturating_sub(1) as f64 / n as f64;
            let b = lo + (hi_eval - lo) * (best_i + 1).min(n) as f64 / n as f64;
            let mut f = |eta: f64| exponent_at(&caps, &divs, r, p, eta).unwrap();
            let (_, refined) = golden_max(&mut f, a, b, 1e-12);
            let refined = refined.max(best);
            assert!(
                (point.exponent - refined).abs() < 1e-8,
                "trial {trial}: solver {} vs refined oracle {refined}",
                point.exponent
            );
        }
    }

    #[test]
    fn concavity_of_exponent_in_triple() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let dmc = builtin::three_tier_symmetric();
        let (caps, divs) = curves(&dmc);
        for _ in 0..200 {
            let p_a = rng.gen_range(0.3..4.5);
            let p_b = rng.gen_range(0.3..4.5);
            let r_a = rng.gen_range(0.05..0.95) * caps.evaluate(p_a);
            let r_b = rng.gen_range(0.05..0.95) * caps.evaluate(p_b);
            let (lo_a, hi_a) = feasible_interval(&caps, r_a, p_a).unwrap();
            let (lo_b, hi_b) = feasible_interval(&caps, r_b, p_b).unwrap();
            let eta_a = rng.gen_range(lo_a..hi_a.min(1.0 - 1e-9));
            let eta_b = rng.gen_range(lo_b..hi_b.min(1.0 - 1e-9));
            let lam: f64 = rng.gen();
            let mix = |x: f64, y: f64| lam * x + (1.0 - lam) * y;
            let va = exponent_at(&caps, &divs, r_a, p_a, eta_a).unwrap();
            let vb = exponent_at(&caps, &divs, r_b, p_b, eta_b).unwrap();
            let vm = exponent_at(
                &caps,
                &divs,
                mix(r_a, r_b),
                mix(p_a, p_b),
                mix(eta_a, eta_b),
            )
            .unwrap();
            assert!(
                vm >= mix(va, vb) - 1e-9,
                "concavity violated: {vm} < {}",
                mix(va, vb)
            );
        }
    }

    #[test]
    fn capacity_limit_values() {
        let alpha = 0.1;
        let dmc = builtin::bsc_with_free_symbol(alpha);
        let (caps, divs) = curves(&dmc);
        let d0 = 0.5 * (1.0 / (4.0 * alpha * (1.0 - alpha))).ln();
        let at_half = reliability_at_capacity(&caps, &divs, 0.5).unwrap();
        assert!((at_half - 0.5 * d0).abs() < 1e-4, "{at_half} vs {}", 0.5 * d0);
        let at_one = reliability_at_capacity(&caps, &divs, 1.0).unwrap();
        assert!(at_one.abs() < 1e-4, "limit at p=1 should vanish: {at_one}");
        // costless channel: no exponent survives at capacity
        let flat = builtin::bsc(0.1);
        let (fc, fd) = curves(&flat);
        assert!(reliability_at_capacity(&fc, &fd, 0.5).unwrap() < 1e-4);
    }

    #[test]
    fn monotone_in_power() {
        let dmc = builtin::three_tier_symmetric();
        let (caps, divs) = curves(&dmc);
        let r = 0.3;
        let mut prev = -1.0;
        for i in 1..=10 {
            let p = 0.6 + 0.35 * i as f64;
            let e = reliability(&caps, &divs, r, p).unwrap().exponent;
            assert!(e >= prev - 1e-9, "not monotone in p: {e} after {prev}");
            prev = e;
        }
    }

    #[test]
    fn curve_is_concave_nonincreasing_in_rate() {
        let dmc = builtin::three_tier_symmetric();
        let (caps, divs) = curves(&dmc);
        for &p in &[0.5, 2.5] {
            let cap = caps.evaluate(p);
            let grid: Vec<f64> = (1..30).map(|i| cap * i as f64 / 30.0).collect();
            let points = reliability_curve(&caps, &divs, p, &grid).unwrap();
            for w in points.windows(2) {
                assert!(w[1].exponent <= w[0].exponent + 1e-9);
            }
            for w in points.windows(3) {
                let mid = 0.5 * (w[0].exponent + w[2].exponent);
                assert!(w[1].exponent >= mid - 1e-9, "not concave in r");
            }
            // singleton grid consistency
            let single = reliability_curve(&caps, &divs, p, &[cap / 2.0]).unwrap();
            let direct = reliability(&caps, &divs, cap / 2.0, p).unwrap();
            assert!((single[0].exponent - direct.exponent).abs() < 1e-12);
        }
    }

    #[test]
    fn tangent_intercepts_overlap_at_interior_optimum() {
        let dmc = builtin::three_tier_symmetric();
        let (caps, divs) = curves(&dmc);
        let p = 2.5;
        let cap = caps.evaluate(p);
        let mut saw_applicable = 0;
        for i in 1..20 {
            let r = cap * i as f64 / 20.0;
            let point = reliability(&caps, &divs, r, p).unwrap();
            let report = tangent_intercept_check(&caps, &divs, &point);
            if report.applicable {
                saw_applicable += 1;
                assert!(
                    report.overlap,
                    "intercepts must overlap at r={r}: {:?} vs {:?}",
                    report.c_intercept, report.d_intercept
                );
            }
        }
        assert!(saw_applicable > 5, "expected interior optima on this family");
    }
}
