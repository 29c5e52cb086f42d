//! Cost-constrained discrete memoryless channels.
//!
//! A [`Dmc`] is a stochastic transition matrix together with a non-negative
//! cost per input letter, normalized so at least one letter is free. All
//! other modules consume the single-letter quantities defined here: mutual
//! information under an input distribution, average cost, the maximum
//! single-letter divergences `D_k`, and the worst-case one-step
//! log-likelihood-ratio bound `F`.
//!
//! Conventions used throughout: `0 ln(0/x) = 0` and `x ln(x/0) = +inf` for
//! `x > 0`; everything is in nats.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on stochasticity checks (row sums, distribution sums).
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("transition row {row} sums to {sum:.17}, expected 1")]
    RowSum { row: usize, sum: f64 },
    #[error("negative or non-finite transition entry at ({row}, {col})")]
    BadEntry { row: usize, col: usize },
    #[error("negative or non-finite cost for input letter {index}")]
    BadCost { index: usize },
    #[error("no input letter has cost exactly 0")]
    NoZeroCostLetter,
    #[error("output column {col} is unreachable from every input")]
    UnreachableOutput { col: usize },
    #[error("need at least 2 inputs and 2 outputs, got {inputs}x{outputs}")]
    DegenerateDimensions { inputs: usize, outputs: usize },
    #[error("cost vector has length {got}, expected {expected}")]
    CostLength { got: usize, expected: usize },
    #[error("ragged transition matrix: row {row} has {got} entries, expected {expected}")]
    RaggedRow { row: usize, got: usize, expected: usize },
    #[error("input distribution entry {index} is negative or non-finite")]
    DistributionEntry { index: usize },
    #[error("input distribution sums to {sum:.17}, expected 1")]
    DistributionSum { sum: f64 },
    #[error("input distribution has length {got}, expected {expected}")]
    DistributionLength { got: usize, expected: usize },
}

/// A discrete memoryless channel with per-letter transmission costs.
///
/// `transition[k][j]` is the probability of output `j` given input `k`;
/// `costs[k]` is the cost of sending letter `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dmc {
    pub transition: Vec<Vec<f64>>,
    pub costs: Vec<f64>,
}

impl Dmc {
    /// Builds a channel and validates every invariant.
    pub fn new(transition: Vec<Vec<f64>>, costs: Vec<f64>) -> Result<Self, ChannelError> {
        let dmc = Dmc { transition, costs };
        dmc.validate()?;
        Ok(dmc)
    }

    /// Parses the JSON channel file format `{"transition": [[..]], "costs": [..]}`
    /// and validates on load.
    pub fn from_json_str(s: &str) -> Result<Self, String> {
        let dmc: Dmc = serde_json::from_str(s).map_err(|e| e.to_string())?;
        dmc.validate().map_err(|e| e.to_string())?;
        Ok(dmc)
    }

    pub fn n_inputs(&self) -> usize {
        self.transition.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.transition.first().map_or(0, |r| r.len())
    }

    #[inline]
    pub fn prob(&self, input: usize, output: usize) -> f64 {
        self.transition[input][output]
    }

    pub fn row(&self, input: usize) -> &[f64] {
        &self.transition[input]
    }

    /// Largest per-letter cost.
    pub fn rho_max(&self) -> f64 {
        self.costs.iter().cloned().fold(0.0, f64::max)
    }

    /// Lowest-index letter with cost exactly 0.
    pub fn zero_cost_letter(&self) -> usize {
        self.costs
            .iter()
            .position(|&c| c == 0.0)
            .expect("validated channel has a zero-cost letter")
    }

    /// Checks every structural invariant, returning a distinct error per failure.
    pub fn validate(&self) -> Result<(), ChannelError> {
        let nx = self.n_inputs();
        let ny = self.n_outputs();
        if nx < 2 || ny < 2 {
            return Err(ChannelError::DegenerateDimensions {
                inputs: nx,
                outputs: ny,
            });
        }
        for (k, row) in self.transition.iter().enumerate() {
            if row.len() != ny {
                return Err(ChannelError::RaggedRow {
                    row: k,
                    got: row.len(),
                    expected: ny,
                });
            }
            for (j, &p) in row.iter().enumerate() {
                if !p.is_finite() || p < 0.0 {
                    return Err(ChannelError::BadEntry { row: k, col: j });
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(ChannelError::RowSum { row: k, sum });
            }
        }
        if self.costs.len() != nx {
            return Err(ChannelError::CostLength {
                got: self.costs.len(),
                expected: nx,
            });
        }
        for (k, &c) in self.costs.iter().enumerate() {
            if !c.is_finite() || c < 0.0 {
                return Err(ChannelError::BadCost { index: k });
            }
        }
        if !self.costs.iter().any(|&c| c == 0.0) {
            return Err(ChannelError::NoZeroCostLetter);
        }
        for j in 0..ny {
            if !(0..nx).any(|k| self.transition[k][j] > 0.0) {
                return Err(ChannelError::UnreachableOutput { col: j });
            }
        }
        Ok(())
    }

    /// Mutual information `I(phi)` between input and output in nats.
    ///
    /// Terms with `phi_k P_kj = 0` contribute zero.
    pub fn mutual_information(&self, phi: &InputDistribution) -> f64 {
        assert_eq!(phi.len(), self.n_inputs(), "distribution length mismatch");
        let q = self.output_distribution(phi.probs());
        let mut info = 0.0;
        for (k, row) in self.transition.iter().enumerate() {
            let w = phi.probs()[k];
            if w == 0.0 {
                continue;
            }
            for (j, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    info += w * p * (p / q[j]).ln();
                }
            }
        }
        info.max(0.0)
    }

    /// Average transmission cost `sum_k phi_k rho_k`.
    pub fn average_cost(&self, phi: &InputDistribution) -> f64 {
        assert_eq!(phi.len(), self.n_inputs(), "distribution length mismatch");
        phi.probs()
            .iter()
            .zip(&self.costs)
            .map(|(w, c)| w * c)
            .sum()
    }

    /// Output distribution induced by input weights (weights need not sum to 1).
    pub(crate) fn output_distribution(&self, weights: &[f64]) -> Vec<f64> {
        let ny = self.n_outputs();
        let mut q = vec![0.0; ny];
        for (k, row) in self.transition.iter().enumerate() {
            let w = weights[k];
            if w == 0.0 {
                continue;
            }
            for (j, &p) in row.iter().enumerate() {
                q[j] += w * p;
            }
        }
        q
    }

    /// Maximum single-letter divergences `D_k = max_m KL(row k || row m)`.
    ///
    /// The maximizing reject letter `m_k` is recorded with ties broken toward
    /// the smallest index (the trivial candidate `m = k` contributes zero, so
    /// identical rows yield `D_k = 0`).
    pub fn letter_divergences(&self) -> LetterDivergences {
        let nx = self.n_inputs();
        let mut d = Vec::with_capacity(nx);
        let mut argmax = Vec::with_capacity(nx);
        for k in 0..nx {
            let mut best = f64::NEG_INFINITY;
            let mut best_m = 0;
            for m in 0..nx {
                let v = kl_divergence(self.row(k), self.row(m));
                if v > best {
                    best = v;
                    best_m = m;
                }
            }
            d.push(best.max(0.0));
            argmax.push(best_m);
        }
        LetterDivergences { d, argmax_letter: argmax }
    }

    /// Worst-case one-step log-likelihood ratio `F = max_{k,m,j} ln(P_kj/P_mj)`,
    /// taken over pairs with `P_kj > 0`. Returns `+inf` iff some output is
    /// possible under one input and impossible under another.
    pub fn worst_llr_bound(&self) -> f64 {
        let nx = self.n_inputs();
        let ny = self.n_outputs();
        let mut f = 0.0f64;
        for k in 0..nx {
            for m in 0..nx {
                for j in 0..ny {
                    let pk = self.transition[k][j];
                    let pm = self.transition[m][j];
                    if pk > 0.0 {
                        if pm == 0.0 {
                            return f64::INFINITY;
                        }
                        f = f.max((pk / pm).ln());
                    }
                }
            }
        }
        f
    }

    /// True iff some transition probability is exactly zero, which enables the
    /// zero-error retransmission scheme.
    pub fn is_zero_error_capable(&self) -> bool {
        self.transition
            .iter()
            .any(|row| row.iter().any(|&p| p == 0.0))
    }
}

/// KL divergence `sum_j p_j ln(p_j/q_j)` in nats with the usual conventions:
/// zero terms of `p` contribute 0, and `p_j > 0` with `q_j = 0` gives `+inf`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let mut acc = 0.0;
    for (&pj, &qj) in p.iter().zip(q) {
        if pj > 0.0 {
            if qj == 0.0 {
                return f64::INFINITY;
            }
            acc += pj * (pj / qj).ln();
        }
    }
    acc.max(0.0)
}

/// A probability assignment over the channel input alphabet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDistribution {
    probs: Vec<f64>,
}

impl InputDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self, ChannelError> {
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                return Err(ChannelError::DistributionEntry { index: i });
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(ChannelError::DistributionSum { sum });
        }
        Ok(InputDistribution { probs })
    }

    /// Point mass on a single letter.
    pub fn point_mass(index: usize, len: usize) -> Self {
        let mut probs = vec![0.0; len];
        probs[index] = 1.0;
        InputDistribution { probs }
    }

    pub fn uniform(len: usize) -> Self {
        InputDistribution {
            probs: vec![1.0 / len as f64; len],
        }
    }

    /// Wraps solver output; renormalizes away accumulated rounding and clips
    /// negative rounding noise to zero.
    pub(crate) fn from_weights(mut weights: Vec<f64>) -> Self {
        for w in &mut weights {
            if *w < 0.0 {
                *w = 0.0;
            }
        }
        let sum: f64 = weights.iter().sum();
        debug_assert!(sum > 0.0);
        for w in &mut weights {
            *w /= sum;
        }
        InputDistribution { probs: weights }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Per-letter maximum divergences `D_k` and their maximizing reject letters.
#[derive(Debug, Clone, PartialEq)]
pub struct LetterDivergences {
    /// `d[k] = max_m KL(row k || row m)`; may be `+inf`.
    pub d: Vec<f64>,
    /// The smallest maximizing `m` per input letter.
    pub argmax_letter: Vec<usize>,
}

impl LetterDivergences {
    pub fn max_finite(&self) -> Option<f64> {
        if self.d.iter().any(|v| v.is_infinite()) {
            None
        } else {
            self.d.iter().cloned().reduce(f64::max)
        }
    }
}

/// Binary entropy in nats.
pub fn binary_entropy(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    -x * x.ln() - (1.0 - x) * (1.0 - x).ln()
}
