//! Executable two-phase error-and-erasure coding with retransmission.
//!
//! A [`TwoPhaseCode`] carries a random data-phase codebook drawn from the
//! capacity-achieving input at power `P1` (each word repaired to its energy
//! cap), a confirm word `x_A` with the composition of the divergence-optimal
//! input at `P2`, and the reject word `x_R` built from the per-letter
//! maximizing alternatives. Each round sends the data word, learns the
//! receiver's tentative maximum-likelihood decision over the ideal feedback
//! link, confirms or rejects it, and the receiver accepts when the confirm
//! log-likelihood ratio clears a threshold set just below the divergence
//! budget. Rejections repeat the whole round with fresh receiver state.
//!
//! Trials are reproducible and order-independent: each trial draws from its
//! own counter-indexed ChaCha stream, and aggregation walks trials in index
//! order regardless of how many worker threads ran them.

use crate::capacity::CapacityCurve;
use crate::channel::{Dmc, InputDistribution};
use crate::converse::{posterior_trace, EntropyTrace};
use crate::divergence::DivergenceCurve;
use crate::reliability::{self, ReliabilityError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone)]
pub enum SimError {
    #[error("message set of size {m} exceeds the cap {cap}; reduce ell*rate")]
    MessageSetTooLarge { m: f64, cap: usize },
    #[error("block length {ell} cannot hold both phases")]
    BlockTooShort { ell: usize },
    #[error("channel has no zero transition probability; the zero-error scheme does not apply")]
    NotZeroErrorCapable,
    #[error(transparent)]
    Reliability(#[from] ReliabilityError),
}

/// Build-time knobs for the two-phase code.
#[derive(Debug, Clone)]
pub struct CodeConfig {
    /// Confirm-test threshold backoff: the accept threshold is
    /// `(1 - kappa) * sum_i D_{x_A[i]}`.
    pub kappa: f64,
    /// Largest admissible message-set size.
    pub m_cap: usize,
    /// Whole-word redraws allowed before deterministic energy repair.
    pub resample_limit: usize,
}

impl Default for CodeConfig {
    fn default() -> Self {
        CodeConfig {
            kappa: 0.1,
            m_cap: 4096,
            resample_limit: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CodeParams {
    pub r: f64,
    pub p: f64,
    pub eta: f64,
    pub p1: f64,
    pub p2: f64,
    pub kappa: f64,
}

/// A concrete two-phase code over a channel alphabet.
#[derive(Debug, Clone)]
pub struct TwoPhaseCode {
    pub ell1: usize,
    pub ell2: usize,
    pub m: usize,
    /// `m` data words of length `ell1`, each with energy at most `ell1 * p1`.
    pub codebook: Vec<Vec<usize>>,
    pub accept_word: Vec<usize>,
    pub reject_word: Vec<usize>,
    /// Accept iff the confirm-phase LLR is at least this value.
    pub llr_threshold: f64,
    /// `sum_i D_{x_A[i]}` for the built confirm word.
    pub divergence_budget: f64,
    pub params: CodeParams,
}

impl TwoPhaseCode {
    pub fn block_length(&self) -> usize {
        self.ell1 + self.ell2
    }
}

/// Largest-remainder apportionment of `total` slots to `weights`.
fn apportion(weights: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = weights.iter().map(|w| (w * total as f64) as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut remainders: Vec<(usize, f64)> = weights
        .iter()
        .enumerate()
        .map(|(k, w)| (k, w * total as f64 - counts[k] as f64))
        .collect();
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for i in 0..(total - assigned) {
        counts[remainders[i % remainders.len()].0] += 1;
    }
    counts
}

fn sample_letter(cum: &[f64], u: f64) -> usize {
    let mut k = 0;
    while k + 1 < cum.len() && u >= cum[k] {
        k += 1;
    }
    k
}

fn draw_codeword(
    rng: &mut ChaCha8Rng,
    cum: &[f64],
    costs: &[f64],
    len: usize,
    energy_cap: f64,
    resample_limit: usize,
    zero_letter: usize,
) -> Vec<usize> {
    let mut word = vec![0usize; len];
    for _ in 0..=resample_limit {
        let mut energy = 0.0;
        for slot in word.iter_mut() {
            let k = sample_letter(cum, rng.gen::<f64>());
            *slot = k;
            energy += costs[k];
        }
        if energy <= energy_cap + 1e-9 {
            return word;
        }
    }
    // deterministic repair: swap the most expensive symbols for the free letter
    let mut order: Vec<usize> = (0..len).collect();
    order.sort_by(|&a, &b| {
        costs[word[b]]
            .partial_cmp(&costs[word[a]])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut energy: f64 = word.iter().map(|&k| costs[k]).sum();
    for &i in &order {
        if energy <= energy_cap + 1e-9 {
            break;
        }
        energy -= costs[word[i]];
        word[i] = zero_letter;
    }
    word
}

/// Builds the two-phase code for a feasible `(r, p, eta)` split.
#[allow(clippy::too_many_arguments)]
pub fn build_code(
    dmc: &Dmc,
    caps: &CapacityCurve,
    divs: &DivergenceCurve,
    r: f64,
    p: f64,
    eta: f64,
    ell: usize,
    seed: u64,
    config: &CodeConfig,
) -> Result<TwoPhaseCode, SimError> {
    if ell < 2 {
        return Err(SimError::BlockTooShort { ell });
    }
    let m_real = (ell as f64 * r).exp().ceil();
    if !(m_real <= config.m_cap as f64) {
        return Err(SimError::MessageSetTooLarge {
            m: m_real,
            cap: config.m_cap,
        });
    }
    let m = (m_real as usize).max(2);

    let (lo, hi) = reliability::feasible_interval(caps, r, p)?;
    if !(eta >= lo - 1e-9 && eta <= hi + 1e-9) {
        return Err(SimError::Reliability(ReliabilityError::EtaInfeasible {
            eta,
            lo,
            hi,
        }));
    }
    let (p1, p2) = reliability::phase_powers(caps, r, p, eta)?;

    let ell1 = ((eta * ell as f64).round() as usize).clamp(1, ell - 1);
    let ell2 = ell - ell1;

    // data-phase codebook
    let phi1 = caps.input_at(p1);
    let cum1 = cumulative(&phi1);
    let zero_letter = dmc.zero_cost_letter();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX); // codebook stream; trials use their own
    let energy_cap = ell1 as f64 * p1;
    let codebook: Vec<Vec<usize>> = (0..m)
        .map(|_| {
            draw_codeword(
                &mut rng,
                &cum1,
                &dmc.costs,
                ell1,
                energy_cap,
                config.resample_limit,
                zero_letter,
            )
        })
        .collect();

    // confirm words from the divergence-optimal composition at p2
    let div_point = divs.at(p2);
    let counts = apportion(div_point.phi.probs(), ell2);
    let ld = dmc.letter_divergences();
    let mut accept_word = Vec::with_capacity(ell2);
    for (k, &n) in counts.iter().enumerate() {
        accept_word.extend(std::iter::repeat(k).take(n));
    }
    let reject_word: Vec<usize> = accept_word.iter().map(|&k| ld.argmax_letter[k]).collect();
    let divergence_budget: f64 = accept_word.iter().map(|&k| ld.d[k]).sum();
    let llr_threshold = (1.0 - config.kappa) * divergence_budget;

    Ok(TwoPhaseCode {
        ell1,
        ell2,
        m,
        codebook,
        accept_word,
        reject_word,
        llr_threshold,
        divergence_budget,
        params: CodeParams {
            r,
            p,
            eta,
            p1,
            p2,
            kappa: config.kappa,
        },
    })
}

fn cumulative(phi: &InputDistribution) -> Vec<f64> {
    let mut acc = 0.0;
    phi.probs()
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

/// Options for a simulation run.
#[derive(Debug, Clone)]
pub struct SimOptions {
    /// Record full entropy traces for the first this-many trials.
    pub record_traces: usize,
    /// Posterior-entropy level splitting the trace into its two phases.
    pub entropy_threshold: f64,
    /// Safety stop for pathological accept probabilities.
    pub max_rounds: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            record_traces: 0,
            entropy_threshold: 1.0,
            max_rounds: 1_000_000,
        }
    }
}

/// One full transmission as the receiver saw it.
#[derive(Debug, Clone)]
pub struct Transcript {
    /// Received symbols, all rounds concatenated.
    pub received: Vec<usize>,
    /// Tentative data-phase decision per round.
    pub tentatives: Vec<usize>,
    /// Message released on the accepting round.
    pub decided: usize,
    /// True message.
    pub message: usize,
}

/// Aggregated outcome of a batch of independent trials.
#[derive(Debug, Clone, Serialize)]
pub struct SimResult {
    pub trials: u64,
    pub errors: u64,
    pub p_e_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Mean decoding time in channel uses.
    pub tau_bar: f64,
    /// Mean energy per channel use.
    pub energy_rate: f64,
    /// `rounds_histogram[k]` counts trials that needed `k + 1` rounds.
    pub rounds_histogram: Vec<u64>,
    /// Trials stopped by the round-safety cap (0 in sane configurations).
    pub aborted: u64,
    pub seed: u64,
    pub rng: String,
    #[serde(skip)]
    pub traces: Vec<EntropyTrace>,
}

impl SimResult {
    /// Measured exponent `-ln p_e_hat / tau_bar`; infinite when no errors.
    pub fn measured_exponent(&self) -> f64 {
        -self.p_e_hat.ln() / self.tau_bar
    }
}

/// Wilson 95% score interval.
fn wilson_ci(successes: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054f64;
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

struct Tables {
    /// `logp[k][j] = ln P_kj` (`-inf` at zero transitions).
    logp: Vec<Vec<f64>>,
    cum: Vec<Vec<f64>>,
    word_energy: Vec<f64>,
    accept_energy: f64,
    reject_energy: f64,
    /// `llr[i][j] = ln(P[a_i][j] / P[r_i][j])` per confirm position.
    llr: Vec<Vec<f64>>,
}

fn build_tables(code: &TwoPhaseCode, dmc: &Dmc) -> Tables {
    let ny = dmc.n_outputs();
    let logp: Vec<Vec<f64>> = dmc
        .transition
        .iter()
        .map(|row| row.iter().map(|&p| p.ln()).collect())
        .collect();
    let cum: Vec<Vec<f64>> = dmc
        .transition
        .iter()
        .map(|row| {
            let mut acc = 0.0;
            row.iter()
                .map(|&p| {
                    acc += p;
                    acc
                })
                .collect()
        })
        .collect();
    let word_energy = code
        .codebook
        .iter()
        .map(|w| w.iter().map(|&k| dmc.costs[k]).sum())
        .collect();
    let accept_energy = code.accept_word.iter().map(|&k| dmc.costs[k]).sum();
    let reject_energy = code.reject_word.iter().map(|&k| dmc.costs[k]).sum();
    let llr = (0..code.ell2)
        .map(|i| {
            let a = code.accept_word[i];
            let r = code.reject_word[i];
            (0..ny).map(|j| logp[a][j] - logp[r][j]).collect()
        })
        .collect();
    Tables {
        logp,
        cum,
        word_energy,
        accept_energy,
        reject_energy,
        llr,
    }
}

struct TrialOutcome {
    rounds: u32,
    error: bool,
    aborted: bool,
    energy: f64,
    transcript: Option<Transcript>,
}

fn run_trial(
    code: &TwoPhaseCode,
    tables: &Tables,
    rng: &mut ChaCha8Rng,
    max_rounds: usize,
    record: bool,
) -> TrialOutcome {
    let theta = rng.gen_range(0..code.m);
    let mut rounds = 0u32;
    let mut energy = 0.0;
    let mut received = Vec::new();
    let mut tentatives = Vec::new();
    let mut y1 = vec![0usize; code.ell1];
    loop {
        rounds += 1;
        // data phase
        for (i, y) in y1.iter_mut().enumerate() {
            let x = code.codebook[theta][i];
            *y = sample_letter(&tables.cum[x], rng.gen::<f64>());
        }
        energy += tables.word_energy[theta];
        // tentative ML decision, ties to the lowest index
        let mut best = f64::NEG_INFINITY;
        let mut tentative = 0usize;
        for (msg, word) in code.codebook.iter().enumerate() {
            let mut score = 0.0;
            for (i, &y) in y1.iter().enumerate() {
                score += tables.logp[word[i]][y];
            }
            if score > best {
                best = score;
                tentative = msg;
            }
        }
        // confirm phase: the transmitter knows the tentative decision via
        // ideal feedback and confirms iff it matches the true message
        let confirm = tentative == theta;
        let sent = if confirm {
            &code.accept_word
        } else {
            &code.reject_word
        };
        energy += if confirm {
            tables.accept_energy
        } else {
            tables.reject_energy
        };
        let mut llr = 0.0;
        let mut y2 = Vec::new();
        for i in 0..code.ell2 {
            let y = sample_letter(&tables.cum[sent[i]], rng.gen::<f64>());
            llr += tables.llr[i][y];
            if record {
                y2.push(y);
            }
        }
        if record {
            received.extend_from_slice(&y1);
            received.extend_from_slice(&y2);
            tentatives.push(tentative);
        }
        let accept = llr >= code.llr_threshold;
        if accept {
            return TrialOutcome {
                rounds,
                error: tentative != theta,
                aborted: false,
                energy,
                transcript: record.then(|| Transcript {
                    received,
                    tentatives,
                    decided: tentative,
                    message: theta,
                }),
            };
        }
        if rounds as usize >= max_rounds {
            return TrialOutcome {
                rounds,
                error: false,
                aborted: true,
                energy,
                transcript: None,
            };
        }
    }
}

/// Runs `n_trials` independent transmissions of the code.
pub fn simulate_trials(
    code: &TwoPhaseCode,
    dmc: &Dmc,
    n_trials: u64,
    seed: u64,
    opts: &SimOptions,
) -> SimResult {
    let tables = build_tables(code, dmc);
    let outcomes: Vec<TrialOutcome> = (0..n_trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial + 1);
            run_trial(
                code,
                &tables,
                &mut rng,
                opts.max_rounds,
                (trial as usize) < opts.record_traces,
            )
        })
        .collect();
    aggregate(code, dmc, outcomes, n_trials, seed, opts)
}

fn aggregate(
    code: &TwoPhaseCode,
    dmc: &Dmc,
    outcomes: Vec<TrialOutcome>,
    n_trials: u64,
    seed: u64,
    opts: &SimOptions,
) -> SimResult {
    let ell = code.block_length() as u64;
    let mut errors = 0u64;
    let mut aborted = 0u64;
    let mut total_tau = 0u64;
    let mut total_energy = 0.0;
    let mut hist: Vec<u64> = Vec::new();
    let mut traces = Vec::new();
    for out in outcomes {
        if out.error {
            errors += 1;
        }
        if out.aborted {
            aborted += 1;
        }
        total_tau += out.rounds as u64 * ell;
        total_energy += out.energy;
        let idx = (out.rounds - 1) as usize;
        if hist.len() <= idx {
            hist.resize(idx + 1, 0);
        }
        hist[idx] += 1;
        if let Some(t) = out.transcript {
            let trace = posterior_trace(code, dmc, &t, opts.entropy_threshold)
                .expect("simulator transcripts are consistent with the code");
            traces.push(trace);
        }
    }
    let (ci_low, ci_high) = wilson_ci(errors, n_trials);
    SimResult {
        trials: n_trials,
        errors,
        p_e_hat: errors as f64 / n_trials as f64,
        ci_low,
        ci_high,
        tau_bar: total_tau as f64 / n_trials as f64,
        energy_rate: total_energy / total_tau as f64,
        rounds_histogram: hist,
        aborted,
        seed,
        rng: "chacha8; per-trial streams (stream id = trial index + 1)".to_string(),
        traces,
    }
}

/// Exact error probabilities of the confirm-phase LLR test.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Phase2Probs {
    /// P(accept | reject word sent) — the error direction.
    pub p_ra: f64,
    /// P(reject | accept word sent) — the erasure direction.
    pub p_ar: f64,
}

/// Computes the two confirm-test error probabilities.
///
/// Positions sharing the same (accept, reject) letter pair are i.i.d., so the
/// LLR distribution per group is enumerated over multinomial output
/// compositions (exact) and the groups are then combined. Beyond
/// `exact_cap` positions per group the per-position distribution is convolved
/// onto a fixed grid instead.
pub fn phase2_error_probs(code: &TwoPhaseCode, dmc: &Dmc, exact_cap: usize) -> Phase2Probs {
    #[derive(Clone)]
    struct Atom {
        value: f64,
        lp_r: f64,
        lp_a: f64,
    }
    let ny = dmc.n_outputs();
    // group confirm positions by letter pair
    let mut groups: Vec<((usize, usize), usize)> = Vec::new();
    for i in 0..code.ell2 {
        let key = (code.accept_word[i], code.reject_word[i]);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, n)) => *n += 1,
            None => groups.push((key, 1)),
        }
    }

    let ln_fact: Vec<f64> = {
        let mut v = vec![0.0; code.ell2 + 1];
        for i in 1..=code.ell2 {
            v[i] = v[i - 1] + (i as f64).ln();
        }
        v
    };

    // per-group distribution of (sum LLR, log-prob under R, log-prob under A)
    let group_dist = |(a, r): (usize, usize), n: usize| -> Vec<Atom> {
        let l: Vec<f64> = (0..ny)
            .map(|j| {
                let pa = dmc.prob(a, j);
                let pr = dmc.prob(r, j);
                if pa == 0.0 && pr == 0.0 {
                    0.0
                } else {
                    pa.ln() - pr.ln()
                }
            })
            .collect();
        if n <= exact_cap {
            let mut out = Vec::new();
            let mut comp = vec![0usize; ny];
            enumerate_compositions(&mut comp, 0, n, &mut |comp| {
                let mut value = 0.0;
                let mut lp_r = ln_fact[n];
                let mut lp_a = ln_fact[n];
                for (j, &c) in comp.iter().enumerate() {
                    if c == 0 {
                        continue;
                    }
                    value += c as f64 * l[j];
                    lp_r += c as f64 * dmc.prob(r, j).ln() - ln_fact[c];
                    lp_a += c as f64 * dmc.prob(a, j).ln() - ln_fact[c];
                }
                out.push(Atom { value, lp_r, lp_a });
            });
            out
        } else {
            // binned convolution fallback
            let bins = 1 << 14;
            let finite: Vec<f64> = l.iter().cloned().filter(|v| v.is_finite()).collect();
            let max_abs = finite.iter().fold(1e-9f64, |m, v| m.max(v.abs()));
            let span = max_abs * n as f64;
            let width = 2.0 * span / bins as f64;
            let to_bin =
                |v: f64| (((v + span) / width).floor() as i64).clamp(0, bins as i64 - 1) as usize;
            let mut pr = vec![0.0f64; bins];
            let mut pa = vec![0.0f64; bins];
            pr[to_bin(0.0)] = 1.0;
            pa[to_bin(0.0)] = 1.0;
            for _ in 0..n {
                let mut npr = vec![0.0f64; bins];
                let mut npa = vec![0.0f64; bins];
                for b in 0..bins {
                    if pr[b] == 0.0 && pa[b] == 0.0 {
                        continue;
                    }
                    let center = -span + (b as f64 + 0.5) * width;
                    for j in 0..ny {
                        let t = to_bin(center + l[j]);
                        npr[t] += pr[b] * dmc.prob(r, j);
                        npa[t] += pa[b] * dmc.prob(a, j);
                    }
                }
                pr = npr;
                pa = npa;
            }
            (0..bins)
                .filter(|&b| pr[b] > 0.0 || pa[b] > 0.0)
                .map(|b| Atom {
                    value: -span + (b as f64 + 0.5) * width,
                    lp_r: pr[b].ln(),
                    lp_a: pa[b].ln(),
                })
                .collect()
        }
    };

    let mut dist: Vec<Atom> = vec![Atom {
        value: 0.0,
        lp_r: 0.0,
        lp_a: 0.0,
    }];
    for &(key, n) in &groups {
        let g = group_dist(key, n);
        let mut next = Vec::with_capacity(dist.len() * g.len());
        for d in &dist {
            for atom in &g {
                next.push(Atom {
                    value: d.value + atom.value,
                    lp_r: d.lp_r + atom.lp_r,
                    lp_a: d.lp_a + atom.lp_a,
                });
            }
        }
        dist = next;
    }

    let t = code.llr_threshold;
    let mut p_ra = 0.0;
    let mut p_ar = 0.0;
    for atom in &dist {
        if atom.value >= t {
            p_ra += atom.lp_r.exp();
        } else {
            p_ar += atom.lp_a.exp();
        }
    }
    Phase2Probs {
        p_ra: p_ra.min(1.0),
        p_ar: p_ar.min(1.0),
    }
}

fn enumerate_compositions(
    comp: &mut Vec<usize>,
    idx: usize,
    left: usize,
    emit: &mut impl FnMut(&[usize]),
) {
    if idx == comp.len() - 1 {
        comp[idx] = left;
        emit(comp);
        return;
    }
    for c in 0..=left {
        comp[idx] = c;
        enumerate_compositions(comp, idx + 1, left - c, emit);
    }
    comp[idx] = 0;
}

/// Zero-error retransmission scheme for channels with a zero transition.
///
/// The confirm phase occupies only `ceil(ln ell)` symbols: the accept word
/// repeats a letter that can produce an output which is impossible under the
/// reject letter, and the receiver accepts only when it sees that marker
/// output. Errors are structurally impossible; erasures repeat the round.
#[allow(clippy::too_many_arguments)]
pub fn simulate_zero_error(
    dmc: &Dmc,
    caps: &CapacityCurve,
    r: f64,
    p: f64,
    ell: usize,
    n_trials: u64,
    seed: u64,
    opts: &SimOptions,
) -> Result<SimResult, SimError> {
    if !dmc.is_zero_error_capable() {
        return Err(SimError::NotZeroErrorCapable);
    }
    let cap = caps.evaluate(p);
    if !(r > 0.0 && r < cap) {
        return Err(SimError::Reliability(ReliabilityError::RateRange {
            r,
            cap,
        }));
    }
    let ell2 = (ell as f64).ln().ceil().max(1.0) as usize;
    if ell <= ell2 {
        return Err(SimError::BlockTooShort { ell });
    }
    let ell1 = ell - ell2;
    let m_real = (ell as f64 * r).exp().ceil();
    let config = CodeConfig::default();
    if !(m_real <= config.m_cap as f64) {
        return Err(SimError::MessageSetTooLarge {
            m: m_real,
            cap: config.m_cap,
        });
    }
    let m = (m_real as usize).max(2);

    // marker output: impossible under some reject letter, most likely under
    // the accept letter; deterministic scan order breaks ties
    let ny = dmc.n_outputs();
    let nx = dmc.n_inputs();
    let mut best: Option<(f64, usize, usize, usize)> = None; // (prob, k, j, m)
    for j in 0..ny {
        if let Some(mr) = (0..nx).find(|&mm| dmc.prob(mm, j) == 0.0) {
            for k in 0..nx {
                let pk = dmc.prob(k, j);
                if pk > 0.0 && best.map_or(true, |(bp, ..)| pk > bp) {
                    best = Some((pk, k, j, mr));
                }
            }
        }
    }
    let (_, k_anchor, j_marker, m_reject) = best.expect("zero-error capable channel has a marker");

    let phi1 = caps.input_at(p);
    let cum1 = cumulative(&phi1);
    let zero_letter = dmc.zero_cost_letter();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let energy_cap = ell1 as f64 * p;
    let codebook: Vec<Vec<usize>> = (0..m)
        .map(|_| {
            draw_codeword(
                &mut rng,
                &cum1,
                &dmc.costs,
                ell1,
                energy_cap,
                config.resample_limit,
                zero_letter,
            )
        })
        .collect();

    let logp: Vec<Vec<f64>> = dmc
        .transition
        .iter()
        .map(|row| row.iter().map(|&q| q.ln()).collect())
        .collect();
    let cums: Vec<Vec<f64>> = dmc
        .transition
        .iter()
        .map(|row| {
            let mut acc = 0.0;
            row.iter()
                .map(|&q| {
                    acc += q;
                    acc
                })
                .collect()
        })
        .collect();
    let word_energy: Vec<f64> = codebook
        .iter()
        .map(|w| w.iter().map(|&k| dmc.costs[k]).sum())
        .collect();
    let accept_energy = ell2 as f64 * dmc.costs[k_anchor];
    let reject_energy = ell2 as f64 * dmc.costs[m_reject];

    let outcomes: Vec<TrialOutcome> = (0..n_trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial + 1);
            let theta = rng.gen_range(0..m);
            let mut rounds = 0u32;
            let mut energy = 0.0;
            loop {
                rounds += 1;
                let mut scores = vec![0.0f64; m];
                for i in 0..ell1 {
                    let y = sample_letter(&cums[codebook[theta][i]], rng.gen::<f64>());
                    for (msg, s) in scores.iter_mut().enumerate() {
                        *s += logp[codebook[msg][i]][y];
                    }
                }
                let mut tentative = 0usize;
                let mut bb = f64::NEG_INFINITY;
                for (msg, &s) in scores.iter().enumerate() {
                    if s > bb {
                        bb = s;
                        tentative = msg;
                    }
                }
                let confirm = tentative == theta;
                let sent = if confirm { k_anchor } else { m_reject };
                energy += word_energy[theta] + if confirm { accept_energy } else { reject_energy };
                let mut saw_marker = false;
                for _ in 0..ell2 {
                    let y = sample_letter(&cums[sent], rng.gen::<f64>());
                    if y == j_marker {
                        saw_marker = true;
                    }
                }
                if saw_marker {
                    // the marker is impossible under the reject letter, so
                    // acceptance certifies a confirmed (correct) decision
                    debug_assert!(confirm);
                    return TrialOutcome {
                        rounds,
                        error: tentative != theta,
                        aborted: false,
                        energy,
                        transcript: None,
                    };
                }
                if rounds as usize >= opts.max_rounds {
                    return TrialOutcome {
                        rounds,
                        error: false,
                        aborted: true,
                        energy,
                        transcript: None,
                    };
                }
            }
        })
        .collect();

    let ell_total = ell as u64;
    let mut errors = 0u64;
    let mut aborted = 0u64;
    let mut total_tau = 0u64;
    let mut total_energy = 0.0;
    let mut hist: Vec<u64> = Vec::new();
    for out in outcomes {
        if out.error {
            errors += 1;
        }
        if out.aborted {
            aborted += 1;
        }
        total_tau += out.rounds as u64 * ell_total;
        total_energy += out.energy;
        let idx = (out.rounds - 1) as usize;
        if hist.len() <= idx {
            hist.resize(idx + 1, 0);
        }
        hist[idx] += 1;
    }
    assert_eq!(errors, 0, "zero-error scheme must never err");
    let (ci_low, ci_high) = wilson_ci(errors, n_trials);
    Ok(SimResult {
        trials: n_trials,
        errors,
        p_e_hat: 0.0,
        ci_low,
        ci_high,
        tau_bar: total_tau as f64 / n_trials as f64,
        energy_rate: total_energy / total_tau as f64,
        rounds_histogram: hist,
        aborted,
        seed,
        rng: "chacha8; per-trial streams (stream id = trial index + 1)".to_string(),
        traces: Vec::new(),
    })
}
