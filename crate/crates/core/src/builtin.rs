//! Built-in demonstration channels.
//!
//! These channels back the CLI's `--channel <builtin>` tokens and the test
//! suites, so every experiment can run without external data files.

use crate::channel::Dmc;

/// Binary symmetric channel with crossover `alpha` and all-zero costs.
pub fn bsc(alpha: f64) -> Dmc {
    assert!(alpha > 0.0 && alpha < 0.5, "alpha must lie in (0, 1/2)");
    Dmc::new(
        vec![vec![1.0 - alpha, alpha], vec![alpha, 1.0 - alpha]],
        vec![0.0, 0.0],
    )
    .expect("canonical channel is valid")
}

/// A unit-cost BSC augmented with a cost-free, completely noisy input letter.
///
/// Letter 0 is free and produces a uniform output; letters 1 and 2 are the
/// BSC inputs at unit cost. Its capacity function is linear in the power
/// budget up to 1, which makes it the canonical channel with a positive
/// exponent at capacity.
pub fn bsc_with_free_symbol(alpha: f64) -> Dmc {
    assert!(alpha > 0.0 && alpha < 0.5, "alpha must lie in (0, 1/2)");
    Dmc::new(
        vec![
            vec![0.5, 0.5],
            vec![alpha, 1.0 - alpha],
            vec![1.0 - alpha, alpha],
        ],
        vec![0.0, 1.0, 1.0],
    )
    .expect("canonical channel is valid")
}

/// Seven-input, four-output channel combining a free noisy letter (cost 0),
/// a BSC pair (cost 1), and a 4-ary symmetric set (cost 4).
///
/// Both its capacity and divergence envelopes are piecewise linear with
/// breakpoints at powers 1 and 4.
pub fn three_tier_symmetric() -> Dmc {
    let eps = 1.0 / 75.0;
    let del = 1.0 / 100.0;
    let half = 0.5 - del;
    let big = 1.0 - 3.0 * eps;
    Dmc::new(
        vec![
            vec![0.25, 0.25, 0.25, 0.25],
            vec![del, del, half, half],
            vec![half, half, del, del],
            vec![big, eps, eps, eps],
            vec![eps, big, eps, eps],
            vec![eps, eps, big, eps],
            vec![eps, eps, eps, big],
        ],
        vec![0.0, 1.0, 1.0, 4.0, 4.0, 4.0, 4.0],
    )
    .expect("canonical channel is valid")
}

/// Z-channel: input 0 is noiseless and free, input 1 flips to output 0 with
/// probability `alpha` and costs one unit. The zero transition makes it
/// zero-error capable under feedback retransmission.
pub fn z_channel(alpha: f64) -> Dmc {
    assert!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
    Dmc::new(
        vec![vec![1.0, 0.0], vec![alpha, 1.0 - alpha]],
        vec![0.0, 1.0],
    )
    .expect("canonical channel is valid")
}

/// Parses a builtin channel token: `bsc(a)`, `example1(a)`, `example2`,
/// `zchannel(a)`. Returns `None` for anything else.
pub fn parse(token: &str) -> Option<Dmc> {
    let token = token.trim();
    if token == "example2" {
        return Some(three_tier_symmetric());
    }
    let (name, rest) = token.split_once('(')?;
    let arg = rest.strip_suffix(')')?;
    let value: f64 = arg.trim().parse().ok()?;
    match name.trim() {
        "bsc" => (value > 0.0 && value < 0.5).then(|| bsc(value)),
        "example1" => (value > 0.0 && value < 0.5).then(|| bsc_with_free_symbol(value)),
        "zchannel" => (value > 0.0 && value < 1.0).then(|| z_channel(value)),
        _ => None,
    }
}
