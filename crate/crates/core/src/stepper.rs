//! Barzilai-Borwein step sizes and the Grippo-Lampariello-Lucidi nonmonotone
//! line search.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::operators::Basis;

/// Largest number of halvings tried before a trial point is accepted anyway.
pub const MAX_BACKTRACKS: u32 = 60;

const DEGENERATE: f64 = 1e-30;

/// History carried between iterations.
#[derive(Clone, Debug)]
pub struct StepState {
    /// `X_k - X_{k-1}`
    pub s_prev: Option<Basis>,
    /// `G_k - G_{k-1}`
    pub z_prev: Option<Basis>,
    pub k: usize,
    window: VecDeque<f64>,
    window_len: usize,
    pub rng: ChaCha20Rng,
}

impl StepState {
    /// `memory` is `L`; the window keeps the last `L + 1` objective values.
    pub fn new(memory: usize, rng: ChaCha20Rng) -> Self {
        Self {
            s_prev: None,
            z_prev: None,
            k: 0,
            window: VecDeque::with_capacity(memory + 1),
            window_len: memory + 1,
            rng,
        }
    }

    /// Drops the difference history and objective window, keeping the rng.
    pub fn reset(&mut self) {
        self.s_prev = None;
        self.z_prev = None;
        self.k = 0;
        self.window.clear();
    }

    pub fn push_value(&mut self, f: f64) {
        if self.window.len() == self.window_len {
            self.window.pop_front();
        }
        self.window.push_back(f);
    }

    /// Reference value `max_{0 <= l <= min(k, L)} f_{k-l}`.
    pub fn window_max(&self) -> f64 {
        self.window.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn window(&self) -> &VecDeque<f64> {
        &self.window
    }

    /// Records the step just taken.
    pub fn record(&mut self, s: Basis, z: Basis) {
        self.s_prev = Some(s);
        self.z_prev = Some(z);
        self.k += 1;
    }
}

/// Alternating BB step: `<S,S>/|<S,Z>|` for even `k`, `|<S,Z>|/<Z,Z>` for odd.
/// A vanishing denominator yields `fallback`.
pub fn bb_step(s: &Basis, z: &Basis, k: usize, fallback: f64) -> f64 {
    let sz = s.dot(z).abs();
    let (num, den) = if k % 2 == 0 {
        (s.norm_squared(), sz)
    } else {
        (sz, z.norm_squared())
    };
    if den < DEGENERATE {
        fallback
    } else {
        num / den
    }
}

/// `xi * max(lo, min(hi, gamma))` with `xi ~ U[xi_lo, xi_hi]`. When the
/// interval is a single point no random number is drawn.
pub fn clamp_randomize<R: Rng>(
    gamma: f64,
    lo: f64,
    hi: f64,
    xi_lo: f64,
    xi_hi: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(lo > 0.0 && lo <= hi) {
        return Err(Error::arg(format!("invalid step bounds [{lo}, {hi}]")));
    }
    if !(xi_lo > 0.0 && xi_lo <= xi_hi) {
        return Err(Error::arg(format!("invalid randomization bounds [{xi_lo}, {xi_hi}]")));
    }
    let clamped = gamma.clamp(lo, hi);
    let xi = if xi_lo == xi_hi {
        xi_lo
    } else {
        rng.gen_range(xi_lo..=xi_hi)
    };
    Ok(xi * clamped)
}

/// Outcome of a line search.
#[derive(Clone, Debug)]
pub struct Accepted<T> {
    pub t: u32,
    pub step: f64,
    pub x: Basis,
    pub value: f64,
    /// Extra payload from the objective closure at the accepted point.
    pub payload: T,
    /// The cap was hit and the last trial was taken without the GLL test.
    pub capped: bool,
}

/// Finds the smallest `t >= 0` with
/// `f(X - delta^t gamma G) <= f_ref - lambda delta^t gamma ||G||^2`.
///
/// `eval` returns the objective value plus an arbitrary payload (the caller
/// typically stashes the gradient ingredients there).
pub fn gll_search<T, F>(
    mut eval: F,
    x: &Basis,
    g: &Basis,
    gamma: f64,
    delta: f64,
    lambda: f64,
    f_ref: f64,
) -> Result<Accepted<T>>
where
    F: FnMut(&Basis) -> Result<(f64, T)>,
{
    if !(delta > 0.0 && delta < 1.0) || !(lambda > 0.0 && lambda < 1.0) || !(gamma > 0.0) {
        return Err(Error::arg(format!(
            "line search needs 0 < delta, lambda < 1 and gamma > 0 (delta={delta}, lambda={lambda}, gamma={gamma})"
        )));
    }
    let gsq = g.norm_squared();
    let mut step = gamma;
    for t in 0..=MAX_BACKTRACKS {
        let trial = x - g * step;
        let (value, payload) = eval(&trial)?;
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "objective is not finite at backtrack {t} (step {step:e})"
            )));
        }
        let capped = t == MAX_BACKTRACKS;
        if value <= f_ref - lambda * step * gsq || capped {
            let ok = value <= f_ref - lambda * step * gsq;
            return Ok(Accepted {
                t,
                step,
                x: trial,
                value,
                payload,
                capped: capped && !ok,
            });
        }
        step *= delta;
    }
    unreachable!("loop returns on the final backtrack")
}

/// Caps `gamma` at `0.9 sigma_min(X) / ||G||_2`, which keeps `X - gamma G`
/// full rank.
pub fn rank_safeguard(gamma: f64, sigma_min: f64, g_norm2: f64) -> f64 {
    if g_norm2 > 0.0 {
        gamma.min(0.9 * sigma_min / g_norm2)
    } else {
        gamma
    }
}
