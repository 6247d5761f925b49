//! Log-adaptive step-size tuning.
//!
//! The acceptance rate over a window of proposals nudges `log σ²` towards a
//! target rate with a vanishing gain `c0 / n^γ`, where `n` counts completed
//! windows. Adaptation can be frozen, after which `σ²` never changes.

/// Optimal acceptance rate for one-step (Langevin) proposals.
pub const MALA_TARGET: f64 = 0.574;
/// Optimal acceptance rate for multi-step leapfrog proposals.
pub const HMC_TARGET: f64 = 0.651;

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptState {
    pub log_sigma2: f64,
    pub target: f64,
    pub window: usize,
    pub c0: f64,
    pub gamma: f64,
    pub frozen: bool,
    /// Completed windows; the gain index.
    pub windows_done: usize,
    in_window: usize,
    accepted_in_window: usize,
    /// Acceptance rate of every completed window.
    pub history: Vec<f64>,
    pub proposals: u64,
    pub accepted: u64,
    pub divergences: u64,
}

impl AdaptState {
    pub fn new(sigma2: f64, target: f64) -> Self {
        AdaptState {
            log_sigma2: sigma2.ln(),
            target,
            window: 50,
            c0: 1.0,
            gamma: 0.8,
            frozen: false,
            windows_done: 0,
            in_window: 0,
            accepted_in_window: 0,
            history: Vec::new(),
            proposals: 0,
            accepted: 0,
            divergences: 0,
        }
    }

    pub fn sigma2(&self) -> f64 {
        self.log_sigma2.exp()
    }

    /// Records one proposal outcome, updating `log σ²` when a window closes.
    pub fn adapt_scale(&mut self, accepted: bool) {
        self.proposals += 1;
        self.in_window += 1;
        if accepted {
            self.accepted += 1;
            self.accepted_in_window += 1;
        }
        if self.in_window < self.window {
            return;
        }
        let rate = self.accepted_in_window as f64 / self.window as f64;
        self.history.push(rate);
        self.in_window = 0;
        self.accepted_in_window = 0;
        if self.frozen {
            return;
        }
        self.windows_done += 1;
        let gain = self.c0 / (self.windows_done as f64).powf(self.gamma);
        self.log_sigma2 += gain * (rate - self.target);
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Resets the acceptance counters (not the scale), e.g. at the end of burn-in.
    pub fn reset_counts(&mut self) {
        self.proposals = 0;
        self.accepted = 0;
        self.divergences = 0;
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feed(state: &mut AdaptState, accepted: usize, n: usize) {
        for i in 0..n {
            state.adapt_scale(i < accepted);
        }
    }

    #[test]
    fn on_target_rate_is_a_fixed_point() {
        let mut s = AdaptState::new(0.1, 0.5);
        let before = s.log_sigma2;
        feed(&mut s, 25, 50);
        assert_eq!(s.log_sigma2, before);
        assert_eq!(s.history, vec![0.5]);
    }

    #[test]
    fn full_acceptance_grows_scale_each_window() {
        let mut s = AdaptState::new(0.1, MALA_TARGET);
        let mut last = s.log_sigma2;
        for _ in 0..10 {
            feed(&mut s, 50, 50);
            assert!(s.log_sigma2 > last);
            last = s.log_sigma2;
        }
    }

    #[test]
    fn frozen_scale_never_moves() {
        let mut s = AdaptState::new(0.1, HMC_TARGET);
        s.freeze();
        let before = s.log_sigma2;
        feed(&mut s, 0, 500);
        assert_eq!(s.log_sigma2, before);
        assert_eq!(s.history.len(), 10);
    }
}
