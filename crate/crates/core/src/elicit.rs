//! Prior elicitation for the DiSC variance hyperparameters.
//!
//! A probability ratio `r` between two senses (or two context words) is
//! declared a 3-sigma event on the logit scale, and the stationary variance of
//! the difference is solved for the diffusion variance. Reported values are
//! rounded to the nearest [`ROUNDING_STEP`].

use crate::error::{Error, Result};

/// Grid used when rounding elicited variances.
pub const ROUNDING_STEP: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Elicited {
    pub exact: f64,
    pub rounded: f64,
}

impl Elicited {
    fn new(exact: f64) -> Self {
        let rounded = (exact / ROUNDING_STEP).round() * ROUNDING_STEP;
        // never round a positive variance down to zero
        let rounded = if rounded <= 0.0 {
            ROUNDING_STEP
        } else {
            rounded
        };
        Elicited { exact, rounded }
    }
}

fn check(ratio: f64, alpha: f64) -> Result<()> {
    if !(ratio > 1.0) || !ratio.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "ratio threshold must be > 1, got {ratio}"
        )));
    }
    if !(alpha.abs() < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "|alpha| must be < 1, got {alpha}"
        )));
    }
    Ok(())
}

/// Solves `3 sqrt(2κ / (1 - α²)) = log(ratio)` for the prevalence variance κ_φ.
pub fn elicit_kappa_phi(ratio: f64, alpha: f64) -> Result<Elicited> {
    check(ratio, alpha)?;
    let sd = ratio.ln() / 3.0;
    Ok(Elicited::new(sd * sd * (1.0 - alpha * alpha) / 2.0))
}

/// Solves `3 sqrt(2κ_χ + 2κ_θ / (1 - α²)) = log(ratio)` with the variance split
/// equally between sense and time effects, `κ_χ = κ_θ / (1 - α²)`.
/// Returns `(κ_χ, κ_θ)`.
pub fn elicit_kappa_chi_theta(ratio: f64, alpha: f64) -> Result<(Elicited, Elicited)> {
    check(ratio, alpha)?;
    let sd = ratio.ln() / 3.0;
    let kappa_chi = sd * sd / 4.0;
    let kappa_theta = kappa_chi * (1.0 - alpha * alpha);
    Ok((Elicited::new(kappa_chi), Elicited::new(kappa_theta)))
}
