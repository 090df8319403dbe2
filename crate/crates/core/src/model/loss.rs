use super::network::Estimates;
use crate::autograd::{self as ag, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Loss clamp in dB.
pub const DEFAULT_ALPHA: f64 = 30.0;
pub const SPEECH_WEIGHT: f64 = 0.8;
pub const NOISE_WEIGHT: f64 = 0.2;

/// Projects two estimates so they sum to the mixture, splitting the residual
/// `x − (y_s + y_n)` equally.
pub fn mixture_consistency<T: Scalar>(est: &Estimates<T>, x: &Var<T>) -> Result<Estimates<T>> {
    let half = T::c(0.5);
    let r = ag::scale_const(&ag::sub(x, &ag::add(&est.speech, &est.noise)?)?, half);
    Ok(Estimates {
        speech: ag::add(&est.speech, &r)?,
        noise: ag::add(&est.noise, &r)?,
    })
}

/// `−10·log₁₀(‖s‖² / (‖s−y‖² + τ‖s‖²))` with `τ = 10^(−α/10)`, so a perfect
/// estimate scores `−α`.
pub fn thresholded_snr_loss<T: Scalar>(s: &[T], y: &Var<T>, alpha: f64) -> Result<Var<T>> {
    if y.value().numel() != s.len() {
        return Err(Error::shape("thresholded_snr_loss", &[s.len()], y.shape()));
    }
    let power: f64 = s.iter().map(|v| v.as_f64().powi(2)).sum();
    if power == 0.0 {
        return Err(Error::invalid("thresholded_snr_loss", "reference signal is identically zero"));
    }
    let tau = 10f64.powf(-alpha / 10.0);
    let reference = Var::constant(Tensor::new(y.shape(), s.to_vec())?);
    let err = ag::sum_sq(&ag::sub(&reference, y)?);
    let l = ag::ln(&ag::add_const(&err, T::c(tau * power)))?;
    let db = T::c(10.0 / std::f64::consts::LN_10);
    Ok(ag::add_const(&ag::scale_const(&l, db), T::c(-10.0 * power.log10())))
}

/// `0.8·L(s, ŷ_s) + 0.2·L(n, ŷ_n)` at `α = 30`.
pub fn total_loss<T: Scalar>(s: &[T], n: &[T], est: &Estimates<T>) -> Result<Var<T>> {
    let ls = thresholded_snr_loss(s, &est.speech, DEFAULT_ALPHA)?;
    let ln = thresholded_snr_loss(n, &est.noise, DEFAULT_ALPHA)?;
    ag::add(
        &ag::scale_const(&ls, T::c(SPEECH_WEIGHT)),
        &ag::scale_const(&ln, T::c(NOISE_WEIGHT)),
    )
}
