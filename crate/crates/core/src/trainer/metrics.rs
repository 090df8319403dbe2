use crate::error::{Error, Result};

/// Reporting limit of the SNR-style metrics in dB.
pub const METRIC_CAP_DB: f64 = 120.0;

/// Relative floor added to the residual power: `10·log₁₀(1/ε)` is the cap.
const RELATIVE_FLOOR: f64 = 1e-12;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check(y: &[f64], s: &[f64], op: &'static str) -> Result<f64> {
    if y.len() != s.len() {
        return Err(Error::invalid(op, format!("lengths {} and {} differ", y.len(), s.len())));
    }
    let p = dot(s, s);
    if p == 0.0 {
        return Err(Error::invalid(op, "reference signal is identically zero"));
    }
    Ok(p)
}

fn ratio_db(signal: f64, residual: f64) -> f64 {
    if signal == 0.0 {
        return -METRIC_CAP_DB;
    }
    (10.0 * (signal / (residual + RELATIVE_FLOOR * signal)).log10()).clamp(-METRIC_CAP_DB, METRIC_CAP_DB)
}

/// Scale-invariant SNR of estimate `y` against reference `s`, in dB.
pub fn si_snr(y: &[f64], s: &[f64]) -> Result<f64> {
    let p = check(y, s, "si_snr")?;
    let a = dot(y, s) / p;
    let target: f64 = a * a * p;
    let residual: f64 = y.iter().zip(s).map(|(yi, si)| (yi - a * si).powi(2)).sum();
    Ok(ratio_db(target, residual))
}

/// SI-SNR gain of `y` over the unprocessed mixture `x`.
pub fn si_snri(y: &[f64], s: &[f64], x: &[f64]) -> Result<f64> {
    Ok(si_snr(y, s)? - si_snr(x, s)?)
}

/// Plain SNR `10·log₁₀(‖s‖² / ‖s − y‖²)`, in dB.
pub fn snr(y: &[f64], s: &[f64]) -> Result<f64> {
    let p = check(y, s, "snr")?;
    let residual: f64 = y.iter().zip(s).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(ratio_db(p, residual))
}
