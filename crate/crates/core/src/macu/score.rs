use crate::error::{Error, Result};

/// Normalized bin weights `w_i = φ_i / Σφ`.
pub fn bin_weights(phi: &[f64]) -> Result<Vec<f64>> {
    if phi.iter().any(|&p| p < 0.0 || !p.is_finite()) {
        return Err(Error::Input("bin lower bounds must be finite and non-negative".into()));
    }
    let total: f64 = phi.iter().sum();
    if total == 0.0 {
        return Err(Error::Numerical(
            "all bin lower bounds are zero; weights are undefined".into(),
        ));
    }
    Ok(phi.iter().map(|p| p / total).collect())
}

/// `Ã = Σ a_i w_i`.
pub fn macu_score(acc: &[f64], phi: &[f64]) -> Result<f64> {
    if acc.len() != phi.len() {
        return Err(Error::Input(format!("{} accuracies for {} bins", acc.len(), phi.len())));
    }
    bin_weights(phi)?;
    // Dividing once at the end keeps constant accuracies exact.
    let total: f64 = phi.iter().sum();
    Ok(acc.iter().zip(phi).map(|(a, p)| a * p).sum::<f64>() / total)
}
