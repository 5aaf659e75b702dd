use crate::analysis::fit::{fit_background, FitSettings};
use crate::error::{Error, Result};
use crate::spectral::Spectrum;

/// Two-channel diagnostic ratio `i635 / i514 - alpha`. Negative results are
/// returned as-is.
pub fn ratio_eq2(i635: f64, i514: f64, alpha: f64) -> Result<f64> {
    if i514 == 0.0 {
        return Err(Error::DivisionByZero("514 nm channel reads zero"));
    }
    if !(i514 > 0.0 && i514.is_finite()) || !(i635 >= 0.0 && i635.is_finite()) {
        return Err(Error::param(
            "channel intensity",
            format!("expected i635 >= 0 and i514 > 0, got {i635} and {i514}"),
        ));
    }
    if !alpha.is_finite() {
        return Err(Error::param("alpha", "must be finite"));
    }
    Ok(i635 / i514 - alpha)
}

/// Spectral diagnostic ratio `(I(635) - I_background) / I(510)`, with the
/// background taken from a Gaussian fit to the autofluorescence band.
pub fn ratio_eq1(s: &Spectrum, settings: &FitSettings) -> Result<f64> {
    let denom = s.value_at(settings.autofluor_peak)?;
    if denom == 0.0 {
        return Err(Error::DivisionByZero(
            "spectrum is zero at the autofluorescence peak",
        ));
    }
    let signal = s.value_at(settings.evaluate_at)?;
    let fit = fit_background(s, settings)?;
    Ok((signal - fit.i_background) / denom)
}
