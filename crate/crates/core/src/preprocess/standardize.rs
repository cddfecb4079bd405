use crate::error::{config_err, Result};
use crate::signal::Recording;

/// Running exponential mean and standard deviation, one entry per channel.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StandardizerState {
    pub ema: Vec<f64>,
    pub esd: Vec<f64>,
}

/// Exponential moving standardization of one channel, left to right.
///
/// ```text
/// EMA_t = α·x_t + (1−α)·EMA_{t−1}
/// ESD_t = sqrt(α·(x_t − EMA_t)² + (1−α)·ESD²_{t−1})
/// x'_t  = (x_t − EMA_t) / (ESD_t + ε)
/// ```
///
/// With `init = None` the recurrence starts from `EMA = x_0`, `ESD = 0`.
/// Returns the standardized series and the final `(EMA, ESD)`.
pub fn standardize_series(x: &[f64], alpha: f64, eps: f64, init: Option<(f64, f64)>) -> (Vec<f64>, (f64, f64)) {
    let Some(&first) = x.first() else {
        return (Vec::new(), init.unwrap_or((0.0, 0.0)));
    };
    let (mut ema, mut esd) = init.unwrap_or((first, 0.0));
    let keep = 1.0 - alpha;
    let out = x
        .iter()
        .map(|&v| {
            ema = alpha * v + keep * ema;
            let dev = v - ema;
            esd = (alpha * dev * dev + keep * esd * esd).sqrt();
            dev / (esd + eps)
        })
        .collect();
    (out, (ema, esd))
}

/// Standardizes every channel of `r` as one run, from first-sample initialization.
pub fn standardize_ema(r: &Recording, alpha: f64, eps: f64) -> Result<(Recording, StandardizerState)> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(config_err(format!("ema_alpha must be in (0, 1], got {alpha}")));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(config_err(format!("eps must be positive, got {eps}")));
    }
    let mut state = StandardizerState::default();
    let mut data = Vec::with_capacity(r.channels());
    for row in r.data() {
        let (y, (ema, esd)) = standardize_series(row, alpha, eps, None);
        state.ema.push(ema);
        state.esd.push(esd);
        data.push(y);
    }
    Ok((r.map_data(r.sample_rate_hz(), data)?, state))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_one_zeroes_everything() {
        let (y, (ema, esd)) = standardize_series(&[3.0, -1.0, 7.5], 1.0, 1e-8, None);
        assert_eq!(y, [0.0, 0.0, 0.0]);
        assert_eq!((ema, esd), (7.5, 0.0));
    }

    #[test]
    fn constant_input_is_zero() {
        let (y, _) = standardize_series(&[4.2; 50], 0.05, 1e-8, None);
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_alpha() {
        let r = Recording::zeros("z", 250.0, 1, 4).unwrap();
        assert!(standardize_ema(&r, 0.0, 1e-8).is_err());
        assert!(standardize_ema(&r, 1.5, 1e-8).is_err());
    }
}
