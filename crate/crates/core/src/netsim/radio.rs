use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 2.997_924_58e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioParams {
    /// Transmit power, watts.
    pub transmit_power: f64,
    pub gain_tx: f64,
    pub gain_rx: f64,
    /// Carrier frequency, hertz.
    pub carrier_freq: f64,
    /// Minimum usable received power, watts.
    pub rx_sensitivity: f64,
}

impl RadioParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("transmit_power", self.transmit_power),
            ("gain_tx", self.gain_tx),
            ("gain_rx", self.gain_rx),
            ("carrier_freq", self.carrier_freq),
            ("rx_sensitivity", self.rx_sensitivity),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("radio.{name}"), format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_freq
    }

    /// Distance at which the received power equals the sensitivity.
    pub fn range(&self) -> f64 {
        let gain = self.transmit_power * self.gain_tx * self.gain_rx / self.rx_sensitivity;
        self.wavelength() / (4.0 * std::f64::consts::PI) * gain.sqrt()
    }

    /// Returns a copy whose sensitivity makes `range()` equal `range_m`.
    pub fn with_range(mut self, range_m: f64) -> Result<Self> {
        self.rx_sensitivity = received_power(&self, range_m)?;
        Ok(self)
    }

    /// Raises the carrier frequency and scales the transmit power, which
    /// shrinks the link range under free-space propagation.
    pub fn degraded(mut self, freq_factor: f64, power_factor: f64) -> Self {
        self.carrier_freq *= freq_factor;
        self.transmit_power *= power_factor;
        self
    }
}

/// Free-space path loss `(lambda / (4 pi d))^2`.
pub fn path_loss(distance: f64, carrier_freq: f64) -> Result<f64> {
    if !(distance > 0.0 && distance.is_finite()) {
        return Err(Error::domain(format!("distance must be positive, got {distance}")));
    }
    if !(carrier_freq > 0.0 && carrier_freq.is_finite()) {
        return Err(Error::domain(format!("carrier frequency must be positive, got {carrier_freq}")));
    }
    let lambda = SPEED_OF_LIGHT / carrier_freq;
    let ratio = lambda / (4.0 * std::f64::consts::PI * distance);
    Ok(ratio * ratio)
}

/// Received power `P_t * G_t * G_r * L_p(d)`.
pub fn received_power(radio: &RadioParams, distance: f64) -> Result<f64> {
    let lp = path_loss(distance, radio.carrier_freq)?;
    Ok(radio.transmit_power * radio.gain_tx * radio.gain_rx * lp)
}
