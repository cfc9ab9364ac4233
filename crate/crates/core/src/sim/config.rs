use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapper::CrossbarSpec;

// Component powers (W) of the reference chip at 1.2 GHz.
const ARRAY_POWER: f64 = 0.89;
const DAC_POWER: f64 = 0.36;
const ADC_POWER: f64 = 23.22;
const BUFFER_POWER: f64 = 0.59;
const CONTROLLER_POWER: f64 = 92.8e-3;
const DIGITAL_POWER: f64 = 92.6e-3;
const FREQUENCY: f64 = 1.2e9;
/// OUs active chip-wide in one cycle; the powers above are shared by them.
const ACTIVE_OUS: f64 = 1024.0;
const OU_ROWS: f64 = 9.0;
const OU_COLS: f64 = 8.0;
const BUFFER_WIDTH: f64 = 64.0;

/// Timing and per-event energy constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HardwareConfig {
    /// Hz.
    pub frequency: f64,
    pub adc_bits: u32,
    pub dac_bits: u32,
    /// Joules per conversion at `adc_bits` resolution.
    pub adc_convert: f64,
    /// Factor applied to `adc_convert` per bit of resolution above (or
    /// below) `adc_bits`.
    pub adc_scale_per_bit: f64,
    pub dac_drive_per_row: f64,
    pub array_mac_per_ou: f64,
    pub buffer_read_per_bit: f64,
    pub buffer_write_per_bit: f64,
    pub shift_add: f64,
    pub controller_per_cycle: f64,
    /// Width of each stored output element.
    pub output_bits: u32,
}

impl Default for HardwareConfig {
    fn default() -> Self {
        let per_ou = |power: f64| power / FREQUENCY / ACTIVE_OUS;
        Self {
            frequency: FREQUENCY,
            adc_bits: 4,
            dac_bits: 1,
            adc_convert: per_ou(ADC_POWER) / OU_COLS,
            adc_scale_per_bit: 2.0,
            dac_drive_per_row: per_ou(DAC_POWER) / OU_ROWS,
            array_mac_per_ou: per_ou(ARRAY_POWER),
            buffer_read_per_bit: per_ou(BUFFER_POWER) / BUFFER_WIDTH,
            buffer_write_per_bit: per_ou(BUFFER_POWER) / BUFFER_WIDTH,
            shift_add: per_ou(DIGITAL_POWER) / OU_COLS,
            controller_per_cycle: per_ou(CONTROLLER_POWER),
            output_bits: 16,
        }
    }
}

/// Smallest ADC resolution that can count `rows` active wordlines.
pub fn required_adc_bits(rows: usize) -> u32 {
    usize::BITS - rows.leading_zeros()
}

impl HardwareConfig {
    pub fn validate(&self, spec: &CrossbarSpec) -> Result<()> {
        if !(self.frequency.is_finite() && self.frequency > 0.0) {
            return Err(Error::Config("frequency must be positive".into()));
        }
        let energies = [
            self.adc_convert,
            self.dac_drive_per_row,
            self.array_mac_per_ou,
            self.buffer_read_per_bit,
            self.buffer_write_per_bit,
            self.shift_add,
            self.controller_per_cycle,
        ];
        if energies.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::Config(
                "energies must be finite and non-negative".into(),
            ));
        }
        if !(self.adc_scale_per_bit.is_finite() && self.adc_scale_per_bit > 0.0) {
            return Err(Error::Config("adc_scale_per_bit must be positive".into()));
        }
        if self.dac_bits != 1 {
            return Err(Error::Config("only 1-bit DACs are supported".into()));
        }
        let need = required_adc_bits(spec.ou_height);
        if self.adc_bits < need {
            return Err(Error::Config(format!(
                "a {}-row OU needs at least {need} ADC bits, got {}",
                spec.ou_height, self.adc_bits
            )));
        }
        Ok(())
    }

    /// Energy of one conversion at `bits` of resolution.
    pub fn adc_energy(&self, bits: u32) -> f64 {
        self.adc_convert
            * self
                .adc_scale_per_bit
                .powi(bits as i32 - self.adc_bits as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adc_bits_for_ou_heights() {
        assert_eq!(required_adc_bits(9), 4);
        assert_eq!(required_adc_bits(15), 4);
        assert_eq!(required_adc_bits(16), 5);
        assert_eq!(required_adc_bits(32), 6);
        assert_eq!(required_adc_bits(128), 8);
    }

    #[test]
    fn defaults_validate_and_adc_dominates() {
        let hw = HardwareConfig::default();
        hw.validate(&CrossbarSpec::default()).unwrap();
        let per_event_adc = 8.0 * hw.adc_convert;
        let rest = 9.0 * hw.dac_drive_per_row
            + hw.array_mac_per_ou
            + 8.0 * hw.shift_add
            + hw.controller_per_cycle;
        assert!(per_event_adc > rest);
    }

    #[test]
    fn adc_energy_doubles_per_bit() {
        let hw = HardwareConfig::default();
        assert_eq!(hw.adc_energy(4), hw.adc_convert);
        assert_eq!(hw.adc_energy(6), 4.0 * hw.adc_convert);
        assert_eq!(hw.adc_energy(3), 0.5 * hw.adc_convert);
    }

    #[test]
    fn rejects_underresolved_adc() {
        let hw = HardwareConfig {
            adc_bits: 4,
            ..HardwareConfig::default()
        };
        assert!(hw
            .validate(&CrossbarSpec::default().with_ou(16, 16))
            .is_err());
    }
}
