//! Simulator settings as `key = value` lines.

use super::{five_sensor_rig, two_sensor_rig, SimConfig};
use crate::error::{Error, Result};
use crate::keyvalue::key_value_config;

key_value_config! {
    pub struct SimSettings {
        seed: u64 = 0u64, "", "seed of every random stream";
        rig: String = "two_sensor", "", "two_sensor or five_sensor";
        zero_noise: bool = false, "", "switch off range and GINS noise";
        amplitude_a_m: f64 = 20.0, "m", "figure-eight half width";
        amplitude_b_m: f64 = 20.0, "m", "figure-eight lobe height";
        duration_s: f64 = 30.0, "s", "drive duration";
        scan_rate_hz: f64 = 1.0, "Hz", "scans per second per sensor";
        scan_period_s: f64 = 0.1, "s", "duration of one scan";
        gins_rate_hz: f64 = 20.0, "Hz", "GINS output rate";
        h_g_m: f64 = 1.8, "m", "GINS installation height";
        ripple_deg: f64 = 0.0, "deg", "pitch and roll vibration amplitude";
        gins_pos_sigma_m: f64 = 0.03, "m", "GINS position noise";
        gins_rot_sigma_deg: f64 = 0.1, "deg", "GINS attitude noise";
        base_noise_m: f64 = 0.02, "m", "base LiDAR range noise";
        other_noise_m: f64 = 0.01, "m", "range noise of the other LiDARs";
    }
}

impl SimSettings {
    pub fn to_sim_config(&self) -> Result<SimConfig> {
        let sensors = match self.rig.as_str() {
            "two_sensor" => two_sensor_rig(self.base_noise_m, self.other_noise_m),
            "five_sensor" => five_sensor_rig(self.base_noise_m, self.other_noise_m),
            other => return Err(Error::Config(format!("unknown rig '{other}'"))),
        };
        let cfg = SimConfig {
            seed: self.seed,
            amplitude_a_m: self.amplitude_a_m,
            amplitude_b_m: self.amplitude_b_m,
            duration_s: self.duration_s,
            scan_rate_hz: self.scan_rate_hz,
            scan_period_s: self.scan_period_s,
            gins_rate_hz: self.gins_rate_hz,
            h_g_m: self.h_g_m,
            ripple_deg: self.ripple_deg,
            gins_pos_sigma_m: self.gins_pos_sigma_m,
            gins_rot_sigma_deg: self.gins_rot_sigma_deg,
            sensors,
            ..SimConfig::two_sensor(self.seed)
        };
        let cfg = if self.zero_noise { cfg.zero_noise() } else { cfg };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_two_sensor_preset() {
        assert_eq!(SimSettings::default().to_sim_config().unwrap(), SimConfig::two_sensor(0));
    }

    #[test]
    fn zero_noise_and_rig_choice() {
        let s = SimSettings::parse("rig = five_sensor\nzero_noise = true\nseed = 4").unwrap();
        let c = s.to_sim_config().unwrap();
        assert_eq!(c, SimConfig::five_sensor(4).zero_noise());
        assert!(SimSettings::parse("rig = three").unwrap().to_sim_config().is_err());
    }
}
