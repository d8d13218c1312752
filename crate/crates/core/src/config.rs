//! Simulation configuration and the resource-block timeline derived from it.
//!
//! All instants are 1-based, matching the protocol description: UL pilots
//! occupy `1..=tau_u`, DL common pilots `tau_u+1..=tau_u+tau_dc`, DL private
//! pilots the next `tau_dp` instants, and data runs from `lambda` to `tau_c`
//! inclusive with `lambda = tau_u + tau_dc + tau_dp + 1`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    RsmaDlPilots,
    RsmaNoDlPilots,
    Sdma,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::RsmaDlPilots, Mode::RsmaNoDlPilots, Mode::Sdma];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::RsmaDlPilots => "RSMA_DL_PILOTS",
            Mode::RsmaNoDlPilots => "RSMA_NO_DL_PILOTS",
            Mode::Sdma => "SDMA",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().replace('-', "_").as_str() {
            "RSMA_DL_PILOTS" | "RSMA" => Ok(Mode::RsmaDlPilots),
            "RSMA_NO_DL_PILOTS" | "RSMA_NO_DL" => Ok(Mode::RsmaNoDlPilots),
            "SDMA" => Ok(Mode::Sdma),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }
}

/// UE speed in km/h, either shared by all UEs or listed per UE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Velocity {
    Uniform(f64),
    PerUe(Vec<f64>),
}

impl Velocity {
    pub fn of(&self, k: usize) -> f64 {
        match self {
            Velocity::Uniform(v) => *v,
            Velocity::PerUe(v) => v[k],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub area_side_m: f64,
    pub num_aps: usize,
    pub antennas_per_ap: usize,
    pub num_ues: usize,
    pub num_clusters: usize,
    pub bandwidth_hz: f64,
    pub tau_c: usize,
    /// Defaults to the largest cluster UE count.
    pub tau_u: Option<usize>,
    /// Defaults to `tau_u`.
    pub tau_dp: Option<usize>,
    pub p_max_dbm: f64,
    pub ul_pilot_dbm: f64,
    pub noise_dbm: f64,
    /// Fraction of the AP power budget given to private streams.
    pub power_split: f64,
    pub asd_deg: f64,
    pub velocity_kmh: Velocity,
    pub carrier_hz: f64,
    pub sample_time_s: f64,
    pub ap_height_m: f64,
    pub pathloss_intercept_db: f64,
    pub pathloss_slope_db: f64,
    pub rician_log10_intercept: f64,
    pub rician_log10_slope_per_m: f64,
    pub drops: usize,
    pub realizations: usize,
    pub seed: u64,
    pub mode: Mode,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            area_side_m: 1000.0,
            num_aps: 16,
            antennas_per_ap: 4,
            num_ues: 16,
            num_clusters: 4,
            bandwidth_hz: 20e6,
            tau_c: 100,
            tau_u: None,
            tau_dp: None,
            p_max_dbm: 30.0,
            ul_pilot_dbm: 30.0,
            noise_dbm: -94.0,
            power_split: 0.05,
            asd_deg: 30.0,
            velocity_kmh: Velocity::Uniform(40.0),
            carrier_hz: 2e9,
            sample_time_s: 66.7e-6,
            ap_height_m: 10.0,
            pathloss_intercept_db: -30.5,
            pathloss_slope_db: 36.7,
            rician_log10_intercept: 1.3,
            rician_log10_slope_per_m: 0.003,
            drops: 50,
            realizations: 100,
            seed: 1,
            mode: Mode::RsmaDlPilots,
        }
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        for (name, v) in [
            ("num_aps", self.num_aps),
            ("antennas_per_ap", self.antennas_per_ap),
            ("num_ues", self.num_ues),
            ("num_clusters", self.num_clusters),
            ("tau_c", self.tau_c),
        ] {
            if v == 0 {
                return fail(format!("{name} must be at least 1"));
            }
        }
        if self.num_clusters > self.num_aps.min(self.num_ues) {
            return fail(format!(
                "num_clusters {} exceeds min(num_aps, num_ues) = {}",
                self.num_clusters,
                self.num_aps.min(self.num_ues)
            ));
        }
        if !(0.0..=1.0).contains(&self.power_split) {
            return fail(format!("power_split {} outside [0, 1]", self.power_split));
        }
        if matches!(self.tau_u, Some(0)) {
            return fail("tau_u must be at least 1".into());
        }
        if !(self.area_side_m > 0.0) || !(self.ap_height_m >= 0.0) {
            return fail("area_side_m must be positive and ap_height_m non-negative".into());
        }
        if !(self.carrier_hz > 0.0) || !(self.sample_time_s >= 0.0) {
            return fail("carrier_hz must be positive and sample_time_s non-negative".into());
        }
        if !(self.asd_deg >= 0.0) {
            return fail("asd_deg must be non-negative".into());
        }
        match &self.velocity_kmh {
            Velocity::Uniform(v) if !(*v >= 0.0) => return fail("velocity must be >= 0".into()),
            Velocity::PerUe(v) if v.len() != self.num_ues => {
                return fail(format!(
                    "velocity_kmh lists {} entries for {} UEs",
                    v.len(),
                    self.num_ues
                ))
            }
            Velocity::PerUe(v) if v.iter().any(|x| !(*x >= 0.0)) => return fail("velocity must be >= 0".into()),
            _ => {}
        }
        Ok(())
    }

    /// Private power fraction actually used: SDMA always puts everything on
    /// private streams.
    pub fn effective_power_split(&self) -> f64 {
        match self.mode {
            Mode::Sdma => 1.0,
            _ => self.power_split,
        }
    }

    pub fn p_max_w(&self) -> f64 {
        dbm_to_watts(self.p_max_dbm)
    }

    pub fn ul_pilot_w(&self) -> f64 {
        dbm_to_watts(self.ul_pilot_dbm)
    }

    pub fn noise_w(&self) -> f64 {
        dbm_to_watts(self.noise_dbm)
    }

    /// Maximum Doppler shift of UE `k` in Hz.
    pub fn doppler_hz(&self, k: usize) -> f64 {
        self.velocity_kmh.of(k) / 3.6 * self.carrier_hz / SPEED_OF_LIGHT
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text)?;
        match table.remove("schema_version") {
            Some(toml::Value::Integer(v)) if v == CONFIG_SCHEMA_VERSION as i64 => {}
            Some(v) => {
                return Err(Error::Config(format!(
                    "unsupported schema_version {v} (expected {CONFIG_SCHEMA_VERSION})"
                )))
            }
            None => return Err(Error::Config("config file lacks schema_version".into())),
        }
        let cfg: SimConfig = table.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses a config file whose keys override those of `base`.
    pub fn from_toml_str_over(base: &SimConfig, text: &str) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text)?;
        match table.remove("schema_version") {
            Some(toml::Value::Integer(v)) if v == CONFIG_SCHEMA_VERSION as i64 => {}
            Some(v) => {
                return Err(Error::Config(format!(
                    "unsupported schema_version {v} (expected {CONFIG_SCHEMA_VERSION})"
                )))
            }
            None => return Err(Error::Config("config file lacks schema_version".into())),
        }
        let mut merged = toml::Table::try_from(base).expect("config serializes");
        for (key, value) in table {
            merged.insert(key, value);
        }
        let cfg: SimConfig = merged.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        let mut table = toml::Table::try_from(self).expect("config serializes");
        table.insert(
            "schema_version".into(),
            toml::Value::Integer(CONFIG_SCHEMA_VERSION as i64),
        );
        toml::to_string(&table).expect("config serializes")
    }

    /// Stable content hash (hex SHA-256 prefix) of the canonical JSON form.
    pub fn hash_hex(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Resolved layout of one resource block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Timeline {
    pub tau_c: usize,
    pub tau_u: usize,
    pub tau_dc: usize,
    pub tau_dp: usize,
    pub lambda: usize,
    pub num_clusters: usize,
}

impl Timeline {
    /// `max_cluster_ues` is the largest UE count over clusters of the drop.
    pub fn new(config: &SimConfig, max_cluster_ues: usize) -> Result<Self> {
        let tau_u = config.tau_u.unwrap_or(max_cluster_ues);
        let (tau_dc, tau_dp) = match config.mode {
            Mode::RsmaNoDlPilots => (0, 0),
            // A common training phase only exists while a common stream carries power.
            Mode::RsmaDlPilots if config.effective_power_split() < 1.0 => {
                (config.num_clusters, config.tau_dp.unwrap_or(tau_u))
            }
            Mode::RsmaDlPilots | Mode::Sdma => (0, config.tau_dp.unwrap_or(tau_u)),
        };
        if tau_dp != 0 && tau_dp < tau_u {
            return Err(Error::Config(format!(
                "tau_dp {tau_dp} cannot carry the {tau_u} UL pilot slots"
            )));
        }
        let used = tau_u + tau_dc + tau_dp;
        if used >= config.tau_c {
            return Err(Error::Config(format!(
                "tau_u + tau_dc + tau_dp = {used} must be smaller than tau_c = {}",
                config.tau_c
            )));
        }
        Ok(Timeline {
            tau_c: config.tau_c,
            tau_u,
            tau_dc,
            tau_dp,
            lambda: used + 1,
            num_clusters: config.num_clusters,
        })
    }

    pub fn tau_d(&self) -> usize {
        self.tau_dc + self.tau_dp
    }

    pub fn has_common_pilots(&self) -> bool {
        self.tau_dc > 0
    }

    pub fn has_private_pilots(&self) -> bool {
        self.tau_dp > 0
    }

    /// UL pilot instant of 0-based slot `slot`.
    pub fn ul_instant(&self, slot: usize) -> usize {
        slot + 1
    }

    /// DL common pilot instant of 0-based cluster `cluster`.
    pub fn dl_common_instant(&self, cluster: usize) -> usize {
        self.tau_u + cluster + 1
    }

    /// DL private pilot instant of 0-based slot `slot`.
    pub fn dl_private_instant(&self, slot: usize) -> usize {
        self.tau_u + self.tau_dc + slot + 1
    }

    pub fn data_instants(&self) -> std::ops::RangeInclusive<usize> {
        self.lambda..=self.tau_c
    }

    pub fn num_data_instants(&self) -> usize {
        self.tau_c + 1 - self.lambda
    }
}
