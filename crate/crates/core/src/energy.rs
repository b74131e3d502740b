//! Per-interval energy accounting for a duty-cycled sensor.
//!
//! One wake interval costs the pairing computation, the pairing exchange on
//! air, one AES block of encryption and `packets` data frames. All values are
//! in microjoules; arithmetic is `f64`.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Per-cycle computation cost (μJ/cycle).
pub const PER_CYCLE_UJ: f64 = 0.00354;
/// AES-128 cost per block (μJ/block).
pub const PER_ENC_BLOCK_UJ: f64 = 38.0;
/// Per-bit transmit cost (μJ/bit).
pub const TX_PER_BIT_UJ: f64 = 0.209;
/// Per-bit receive cost (μJ/bit).
pub const RX_PER_BIT_UJ: f64 = 0.226;
/// Lifetime calibration in μJ·days, fitted so the BLE row lasts 135 days.
pub const DEFAULT_LIFETIME_CALIBRATION: f64 = 57754.0;

pub const BLE: &str = "BLE";
pub const CRYPTOCOP: &str = "CryptoCoP";
pub const BLE_LWAA: &str = "BLE LWAA";
pub const ZIGBEE: &str = "ZigBee";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("cost `{field}` must be finite and non-negative, got {value}")]
    InvalidCost { field: &'static str, value: f64 },
    #[error("baseline total is zero")]
    ZeroBaseline,
    #[error("total power must be positive, got {0}")]
    NonPositivePower(f64),
    #[error("no profile named `{0}`")]
    UnknownProfile(String),
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioCostModel {
    pub tx_per_bit: f64,
    pub rx_per_bit: f64,
    pub per_cycle: f64,
    pub per_enc_block: f64,
}

impl Default for RadioCostModel {
    fn default() -> Self {
        Self {
            tx_per_bit: TX_PER_BIT_UJ,
            rx_per_bit: RX_PER_BIT_UJ,
            per_cycle: PER_CYCLE_UJ,
            per_enc_block: PER_ENC_BLOCK_UJ,
        }
    }
}

impl RadioCostModel {
    pub fn validate(&self) -> Result<(), EnergyError> {
        for (field, value) in [
            ("tx_per_bit", self.tx_per_bit),
            ("rx_per_bit", self.rx_per_bit),
            ("per_cycle", self.per_cycle),
            ("per_enc_block", self.per_enc_block),
        ] {
            if !value.is_finite() || value < 0.0 {
                return Err(EnergyError::InvalidCost { field, value });
            }
        }
        Ok(())
    }
}

/// Bit and cycle counts characterising one protocol's wake interval.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolProfile {
    pub name: String,
    pub pairing_cycles: u64,
    pub pairing_tx_bits: u64,
    pub pairing_rx_bits: u64,
    pub data_tx_bits: u64,
    pub data_rx_bits: u64,
    #[serde(default = "default_packets")]
    pub packets_per_interval: u64,
    #[serde(default = "default_enc_blocks")]
    pub enc_blocks_per_interval: u64,
}

fn default_packets() -> u64 {
    DutyCycleConfig::default().packets
}

fn default_enc_blocks() -> u64 {
    1
}

impl ProtocolProfile {
    fn table_row(name: &str, computation_uj: f64, pairing: (u64, u64), data: (u64, u64)) -> Self {
        Self {
            name: name.to_owned(),
            pairing_cycles: cycles_from_computation(computation_uj, PER_CYCLE_UJ),
            pairing_tx_bits: pairing.0,
            pairing_rx_bits: pairing.1,
            data_tx_bits: data.0,
            data_rx_bits: data.1,
            packets_per_interval: default_packets(),
            enc_blocks_per_interval: default_enc_blocks(),
        }
    }
}

/// Cycle count implied by a computation cost, rounded to a whole cycle.
pub fn cycles_from_computation(computation_uj: f64, per_cycle: f64) -> u64 {
    (computation_uj / per_cycle).round() as u64
}

/// The four built-in rows: BLE, CryptoCoP, BLE LWAA, ZigBee.
pub fn builtin_profiles() -> Vec<ProtocolProfile> {
    vec![
        ProtocolProfile::table_row(BLE, 17.7, (168, 280), (376, 56)),
        ProtocolProfile::table_row(CRYPTOCOP, 0.0, (0, 0), (376, 56)),
        ProtocolProfile::table_row(BLE_LWAA, 50.82, (288, 96), (376, 56)),
        ProtocolProfile::table_row(ZIGBEE, 14.16, (1024, 88), (1024, 88)),
    ]
}

pub fn builtin_profile(name: &str) -> Option<ProtocolProfile> {
    builtin_profiles().into_iter().find(|p| p.name == name)
}

#[derive(Clone, Copy, PartialEq, Debug, Default, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub computation: f64,
    pub encryption: f64,
    pub pairing_tx: f64,
    pub pairing_rx: f64,
    pub data_tx: f64,
    pub data_rx: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    /// Data-frame cost for the whole interval (all packets, Tx + Rx).
    pub fn packet_cost(&self) -> f64 {
        self.data_tx + self.data_rx
    }

    /// Portion spent on pairing alone: computation plus the pairing exchange.
    pub fn pairing_cost(&self) -> f64 {
        self.computation + self.pairing_tx + self.pairing_rx
    }
}

/// Wake-interval schedule. The battery figure is informational only.
#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DutyCycleConfig {
    pub interval_secs: f64,
    pub packets: u64,
    pub battery_mah: f64,
}

impl Default for DutyCycleConfig {
    fn default() -> Self {
        Self { interval_secs: 5.0, packets: 3, battery_mah: 1000.0 }
    }
}

pub fn interval_energy(profile: &ProtocolProfile, model: &RadioCostModel) -> EnergyBreakdown {
    let packets = profile.packets_per_interval as f64;
    let computation = profile.pairing_cycles as f64 * model.per_cycle;
    let encryption = profile.enc_blocks_per_interval as f64 * model.per_enc_block;
    let pairing_tx = profile.pairing_tx_bits as f64 * model.tx_per_bit;
    let pairing_rx = profile.pairing_rx_bits as f64 * model.rx_per_bit;
    let data_tx = packets * profile.data_tx_bits as f64 * model.tx_per_bit;
    let data_rx = packets * profile.data_rx_bits as f64 * model.rx_per_bit;
    EnergyBreakdown {
        computation,
        encryption,
        pairing_tx,
        pairing_rx,
        data_tx,
        data_rx,
        total: computation + encryption + pairing_tx + pairing_rx + data_tx + data_rx,
    }
}

/// `(candidate - baseline) / baseline` on interval totals.
pub fn overhead_ratio(candidate: &EnergyBreakdown, baseline: &EnergyBreakdown) -> Result<f64, EnergyError> {
    if baseline.total == 0.0 {
        return Err(EnergyError::ZeroBaseline);
    }
    Ok((candidate.total - baseline.total) / baseline.total)
}

/// Relative lifetime in whole days: `calibration / total_power`, rounded.
pub fn lifetime(total_power: f64, calibration: f64) -> Result<u64, EnergyError> {
    if !(total_power > 0.0) {
        return Err(EnergyError::NonPositivePower(total_power));
    }
    Ok((calibration / total_power).round() as u64)
}

/// Calibration constant that maps `total_power` onto `days`.
pub fn fit_calibration(total_power: f64, days: f64) -> f64 {
    total_power * days
}

/// Overrides for the comparison table, read from a TOML file.
///
/// ```toml
/// baseline = "BLE"
/// calibration = 57754.0
/// [cost_model]
/// tx_per_bit = 0.209
/// [[profiles]]          # replaces the built-in rows when present
/// name = "Custom"
/// pairing_cycles = 1000
/// pairing_tx_bits = 128
/// pairing_rx_bits = 128
/// data_tx_bits = 376
/// data_rx_bits = 56
/// ```
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyConfig {
    pub baseline: String,
    pub calibration: f64,
    pub cost_model: RadioCostModel,
    pub profiles: Vec<ProtocolProfile>,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            baseline: BLE.to_owned(),
            calibration: DEFAULT_LIFETIME_CALIBRATION,
            cost_model: RadioCostModel::default(),
            profiles: Vec::new(),
        }
    }
}

impl EnergyConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, String> {
        let config: EnergyConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        config.cost_model.validate().map_err(|e| e.to_string())?;
        if !(config.calibration > 0.0) {
            return Err(format!("calibration must be positive, got {}", config.calibration));
        }
        Ok(config)
    }

    /// Configured rows, or the built-in ones when none are given.
    pub fn profiles(&self) -> Vec<ProtocolProfile> {
        if self.profiles.is_empty() {
            builtin_profiles()
        } else {
            self.profiles.clone()
        }
    }

    pub fn compare(&self) -> Result<Vec<ComparisonRow>, EnergyError> {
        compare(&self.profiles(), &self.cost_model, &self.baseline, self.calibration)
    }
}

/// One comparison row: a profile, its breakdown, lifetime and overhead.
#[derive(Clone, PartialEq, Debug)]
pub struct ComparisonRow {
    pub profile: ProtocolProfile,
    pub breakdown: EnergyBreakdown,
    pub life_days: Option<u64>,
    pub overhead_vs_baseline: Option<f64>,
}

/// Evaluates every profile against the named baseline (BLE by default).
pub fn compare(
    profiles: &[ProtocolProfile],
    model: &RadioCostModel,
    baseline: &str,
    calibration: f64,
) -> Result<Vec<ComparisonRow>, EnergyError> {
    let base = profiles
        .iter()
        .find(|p| p.name == baseline)
        .ok_or_else(|| EnergyError::UnknownProfile(baseline.to_owned()))?;
    let base = interval_energy(base, model);
    Ok(profiles
        .iter()
        .map(|p| {
            let breakdown = interval_energy(p, model);
            ComparisonRow {
                profile: p.clone(),
                breakdown,
                life_days: lifetime(breakdown.total, calibration).ok(),
                overhead_vs_baseline: overhead_ratio(&breakdown, &base).ok(),
            }
        })
        .collect())
}

/// Column header of the comparison CSV.
pub const CSV_HEADER: [&str; 15] = [
    "protocol",
    "computation_uj",
    "encryption_uj_per_block",
    "pairing_tx_bits",
    "pairing_tx_uj",
    "pairing_rx_bits",
    "pairing_rx_uj",
    "data_tx_bits",
    "data_tx_uj",
    "data_rx_bits",
    "data_rx_uj",
    "packet_cost_uj",
    "total_uj",
    "life_days",
    "overhead_vs_ble",
];

fn per_packet(total: f64, packets: u64) -> f64 {
    if packets == 0 {
        0.0
    } else {
        total / packets as f64
    }
}

/// Writes the comparison as CSV: energies with two decimals, overhead as a
/// one-decimal percentage.
pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], out: W) -> Result<(), EnergyError> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| EnergyError::Csv(e.to_string());
    w.write_record(CSV_HEADER).map_err(err)?;
    for row in rows {
        let b = &row.breakdown;
        let p = &row.profile;
        let packets = p.packets_per_interval;
        let enc_per_block = if p.enc_blocks_per_interval == 0 {
            0.0
        } else {
            b.encryption / p.enc_blocks_per_interval as f64
        };
        w.write_record([
            p.name.clone(),
            format!("{:.2}", b.computation),
            format!("{:.2}", enc_per_block),
            p.pairing_tx_bits.to_string(),
            format!("{:.2}", b.pairing_tx),
            p.pairing_rx_bits.to_string(),
            format!("{:.2}", b.pairing_rx),
            p.data_tx_bits.to_string(),
            format!("{:.2}", per_packet(b.data_tx, packets)),
            p.data_rx_bits.to_string(),
            format!("{:.2}", per_packet(b.data_rx, packets)),
            format!("{:.2}", b.packet_cost()),
            format!("{:.2}", b.total),
            row.life_days.map(|d| d.to_string()).unwrap_or_default(),
            row.overhead_vs_baseline.map(|r| format!("{:.1}%", r * 100.0)).unwrap_or_default(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| EnergyError::Csv(e.to_string()))?;
    Ok(())
}
