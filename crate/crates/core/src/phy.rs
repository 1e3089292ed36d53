//! Abstracted physical layer: path loss, noise, SINR with co-channel
//! interference, half-duplex, and per-subframe decode outcomes.
//!
//! Reception is governed purely by SINR against sharp thresholds; there is no
//! hard range cutoff and no fading by default. An optional log-normal
//! shadowing term can be enabled through [`LinkBudget::shadowing_sigma_db`].

use crate::grid::SsrCoord;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhyError {
    #[error("path loss requires a positive distance, got {0}")]
    NonPositiveDistance(f64),
    #[error("vehicle {0} transmits more than once in one subframe")]
    DuplicateTransmitter(usize),
    #[error("transmitter index {0} outside the position table (len {1})")]
    UnknownVehicle(usize, usize),
}

/// Link-budget parameters of the abstracted PHY.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkBudget {
    pub tx_power_dbm: f64,
    pub fc_ghz: f64,
    /// Channel bandwidth; LTE sidelink occupies 90% of it.
    pub bandwidth_hz: f64,
    pub noise_figure_db: f64,
    pub sinr_threshold_sci_db: f64,
    pub sinr_threshold_tb_db: f64,
    pub rsrp_offset_db: f64,
    /// Log-normal shadowing sigma; 0 disables shadowing.
    pub shadowing_sigma_db: f64,
}

impl Default for LinkBudget {
    fn default() -> Self {
        Self {
            tx_power_dbm: 23.0,
            fc_ghz: 5.9,
            bandwidth_hz: 10.0e6,
            noise_figure_db: 9.0,
            sinr_threshold_sci_db: 2.0,
            sinr_threshold_tb_db: 5.0,
            rsrp_offset_db: 0.0,
            shadowing_sigma_db: 0.0,
        }
    }
}

impl LinkBudget {
    /// Occupied bandwidth: 90% of the channel (50 RB in 10 MHz).
    pub fn occupied_bandwidth_hz(&self) -> f64 {
        0.9 * self.bandwidth_hz
    }

    pub fn noise_floor_dbm(&self) -> f64 {
        noise_power_dbm(self.occupied_bandwidth_hz(), self.noise_figure_db)
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("tx_power_dbm", self.tx_power_dbm),
            ("fc_ghz", self.fc_ghz),
            ("bandwidth_hz", self.bandwidth_hz),
            ("noise_figure_db", self.noise_figure_db),
            ("sinr_threshold_sci_db", self.sinr_threshold_sci_db),
            ("sinr_threshold_tb_db", self.sinr_threshold_tb_db),
            ("rsrp_offset_db", self.rsrp_offset_db),
            ("shadowing_sigma_db", self.shadowing_sigma_db),
        ] {
            if !v.is_finite() {
                return Err(format!("link budget field {name} must be finite"));
            }
        }
        if self.fc_ghz <= 0.0 || self.bandwidth_hz <= 0.0 {
            return Err("carrier frequency and bandwidth must be positive".into());
        }
        if self.shadowing_sigma_db < 0.0 {
            return Err("shadowing sigma must be non-negative".into());
        }
        Ok(())
    }
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// WINNER+ B1 LOS urban path loss, fc-scaled; distances below 10 m clamp to
/// the 10 m value.
pub fn path_loss_db(d_m: f64, fc_ghz: f64) -> Result<f64, PhyError> {
    if d_m <= 0.0 {
        return Err(PhyError::NonPositiveDistance(d_m));
    }
    let d = d_m.max(10.0);
    Ok(22.7 * d.log10() + 41.0 + 20.0 * (fc_ghz / 5.0).log10())
}

/// Thermal noise power over `bandwidth_hz` with noise figure `nf_db`.
pub fn noise_power_dbm(bandwidth_hz: f64, nf_db: f64) -> f64 {
    assert!(bandwidth_hz > 0.0, "bandwidth must be positive");
    -174.0 + 10.0 * bandwidth_hz.log10() + nf_db
}

/// One vehicle's transmission within a subframe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transmission {
    pub tx: usize,
    pub coord: SsrCoord,
}

/// Decode outcome of one transmission at one receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reception {
    pub tx: usize,
    pub decoded_sci: bool,
    pub decoded_tb: bool,
    pub rsrp_dbm: f64,
    pub sinr_db: f64,
    pub distance_m: f64,
}

/// What one non-transmitting vehicle observes in a subframe.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SubframeOutcome {
    pub receiver: usize,
    /// Total received power per subchannel, noise included.
    pub rssi_dbm: Vec<f64>,
    pub receptions: Vec<Reception>,
}

/// Resolve all transmissions of one subframe into per-receiver outcomes.
///
/// Every vehicle in `positions` that is not transmitting is a receiver;
/// transmitting vehicles observe nothing (half-duplex).
pub fn resolve_subframe<R: Rng>(
    transmissions: &[Transmission],
    positions: &[(f64, f64)],
    sc: u8,
    lb: &LinkBudget,
    shadowing: Option<&mut R>,
) -> Result<Vec<SubframeOutcome>, PhyError> {
    let mut out = Vec::new();
    resolve_subframe_into(transmissions, positions, sc, lb, shadowing, &mut out)?;
    Ok(out)
}

/// [`resolve_subframe`] writing into a reusable buffer.
pub fn resolve_subframe_into<R: Rng>(
    transmissions: &[Transmission],
    positions: &[(f64, f64)],
    sc: u8,
    lb: &LinkBudget,
    shadowing: Option<&mut R>,
    out: &mut Vec<SubframeOutcome>,
) -> Result<(), PhyError> {
    let n = positions.len();
    let mut is_tx = vec![false; n];
    for t in transmissions {
        if t.tx >= n {
            return Err(PhyError::UnknownVehicle(t.tx, n));
        }
        if is_tx[t.tx] {
            return Err(PhyError::DuplicateTransmitter(t.tx));
        }
        is_tx[t.tx] = true;
        debug_assert!(t.coord.subchannel() < sc);
    }

    let noise_mw = dbm_to_mw(lb.noise_floor_dbm());
    let shadow = Normal::new(0.0, lb.shadowing_sigma_db).expect("valid sigma");
    let mut shadowing = shadowing;

    // Received power of each transmission at each vehicle, dBm. Shadowing is
    // drawn once per (tx, rx) pair so RSSI, RSRP and SINR stay consistent.
    let mut rx_power = vec![vec![f64::NAN; n]; transmissions.len()];
    for (ti, t) in transmissions.iter().enumerate() {
        let (txx, txy) = positions[t.tx];
        for r in 0..n {
            if r == t.tx {
                continue;
            }
            let (rx, ry) = positions[r];
            let d = ((txx - rx).powi(2) + (txy - ry).powi(2)).sqrt();
            // Co-located radios fall under the 10 m near-field clamp.
            let pl = path_loss_db(d.max(1e-9), lb.fc_ghz)?;
            let mut p = lb.tx_power_dbm - pl;
            if lb.shadowing_sigma_db > 0.0 {
                if let Some(rng) = shadowing.as_mut() {
                    p += shadow.sample(rng);
                }
            }
            rx_power[ti][r] = p;
        }
    }

    out.clear();
    for r in 0..n {
        if is_tx[r] {
            continue;
        }
        let mut outcome = SubframeOutcome {
            receiver: r,
            rssi_dbm: Vec::with_capacity(sc as usize),
            receptions: Vec::with_capacity(transmissions.len()),
        };
        for ch in 0..sc {
            let mut total_mw = noise_mw;
            for (ti, t) in transmissions.iter().enumerate() {
                if t.coord.subchannel() == ch {
                    total_mw += dbm_to_mw(rx_power[ti][r]);
                }
            }
            outcome.rssi_dbm.push(mw_to_dbm(total_mw));
        }
        for (ti, t) in transmissions.iter().enumerate() {
            let signal = rx_power[ti][r];
            let mut denom_mw = noise_mw;
            for (tj, o) in transmissions.iter().enumerate() {
                if tj != ti && o.coord.subchannel() == t.coord.subchannel() {
                    denom_mw += dbm_to_mw(rx_power[tj][r]);
                }
            }
            let sinr = signal - mw_to_dbm(denom_mw);
            let (txx, txy) = positions[t.tx];
            let (rxx, rxy) = positions[r];
            let distance = ((txx - rxx).powi(2) + (txy - rxy).powi(2)).sqrt();
            outcome.receptions.push(Reception {
                tx: t.tx,
                decoded_sci: sinr >= lb.sinr_threshold_sci_db,
                decoded_tb: sinr >= lb.sinr_threshold_tb_db,
                rsrp_dbm: signal + lb.rsrp_offset_db,
                sinr_db: sinr,
                distance_m: distance,
            });
        }
        out.push(outcome);
    }
    Ok(())
}
