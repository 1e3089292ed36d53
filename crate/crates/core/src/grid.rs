//! Resource-grid coordinates and the CO reservation mapping.
//!
//! A single-subframe resource (SSR) occupies one subframe (1 ms) in the time
//! domain and one subchannel in the frequency domain. Frame numbering wraps
//! after 1024 frames of 10 subframes each, so a time position repeats every
//! 10240 subframes. Simulation time itself is an unbounded subframe counter;
//! an [`SsrCoord`] is always that counter reduced modulo the cycle.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Frames in one SFN cycle.
pub const FRAMES_PER_CYCLE: u32 = 1024;
/// Subframes per frame (1 subframe = 1 ms).
pub const SUBFRAMES_PER_FRAME: u32 = 10;
/// Subframes in one SFN cycle.
pub const SUBFRAMES_PER_CYCLE: u32 = FRAMES_PER_CYCLE * SUBFRAMES_PER_FRAME;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GridError {
    #[error("coordinate out of range: frame {frame} (max 1023), subframe {subframe} (max 9)")]
    CoordOutOfRange { frame: u32, subframe: u32 },
    #[error("packet period {0} is not a positive multiple of 10 subframes")]
    BadPeriod(u32),
    #[error("reserved chain length must be at least 1")]
    EmptyChain,
    #[error("invalid pool config: {0}")]
    BadPoolConfig(String),
}

/// Position of one SSR on the SFN-cyclic resource grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SsrCoord {
    frame: u16,
    subframe: u8,
    subchannel: u8,
}

impl SsrCoord {
    pub fn new(frame: u16, subframe: u8, subchannel: u8) -> Result<Self, GridError> {
        if u32::from(frame) >= FRAMES_PER_CYCLE || u32::from(subframe) >= SUBFRAMES_PER_FRAME {
            return Err(GridError::CoordOutOfRange {
                frame: frame.into(),
                subframe: subframe.into(),
            });
        }
        Ok(Self { frame, subframe, subchannel })
    }

    /// Coordinate of an absolute subframe counter, reduced mod one SFN cycle.
    pub fn from_abs(abs: u64, subchannel: u8) -> Self {
        let idx = (abs % u64::from(SUBFRAMES_PER_CYCLE)) as u32;
        Self {
            frame: (idx / SUBFRAMES_PER_FRAME) as u16,
            subframe: (idx % SUBFRAMES_PER_FRAME) as u8,
            subchannel,
        }
    }

    pub fn frame(&self) -> u16 {
        self.frame
    }

    pub fn subframe(&self) -> u8 {
        self.subframe
    }

    pub fn subchannel(&self) -> u8 {
        self.subchannel
    }

    /// Subframe index within the SFN cycle: `frame * 10 + subframe`.
    pub fn abs_index(&self) -> u32 {
        u32::from(self.frame) * SUBFRAMES_PER_FRAME + u32::from(self.subframe)
    }

    /// The i-th reserved SSR derived from this one.
    ///
    /// Frame advances by `i * rt / 10` and subframe by `i * subchannel`, each
    /// under its own modulus; the subframe wrap deliberately does not carry
    /// into the frame field, so consecutive reserved SSRs are `rt + z` or
    /// `rt + z - 10` subframes apart.
    pub fn co_map(&self, i: u32, rt: u32) -> Result<SsrCoord, GridError> {
        check_period(rt)?;
        Ok(self.co_map_unchecked(i, rt))
    }

    /// `co_map` with the period already validated.
    pub(crate) fn co_map_unchecked(&self, i: u32, rt: u32) -> SsrCoord {
        let frame = ((u64::from(self.frame) + u64::from(i) * u64::from(rt / 10))
            % u64::from(FRAMES_PER_CYCLE)) as u16;
        let subframe = ((u64::from(self.subframe)
            + u64::from(i) * u64::from(self.subchannel))
            % u64::from(SUBFRAMES_PER_FRAME)) as u8;
        SsrCoord { frame, subframe, subchannel: self.subchannel }
    }
}

impl std::fmt::Display for SsrCoord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{})", self.frame, self.subframe, self.subchannel)
    }
}

pub(crate) fn check_period(rt: u32) -> Result<(), GridError> {
    if rt == 0 || !rt.is_multiple_of(10) {
        return Err(GridError::BadPeriod(rt));
    }
    Ok(())
}

/// The ordered list of `rc` SSRs reserved from `c`, element `k` being
/// `co_map(c, k, rt)`.
pub fn reserved_chain(c: SsrCoord, rc: u32, rt: u32) -> Result<Vec<SsrCoord>, GridError> {
    if rc == 0 {
        return Err(GridError::EmptyChain);
    }
    check_period(rt)?;
    Ok((0..rc).map(|k| c.co_map_unchecked(k, rt)).collect())
}

/// Resource-pool and selection parameters shared by both scheduler variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolConfig {
    /// Subchannel count.
    pub sc: u8,
    /// Packet period in subframes; must be a positive multiple of 10.
    pub rt: u32,
    /// Selection-window lower bound (subframes after the trigger).
    pub t1: u32,
    /// Selection-window upper bound.
    pub t2: u32,
    /// Reselection-counter draw bounds.
    pub rc_min: u32,
    pub rc_max: u32,
    /// Probability of keeping the previous reservation when RC expires.
    pub beta: f64,
    /// Initial RSRP exclusion threshold in dBm.
    pub p_th_init_dbm: f64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            sc: 3,
            rt: 20,
            t1: 4,
            t2: 20,
            rc_min: 25,
            rc_max: 75,
            beta: 0.0,
            p_th_init_dbm: -110.0,
        }
    }
}

impl PoolConfig {
    pub fn validate(&self) -> Result<(), GridError> {
        let err = |m: String| Err(GridError::BadPoolConfig(m));
        if self.sc == 0 {
            return err("sc must be at least 1".into());
        }
        check_period(self.rt)?;
        if self.rt / 10 > 15 {
            return err(format!("rt {} exceeds the 4-bit RRI code range (max 150)", self.rt));
        }
        if self.t1 == 0 || self.t1 > self.t2 {
            return err(format!("selection window requires 0 < t1 <= t2, got [{}, {}]", self.t1, self.t2));
        }
        if self.rc_min == 0 || self.rc_min > self.rc_max {
            return err(format!("rc bounds require 1 <= rc_min <= rc_max, got [{}, {}]", self.rc_min, self.rc_max));
        }
        if self.rc_max > 255 {
            return err(format!("rc_max {} does not fit the 8-bit SCI field", self.rc_max));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return err(format!("beta {} outside [0, 1]", self.beta));
        }
        if !self.p_th_init_dbm.is_finite() {
            return err("p_th_init_dbm must be finite".into());
        }
        Ok(())
    }
}
