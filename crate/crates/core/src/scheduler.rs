//! Per-vehicle resource selection: candidate pools, both exclusion pipelines,
//! the threshold-raising selection loop, and the reselection-counter
//! lifecycle.
//!
//! The standard path projects decoded reservations forward at their signalled
//! interval for the estimated `ceil(100/rt)` repetitions. The enhanced path
//! intersects full CO reservation chains using the counter value carried in
//! the proposed SCI format.

use crate::grid::{check_period, GridError, PoolConfig, SsrCoord, SUBFRAMES_PER_CYCLE};
use crate::sensing::{a_rssi_enhanced_batch, DecodedReservation, SensingDb};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use thiserror::Error;

/// Hard cap on threshold-raising iterations; reaching it is a diagnostic for
/// pathological configurations.
pub const MAX_SELECT_ITERATIONS: u32 = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchedulerError {
    #[error("selection did not reach 20% of the pool after {iterations} iterations ({survivors}/{needed} survivors)")]
    IterationCap { iterations: u32, survivors: usize, needed: usize },
    #[error("no remaining reserved transmission (rc = 0); run the reselection decision first")]
    RcExhausted,
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Which selection procedure a vehicle runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Standard,
    Enhanced,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Standard => write!(f, "standard"),
            Mode::Enhanced => write!(f, "enhanced"),
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "standard" => Ok(Mode::Standard),
            "enhanced" => Ok(Mode::Enhanced),
            other => Err(format!("unknown mode '{other}' (expected standard|enhanced)")),
        }
    }
}

/// A vehicle's reservation state.
#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerState {
    pub mode: Mode,
    /// First SSR of the current reservation.
    pub anchor: SsrCoord,
    /// Index of the next transmission within the reservation chain.
    pub hop: u32,
    /// Remaining reserved transmissions.
    pub rc: u32,
    /// RSRP exclusion threshold; reset at each selection, raised 3 dB per
    /// iteration inside it.
    pub p_th_dbm: f64,
}

/// One selectable SSR: its absolute subframe and cyclic coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Candidate {
    pub abs: u64,
    pub coord: SsrCoord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    pub entries: Vec<Candidate>,
    /// Pool size at construction, before any exclusion.
    pub m_total: usize,
}

/// Structured record of one selection, for conformance debugging.
#[derive(Debug, Clone, Default, Serialize)]
pub struct SelectionTrace {
    pub now: u64,
    pub mode: Mode,
    pub m_total: usize,
    pub iterations: u32,
    pub p_th_final_dbm: f64,
    pub candidates: Vec<(u64, u8)>,
    pub excluded_unmonitored: Vec<(u64, u8)>,
    pub excluded_reserved: Vec<(u64, u8)>,
    /// Ranked ascending by (A-RSSI, subframe, subchannel).
    pub survivors: Vec<(u64, u8)>,
    pub a_rssi_dbm: Vec<f64>,
    pub shortlist: Vec<(u64, u8)>,
    pub picked: (u64, u8),
}

/// All SSRs in the selection window `[now+t1, now+t2]`.
pub fn candidate_pool(now: u64, cfg: &PoolConfig) -> CandidatePool {
    let mut entries = Vec::with_capacity(((cfg.t2 - cfg.t1 + 1) * u32::from(cfg.sc)) as usize);
    for abs in now + u64::from(cfg.t1)..=now + u64::from(cfg.t2) {
        for z in 0..cfg.sc {
            entries.push(Candidate { abs, coord: SsrCoord::from_abs(abs, z) });
        }
    }
    let m_total = entries.len();
    CandidatePool { entries, m_total }
}

/// Remove candidates whose subframe could host a reservation by a vehicle the
/// sensing vehicle could not hear while itself transmitting.
///
/// Standard mode removes subframes congruent mod 100 to an unmonitored window
/// subframe; enhanced mode removes subframes reachable from an unmonitored
/// cell through the CO mapping under any subchannel hypothesis.
pub fn exclude_unmonitored(
    pool: CandidatePool,
    db: &SensingDb,
    mode: Mode,
    cfg: &PoolConfig,
    now: u64,
) -> CandidatePool {
    let unmonitored: Vec<u64> =
        db.window().filter(|(_, r)| !r.monitored).map(|(abs, _)| abs).collect();
    if unmonitored.is_empty() {
        return pool;
    }
    let CandidatePool { mut entries, m_total } = pool;
    match mode {
        Mode::Standard => {
            let residues: HashSet<u64> = unmonitored.iter().map(|w| w % 100).collect();
            entries.retain(|c| !residues.contains(&(c.abs % 100)));
        }
        Mode::Enhanced => {
            let rt = u64::from(cfg.rt);
            let i_max = u64::from(1100u32.div_ceil(cfg.rt));
            let lo = now + u64::from(cfg.t1);
            let hi = now + u64::from(cfg.t2);
            let mut hit: HashSet<u64> = HashSet::new();
            for &w in &unmonitored {
                for z in 0..cfg.sc {
                    let cell = SsrCoord::from_abs(w, z);
                    // A blind-spot hypothesis survives only while every chain
                    // slot before `now` was itself unmonitored; a monitored
                    // slot would have revealed or ruled out the reservation.
                    for i in 1..=i_max {
                        let m = cell.co_map_unchecked(i as u32, cfg.rt);
                        let drift = i64::from(m.subframe()) - i64::from(cell.subframe());
                        let m_abs = ((w + i * rt) as i64 + drift) as u64;
                        debug_assert_eq!(
                            m_abs % u64::from(SUBFRAMES_PER_CYCLE),
                            u64::from(m.abs_index())
                        );
                        if m_abs < now {
                            if db.record_at(m_abs).is_none_or(|r| r.monitored) {
                                break;
                            }
                            continue;
                        }
                        if m_abs > hi {
                            break;
                        }
                        if m_abs >= lo {
                            hit.insert(m_abs);
                        }
                    }
                }
            }
            entries.retain(|c| !hit.contains(&c.abs));
        }
    }
    CandidatePool { entries, m_total }
}

/// Strongest reservation RSRP per grid cell, over the span the candidate
/// chains can touch. Built once per selection and filtered by threshold at
/// each 3 dB iteration; a candidate falls at threshold p exactly when some
/// reservation above p covers one of its chain cells.
pub struct ReservedOccupancy {
    mode: Mode,
    own_rc: u32,
    rt: u32,
    lo: u64,
    sc: usize,
    /// Max RSRP marking each cell; -inf when untouched.
    cells: Vec<f64>,
    /// Marked on the cyclic grid instead of an absolute span (only when a
    /// chain could wrap a full SFN cycle relative to the pool).
    cyclic: bool,
}

impl ReservedOccupancy {
    pub fn build(
        pool: &CandidatePool,
        reservations: &[DecodedReservation],
        state: &SchedulerState,
        cfg: &PoolConfig,
    ) -> Self {
        let sc = usize::from(cfg.sc);
        let rt = u64::from(cfg.rt);
        let own_rc = state.rc.max(1);
        let lo_pool = pool.entries.iter().map(|c| c.abs).min().unwrap_or(0);
        let hi_pool = pool.entries.iter().map(|c| c.abs).max().unwrap_or(0);

        let mut out = match state.mode {
            Mode::Standard => {
                let mut grid = Self {
                    mode: state.mode,
                    own_rc,
                    rt: cfg.rt,
                    lo: lo_pool,
                    sc,
                    cells: vec![f64::NEG_INFINITY; (hi_pool - lo_pool + 1) as usize * sc],
                    cyclic: false,
                };
                for res in reservations {
                    if res.rri == 0 {
                        continue;
                    }
                    let rri = u64::from(res.rri);
                    let k_from =
                        if lo_pool > res.abs { (lo_pool - res.abs).div_ceil(rri) } else { 1 }.max(1);
                    for k in k_from..=u64::from(res.rc) {
                        let occ = res.abs + k * rri;
                        if occ > hi_pool {
                            break;
                        }
                        grid.mark(occ, res.coord.subchannel(), res.rsrp_dbm);
                    }
                }
                grid
            }
            Mode::Enhanced => {
                // Chain intersection works on cyclic coordinates. Marking only
                // hops inside the candidate chains' absolute span is exact as
                // long as no chain wraps a full SFN cycle relative to the
                // pool; the wrapping configuration falls back to the full
                // cyclic grid.
                let own_reach = hi_pool + u64::from(own_rc - 1) * rt + 9;
                let res_extent = reservations
                    .iter()
                    .map(|r| u64::from(r.rc) * u64::from(r.rri))
                    .max()
                    .unwrap_or(0);
                let cyclic = u64::from(own_rc) * rt + res_extent + 1100
                    >= u64::from(SUBFRAMES_PER_CYCLE);
                let span_lo = if cyclic { 0 } else { lo_pool.saturating_sub(9) };
                let size = if cyclic {
                    SUBFRAMES_PER_CYCLE as usize * sc
                } else {
                    (own_reach - span_lo + 1) as usize * sc
                };
                let mut grid = Self {
                    mode: state.mode,
                    own_rc,
                    rt: cfg.rt,
                    lo: span_lo,
                    sc,
                    cells: vec![f64::NEG_INFINITY; size],
                    cyclic,
                };
                for res in reservations {
                    if res.rri == 0 || res.rc == 0 {
                        continue;
                    }
                    let rri = u64::from(res.rri);
                    let last_hop = u64::from(res.rc - 1);
                    let (from, to) = if cyclic {
                        (0, last_hop)
                    } else {
                        let from = if span_lo > res.abs + 9 {
                            ((span_lo - res.abs - 9) / rri).min(last_hop)
                        } else {
                            0
                        };
                        let to = ((own_reach + 9).saturating_sub(res.abs) / rri).min(last_hop);
                        (from, to)
                    };
                    let y0 = i64::from(res.coord.subframe());
                    for i in from..=to {
                        let m = res.coord.co_map_unchecked(i as u32, res.rri);
                        if cyclic {
                            grid.mark(u64::from(m.abs_index()), m.subchannel(), res.rsrp_dbm);
                        } else {
                            let abs = ((res.abs + i * rri) as i64 + i64::from(m.subframe()) - y0)
                                as u64;
                            grid.mark(abs, m.subchannel(), res.rsrp_dbm);
                        }
                    }
                }
                grid
            }
        };
        out.rt = cfg.rt;
        out
    }

    fn mark(&mut self, abs: u64, z: u8, rsrp: f64) {
        if abs < self.lo {
            return;
        }
        let idx = (abs - self.lo) as usize * self.sc + usize::from(z);
        if idx < self.cells.len() && rsrp > self.cells[idx] {
            self.cells[idx] = rsrp;
        }
    }

    fn strongest(&self, abs: u64, z: u8) -> f64 {
        if abs < self.lo {
            return f64::NEG_INFINITY;
        }
        let idx = (abs - self.lo) as usize * self.sc + usize::from(z);
        if idx < self.cells.len() { self.cells[idx] } else { f64::NEG_INFINITY }
    }

    /// Drop every candidate covered by a reservation stronger than `p_th`.
    pub fn apply(&self, pool: CandidatePool, p_th_dbm: f64) -> CandidatePool {
        let CandidatePool { mut entries, m_total } = pool;
        match self.mode {
            Mode::Standard => {
                // exclusion requires RSRP strictly above the threshold
                entries.retain(|c| self.strongest(c.abs, c.coord.subchannel()) <= p_th_dbm);
            }
            Mode::Enhanced => {
                let rt = u64::from(self.rt);
                entries.retain(|cand| {
                    let y0 = i64::from(cand.coord.subframe());
                    for j in 0..self.own_rc {
                        let m = cand.coord.co_map_unchecked(j, self.rt);
                        let strongest = if self.cyclic {
                            self.strongest(u64::from(m.abs_index()), m.subchannel())
                        } else {
                            let abs = ((cand.abs + u64::from(j) * rt) as i64
                                + i64::from(m.subframe())
                                - y0) as u64;
                            self.strongest(abs, m.subchannel())
                        };
                        if strongest > p_th_dbm {
                            return false;
                        }
                    }
                    true
                });
            }
        }
        CandidatePool { entries, m_total }
    }
}

/// Remove candidates that collide with decoded reservations whose RSRP
/// exceeds the current threshold.
pub fn exclude_reserved(
    pool: CandidatePool,
    reservations: &[DecodedReservation],
    state: &SchedulerState,
    cfg: &PoolConfig,
) -> CandidatePool {
    if pool.entries.is_empty() || reservations.is_empty() {
        return pool;
    }
    let occupancy = ReservedOccupancy::build(&pool, reservations, state, cfg);
    occupancy.apply(pool, state.p_th_dbm)
}

/// Run the full selection pipeline and return the chosen SSR.
///
/// Loops {pool, unmonitored exclusion, RSRP exclusion} raising the threshold
/// 3 dB per iteration until at least 20% of the pool survives, ranks
/// survivors by A-RSSI, and picks uniformly from the lowest-ranked 20%.
/// The 20% comparisons are exact (integer fifths).
pub fn select<R: Rng>(
    db: &SensingDb,
    state: &mut SchedulerState,
    cfg: &PoolConfig,
    now: u64,
    rng: &mut R,
    trace: Option<&mut SelectionTrace>,
) -> Result<Candidate, SchedulerError> {
    check_period(cfg.rt)?;
    let pristine = candidate_pool(now, cfg);
    let m_total = pristine.m_total;
    let needed = m_total.div_ceil(5);
    let reservations = db.decoded_reservations(state.mode, cfg.rt);
    state.p_th_dbm = cfg.p_th_init_dbm;

    // The unmonitored exclusion does not depend on the threshold, and the
    // reservation occupancy can be built once: the 3 dB loop only re-filters
    // it at the raised threshold.
    let after_unmon = exclude_unmonitored(pristine.clone(), db, state.mode, cfg, now);
    let occupancy = ReservedOccupancy::build(&after_unmon, &reservations, state, cfg);

    let mut iterations = 0u32;
    let survivors = loop {
        iterations += 1;
        let after_res = occupancy.apply(after_unmon.clone(), state.p_th_dbm);
        if after_res.entries.len() * 5 >= m_total {
            break after_res;
        }
        if iterations >= MAX_SELECT_ITERATIONS {
            return Err(SchedulerError::IterationCap {
                iterations: MAX_SELECT_ITERATIONS,
                survivors: after_res.entries.len(),
                needed,
            });
        }
        state.p_th_dbm += 3.0;
    };

    let scores = match state.mode {
        Mode::Standard => survivors
            .entries
            .iter()
            .map(|c| db.a_rssi_standard(c.coord, now))
            .collect::<Vec<f64>>(),
        Mode::Enhanced => {
            let pairs: Vec<(u64, SsrCoord)> =
                survivors.entries.iter().map(|c| (c.abs, c.coord)).collect();
            a_rssi_enhanced_batch(db, &pairs, cfg.rt, now)?
        }
    };

    let mut ranked: Vec<(f64, Candidate)> =
        scores.into_iter().zip(survivors.entries.iter().copied()).collect();
    ranked.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("A-RSSI is always finite")
            .then(a.1.abs.cmp(&b.1.abs))
            .then(a.1.coord.subchannel().cmp(&b.1.coord.subchannel()))
    });
    let sb_len = needed.min(ranked.len());
    let shortlist = &ranked[..sb_len];
    let picked = shortlist[rng.random_range(0..shortlist.len())].1;

    if let Some(tr) = trace {
        let key = |c: &Candidate| (c.abs, c.coord.subchannel());
        tr.now = now;
        tr.mode = state.mode;
        tr.m_total = m_total;
        tr.iterations = iterations;
        tr.p_th_final_dbm = state.p_th_dbm;
        tr.candidates = pristine.entries.iter().map(key).collect();
        let unmon_kept: HashSet<(u64, u8)> = after_unmon.entries.iter().map(key).collect();
        let surv_set: HashSet<(u64, u8)> = survivors.entries.iter().map(key).collect();
        tr.excluded_unmonitored = pristine
            .entries
            .iter()
            .map(key)
            .filter(|k| !unmon_kept.contains(k))
            .collect();
        tr.excluded_reserved =
            after_unmon.entries.iter().map(key).filter(|k| !surv_set.contains(k)).collect();
        tr.survivors = ranked.iter().map(|(_, c)| key(c)).collect();
        tr.a_rssi_dbm = ranked.iter().map(|(a, _)| *a).collect();
        tr.shortlist = shortlist.iter().map(|(_, c)| key(c)).collect();
        tr.picked = key(&picked);
    }

    state.anchor = picked.coord;
    state.hop = 0;
    Ok(picked)
}

/// Outcome of the RC-expiry decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RcDecision {
    Keep,
    Reselect,
}

/// Redraw RC uniformly from `[rc_min, rc_max]` and decide whether to keep the
/// previous reservation pattern (probability `beta`) or reselect.
pub fn on_rc_zero<R: Rng>(state: &mut SchedulerState, cfg: &PoolConfig, rng: &mut R) -> RcDecision {
    debug_assert_eq!(state.rc, 0);
    state.rc = rng.random_range(cfg.rc_min..=cfg.rc_max);
    if rng.random::<f64>() < cfg.beta {
        RcDecision::Keep
    } else {
        RcDecision::Reselect
    }
}

/// Coordinate of transmission number `hop` in the current reservation.
///
/// Standard mode shifts the anchor by whole periods (fixed subframe within
/// the frame, fixed subchannel); enhanced mode follows the CO chain.
pub fn chain_coord(state: &SchedulerState, hop: u32, rt: u32) -> Result<SsrCoord, SchedulerError> {
    check_period(rt)?;
    Ok(match state.mode {
        Mode::Standard => SsrCoord::from_abs(
            u64::from(state.anchor.abs_index()) + u64::from(hop) * u64::from(rt),
            state.anchor.subchannel(),
        ),
        Mode::Enhanced => state.anchor.co_map_unchecked(hop, rt),
    })
}

/// Consume one reserved transmission: returns its SSR, then advances the hop
/// and decrements RC.
pub fn next_transmission(state: &mut SchedulerState, rt: u32) -> Result<SsrCoord, SchedulerError> {
    if state.rc == 0 {
        return Err(SchedulerError::RcExhausted);
    }
    let coord = chain_coord(state, state.hop, rt)?;
    state.hop += 1;
    state.rc -= 1;
    Ok(coord)
}
