//! Deterministic subframe-granular event loop for one seeded run, plus the
//! seed x mode x population sweep.
//!
//! Time advances one subframe (1 ms) at a time. Vehicles are listen-only
//! through the 1000-subframe warm-up, select their first resource at their
//! first packet-generation boundary afterwards, then transmit along their
//! reservation chain, reselecting whenever the counter expires. Mobility
//! advances and freshness checks run every 100 subframes. One master seed
//! expands into independent per-subsystem streams so adding draws to one
//! subsystem cannot perturb another.

use crate::grid::{GridError, PoolConfig, SsrCoord, SUBFRAMES_PER_CYCLE};
use crate::metrics::{self, AoiTable, MetricsAccumulator, ReportRow};
use crate::mobility::{self, MobilityConfig, MobilityError};
use crate::phy::{resolve_subframe_into, LinkBudget, PhyError, SubframeOutcome, Transmission};
use crate::scheduler::{
    self, Mode, RcDecision, SchedulerError, SchedulerState, SelectionTrace,
};
use crate::sci::{decode_sci, encode_sci, SciError, SciFormat, SciMessage, SciTail};
use crate::sensing::{DecodedSci, SensingDb, SENSING_WINDOW};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::time::Instant;
use thiserror::Error;

/// Listen-only warm-up: exactly one full sensing window.
pub const WARMUP_SUBFRAMES: u64 = SENSING_WINDOW as u64;

/// Mobility step and AoI check cadence, subframes.
pub const CHECK_PERIOD_SUBFRAMES: u64 = 100;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid scenario config: {0}")]
    Config(String),
    #[error("config file: {0}")]
    ConfigFile(String),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Phy(#[from] PhyError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Mobility(#[from] MobilityError),
    #[error(transparent)]
    Sci(#[from] SciError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("trace sink: {0}")]
    Io(#[from] std::io::Error),
}

/// Everything one run needs; file form is TOML with flat sections mirroring
/// these fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub n_vehicles: usize,
    pub mode: Mode,
    pub duration_s: f64,
    pub seed: u64,
    pub message_size_bytes: u32,
    /// Distance bounds for PDR and AoIS, metres, ascending.
    pub d_list: Vec<f64>,
    /// AoI thresholds, milliseconds (= subframes), ascending.
    pub aoi_th_list: Vec<u64>,
    pub pool: PoolConfig,
    pub link: LinkBudget,
    pub mobility: MobilityConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_vehicles: 50,
            mode: Mode::Enhanced,
            duration_s: 30.0,
            seed: 1,
            message_size_bytes: 190,
            d_list: vec![100.0, 200.0, 300.0, 400.0],
            aoi_th_list: vec![50, 100, 200],
            pool: PoolConfig::default(),
            link: LinkBudget::default(),
            mobility: MobilityConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let err = |m: String| Err(EngineError::Config(m));
        if self.n_vehicles == 0 {
            return err("n_vehicles must be at least 1".into());
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return err("duration_s must be positive".into());
        }
        if self.total_subframes() <= WARMUP_SUBFRAMES {
            return err(format!(
                "duration {} s does not outlast the {} ms warm-up",
                self.duration_s, WARMUP_SUBFRAMES
            ));
        }
        if self.message_size_bytes == 0 {
            return err("message_size_bytes must be positive".into());
        }
        if self.d_list.is_empty() || !self.d_list.windows(2).all(|w| w[0] < w[1]) {
            return err("d_list must be non-empty and ascending".into());
        }
        if self.d_list.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return err("d_list entries must be positive".into());
        }
        if self.aoi_th_list.is_empty() || !self.aoi_th_list.windows(2).all(|w| w[0] < w[1]) {
            return err("aoi_th_list must be non-empty and ascending".into());
        }
        self.pool.validate().map_err(|e| EngineError::Config(e.to_string()))?;
        self.link.validate().map_err(EngineError::Config)?;
        self.mobility.validate().map_err(|e| EngineError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn total_subframes(&self) -> u64 {
        (self.duration_s * 1000.0).round() as u64
    }

    pub fn from_toml_str(s: &str) -> Result<Self, EngineError> {
        toml::from_str(s).map_err(|e| EngineError::ConfigFile(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, EngineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EngineError::ConfigFile(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Stable identifier of the full configuration (seed included).
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", fnv1a64(canonical.as_bytes()))
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream(master: u64, domain: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(master ^ splitmix64(domain)))
}

const STREAM_MOBILITY: u64 = 1;
const STREAM_PHY: u64 = 2;
const STREAM_VEHICLE_BASE: u64 = 0x1000;

/// Metrics plus reproducibility metadata for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub run_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub n_vehicles: usize,
    pub mode: Mode,
    pub rows: Vec<ReportRow>,
    /// Packets replaced before ever being transmitted.
    pub dropped_packets: u64,
    pub wall_clock_ms: u64,
}

pub const CSV_HEADER: &str = "run_id,seed,n_vehicles,mode,d,aoi_th,pdr_pct,aois_pct";

impl RunReport {
    /// CSV rows (no header); wall-clock is deliberately excluded so output is
    /// byte-stable across runs.
    pub fn csv_rows(&self) -> String {
        metrics::csv_rows(&self.rows, &self.run_id, self.seed, self.n_vehicles, &self.mode.to_string())
    }

    pub fn csv(&self) -> String {
        format!("{CSV_HEADER}\n{}", self.csv_rows())
    }
}

struct VehicleSim {
    rng: ChaCha8Rng,
    db: SensingDb,
    phase: u64,
    state: Option<SchedulerState>,
    /// Next transmission slot, or the reselection-check slot once rc is 0.
    next_event_abs: u64,
    pending_gen: Option<u64>,
    pending_unsent: bool,
    drops: u64,
}

struct TxMeta {
    vehicle: usize,
    coord: SsrCoord,
    gen_ts: u64,
    sci: SciMessage,
}

pub(crate) struct World {
    cfg: ScenarioConfig,
    time: u64,
    total: u64,
    metrics_start: u64,
    mobility: mobility::World,
    mob_rng: ChaCha8Rng,
    phy_rng: ChaCha8Rng,
    vehicles: Vec<VehicleSim>,
    positions: Vec<(f64, f64)>,
    pub(crate) aoi: AoiTable,
    acc: MetricsAccumulator,
    noise_row: Vec<Option<f64>>,
    // per-subframe scratch
    tx_buf: Vec<Transmission>,
    tx_meta: Vec<TxMeta>,
    outcomes: Vec<SubframeOutcome>,
    rssi_scratch: Vec<Option<f64>>,
    decoded_scratch: Vec<DecodedSci>,
    rx_rows: Vec<(usize, f64, bool)>,
}

impl World {
    pub(crate) fn new(cfg: &ScenarioConfig) -> Result<Self, EngineError> {
        cfg.validate()?;
        let n = cfg.n_vehicles;
        let mut mob_rng = stream(cfg.seed, STREAM_MOBILITY);
        let phy_rng = stream(cfg.seed, STREAM_PHY);
        let mobility = mobility::World::new(&cfg.mobility, n, &mut mob_rng)?;
        let mut positions = Vec::with_capacity(n);
        mobility.fill_positions(&mut positions);
        let rt = u64::from(cfg.pool.rt);
        let vehicles = (0..n)
            .map(|v| {
                let mut rng = stream(cfg.seed, STREAM_VEHICLE_BASE + v as u64);
                let phase = rng.random_range(0..rt);
                VehicleSim {
                    rng,
                    db: SensingDb::new(cfg.pool.sc),
                    phase,
                    state: None,
                    next_event_abs: 0,
                    pending_gen: None,
                    pending_unsent: false,
                    drops: 0,
                }
            })
            .collect();
        let noise_row = vec![Some(cfg.link.noise_floor_dbm()); usize::from(cfg.pool.sc)];
        Ok(Self {
            total: cfg.total_subframes(),
            metrics_start: WARMUP_SUBFRAMES + rt,
            aoi: AoiTable::new(n),
            acc: MetricsAccumulator::new(&cfg.d_list, &cfg.aoi_th_list),
            cfg: cfg.clone(),
            time: 0,
            mobility,
            mob_rng,
            phy_rng,
            vehicles,
            positions,
            noise_row,
            tx_buf: Vec::new(),
            tx_meta: Vec::new(),
            outcomes: Vec::new(),
            rssi_scratch: Vec::new(),
            decoded_scratch: Vec::new(),
            rx_rows: Vec::new(),
        })
    }

    #[cfg(test)]
    pub(crate) fn time(&self) -> u64 {
        self.time
    }

    /// Preset a vehicle's reservation, bypassing selection. Test hook.
    #[cfg(test)]
    pub(crate) fn force_reservation(&mut self, vid: usize, anchor_abs: u64, subchannel: u8, rc: u32) {
        let anchor = SsrCoord::from_abs(anchor_abs, subchannel);
        self.vehicles[vid].state = Some(SchedulerState {
            mode: self.cfg.mode,
            anchor,
            hop: 0,
            rc,
            p_th_dbm: self.cfg.pool.p_th_init_dbm,
        });
        self.vehicles[vid].next_event_abs = anchor_abs;
    }

    pub(crate) fn step(&mut self, mut trace: Option<&mut dyn Write>) -> Result<(), EngineError> {
        let t = self.time;
        let rt = u64::from(self.cfg.pool.rt);
        let rt32 = self.cfg.pool.rt;
        let mode = self.cfg.mode;
        let sc = self.cfg.pool.sc;

        // mobility step then freshness check, every 100 subframes
        if t.is_multiple_of(CHECK_PERIOD_SUBFRAMES) {
            if t > 0 {
                self.mobility.step_all(0.1, &mut self.mob_rng);
                self.mobility.fill_positions(&mut self.positions);
            }
            if t >= self.metrics_start {
                self.acc.aoi_check(&self.aoi, &self.positions, t);
            }
        }

        // packet generation on phase boundaries; replacement drops only count
        // once the vehicle could actually have transmitted the old packet
        let metrics_start = self.metrics_start;
        for v in &mut self.vehicles {
            if t % rt == v.phase {
                if v.pending_unsent && v.pending_gen.is_some() && t >= metrics_start {
                    v.drops += 1;
                }
                v.pending_gen = Some(t);
                v.pending_unsent = true;
            }
        }

        // scheduling: first selection, reselection checks, due transmissions
        self.tx_buf.clear();
        self.tx_meta.clear();
        for vid in 0..self.vehicles.len() {
            let v = &mut self.vehicles[vid];
            if v.state.is_none() {
                if t >= WARMUP_SUBFRAMES && t % rt == v.phase {
                    let rc = v.rng.random_range(self.cfg.pool.rc_min..=self.cfg.pool.rc_max);
                    let mut st = SchedulerState {
                        mode,
                        anchor: SsrCoord::from_abs(0, 0),
                        hop: 0,
                        rc,
                        p_th_dbm: self.cfg.pool.p_th_init_dbm,
                    };
                    let mut tr = trace.as_ref().map(|_| SelectionTrace::default());
                    let cand =
                        scheduler::select(&v.db, &mut st, &self.cfg.pool, t, &mut v.rng, tr.as_mut())?;
                    if let (Some(sink), Some(tr)) = (trace.as_mut(), tr.as_ref()) {
                        write_trace_line(&mut **sink, t, vid, tr)?;
                    }
                    v.next_event_abs = cand.abs;
                    v.state = Some(st);
                }
                continue;
            }
            if t != v.next_event_abs {
                continue;
            }
            let st = v.state.as_mut().expect("checked above");
            if st.rc == 0 {
                match scheduler::on_rc_zero(st, &self.cfg.pool, &mut v.rng) {
                    RcDecision::Reselect => {
                        let mut tr = trace.as_ref().map(|_| SelectionTrace::default());
                        let cand = scheduler::select(
                            &v.db,
                            st,
                            &self.cfg.pool,
                            t,
                            &mut v.rng,
                            tr.as_mut(),
                        )?;
                        if let (Some(sink), Some(tr)) = (trace.as_mut(), tr.as_ref()) {
                            write_trace_line(&mut **sink, t, vid, tr)?;
                        }
                        v.next_event_abs = cand.abs;
                        continue;
                    }
                    RcDecision::Keep => {}
                }
            }
            // transmit in this subframe
            let sci_rc = st.rc;
            let coord = scheduler::next_transmission(st, rt32)?;
            debug_assert_eq!(
                u64::from(coord.abs_index()),
                t % u64::from(SUBFRAMES_PER_CYCLE),
                "reserved SSR must land on the current subframe"
            );
            let next = scheduler::chain_coord(st, st.hop, rt32)?;
            let delta = u64::from(
                (next.abs_index() + SUBFRAMES_PER_CYCLE - coord.abs_index()) % SUBFRAMES_PER_CYCLE,
            );
            debug_assert!(delta >= 1);
            v.next_event_abs = t + delta;
            let gen_ts = v.pending_gen.expect("packet generated before first reserved slot");
            v.pending_unsent = false;
            debug_assert!(sci_rc >= 1 && sci_rc <= self.cfg.pool.rc_max);
            let (format, tail) = match mode {
                Mode::Standard => (SciFormat::Standard, SciTail::Legacy(0)),
                Mode::Enhanced => (SciFormat::Proposed, SciTail::Rc(sci_rc as u8)),
            };
            let msg = SciMessage {
                rri_code: (rt32 / 10) as u8,
                frl: coord.subchannel(),
                mcs: 0,
                tx_format: false,
                tail,
            };
            // through the wire contract: encode, then decode what receivers see
            let word = encode_sci(&msg, u32::from(sc), format)?;
            let seen = decode_sci(word, u32::from(sc), format)?;
            self.tx_buf.push(Transmission { tx: vid, coord });
            self.tx_meta.push(TxMeta { vehicle: vid, coord, gen_ts, sci: seen });
        }

        if self.tx_buf.is_empty() {
            for v in &mut self.vehicles {
                v.db.record_subframe(true, &self.noise_row, &[]);
            }
            self.time += 1;
            return Ok(());
        }

        let shadow = if self.cfg.link.shadowing_sigma_db > 0.0 {
            Some(&mut self.phy_rng)
        } else {
            None
        };
        resolve_subframe_into(
            &self.tx_buf,
            &self.positions,
            sc,
            &self.cfg.link,
            shadow,
            &mut self.outcomes,
        )?;

        // transmitters miss the whole subframe (half-duplex)
        for m in &self.tx_meta {
            self.vehicles[m.vehicle].db.record_subframe(false, &[], &[]);
        }

        // receivers: sensing, AoI
        let mut meta_of = vec![usize::MAX; self.vehicles.len()];
        for (mi, m) in self.tx_meta.iter().enumerate() {
            meta_of[m.vehicle] = mi;
        }
        for o in &self.outcomes {
            self.rssi_scratch.clear();
            self.rssi_scratch.extend(o.rssi_dbm.iter().map(|v| Some(*v)));
            self.decoded_scratch.clear();
            for r in &o.receptions {
                if r.decoded_sci {
                    let m = &self.tx_meta[meta_of[r.tx]];
                    self.decoded_scratch.push(DecodedSci {
                        coord: m.coord,
                        sci: m.sci,
                        rsrp_dbm: r.rsrp_dbm,
                    });
                }
                if r.decoded_tb {
                    let m = &self.tx_meta[meta_of[r.tx]];
                    self.aoi.update_aoi(o.receiver, r.tx, m.gen_ts);
                }
            }
            self.vehicles[o.receiver].db.record_subframe(
                true,
                &self.rssi_scratch,
                &self.decoded_scratch,
            );
        }

        // PDR accounting: receptions are aligned with the transmission list
        if t >= self.metrics_start {
            for (mi, m) in self.tx_meta.iter().enumerate() {
                self.rx_rows.clear();
                for o in &self.outcomes {
                    let r = &o.receptions[mi];
                    debug_assert_eq!(r.tx, m.vehicle);
                    self.rx_rows.push((o.receiver, r.distance_m, r.decoded_tb));
                }
                let rows = std::mem::take(&mut self.rx_rows);
                self.acc.record_transmission(m.vehicle, &rows);
                self.rx_rows = rows;
            }
        }

        self.time += 1;
        Ok(())
    }

    fn into_report(self, wall_clock_ms: u64) -> RunReport {
        let hash = self.cfg.hash();
        RunReport {
            run_id: hash.clone(),
            config_hash: hash,
            seed: self.cfg.seed,
            n_vehicles: self.cfg.n_vehicles,
            mode: self.cfg.mode,
            rows: self.acc.report(),
            dropped_packets: self.vehicles.iter().map(|v| v.drops).sum(),
            wall_clock_ms,
        }
    }
}

fn write_trace_line(
    sink: &mut dyn Write,
    t: u64,
    vehicle: usize,
    tr: &SelectionTrace,
) -> Result<(), EngineError> {
    #[derive(Serialize)]
    struct Line<'a> {
        t: u64,
        vehicle: usize,
        #[serde(flatten)]
        selection: &'a SelectionTrace,
    }
    let line = serde_json::to_string(&Line { t, vehicle, selection: tr })?;
    writeln!(sink, "{line}")?;
    Ok(())
}

/// Execute one run.
pub fn run(cfg: &ScenarioConfig) -> Result<RunReport, EngineError> {
    run_inner(cfg, None)
}

/// Execute one run, writing one JSON line per resource selection.
pub fn run_with_trace(cfg: &ScenarioConfig, sink: &mut dyn Write) -> Result<RunReport, EngineError> {
    run_inner(cfg, Some(sink))
}

fn run_inner(cfg: &ScenarioConfig, mut sink: Option<&mut dyn Write>) -> Result<RunReport, EngineError> {
    let start = Instant::now();
    let mut world = World::new(cfg)?;
    while world.time < world.total {
        let s: Option<&mut dyn Write> = match sink.as_mut() {
            Some(s) => Some(&mut **s),
            None => None,
        };
        world.step(s)?;
    }
    Ok(world.into_report(start.elapsed().as_millis() as u64))
}

/// One grid point of a sweep.
#[derive(Debug)]
pub struct SweepRun {
    pub seed: u64,
    pub mode: Mode,
    pub n: usize,
    pub result: Result<RunReport, EngineError>,
}

/// Cartesian product of runs over populations, modes and seeds. Failures are
/// reported per grid point; remaining runs proceed. `jobs > 1` runs points in
/// parallel; results keep grid order either way.
pub fn run_sweep(
    base: &ScenarioConfig,
    seeds: &[u64],
    modes: &[Mode],
    n_list: &[usize],
    jobs: usize,
) -> Vec<SweepRun> {
    let mut grid = Vec::new();
    for &n in n_list {
        for &mode in modes {
            for &seed in seeds {
                grid.push((seed, mode, n));
            }
        }
    }
    let run_one = |&(seed, mode, n): &(u64, Mode, usize)| {
        let mut cfg = base.clone();
        cfg.seed = seed;
        cfg.mode = mode;
        cfg.n_vehicles = n;
        SweepRun { seed, mode, n, result: run(&cfg) }
    };
    if jobs <= 1 {
        grid.iter().map(run_one).collect()
    } else {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .expect("thread pool");
        pool.install(|| grid.par_iter().map(run_one).collect())
    }
}
