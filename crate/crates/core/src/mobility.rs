//! Manhattan-grid road network with Krauss car following and probabilistic
//! turning at intersections.
//!
//! Streets are bidirectional single-lane edges between grid nodes. Vehicles
//! follow their same-edge leader under the Krauss rule; when a vehicle
//! reaches an intersection it turns left / right / straight with weights
//! 0.25 / 0.25 / 0.5, renormalized over the directions that exist there.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MobilityError {
    #[error("grid must have at least 2x2 intersections, got {rows}x{cols}")]
    GridTooSmall { rows: u16, cols: u16 },
    #[error("no turn available (dead end)")]
    DeadEnd,
    #[error("could not place {0} vehicles without overlap")]
    SpawnFailed(usize),
    #[error("invalid mobility config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MobilityConfig {
    pub rows: u16,
    pub cols: u16,
    pub block_m: f64,
    pub v_max_mps: f64,
    pub accel_mps2: f64,
    pub decel_mps2: f64,
    pub tau_s: f64,
    /// Driver imperfection (dawdling) factor in [0, 1].
    pub eta: f64,
    pub min_gap_m: f64,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        Self {
            rows: 5,
            cols: 5,
            block_m: 250.0,
            v_max_mps: 13.9,
            accel_mps2: 2.6,
            decel_mps2: 4.5,
            tau_s: 1.0,
            eta: 0.5,
            min_gap_m: 2.5,
        }
    }
}

impl MobilityConfig {
    pub fn validate(&self) -> Result<(), MobilityError> {
        if self.rows < 2 || self.cols < 2 {
            return Err(MobilityError::GridTooSmall { rows: self.rows, cols: self.cols });
        }
        let positive = [
            ("block_m", self.block_m),
            ("v_max_mps", self.v_max_mps),
            ("accel_mps2", self.accel_mps2),
            ("decel_mps2", self.decel_mps2),
            ("tau_s", self.tau_s),
            ("min_gap_m", self.min_gap_m),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(MobilityError::BadConfig(format!("{name} must be positive")));
            }
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(MobilityError::BadConfig("eta must lie in [0, 1]".into()));
        }
        if self.min_gap_m >= self.block_m {
            return Err(MobilityError::BadConfig("min_gap_m must be below block_m".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Heading {
    North,
    East,
    South,
    West,
}

impl Heading {
    fn delta(self) -> (i32, i32) {
        match self {
            Heading::North => (1, 0),
            Heading::East => (0, 1),
            Heading::South => (-1, 0),
            Heading::West => (0, -1),
        }
    }

    fn turned(self, turn: Turn) -> Heading {
        use Heading::*;
        match (self, turn) {
            (h, Turn::Straight) => h,
            (North, Turn::Left) => West,
            (North, Turn::Right) => East,
            (East, Turn::Left) => North,
            (East, Turn::Right) => South,
            (South, Turn::Left) => East,
            (South, Turn::Right) => West,
            (West, Turn::Left) => South,
            (West, Turn::Right) => North,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Turn {
    Left,
    Right,
    Straight,
}

impl Turn {
    const ALL: [Turn; 3] = [Turn::Left, Turn::Right, Turn::Straight];

    fn weight(self) -> f64 {
        match self {
            Turn::Left | Turn::Right => 0.25,
            Turn::Straight => 0.5,
        }
    }
}

/// Pick a turn with weights 0.25 / 0.25 / 0.5 renormalized over the
/// available directions.
pub fn choose_turn<R: Rng>(available: &[Turn], rng: &mut R) -> Result<Turn, MobilityError> {
    if available.is_empty() {
        return Err(MobilityError::DeadEnd);
    }
    let total: f64 = available.iter().map(|t| t.weight()).sum();
    let mut u = rng.random::<f64>() * total;
    for t in available {
        u -= t.weight();
        if u < 0.0 {
            return Ok(*t);
        }
    }
    Ok(*available.last().expect("non-empty"))
}

#[derive(Debug, Clone, Copy)]
struct Edge {
    from: (u16, u16),
    to: (u16, u16),
    heading: Heading,
}

/// Grid of intersections joined by directed single-lane edges.
#[derive(Debug, Clone)]
pub struct RoadNetwork {
    block_m: f64,
    edges: Vec<Edge>,
    by_from_heading: HashMap<((u16, u16), Heading), usize>,
}

impl RoadNetwork {
    pub fn manhattan(rows: u16, cols: u16, block_m: f64) -> Result<Self, MobilityError> {
        if rows < 2 || cols < 2 {
            return Err(MobilityError::GridTooSmall { rows, cols });
        }
        let mut edges = Vec::new();
        let mut by_from_heading = HashMap::new();
        for r in 0..rows {
            for c in 0..cols {
                for h in [Heading::North, Heading::East, Heading::South, Heading::West] {
                    let (dr, dc) = h.delta();
                    let tr = i32::from(r) + dr;
                    let tc = i32::from(c) + dc;
                    if (0..i32::from(rows)).contains(&tr) && (0..i32::from(cols)).contains(&tc) {
                        let idx = edges.len();
                        edges.push(Edge { from: (r, c), to: (tr as u16, tc as u16), heading: h });
                        by_from_heading.insert(((r, c), h), idx);
                    }
                }
            }
        }
        Ok(Self { block_m, edges, by_from_heading })
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn block_m(&self) -> f64 {
        self.block_m
    }

    fn node_pos(&self, node: (u16, u16)) -> (f64, f64) {
        (f64::from(node.1) * self.block_m, f64::from(node.0) * self.block_m)
    }

    /// Planar position of a point `offset_m` along a directed edge.
    pub fn position_on(&self, edge: usize, offset_m: f64) -> (f64, f64) {
        let e = &self.edges[edge];
        let (fx, fy) = self.node_pos(e.from);
        let (tx, ty) = self.node_pos(e.to);
        let s = (offset_m / self.block_m).clamp(0.0, 1.0);
        (fx + (tx - fx) * s, fy + (ty - fy) * s)
    }

    fn next_edge(&self, edge: usize, turn: Turn) -> Option<usize> {
        let e = &self.edges[edge];
        let h = e.heading.turned(turn);
        self.by_from_heading.get(&(e.to, h)).copied()
    }

    /// Turns that lead to an existing street, in canonical order.
    pub fn available_turns(&self, edge: usize) -> Vec<Turn> {
        Turn::ALL.iter().copied().filter(|t| self.next_edge(edge, *t).is_some()).collect()
    }
}

/// A vehicle's kinematic state on the network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleKinematics {
    pub edge: usize,
    pub offset_m: f64,
    pub speed_mps: f64,
}

/// One Krauss update against an optional same-edge leader. Returns the new
/// kinematics and whether an overlap (negative usable gap) was clamped.
pub fn krauss_step<R: Rng>(
    kin: &VehicleKinematics,
    leader: Option<&VehicleKinematics>,
    cfg: &MobilityConfig,
    dt: f64,
    rng: &mut R,
) -> (VehicleKinematics, bool) {
    assert!(dt > 0.0);
    let u: f64 = rng.random();
    let mut overlap = false;
    let v = kin.speed_mps;
    let v_safe = match leader {
        Some(l) => {
            let gap = l.offset_m - kin.offset_m - cfg.min_gap_m;
            if gap < 0.0 {
                overlap = true;
                let mut out = *kin;
                out.speed_mps = 0.0;
                return (out, overlap);
            }
            let v_l = l.speed_mps;
            v_l + (gap - v_l * cfg.tau_s) / ((v + v_l) / (2.0 * cfg.decel_mps2) + cfg.tau_s)
        }
        None => f64::INFINITY,
    };
    let v_des = (v + cfg.accel_mps2 * dt).min(v_safe).min(cfg.v_max_mps);
    let speed = (v_des - cfg.eta * cfg.accel_mps2 * dt * u).max(0.0);
    let out = VehicleKinematics {
        edge: kin.edge,
        offset_m: kin.offset_m + speed * dt,
        speed_mps: speed,
    };
    (out, overlap)
}

#[derive(Debug, Clone)]
struct Vehicle {
    kin: VehicleKinematics,
    pending_turn: Option<Turn>,
}

/// Road network plus every vehicle's state.
#[derive(Debug, Clone)]
pub struct World {
    net: RoadNetwork,
    cfg: MobilityConfig,
    vehicles: Vec<Vehicle>,
    /// Vehicle ids per edge, ascending offset (last = closest to the end).
    occupants: Vec<Vec<usize>>,
    overlap_clamps: u64,
}

impl World {
    /// Spawn `n` vehicles uniformly over the edges with zero speed, keeping
    /// the minimum gap.
    pub fn new<R: Rng>(cfg: &MobilityConfig, n: usize, rng: &mut R) -> Result<Self, MobilityError> {
        cfg.validate()?;
        let net = RoadNetwork::manhattan(cfg.rows, cfg.cols, cfg.block_m)?;
        let mut occupants = vec![Vec::new(); net.edge_count()];
        let mut vehicles: Vec<Vehicle> = Vec::with_capacity(n);
        for v in 0..n {
            let mut placed = false;
            for _ in 0..10_000 {
                let edge = rng.random_range(0..net.edge_count());
                let offset = rng.random::<f64>() * cfg.block_m;
                let ok = occupants[edge]
                    .iter()
                    .all(|&o: &usize| (vehicles[o].kin.offset_m - offset).abs() >= cfg.min_gap_m);
                if ok {
                    vehicles.push(Vehicle {
                        kin: VehicleKinematics { edge, offset_m: offset, speed_mps: 0.0 },
                        pending_turn: None,
                    });
                    let pos = occupants[edge]
                        .iter()
                        .position(|&o| vehicles[o].kin.offset_m > offset)
                        .unwrap_or(occupants[edge].len());
                    occupants[edge].insert(pos, v);
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(MobilityError::SpawnFailed(n));
            }
        }
        Ok(Self { net, cfg: cfg.clone(), vehicles, occupants, overlap_clamps: 0 })
    }

    pub fn n(&self) -> usize {
        self.vehicles.len()
    }

    pub fn network(&self) -> &RoadNetwork {
        &self.net
    }

    pub fn kinematics(&self, v: usize) -> &VehicleKinematics {
        &self.vehicles[v].kin
    }

    pub fn position(&self, v: usize) -> (f64, f64) {
        let k = &self.vehicles[v].kin;
        self.net.position_on(k.edge, k.offset_m)
    }

    pub fn fill_positions(&self, out: &mut Vec<(f64, f64)>) {
        out.clear();
        out.extend((0..self.n()).map(|v| self.position(v)));
    }

    /// Euclidean distance between two vehicles' planar positions.
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (ax, ay) = self.position(a);
        let (bx, by) = self.position(b);
        ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
    }

    /// Count of hard clamps applied because Krauss alone would have violated
    /// the gap.
    pub fn overlap_clamps(&self) -> u64 {
        self.overlap_clamps
    }

    /// Smallest leader-follower spacing over all edges; infinite when no edge
    /// holds two vehicles.
    pub fn min_headway(&self) -> f64 {
        let mut min = f64::INFINITY;
        for occ in &self.occupants {
            for pair in occ.windows(2) {
                let gap = self.vehicles[pair[1]].kin.offset_m - self.vehicles[pair[0]].kin.offset_m;
                min = min.min(gap);
            }
        }
        min
    }

    /// Advance every vehicle by `dt` seconds.
    pub fn step_all<R: Rng>(&mut self, dt: f64, rng: &mut R) {
        let mut moved = vec![false; self.vehicles.len()];
        for e in 0..self.net.edge_count() {
            let snapshot = self.occupants[e].clone();
            for &v in snapshot.iter().rev() {
                if moved[v] {
                    continue;
                }
                moved[v] = true;
                self.step_vehicle(v, e, dt, rng);
            }
        }
    }

    fn step_vehicle<R: Rng>(&mut self, v: usize, edge: usize, dt: f64, rng: &mut R) {
        let li = self.occupants[edge].iter().position(|&x| x == v).expect("on edge");
        let leader = self.occupants[edge].get(li + 1).copied();
        let (mut kin, overlap) =
            krauss_step(&self.vehicles[v].kin, leader.map(|l| &self.vehicles[l].kin), &self.cfg, dt, rng);
        if overlap {
            self.overlap_clamps += 1;
            self.vehicles[v].kin = kin;
            return;
        }
        if let Some(l) = leader {
            // the leader has already moved this step; never close past min gap
            let allowed = self.vehicles[l].kin.offset_m - self.cfg.min_gap_m;
            if kin.offset_m > allowed {
                self.overlap_clamps += 1;
                kin.speed_mps = ((allowed - self.vehicles[v].kin.offset_m) / dt).max(0.0);
                kin.offset_m = allowed.max(self.vehicles[v].kin.offset_m);
            }
            self.vehicles[v].kin = kin;
            return;
        }
        if kin.offset_m <= self.net.block_m() {
            self.vehicles[v].kin = kin;
            return;
        }
        // intersection crossing
        let overflow = kin.offset_m - self.net.block_m();
        let turn = match self.vehicles[v].pending_turn {
            Some(t) => t,
            None => {
                let avail = self.net.available_turns(edge);
                choose_turn(&avail, rng).expect("grid interior has no dead ends")
            }
        };
        let target = self.net.next_edge(edge, turn).expect("turn chosen from available set");
        let entry_limit = match self.occupants[target].first() {
            Some(&head) => self.vehicles[head].kin.offset_m - self.cfg.min_gap_m,
            None => f64::INFINITY,
        };
        if entry_limit < 0.0 {
            // blocked: wait at the intersection, keep the drawn turn
            self.vehicles[v].pending_turn = Some(turn);
            self.vehicles[v].kin.offset_m = self.net.block_m();
            self.vehicles[v].kin.speed_mps = 0.0;
            return;
        }
        let entry = overflow.min(entry_limit);
        self.vehicles[v].pending_turn = None;
        self.occupants[edge].remove(li);
        self.occupants[target].insert(0, v);
        self.vehicles[v].kin = VehicleKinematics {
            edge: target,
            offset_m: entry,
            speed_mps: kin.speed_mps,
        };
    }

    /// Trajectory dump rows: `t,vehicle,x,y,speed`.
    pub fn trajectories_csv(&self, t_s: f64) -> String {
        let mut s = String::new();
        for v in 0..self.n() {
            let (x, y) = self.position(v);
            let _ = writeln!(s, "{t_s},{v},{x:.3},{y:.3},{:.3}", self.vehicles[v].kin.speed_mps);
        }
        s
    }
}
