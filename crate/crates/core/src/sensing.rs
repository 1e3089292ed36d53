//! Per-vehicle sensing database over the trailing 1000-subframe window, and
//! the two A-RSSI averaging variants used to rank candidate resources.
//!
//! Averages are computed in the linear (milliwatt) power domain and converted
//! back to dBm. A candidate with no contributing measurement gets
//! [`RSSI_FLOOR_DBM`], which makes never-sensed resources maximally
//! attractive.

use crate::grid::{check_period, GridError, SsrCoord, SUBFRAMES_PER_CYCLE};
use crate::phy::{dbm_to_mw, mw_to_dbm};
use crate::scheduler::Mode;
use crate::sci::{SciMessage, SciTail};
use std::collections::VecDeque;
use std::fmt::Write as _;

/// Length of the sensing window in subframes.
pub const SENSING_WINDOW: usize = 1000;

/// A-RSSI reported when no measurement contributes.
pub const RSSI_FLOOR_DBM: f64 = -120.0;

/// An SCI successfully decoded in a monitored subframe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodedSci {
    pub coord: SsrCoord,
    pub sci: SciMessage,
    pub rsrp_dbm: f64,
}

/// One subframe of sensing history. Unmonitored subframes (the vehicle was
/// transmitting) carry no measurements and no decoded entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SubframeRecord {
    pub monitored: bool,
    pub rssi_dbm: Vec<Option<f64>>,
    pub decoded: Vec<DecodedSci>,
}

/// A reservation recovered from a decoded SCI.
///
/// `rc` is read from the SCI in enhanced mode and estimated as
/// `ceil(100 / rt)` in standard mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodedReservation {
    pub coord: SsrCoord,
    /// Absolute subframe at which the SCI was received.
    pub abs: u64,
    pub rsrp_dbm: f64,
    /// Reservation interval signalled in the SCI, subframes.
    pub rri: u32,
    pub rc: u32,
}

/// Ring buffer of the most recent [`SENSING_WINDOW`] subframes.
#[derive(Debug, Clone)]
pub struct SensingDb {
    sc: u8,
    next_abs: u64,
    records: VecDeque<SubframeRecord>,
}

impl SensingDb {
    pub fn new(sc: u8) -> Self {
        assert!(sc >= 1);
        Self { sc, next_abs: 0, records: VecDeque::with_capacity(SENSING_WINDOW) }
    }

    pub fn sc(&self) -> u8 {
        self.sc
    }

    /// Current time: the window spans `now - len .. now - 1`.
    pub fn now(&self) -> u64 {
        self.next_abs
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Append one subframe, evicting the oldest once the window is full.
    pub fn record_subframe(&mut self, monitored: bool, rssi: &[Option<f64>], decoded: &[DecodedSci]) {
        debug_assert!(monitored || (rssi.is_empty() && decoded.is_empty()));
        debug_assert!(!monitored || rssi.len() == usize::from(self.sc));
        let mut rec = if self.records.len() == SENSING_WINDOW {
            self.records.pop_front().expect("non-empty")
        } else {
            SubframeRecord::default()
        };
        rec.monitored = monitored;
        rec.rssi_dbm.clear();
        rec.decoded.clear();
        if monitored {
            rec.rssi_dbm.extend_from_slice(rssi);
            rec.decoded.extend_from_slice(decoded);
        }
        self.records.push_back(rec);
        self.next_abs += 1;
    }

    /// Record at absolute subframe `abs`, if still inside the window.
    pub fn record_at(&self, abs: u64) -> Option<&SubframeRecord> {
        if abs >= self.next_abs {
            return None;
        }
        let back = self.next_abs - abs;
        if back > self.records.len() as u64 {
            return None;
        }
        self.records.get(self.records.len() - back as usize)
    }

    /// Window records oldest first, with their absolute subframe.
    pub fn window(&self) -> impl Iterator<Item = (u64, &SubframeRecord)> {
        let start = self.next_abs - self.records.len() as u64;
        self.records.iter().enumerate().map(move |(k, r)| (start + k as u64, r))
    }

    /// All reservations decodable from the window.
    pub fn decoded_reservations(&self, mode: Mode, rt: u32) -> Vec<DecodedReservation> {
        assert!(rt > 0);
        let estimate = 100u32.div_ceil(rt);
        let mut out = Vec::new();
        for (abs, rec) in self.window() {
            for d in &rec.decoded {
                debug_assert_eq!(u64::from(d.coord.abs_index()), abs % u64::from(SUBFRAMES_PER_CYCLE));
                let rc = match (mode, d.sci.tail) {
                    (Mode::Enhanced, SciTail::Rc(rc)) => u32::from(rc),
                    _ => estimate,
                };
                out.push(DecodedReservation {
                    coord: d.coord,
                    abs,
                    rsrp_dbm: d.rsrp_dbm,
                    rri: u32::from(d.sci.rri_code) * 10,
                    rc,
                });
            }
        }
        out
    }

    /// Standard A-RSSI: linear mean of the candidate subchannel's RSSI at
    /// monitored window subframes a positive multiple of 100 subframes before
    /// the candidate.
    pub fn a_rssi_standard(&self, candidate: SsrCoord, now: u64) -> f64 {
        let cand_abs = abs_after(now, candidate.abs_index());
        let z = usize::from(candidate.subchannel());
        let start = self.next_abs - self.records.len() as u64;
        let mut sum_mw = 0.0;
        let mut count = 0u32;
        // oldest contribution first, so sums match a window-order fold
        let k_max = if cand_abs > start { (cand_abs - start) / 100 } else { 0 };
        for k in (1..=k_max).rev() {
            let a = cand_abs - 100 * k;
            if a >= now {
                continue;
            }
            let Some(rec) = self.record_at(a) else { continue };
            if rec.monitored {
                if let Some(Some(v)) = rec.rssi_dbm.get(z) {
                    sum_mw += dbm_to_mw(*v);
                    count += 1;
                }
            }
        }
        if count == 0 {
            RSSI_FLOOR_DBM
        } else {
            mw_to_dbm(sum_mw / f64::from(count))
        }
    }

    /// Enhanced A-RSSI: linear mean over the monitored window cells that map
    /// onto the candidate under some positive number of CO hops.
    ///
    /// Hops are bounded by `ceil(1100 / rt)`, which covers the whole
    /// window-plus-selection span; larger hops land outside relevant time.
    /// The candidate must lie in the selection window relative to `now`.
    pub fn a_rssi_enhanced(&self, candidate: SsrCoord, rt: u32, now: u64) -> Result<f64, GridError> {
        check_period(rt)?;
        let _ = now;
        let i_max = 1100u32.div_ceil(rt);
        let z = usize::from(candidate.subchannel());
        let mut sum_mw = 0.0;
        let mut count = 0u32;
        for (abs, rec) in self.window() {
            if !rec.monitored {
                continue;
            }
            let Some(Some(v)) = rec.rssi_dbm.get(z) else { continue };
            let cell = SsrCoord::from_abs(abs, candidate.subchannel());
            for i in 1..=i_max {
                if cell.co_map_unchecked(i, rt) == candidate {
                    sum_mw += dbm_to_mw(*v);
                    count += 1;
                    break;
                }
            }
        }
        Ok(if count == 0 {
            RSSI_FLOOR_DBM
        } else {
            mw_to_dbm(sum_mw / f64::from(count))
        })
    }

    /// CSV dump of the window for debugging: one row per subframe.
    pub fn dump_csv(&self) -> String {
        let mut s = String::new();
        s.push_str("abs,monitored");
        for z in 0..self.sc {
            let _ = write!(s, ",rssi_{z}");
        }
        s.push_str(",decoded\n");
        for (abs, rec) in self.window() {
            let _ = write!(s, "{abs},{}", rec.monitored);
            for z in 0..usize::from(self.sc) {
                match rec.rssi_dbm.get(z).copied().flatten() {
                    Some(v) => {
                        let _ = write!(s, ",{v:.3}");
                    }
                    None => s.push(','),
                }
            }
            s.push(',');
            let summary: Vec<String> = rec
                .decoded
                .iter()
                .map(|d| format!("{}@{:.1}dBm", d.coord, d.rsrp_dbm))
                .collect();
            s.push_str(&summary.join(";"));
            s.push('\n');
        }
        s
    }
}

/// Smallest absolute subframe strictly after `now` whose cyclic index is `idx`.
pub(crate) fn abs_after(now: u64, idx: u32) -> u64 {
    let cycle = u64::from(SUBFRAMES_PER_CYCLE);
    let base = now + 1;
    base + (u64::from(idx) + cycle - base % cycle) % cycle
}

/// Enhanced A-RSSI for a whole candidate set in one forward pass over the
/// window.
///
/// Equivalent to calling [`SensingDb::a_rssi_enhanced`] per candidate
/// (contribution order included) when every candidate lies in the selection
/// window relative to `now`; hops are enumerated only where they can land on
/// a candidate subframe.
pub fn a_rssi_enhanced_batch(
    db: &SensingDb,
    candidates: &[(u64, SsrCoord)],
    rt: u32,
    now: u64,
) -> Result<Vec<f64>, GridError> {
    check_period(rt)?;
    let _ = now;
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let i_max = u64::from(1100u32.div_ceil(rt));
    let rt64 = u64::from(rt);
    let sc = usize::from(db.sc());

    let (mut lo, mut hi) = (u64::MAX, 0u64);
    for (abs, coord) in candidates {
        debug_assert_eq!(u64::from(coord.abs_index()), abs % u64::from(SUBFRAMES_PER_CYCLE));
        lo = lo.min(*abs);
        hi = hi.max(*abs);
    }
    // dense (subframe, subchannel) -> candidate index over the window span
    let mut index = vec![usize::MAX; (hi - lo + 1) as usize * sc];
    for (k, (abs, coord)) in candidates.iter().enumerate() {
        index[(abs - lo) as usize * sc + usize::from(coord.subchannel())] = k;
    }
    let mut acc = vec![(0.0f64, 0u32); candidates.len()];

    for (w_abs, rec) in db.window() {
        if !rec.monitored {
            continue;
        }
        // A hop lands at w_abs + i*rt + drift with drift in [-9, 9]; only
        // hops that can land inside the candidate span need checking.
        let i_from = if lo > w_abs + 9 { (lo - w_abs - 9).div_ceil(rt64) } else { 1 };
        let i_from = i_from.max(1);
        let i_to = ((hi + 9).saturating_sub(w_abs) / rt64).min(i_max);
        if i_from > i_to {
            continue;
        }
        for (z, v) in rec.rssi_dbm.iter().enumerate() {
            let Some(v) = v else { continue };
            let cell = SsrCoord::from_abs(w_abs, z as u8);
            let y0 = i64::from(cell.subframe());
            for i in i_from..=i_to {
                let m = cell.co_map_unchecked(i as u32, rt);
                let m_abs = ((w_abs + i * rt64) as i64 + i64::from(m.subframe()) - y0) as u64;
                if m_abs < lo || m_abs > hi {
                    continue;
                }
                let k = index[(m_abs - lo) as usize * sc + z];
                if k != usize::MAX {
                    debug_assert_eq!(candidates[k].1, m);
                    acc[k].0 += dbm_to_mw(*v);
                    acc[k].1 += 1;
                }
            }
        }
    }

    Ok(acc
        .into_iter()
        .map(|(sum, n)| if n == 0 { RSSI_FLOOR_DBM } else { mw_to_dbm(sum / f64::from(n)) })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sci::{SciFormat, decode_sci, encode_sci};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn sci_with_rc(rc: u8) -> SciMessage {
        let m = SciMessage {
            rri_code: 2,
            frl: 0,
            mcs: 0,
            tx_format: false,
            tail: SciTail::Rc(rc),
        };
        // keep the codec in the loop
        let w = encode_sci(&m, 3, SciFormat::Proposed).unwrap();
        decode_sci(w, 3, SciFormat::Proposed).unwrap()
    }

    fn blank_db(sc: u8, subframes: u64) -> SensingDb {
        let mut db = SensingDb::new(sc);
        let rssi = vec![None; usize::from(sc)];
        for _ in 0..subframes {
            db.record_subframe(true, &rssi, &[]);
        }
        db
    }

    #[test]
    fn ring_keeps_the_last_1000_subframes() {
        let mut db = SensingDb::new(1);
        for k in 0..1001u64 {
            db.record_subframe(true, &[Some(-90.0 - k as f64 * 0.01)], &[]);
        }
        assert_eq!(db.len(), 1000);
        assert_eq!(db.now(), 1001);
        assert!(db.record_at(0).is_none());
        assert!(db.record_at(1).is_some());
        assert!(db.record_at(1000).is_some());
        assert!(db.record_at(1001).is_none());
    }

    #[test]
    fn unmonitored_subframes_carry_nothing() {
        let mut db = SensingDb::new(3);
        db.record_subframe(false, &[], &[]);
        let rec = db.record_at(0).unwrap();
        assert!(!rec.monitored);
        assert!(rec.rssi_dbm.is_empty());
        assert!(rec.decoded.is_empty());
    }

    #[test]
    fn rssi_stored_verbatim() {
        let mut db = SensingDb::new(3);
        let rssi = [Some(-90.0), Some(-95.0), Some(-100.0)];
        db.record_subframe(true, &rssi, &[]);
        let rec = db.record_at(0).unwrap();
        assert_eq!(rec.rssi_dbm, rssi);
    }

    #[test]
    fn decoded_reservations_empty_window() {
        let db = blank_db(3, 10);
        assert!(db.decoded_reservations(Mode::Standard, 20).is_empty());
    }

    #[test]
    fn decoded_reservations_rc_source_depends_on_mode() {
        let mut db = SensingDb::new(3);
        for abs in 0..5u64 {
            let coord = SsrCoord::from_abs(abs, 1);
            let decoded = [DecodedSci { coord, sci: sci_with_rc(42), rsrp_dbm: -80.0 }];
            db.record_subframe(true, &[None, Some(-80.0), None], &decoded);
        }
        let std = db.decoded_reservations(Mode::Standard, 20);
        assert_eq!(std.len(), 5);
        assert!(std.iter().all(|r| r.rc == 5)); // ceil(100/20)
        assert!(std.iter().all(|r| r.rri == 20));
        let enh = db.decoded_reservations(Mode::Enhanced, 20);
        assert!(enh.iter().all(|r| r.rc == 42));
    }

    #[test]
    fn a_rssi_standard_mean_of_constant() {
        // now = 1000, candidate 10 subframes ahead; contributions at
        // 1010-100k for k >= 1, all at -93 dBm.
        let mut db = SensingDb::new(1);
        for _ in 0..1000u64 {
            db.record_subframe(true, &[Some(-93.0)], &[]);
        }
        let cand = SsrCoord::from_abs(1010, 0);
        assert_abs_diff_eq!(db.a_rssi_standard(cand, 1000), -93.0, epsilon = 1e-9);
    }

    #[test]
    fn a_rssi_standard_linear_domain_mean() {
        // Only two window subframes carry a measurement: the ones 100 and 200
        // subframes before the candidate.
        let mut db = SensingDb::new(1);
        let cand_abs = 1010u64;
        for abs in 0..1000u64 {
            let v = if abs == cand_abs - 100 {
                Some(-90.0)
            } else if abs == cand_abs - 200 {
                Some(-100.0)
            } else {
                None
            };
            db.record_subframe(true, &[v], &[]);
        }
        let got = db.a_rssi_standard(SsrCoord::from_abs(cand_abs, 0), 1000);
        let expected = 10.0 * ((10f64.powf(-9.0) + 10f64.powf(-10.0)) / 2.0).log10();
        assert_abs_diff_eq!(got, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(got, -92.6, epsilon = 0.01);
    }

    #[test]
    fn a_rssi_standard_floor_when_own_transmissions_block_all() {
        let mut db = SensingDb::new(1);
        let cand_abs = 1010u64;
        for abs in 0..1000u64 {
            let contributes = abs < cand_abs && (cand_abs - abs).is_multiple_of(100);
            if contributes {
                db.record_subframe(false, &[], &[]);
            } else {
                db.record_subframe(true, &[Some(-90.0)], &[]);
            }
        }
        let got = db.a_rssi_standard(SsrCoord::from_abs(cand_abs, 0), 1000);
        assert_eq!(got, RSSI_FLOOR_DBM);
    }

    #[test]
    fn a_rssi_enhanced_single_mapped_cell() {
        // Window cell (0,5,2) at abs 5; candidate (2,7,2) at abs 27 maps from
        // it at exactly one hop.
        let mut db = SensingDb::new(3);
        for abs in 0..10u64 {
            let v = if abs == 5 { Some(-88.0) } else { None };
            db.record_subframe(true, &[None, None, v], &[]);
        }
        let cand = SsrCoord::new(2, 7, 2).unwrap();
        let got = db.a_rssi_enhanced(cand, 20, 10).unwrap();
        assert_abs_diff_eq!(got, -88.0, epsilon = 1e-12);
        let batch = a_rssi_enhanced_batch(&db, &[(27, cand)], 20, 10).unwrap();
        assert_abs_diff_eq!(batch[0], -88.0, epsilon = 1e-12);
    }

    #[test]
    fn a_rssi_enhanced_ignores_other_subchannels() {
        let mut db = SensingDb::new(3);
        for _ in 0..10u64 {
            db.record_subframe(true, &[None, Some(-70.0), None], &[]);
        }
        let cand = SsrCoord::new(2, 7, 2).unwrap();
        assert_eq!(db.a_rssi_enhanced(cand, 20, 10).unwrap(), RSSI_FLOOR_DBM);
    }

    #[test]
    fn a_rssi_variants_agree_on_subchannel_zero_at_100_spacing() {
        // On subchannel 0 the CO hop keeps the subframe fixed, so when the
        // only measurements sit at 100-subframe spacings both averages see
        // the same contributions.
        let mut db = SensingDb::new(1);
        let cand_abs = 1010u64;
        for abs in 0..1000u64 {
            let v = if abs < cand_abs && (cand_abs - abs).is_multiple_of(100) {
                Some(-85.0 - (abs % 7) as f64)
            } else {
                None
            };
            db.record_subframe(true, &[v], &[]);
        }
        let cand = SsrCoord::from_abs(cand_abs, 0);
        let std = db.a_rssi_standard(cand, 1000);
        let enh = db.a_rssi_enhanced(cand, 20, 1000).unwrap();
        assert_abs_diff_eq!(std, enh, epsilon = 1e-12);
    }

    #[test]
    fn a_rssi_enhanced_rejects_bad_period() {
        let db = blank_db(1, 10);
        assert!(db.a_rssi_enhanced(SsrCoord::from_abs(30, 0), 15, 10).is_err());
    }

    #[test]
    fn dump_csv_has_one_row_per_subframe() {
        let db = blank_db(2, 5);
        let dump = db.dump_csv();
        assert_eq!(dump.lines().count(), 6);
        assert!(dump.starts_with("abs,monitored,rssi_0,rssi_1,decoded"));
    }

    // Brute-force oracle: raw modular arithmetic, no grid helpers.
    fn oracle_enhanced(
        window: &[(u64, bool, Vec<Option<f64>>)],
        cand_abs: u64,
        z: usize,
        rt: u64,
    ) -> f64 {
        let cx = (cand_abs % 10240) / 10;
        let cy = cand_abs % 10;
        let i_max = 1100u64.div_ceil(rt);
        let mut sum = 0.0;
        let mut n = 0u32;
        for (abs, monitored, rssi) in window {
            if !monitored {
                continue;
            }
            let Some(Some(v)) = rssi.get(z) else { continue };
            let x = (abs % 10240) / 10;
            let y = abs % 10;
            for i in 1..=i_max {
                let fx = (x + i * (rt / 10)) % 1024;
                let fy = (y + i * z as u64) % 10;
                if fx == cx && fy == cy {
                    sum += 10f64.powf(v / 10.0);
                    n += 1;
                    break;
                }
            }
        }
        if n == 0 { RSSI_FLOOR_DBM } else { 10.0 * (sum / f64::from(n)).log10() }
    }

    fn oracle_standard(
        window: &[(u64, bool, Vec<Option<f64>>)],
        cand_abs: u64,
        z: usize,
        now: u64,
    ) -> f64 {
        let mut sum = 0.0;
        let mut n = 0u32;
        for (abs, monitored, rssi) in window {
            if !monitored || *abs >= now {
                continue;
            }
            if !(cand_abs - abs).is_multiple_of(100) {
                continue;
            }
            let Some(Some(v)) = rssi.get(z) else { continue };
            sum += 10f64.powf(v / 10.0);
            n += 1;
        }
        if n == 0 { RSSI_FLOOR_DBM } else { 10.0 * (sum / f64::from(n)).log10() }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn a_rssi_matches_brute_force_oracle(
            seed_rows in proptest::collection::vec(
                (proptest::bool::ANY, proptest::collection::vec(proptest::option::of(-110.0f64..-60.0), 3)),
                180..220,
            ),
            t_off in 4u64..20,
            z in 0u8..3,
            rt_tens in 1u32..4,
        ) {
            let rt = rt_tens * 10 * 2; // 20, 40, 60
            let mut db = SensingDb::new(3);
            let mut window = Vec::new();
            for (abs, (mon, rssi)) in seed_rows.iter().enumerate() {
                if *mon {
                    db.record_subframe(true, rssi, &[]);
                    window.push((abs as u64, true, rssi.clone()));
                } else {
                    db.record_subframe(false, &[], &[]);
                    window.push((abs as u64, false, Vec::new()));
                }
            }
            let now = db.now();
            let cand_abs = now + t_off;
            let cand = SsrCoord::from_abs(cand_abs, z);

            let got_enh = db.a_rssi_enhanced(cand, rt, now).unwrap();
            let want_enh = oracle_enhanced(&window, cand_abs, usize::from(z), u64::from(rt));
            prop_assert_eq!(got_enh, want_enh);

            let got_std = db.a_rssi_standard(cand, now);
            let want_std = oracle_standard(&window, cand_abs, usize::from(z), now);
            prop_assert_eq!(got_std, want_std);

            let batch = a_rssi_enhanced_batch(&db, &[(cand_abs, cand)], rt, now).unwrap();
            prop_assert_eq!(batch[0], got_enh);
        }

        // At most one window cell per CO hop can map onto a candidate.
        #[test]
        fn contribution_count_bounded(
            fill in proptest::collection::vec(-100.0f64..-60.0, 1000),
            t_off in 4u64..20,
            z in 0u8..3,
        ) {
            let rt = 20u32;
            let mut db = SensingDb::new(3);
            for v in &fill {
                db.record_subframe(true, &[Some(*v), Some(*v), Some(*v)], &[]);
            }
            let now = db.now();
            let cand_abs = now + t_off;
            let cand = SsrCoord::from_abs(cand_abs, z);
            // count contributions through the oracle membership rule
            let mut count = 0u32;
            for (abs, _) in db.window() {
                let cell = SsrCoord::from_abs(abs, z);
                for i in 1..=1100u32.div_ceil(rt) {
                    if cell.co_map_unchecked(i, rt) == cand {
                        count += 1;
                        break;
                    }
                }
            }
            prop_assert!(count <= 1100 / rt + 1);
        }

        // Raising any contributing RSSI never lowers either average.
        #[test]
        fn a_rssi_monotone_in_contributions(
            fill in proptest::collection::vec(-110.0f64..-70.0, 200),
            bump_at in 0usize..200,
            bump in 1.0f64..20.0,
            t_off in 4u64..20,
            z in 0u8..3,
        ) {
            let mut base = SensingDb::new(3);
            let mut bumped = SensingDb::new(3);
            for (k, v) in fill.iter().enumerate() {
                let w = if k == bump_at { v + bump } else { *v };
                base.record_subframe(true, &[Some(*v); 3], &[]);
                bumped.record_subframe(true, &[Some(w); 3], &[]);
            }
            let now = base.now();
            let cand = SsrCoord::from_abs(now + t_off, z);
            prop_assert!(bumped.a_rssi_enhanced(cand, 20, now).unwrap()
                >= base.a_rssi_enhanced(cand, 20, now).unwrap() - 1e-12);
            prop_assert!(bumped.a_rssi_standard(cand, now)
                >= base.a_rssi_standard(cand, now) - 1e-12);
        }
    }
}
