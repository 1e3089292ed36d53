//! Packet delivery ratio and system-AoI accounting.
//!
//! PDR uses cumulative distance semantics: a receiver counts under every
//! bound `d` at or above its distance from the sender. The system-AoI metric
//! is the percentage of periodic freshness checks, over ordered in-range
//! vehicle pairs, at which the age of the freshest received information
//! exceeds a threshold; pairs that never received anything count as exceeding
//! every threshold.

use std::fmt::Write as _;

/// Freshest successfully received generation timestamp per (receiver, sender).
#[derive(Debug, Clone)]
pub struct AoiTable {
    n: usize,
    gen_ts: Vec<Option<u64>>,
}

impl AoiTable {
    pub fn new(n: usize) -> Self {
        Self { n, gen_ts: vec![None; n * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, receiver: usize, sender: usize) -> Option<u64> {
        self.gen_ts[receiver * self.n + sender]
    }

    /// Record a successful reception; timestamps only ever advance.
    pub fn update_aoi(&mut self, receiver: usize, sender: usize, generation_ts: u64) {
        let slot = &mut self.gen_ts[receiver * self.n + sender];
        *slot = Some(slot.map_or(generation_ts, |t| t.max(generation_ts)));
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct PdrCell {
    success: u64,
    total: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct AoisCell {
    exceed: u64,
    checks: u64,
}

/// Counters behind PDR(d) and AoIS(aoi_th, d).
#[derive(Debug, Clone)]
pub struct MetricsAccumulator {
    d_list: Vec<f64>,
    aoi_th_list: Vec<u64>,
    pdr: Vec<PdrCell>,
    aois: Vec<AoisCell>,
}

/// One row of the final report; percentages are absent when the
/// corresponding denominator stayed zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub d: f64,
    pub aoi_th: u64,
    pub pdr_pct: Option<f64>,
    pub aois_pct: Option<f64>,
}

impl MetricsAccumulator {
    pub fn new(d_list: &[f64], aoi_th_list: &[u64]) -> Self {
        assert!(!d_list.is_empty() && !aoi_th_list.is_empty());
        assert!(d_list.windows(2).all(|w| w[0] < w[1]), "d_list must ascend");
        assert!(aoi_th_list.windows(2).all(|w| w[0] < w[1]), "aoi_th_list must ascend");
        Self {
            d_list: d_list.to_vec(),
            aoi_th_list: aoi_th_list.to_vec(),
            pdr: vec![PdrCell::default(); d_list.len()],
            aois: vec![AoisCell::default(); d_list.len() * aoi_th_list.len()],
        }
    }

    pub fn d_list(&self) -> &[f64] {
        &self.d_list
    }

    pub fn aoi_th_list(&self) -> &[u64] {
        &self.aoi_th_list
    }

    /// Count one transmission toward PDR under every distance bound that
    /// covers each receiver.
    pub fn record_transmission(&mut self, sender: usize, receivers: &[(usize, f64, bool)]) {
        for &(receiver, distance, decoded) in receivers {
            debug_assert_ne!(receiver, sender);
            for (di, &d) in self.d_list.iter().enumerate() {
                if distance <= d {
                    self.pdr[di].total += 1;
                    if decoded {
                        self.pdr[di].success += 1;
                    }
                }
            }
        }
    }

    /// Periodic freshness check over all ordered in-range pairs.
    pub fn aoi_check(&mut self, table: &AoiTable, positions: &[(f64, f64)], now: u64) {
        let n = table.n();
        debug_assert_eq!(positions.len(), n);
        let n_th = self.aoi_th_list.len();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let (ix, iy) = positions[i];
                let (jx, jy) = positions[j];
                let dist = ((ix - jx).powi(2) + (iy - jy).powi(2)).sqrt();
                let aoi = table.get(i, j).map(|g| now.saturating_sub(g));
                for (di, &d) in self.d_list.iter().enumerate() {
                    if dist > d {
                        continue;
                    }
                    for (ti, &th) in self.aoi_th_list.iter().enumerate() {
                        let cell = &mut self.aois[di * n_th + ti];
                        cell.checks += 1;
                        // "never received" is infinitely stale
                        if aoi.is_none_or(|a| a > th) {
                            cell.exceed += 1;
                        }
                    }
                }
            }
        }
    }

    pub fn pdr_counts(&self, d_index: usize) -> (u64, u64) {
        (self.pdr[d_index].success, self.pdr[d_index].total)
    }

    pub fn aois_counts(&self, d_index: usize, th_index: usize) -> (u64, u64) {
        let c = self.aois[d_index * self.aoi_th_list.len() + th_index];
        (c.exceed, c.checks)
    }

    /// Final percentages, one row per (d, aoi_th), ascending.
    pub fn report(&self) -> Vec<ReportRow> {
        let mut rows = Vec::with_capacity(self.aois.len());
        for (di, &d) in self.d_list.iter().enumerate() {
            let pdr = self.pdr[di];
            let pdr_pct = (pdr.total > 0).then(|| 100.0 * pdr.success as f64 / pdr.total as f64);
            for (ti, &aoi_th) in self.aoi_th_list.iter().enumerate() {
                let c = self.aois[di * self.aoi_th_list.len() + ti];
                let aois_pct = (c.checks > 0).then(|| 100.0 * c.exceed as f64 / c.checks as f64);
                rows.push(ReportRow { d, aoi_th, pdr_pct, aois_pct });
            }
        }
        rows
    }
}

/// Render report rows as CSV lines (no header) with stable formatting.
pub fn csv_rows(
    rows: &[ReportRow],
    run_id: &str,
    seed: u64,
    n_vehicles: usize,
    mode: &str,
) -> String {
    let mut s = String::new();
    for r in rows {
        let pdr = r.pdr_pct.map(|v| format!("{v:.6}")).unwrap_or_default();
        let aois = r.aois_pct.map(|v| format!("{v:.6}")).unwrap_or_default();
        let _ = writeln!(
            s,
            "{run_id},{seed},{n_vehicles},{mode},{},{},{pdr},{aois}",
            r.d, r.aoi_th
        );
    }
    s
}
