//! KPI accumulation and CSV export.
//!
//! Four headline KPIs come out of every run: access probability, holding
//! probability, mean user goodput and the SINR distribution. The mean
//! `|HM - f0|` deviation and per-cell mean loads are kept as diagnostics.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::Policy;
use crate::error::{Error, Result};

/// Quantile grid written to SINR CDF tables.
pub fn default_quantiles() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsAccumulator {
    pub attempts: u64,
    pub admitted: u64,
    pub blocked_coverage: u64,
    pub blocked_resource: u64,
    pub dropped: u64,
    pub completed: u64,
    pub handovers: u64,
    /// Goodput of completed sessions, bytes/s.
    pub throughput_samples: Vec<f64>,
    pub sinr_samples_db: Vec<f64>,
    /// Smoothed load of each cell, one entry per recorded snapshot.
    pub load_series: Vec<Vec<f64>>,
    /// Mean `|HM - f0|` over adjacent pairs, one entry per recorded snapshot.
    pub hm_deviation_series: Vec<f64>,
}

impl MetricsAccumulator {
    pub fn new(n_cells: usize) -> Self {
        Self {
            load_series: vec![Vec::new(); n_cells],
            ..Default::default()
        }
    }

    pub fn report(&self, quantiles: &[f64]) -> MetricsReport {
        let cdf = sinr_cdf(self, quantiles).unwrap_or_default();
        MetricsReport {
            attempts: self.attempts,
            admitted: self.admitted,
            blocked_coverage: self.blocked_coverage,
            blocked_resource: self.blocked_resource,
            dropped: self.dropped,
            completed: self.completed,
            handovers: self.handovers,
            access_probability: access_probability(self),
            holding_probability: holding_probability(self),
            mean_user_throughput: mean_user_throughput(self),
            median_sinr_db: sinr_cdf(self, &[0.5]).map(|v| v[0]),
            mean_abs_hm_deviation: mean(&self.hm_deviation_series),
            sinr_cdf: quantiles
                .iter()
                .zip(cdf)
                .map(|(&quantile, db)| CdfPoint { quantile, db })
                .collect(),
            per_cell_mean_load: self
                .load_series
                .iter()
                .map(|s| mean(s).unwrap_or(0.0))
                .collect(),
        }
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// `admitted / attempts`; `None` without attempts.
pub fn access_probability(acc: &MetricsAccumulator) -> Option<f64> {
    (acc.attempts > 0).then(|| acc.admitted as f64 / acc.attempts as f64)
}

/// `1 - dropped / admitted`; `None` without admissions.
pub fn holding_probability(acc: &MetricsAccumulator) -> Option<f64> {
    (acc.admitted > 0).then(|| 1.0 - acc.dropped as f64 / acc.admitted as f64)
}

/// Mean of `file_size / duration` over completed sessions, bytes/s.
pub fn mean_user_throughput(acc: &MetricsAccumulator) -> Option<f64> {
    mean(&acc.throughput_samples)
}

/// Empirical SINR quantiles in dB, linearly interpolated between order
/// statistics.
pub fn sinr_cdf(acc: &MetricsAccumulator, quantiles: &[f64]) -> Option<Vec<f64>> {
    if acc.sinr_samples_db.is_empty() {
        return None;
    }
    let mut sorted = acc.sinr_samples_db.clone();
    sorted.sort_by(f64::total_cmp);
    Some(quantiles.iter().map(|&q| quantile_sorted(&sorted, q)).collect())
}

pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub quantile: f64,
    pub db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub attempts: u64,
    pub admitted: u64,
    pub blocked_coverage: u64,
    pub blocked_resource: u64,
    pub dropped: u64,
    pub completed: u64,
    pub handovers: u64,
    pub access_probability: Option<f64>,
    pub holding_probability: Option<f64>,
    /// bytes/s.
    pub mean_user_throughput: Option<f64>,
    pub median_sinr_db: Option<f64>,
    pub mean_abs_hm_deviation: Option<f64>,
    pub sinr_cdf: Vec<CdfPoint>,
    pub per_cell_mean_load: Vec<f64>,
}

/// One row of the sweep summary. Column order is part of the file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub lambda: f64,
    pub policy: Policy,
    pub seed: u64,
    pub access_prob: Option<f64>,
    pub holding_prob: Option<f64>,
    /// bytes/s.
    pub mean_throughput: Option<f64>,
    pub median_sinr_db: Option<f64>,
    pub mean_abs_hm_deviation: Option<f64>,
}

impl SummaryRow {
    pub fn from_report(lambda: f64, policy: Policy, seed: u64, report: &MetricsReport) -> Self {
        Self {
            lambda,
            policy,
            seed,
            access_prob: report.access_probability,
            holding_prob: report.holding_probability,
            mean_throughput: report.mean_user_throughput,
            median_sinr_db: report.median_sinr_db,
            mean_abs_hm_deviation: report.mean_abs_hm_deviation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CounterRow {
    attempts: u64,
    admitted: u64,
    blocked_coverage: u64,
    blocked_resource: u64,
    dropped: u64,
    completed: u64,
    handovers: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CellLoadRow {
    cell: usize,
    mean_load: f64,
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    // A header is only emitted alongside the first record.
    if rows.is_empty() {
        w.write_record([
            "lambda",
            "policy",
            "seed",
            "access_prob",
            "holding_prob",
            "mean_throughput",
            "median_sinr_db",
            "mean_abs_hm_deviation",
        ])?;
    }
    w.flush().map_err(|e| Error::io("<summary csv>", e))?;
    Ok(())
}

pub fn read_summary_csv<R: Read>(input: R) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_cdf_csv<W: Write>(cdf: &[CdfPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in cdf {
        w.serialize(p)?;
    }
    if cdf.is_empty() {
        w.write_record(["quantile", "db"])?;
    }
    w.flush().map_err(|e| Error::io("<cdf csv>", e))?;
    Ok(())
}

pub fn read_cdf_csv<R: Read>(input: R) -> Result<Vec<CdfPoint>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| Error::io(path, e))
}

pub const SUMMARY_FILE: &str = "summary.csv";
pub const COUNTERS_FILE: &str = "counters.csv";
pub const SINR_CDF_FILE: &str = "sinr_cdf.csv";
pub const CELL_LOADS_FILE: &str = "cell_loads.csv";

/// Writes a run's report as `summary.csv`, `counters.csv`, `sinr_cdf.csv`
/// and `cell_loads.csv` inside `dir`.
pub fn write_run_report(dir: &Path, summary: &SummaryRow, report: &MetricsReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_summary_csv(std::slice::from_ref(summary), create(&dir.join(SUMMARY_FILE))?)?;

    let mut w = csv::Writer::from_writer(create(&dir.join(COUNTERS_FILE))?);
    w.serialize(CounterRow {
        attempts: report.attempts,
        admitted: report.admitted,
        blocked_coverage: report.blocked_coverage,
        blocked_resource: report.blocked_resource,
        dropped: report.dropped,
        completed: report.completed,
        handovers: report.handovers,
    })?;
    w.flush().map_err(|e| Error::io(dir, e))?;

    write_cdf_csv(&report.sinr_cdf, create(&dir.join(SINR_CDF_FILE))?)?;

    let mut w = csv::Writer::from_writer(create(&dir.join(CELL_LOADS_FILE))?);
    for (cell, &mean_load) in report.per_cell_mean_load.iter().enumerate() {
        w.serialize(CellLoadRow { cell, mean_load })?;
    }
    if report.per_cell_mean_load.is_empty() {
        w.write_record(["cell", "mean_load"])?;
    }
    w.flush().map_err(|e| Error::io(dir, e))?;
    Ok(())
}

/// Inverse of [`write_run_report`].
pub fn read_run_report(dir: &Path) -> Result<(SummaryRow, MetricsReport)> {
    let summary = read_summary_csv(open(&dir.join(SUMMARY_FILE))?)?
        .pop()
        .ok_or_else(|| Error::validation(SUMMARY_FILE, "no rows"))?;
    let counters: CounterRow = csv::Reader::from_reader(open(&dir.join(COUNTERS_FILE))?)
        .deserialize()
        .next()
        .ok_or_else(|| Error::validation(COUNTERS_FILE, "no rows"))??;
    let sinr_cdf = read_cdf_csv(open(&dir.join(SINR_CDF_FILE))?)?;
    let per_cell_mean_load = csv::Reader::from_reader(open(&dir.join(CELL_LOADS_FILE))?)
        .deserialize::<CellLoadRow>()
        .map(|r| r.map(|r| r.mean_load).map_err(Error::from))
        .collect::<Result<Vec<_>>>()?;
    let report = MetricsReport {
        attempts: counters.attempts,
        admitted: counters.admitted,
        blocked_coverage: counters.blocked_coverage,
        blocked_resource: counters.blocked_resource,
        dropped: counters.dropped,
        completed: counters.completed,
        handovers: counters.handovers,
        access_probability: summary.access_prob,
        holding_probability: summary.holding_prob,
        mean_user_throughput: summary.mean_throughput,
        median_sinr_db: summary.median_sinr_db,
        mean_abs_hm_deviation: summary.mean_abs_hm_deviation,
        sinr_cdf,
        per_cell_mean_load,
    };
    Ok((summary, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn access_probability_cases() {
        let mut acc = MetricsAccumulator::new(0);
        assert_eq!(access_probability(&acc), None);
        acc.attempts = 100;
        acc.admitted = 95;
        assert_eq!(access_probability(&acc), Some(0.95));
        acc.admitted = 100;
        assert_eq!(access_probability(&acc), Some(1.0));
        acc.admitted = 0;
        assert_eq!(access_probability(&acc), Some(0.0));
    }

    #[test]
    fn holding_probability_cases() {
        let mut acc = MetricsAccumulator::new(0);
        assert_eq!(holding_probability(&acc), None);
        acc.admitted = 200;
        assert_eq!(holding_probability(&acc), Some(1.0));
        acc.dropped = 2;
        assert_eq!(holding_probability(&acc), Some(0.99));
        acc.dropped = 200;
        assert_eq!(holding_probability(&acc), Some(0.0));
    }

    #[test]
    fn throughput_mean() {
        let mut acc = MetricsAccumulator::new(0);
        assert_eq!(mean_user_throughput(&acc), None);
        acc.throughput_samples.push(5.0e6 / 5.0);
        assert_eq!(mean_user_throughput(&acc), Some(1.0e6));
        acc.throughput_samples = vec![7.5e5; 9];
        assert_eq!(mean_user_throughput(&acc), Some(7.5e5));
    }

    #[test]
    fn sinr_quantiles() {
        let mut acc = MetricsAccumulator::new(0);
        assert_eq!(sinr_cdf(&acc, &[0.5]), None);
        acc.sinr_samples_db = vec![3.0; 7];
        assert_eq!(sinr_cdf(&acc, &[0.0, 0.3, 1.0]), Some(vec![3.0; 3]));
        acc.sinr_samples_db = vec![10.0, 0.0];
        assert_eq!(sinr_cdf(&acc, &[0.5]), Some(vec![5.0]));
    }

    fn sample_report() -> MetricsReport {
        let mut acc = MetricsAccumulator::new(2);
        acc.attempts = 10;
        acc.admitted = 9;
        acc.blocked_resource = 1;
        acc.completed = 8;
        acc.handovers = 4;
        acc.throughput_samples = vec![1.0e5 / 3.0, 2.5e5];
        acc.sinr_samples_db = vec![-1.25, 7.0, 12.125, 0.1];
        acc.load_series = vec![vec![0.1, 0.2], vec![0.7, 0.9]];
        acc.hm_deviation_series = vec![0.5, 1.0 / 3.0];
        acc.report(&default_quantiles())
    }

    #[test]
    fn run_report_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let report = sample_report();
        let row = SummaryRow::from_report(4.5, Policy::AutoTuned, 3, &report);
        write_run_report(dir.path(), &row, &report).unwrap();
        let (row_back, report_back) = read_run_report(dir.path()).unwrap();
        assert_eq!(row, row_back);
        assert_eq!(report, report_back);
    }

    #[test]
    fn absent_values_survive_csv() {
        let report = MetricsAccumulator::new(1).report(&default_quantiles());
        let row = SummaryRow::from_report(0.0, Policy::FixedMargin, 0, &report);
        let mut buf = Vec::new();
        write_summary_csv(std::slice::from_ref(&row), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "lambda,policy,seed,access_prob,holding_prob,mean_throughput,median_sinr_db,mean_abs_hm_deviation\n"
        ));
        assert!(text.contains("0.0,fixed,0,,,,,"));
        assert_eq!(read_summary_csv(buf.as_slice()).unwrap(), vec![row]);
    }

    proptest! {
        #[test]
        fn cdf_is_monotone(samples in proptest::collection::vec(-20.0f64..40.0, 1..200)) {
            let acc = MetricsAccumulator { sinr_samples_db: samples, ..Default::default() };
            let values = sinr_cdf(&acc, &default_quantiles()).unwrap();
            prop_assert!(values.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn summary_csv_round_trip(
            lambda in 0.0f64..20.0,
            seed in 0u64..1000,
            access in proptest::option::of(0.0f64..=1.0),
            thr in proptest::option::of(0.0f64..1e7),
            sinr in proptest::option::of(-30.0f64..60.0),
        ) {
            let row = SummaryRow {
                lambda,
                policy: Policy::AutoTuned,
                seed,
                access_prob: access,
                holding_prob: access,
                mean_throughput: thr,
                median_sinr_db: sinr,
                mean_abs_hm_deviation: thr.map(|t| t / 1e7),
            };
            let mut buf = Vec::new();
            write_summary_csv(std::slice::from_ref(&row), &mut buf).unwrap();
            prop_assert_eq!(read_summary_csv(buf.as_slice()).unwrap(), vec![row]);
        }
    }
}
