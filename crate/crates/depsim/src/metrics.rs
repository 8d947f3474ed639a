//! Metric collection and deterministic CSV export.

use std::collections::BTreeMap;
use std::io::{self, Write};

use crate::engine::{fmt_sig9, SimTime};

/// Counters and time series, keyed by metric name and component id.
/// Windowed metrics accumulate raw timestamped increments; aggregation into
/// fixed windows happens at export time so no flush events perturb the run.
#[derive(Default)]
pub struct MetricsStore {
    pub counters: BTreeMap<(String, String), f64>,
    windowed: BTreeMap<(String, String), Vec<(SimTime, f64)>>,
    pub window_s: f64,
}

impl MetricsStore {
    pub fn new(window_s: f64) -> MetricsStore {
        MetricsStore {
            window_s,
            ..Default::default()
        }
    }

    pub fn add(&mut self, metric: &str, component: &str, delta: f64) {
        *self
            .counters
            .entry((metric.to_string(), component.to_string()))
            .or_insert(0.0) += delta;
    }

    pub fn counter(&self, metric: &str, component: &str) -> f64 {
        self.counters
            .get(&(metric.to_string(), component.to_string()))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn counter_total(&self, metric: &str) -> f64 {
        self.counters
            .iter()
            .filter(|((m, _), _)| m == metric)
            .map(|(_, v)| v)
            .sum()
    }

    /// Records a timestamped increment for a windowed series.
    pub fn sample(&mut self, metric: &str, component: &str, t: SimTime, value: f64) {
        self.windowed
            .entry((metric.to_string(), component.to_string()))
            .or_default()
            .push((t, value));
    }

    /// Aggregates a windowed metric into per-window sums over [0, horizon).
    /// Every complete window is emitted (zeros included) for any pair that
    /// has at least one sample. `throughput_bps` is derived from the raw
    /// `received_bytes` samples.
    pub fn series(&self, horizon: f64) -> Vec<SeriesRow> {
        let w = self.window_s;
        let n_windows = (horizon / w).floor() as usize;
        let mut out = Vec::new();
        for ((metric, comp), samples) in &self.windowed {
            let mut sums = vec![0.0f64; n_windows];
            for (t, v) in samples {
                let idx = (t.seconds() / w).floor() as usize;
                if idx < n_windows {
                    sums[idx] += v;
                }
            }
            let (name, scale) = if metric == "received_bytes" {
                ("throughput_bps".to_string(), 8.0 / w)
            } else {
                (metric.clone(), 1.0)
            };
            for (i, s) in sums.iter().enumerate() {
                out.push(SeriesRow {
                    time: SimTime::new(i as f64 * w),
                    metric: name.clone(),
                    component: comp.clone(),
                    value: s * scale,
                });
            }
        }
        // Deterministic order: time, metric, component.
        out.sort_by(|a, b| {
            (a.time, &a.metric, &a.component).cmp(&(b.time, &b.metric, &b.component))
        });
        out
    }

    /// Per-window values of one series for one component, in window order.
    pub fn window_values(&self, metric: &str, component: &str, horizon: f64) -> Vec<(f64, f64)> {
        self.series(horizon)
            .into_iter()
            .filter(|r| r.metric == metric && r.component == component)
            .map(|r| (r.time.seconds(), r.value))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct SeriesRow {
    pub time: SimTime,
    pub metric: String,
    pub component: String,
    pub value: f64,
}

/// Headline numbers of one simulation run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub run_id: String,
    pub seed: u64,
    pub horizon: f64,
    pub submitted: u64,
    pub finished: u64,
    pub failed: u64,
    pub rescheduled: u64,
    pub lost_bytes: f64,
    pub mean_transfer_time: f64,
    pub attacks_detected: u64,
}

pub fn write_metrics_csv<W: Write>(
    w: &mut W,
    run_id: &str,
    seed: u64,
    metrics: &MetricsStore,
    horizon: f64,
) -> io::Result<()> {
    w.write_all(b"run_id,seed,time,metric,component,value\n")?;
    let mut counters: Vec<_> = metrics.counters.iter().collect();
    counters.sort_by_key(|((m, c), _)| (m.clone(), c.clone()));
    for ((metric, comp), value) in counters {
        writeln!(
            w,
            "{run_id},{seed},{},{metric},{comp},{}",
            fmt_sig9(horizon),
            fmt_sig9(*value)
        )?;
    }
    for r in metrics.series(horizon) {
        writeln!(
            w,
            "{run_id},{seed},{},{},{},{}",
            fmt_sig9(r.time.seconds()),
            r.metric,
            r.component,
            fmt_sig9(r.value)
        )?;
    }
    Ok(())
}

pub fn write_report_csv<W: Write>(w: &mut W, r: &RunReport) -> io::Result<()> {
    w.write_all(
        b"run_id,seed,horizon,submitted,finished,failed,rescheduled,lost_bytes,mean_transfer_time,attacks_detected\n",
    )?;
    writeln!(
        w,
        "{},{},{},{},{},{},{},{},{},{}",
        r.run_id,
        r.seed,
        fmt_sig9(r.horizon),
        r.submitted,
        r.finished,
        r.failed,
        r.rescheduled,
        fmt_sig9(r.lost_bytes),
        fmt_sig9(r.mean_transfer_time),
        r.attacks_detected
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_aggregate_and_scale() {
        let mut m = MetricsStore::new(1.0);
        m.sample("connections_received", "db1", SimTime::new(0.2), 1.0);
        m.sample("connections_received", "db1", SimTime::new(0.9), 1.0);
        m.sample("connections_received", "db1", SimTime::new(1.5), 1.0);
        m.sample("received_bytes", "db1", SimTime::new(0.5), 1000.0);
        let conns = m.window_values("connections_received", "db1", 3.0);
        assert_eq!(
            conns,
            vec![(0.0, 2.0), (1.0, 1.0), (2.0, 0.0)],
            "sums per window, zeros emitted"
        );
        let tput = m.window_values("throughput_bps", "db1", 3.0);
        assert_eq!(tput[0], (0.0, 8000.0));
    }

    #[test]
    fn empty_metrics_export_header_only() {
        let m = MetricsStore::new(1.0);
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, "r", 1, &m, 10.0).unwrap();
        assert_eq!(buf, b"run_id,seed,time,metric,component,value\n");
    }
}
