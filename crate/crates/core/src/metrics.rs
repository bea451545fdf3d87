//! Run metrics over traces.
//!
//! Path length is summed over the raw centroid. Speed, acceleration and
//! jerk come from successive finite differences of the centroid after a
//! centered moving average (`valid` mode, no padding). Area error is
//! `|area(t) − default area|` over the outline polygon.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{centroid, Vec3};
use crate::scalar::Real;
use crate::tactile::outline_area;
use crate::trace::{EventKind, TraceEvent, TraceLog, SMOOTHING_WINDOW};

pub const DEFAULT_HORIZON_MS: f64 = 3300.0;
pub const DEFAULT_BIN_MS: f64 = 300.0;

/// Header written with every metrics report.
pub const REPORT_NOTE: &str = "Pipeline output only. Path lengths, speeds and area errors depend on \
the operator's hand motion; no published number is a reproduction target.";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("trace has {0} rows; at least 3 are required")]
    ShortTrace(usize),
}

/// Moving average over `window` samples, output length `n − window + 1`.
pub fn moving_average<T: Real>(points: &[Vec3<T>], window: usize) -> Vec<Vec3<T>> {
    if window == 0 || points.len() < window {
        return Vec::new();
    }
    let w = T::from_usize(window).expect("window fits");
    points
        .windows(window)
        .map(|win| win.iter().fold(Vec3::zero(), |acc, p| acc + *p) / w)
        .collect()
}

/// Forward differences divided by `dt`.
pub fn finite_difference<T: Real>(points: &[Vec3<T>], dt: T) -> Vec<Vec3<T>> {
    points.windows(2).map(|w| (w[1] - w[0]) / dt).collect()
}

pub fn path_length<T: Real>(points: &[Vec3<T>]) -> T {
    points
        .windows(2)
        .fold(T::zero(), |acc, w| acc + (w[1] - w[0]).norm())
}

fn mean_norm<T: Real>(v: &[Vec3<T>]) -> T {
    if v.is_empty() {
        return T::zero();
    }
    let sum = v.iter().fold(T::zero(), |acc, p| acc + p.norm());
    sum / T::from_usize(v.len()).expect("length fits")
}

/// Mean, population standard deviation and maximum.
fn summary(values: &[f64]) -> (f64, f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let max = values.iter().copied().fold(0.0, f64::max);
    (mean, var.sqrt(), max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Centroid path length, m.
    pub path_length: f64,
    /// Mean centroid speed, m/s.
    pub mean_speed: f64,
    /// Mean centroid acceleration magnitude, m/s².
    pub mean_acceleration: f64,
    /// Mean centroid jerk magnitude, m/s³.
    pub mean_jerk: f64,
    /// Area error statistics, m²; `None` for formations without an area.
    pub area_error_mean: Option<f64>,
    pub area_error_std: Option<f64>,
    pub area_error_max: Option<f64>,
    /// Samples averaged before differentiation.
    pub smoothing_window: usize,
    pub rows: usize,
}

/// Smoothing window actually usable for `n` rows.
fn effective_window(n: usize) -> usize {
    if n >= SMOOTHING_WINDOW + 3 {
        SMOOTHING_WINDOW
    } else {
        1
    }
}

pub fn area_errors(trace: &TraceLog) -> Option<Vec<f64>> {
    let default = trace.meta.default_area?;
    Some(
        trace
            .rows
            .iter()
            .map(|r| (outline_area(&r.positions, &trace.meta.outline) - default).abs())
            .collect(),
    )
}

pub fn compute_run_metrics(trace: &TraceLog) -> Result<RunMetrics, MetricsError> {
    let n = trace.rows.len();
    if n < 3 {
        return Err(MetricsError::ShortTrace(n));
    }
    let dt = trace.meta.sample_time;
    let raw: Vec<Vec3<f64>> = trace.rows.iter().map(|r| centroid(&r.positions)).collect();
    let window = effective_window(n);
    let smooth = moving_average(&raw, window);
    let vel = finite_difference(&smooth, dt);
    let acc = finite_difference(&vel, dt);
    let jerk = finite_difference(&acc, dt);
    let area = area_errors(trace).map(|e| summary(&e));
    Ok(RunMetrics {
        path_length: path_length(&raw),
        mean_speed: mean_norm(&vel),
        mean_acceleration: mean_norm(&acc),
        mean_jerk: mean_norm(&jerk),
        area_error_mean: area.map(|a| a.0),
        area_error_std: area.map(|a| a.1),
        area_error_max: area.map(|a| a.2),
        smoothing_window: window,
        rows: n,
    })
}

/// Metrics with the provenance header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub note: String,
    pub scenario: String,
    pub scenario_hash: String,
    pub sample_time: f64,
    pub metrics: RunMetrics,
}

impl MetricsReport {
    pub fn new(trace: &TraceLog) -> Result<Self, MetricsError> {
        Ok(Self {
            note: REPORT_NOTE.to_string(),
            scenario: trace.meta.scenario.clone(),
            scenario_hash: trace.meta.scenario_hash.clone(),
            sample_time: trace.meta.sample_time,
            metrics: compute_run_metrics(trace)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveBin {
    /// Bin end relative to pattern start, ms.
    pub end_ms: f64,
    /// Events whose trace covers this bin.
    pub events: usize,
    pub correct: usize,
    /// `correct / events`, or 0 when no event covers the bin.
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactionCurve {
    pub horizon_ms: f64,
    pub bin_ms: f64,
    pub bins: Vec<CurveBin>,
}

impl ReactionCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("end_ms,events,correct,fraction\n");
        for b in &self.bins {
            writeln!(out, "{},{},{},{}", b.end_ms, b.events, b.correct, b.fraction).expect("write to string");
        }
        out
    }
}

/// Fraction of pattern events followed by a correction, per time bin.
///
/// An event counts as corrected at a bin end when the area error is below
/// its value at pattern start and the lateral offset magnitude is below its
/// value at pattern start. Without pattern events the curve is empty.
pub fn reaction_correctness(trace: &TraceLog, events: &[TraceEvent], horizon_ms: f64, bin_ms: f64) -> ReactionCurve {
    let starts: Vec<u64> = events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::PatternStart { .. }))
        .map(|e| e.tick)
        .collect();
    let mut curve = ReactionCurve {
        horizon_ms,
        bin_ms,
        bins: Vec::new(),
    };
    if starts.is_empty() || !(bin_ms > 0.0) || trace.rows.is_empty() {
        return curve;
    }
    let dt = trace.meta.sample_time;
    let first_tick = trace.rows[0].tick;
    let area = area_errors(trace);
    let row_of = |tick: u64| -> Option<usize> {
        let i = usize::try_from(tick.checked_sub(first_tick)?).ok()?;
        (i < trace.rows.len()).then_some(i)
    };
    let lateral = |i: usize| trace.rows[i].com_offset.map(f64::abs);
    let n_bins = (horizon_ms / bin_ms + 1e-9).floor() as usize;
    for b in 0..n_bins {
        let end_ms = (b + 1) as f64 * bin_ms;
        let offset = (end_ms / 1000.0 / dt).round() as u64;
        let mut bin = CurveBin {
            end_ms,
            events: 0,
            correct: 0,
            fraction: 0.0,
        };
        for &s in &starts {
            let (Some(i0), Some(i1)) = (row_of(s), row_of(s + offset)) else {
                continue;
            };
            bin.events += 1;
            let area_ok = area.as_ref().is_none_or(|a| a[i1] < a[i0]);
            let lateral_ok = matches!((lateral(i0), lateral(i1)), (Some(d0), Some(d1)) if d1 < d0);
            if area_ok && lateral_ok {
                bin.correct += 1;
            }
        }
        if bin.events > 0 {
            bin.fraction = bin.correct as f64 / bin.events as f64;
        }
        curve.bins.push(bin);
    }
    curve
}
