//! Recorded hand trajectories (`t,x,y,z` CSV) and their resampling onto the
//! simulation clock.

use std::io::{Read, Write};

use thiserror::Error;

use crate::formation::Point;

#[derive(Debug, Error)]
pub enum HandTraceError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: {message}")]
    BadRow { row: usize, message: String },
    #[error("timestamps must strictly increase (row {row}: {t} after {previous})")]
    NonMonotonic { row: usize, t: f64, previous: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandSample {
    pub t: f64,
    pub position: Point,
}

/// Time-ordered hand positions at an arbitrary rate.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HandTrace {
    samples: Vec<HandSample>,
}

impl HandTrace {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(samples: Vec<HandSample>) -> Result<Self, HandTraceError> {
        for (i, w) in samples.windows(2).enumerate() {
            if !(w[1].t > w[0].t) {
                return Err(HandTraceError::NonMonotonic {
                    row: i + 1,
                    t: w[1].t,
                    previous: w[0].t,
                });
            }
        }
        if let Some((row, s)) = samples
            .iter()
            .enumerate()
            .find(|(_, s)| !s.t.is_finite() || !s.position.is_finite())
        {
            return Err(HandTraceError::BadRow {
                row,
                message: format!("non-finite sample at t={}", s.t),
            });
        }
        Ok(Self { samples })
    }

    /// Samples `f(t)` on `t = k·dt` for `k = 0..=steps`.
    pub fn from_fn(dt: f64, steps: usize, f: impl Fn(f64) -> Point) -> Self {
        let samples = (0..=steps)
            .map(|k| {
                let t = k as f64 * dt;
                HandSample { t, position: f(t) }
            })
            .collect();
        Self { samples }
    }

    pub fn samples(&self) -> &[HandSample] {
        &self.samples
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn end_time(&self) -> Option<f64> {
        self.samples.last().map(|s| s.t)
    }

    /// Linear interpolation at `t`, holding the first/last sample outside
    /// the recorded span. `None` for an empty trace. A query landing exactly
    /// on a sample returns that sample bit-for-bit.
    pub fn position_at(&self, t: f64) -> Option<Point> {
        let first = self.samples.first()?;
        let last = self.samples.last()?;
        if t <= first.t {
            return Some(first.position);
        }
        if t >= last.t {
            return Some(last.position);
        }
        let idx = self.samples.partition_point(|s| s.t <= t);
        let (a, b) = (self.samples[idx - 1], self.samples[idx]);
        if a.t == t {
            return Some(a.position);
        }
        let s = (t - a.t) / (b.t - a.t);
        Some(a.position + (b.position - a.position) * s)
    }

    pub fn read<R: Read>(r: R) -> Result<Self, HandTraceError> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(r);
        let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if headers != ["t", "x", "y", "z"] {
            return Err(HandTraceError::BadRow {
                row: 0,
                message: format!("expected header t,x,y,z, found {}", headers.join(",")),
            });
        }
        let mut samples = Vec::new();
        for (row, rec) in reader.records().enumerate() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| HandTraceError::BadRow {
                    row: row + 1,
                    message: e.to_string(),
                })?;
            if vals.len() != 4 {
                return Err(HandTraceError::BadRow {
                    row: row + 1,
                    message: format!("expected 4 fields, found {}", vals.len()),
                });
            }
            samples.push(HandSample {
                t: vals[0],
                position: Point::new(vals[1], vals[2], vals[3]),
            });
        }
        Self::new(samples)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), HandTraceError> {
        writeln!(w, "t,x,y,z")?;
        for s in &self.samples {
            writeln!(w, "{},{},{},{}", s.t, s.position.x, s.position.y, s.position.z)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf-8")
    }
}

/// Hand position for every tick `1..=ticks` at `t = k·dt`; `hold` is used
/// when the trace is empty.
pub fn resample(trace: &HandTrace, dt: f64, ticks: u64, hold: Point) -> Vec<Point> {
    (1..=ticks)
        .map(|k| trace.position_at(k as f64 * dt).unwrap_or(hold))
        .collect()
}
