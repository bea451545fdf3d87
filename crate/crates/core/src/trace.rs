//! Per-tick trace log: CSV rows with a JSON provenance header, plus a JSONL
//! event stream.
//!
//! CSV layout (column order is frozen):
//!
//! ```text
//! tick,t,hand_x,hand_y,hand_z,hand_vx,hand_vy,hand_vz,
//!   d{i}_gx,d{i}_gy,d{i}_gz,d{i}_x,d{i}_y,d{i}_z,d{i}_vx,d{i}_vy,d{i}_vz   (per drone)
//!   l{k}_cx,l{k}_cy,l{k}_cz                                              (per link)
//!   label,com_offset,pattern
//! ```
//!
//! The file starts with `# swarmlink-trace v1` and `# meta {json}` lines.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formation::Point;
use crate::tactile::{FormationLabel, PatternId, TriggerSnapshot};

pub const TRACE_MAGIC: &str = "# swarmlink-trace v1";
const META_PREFIX: &str = "# meta ";

/// Moving-average window applied before differentiating centroid paths.
pub const SMOOTHING_WINDOW: usize = 5;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed trace: {0}")]
    Malformed(String),
}

/// Provenance header of a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub scenario: String,
    pub scenario_hash: String,
    pub sample_time: f64,
    pub drone_count: usize,
    pub link_count: usize,
    pub outline: Vec<usize>,
    pub default_area: Option<f64>,
    pub smoothing_window: usize,
    pub seed: Option<u64>,
    /// Scenario parameters (gains, thresholds) as canonical JSON.
    pub parameters: serde_json::Value,
    /// `headless` or `live`.
    pub source: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub tick: u64,
    pub t: f64,
    pub hand: Point,
    pub hand_velocity: Point,
    pub goals: Vec<Point>,
    pub positions: Vec<Point>,
    pub velocities: Vec<Point>,
    pub corrections: Vec<Point>,
    pub label: FormationLabel,
    pub com_offset: Option<f64>,
    pub pattern: Option<PatternId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub a: usize,
    pub b: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Penetration {
    pub drone: usize,
    pub obstacle: usize,
    pub clearance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    PatternStart {
        pattern: PatternId,
        end_tick: u64,
        trigger: TriggerSnapshot,
    },
    PatternEnd {
        pattern: PatternId,
    },
    /// Drone pairs closer than the minimum separation and drones inside a
    /// safety zone, for one tick.
    Collision {
        separations: Vec<Separation>,
        penetrations: Vec<Penetration>,
    },
    FormationState {
        from: FormationLabel,
        to: FormationLabel,
    },
    Marker {
        name: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub tick: u64,
    pub t: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceLog {
    pub meta: TraceMeta,
    pub rows: Vec<TraceRow>,
    pub events: Vec<TraceEvent>,
}

fn push_f(out: &mut String, v: f64) {
    out.push(',');
    write!(out, "{v}").expect("write to string");
}

fn push_point(out: &mut String, p: Point) {
    push_f(out, p.x);
    push_f(out, p.y);
    push_f(out, p.z);
}

/// Header line of the CSV body.
pub fn column_names(drones: usize, links: usize) -> Vec<String> {
    let mut cols: Vec<String> = ["tick", "t", "hand_x", "hand_y", "hand_z", "hand_vx", "hand_vy", "hand_vz"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for i in 0..drones {
        for s in ["gx", "gy", "gz", "x", "y", "z", "vx", "vy", "vz"] {
            cols.push(format!("d{i}_{s}"));
        }
    }
    for k in 0..links {
        for s in ["cx", "cy", "cz"] {
            cols.push(format!("l{k}_{s}"));
        }
    }
    cols.extend(["label", "com_offset", "pattern"].iter().map(|s| s.to_string()));
    cols
}

impl TraceRow {
    /// One CSV line without trailing newline.
    pub fn to_csv_line(&self) -> String {
        let mut out = self.tick.to_string();
        push_f(&mut out, self.t);
        push_point(&mut out, self.hand);
        push_point(&mut out, self.hand_velocity);
        for i in 0..self.positions.len() {
            push_point(&mut out, self.goals[i]);
            push_point(&mut out, self.positions[i]);
            push_point(&mut out, self.velocities[i]);
        }
        for c in &self.corrections {
            push_point(&mut out, *c);
        }
        out.push(',');
        out.push_str(self.label.as_str());
        out.push(',');
        if let Some(d) = self.com_offset {
            write!(out, "{d}").expect("write to string");
        }
        out.push(',');
        if let Some(p) = self.pattern {
            out.push_str(p.as_str());
        }
        out
    }

    pub fn centroid(&self) -> Point {
        crate::geom::centroid(&self.positions)
    }
}

impl TraceLog {
    pub fn new(meta: TraceMeta) -> Self {
        Self {
            meta,
            rows: Vec::new(),
            events: Vec::new(),
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), TraceError> {
        writeln!(w, "{TRACE_MAGIC}")?;
        writeln!(w, "{META_PREFIX}{}", serde_json::to_string(&self.meta)?)?;
        writeln!(w, "{}", column_names(self.meta.drone_count, self.meta.link_count).join(","))?;
        for row in &self.rows {
            writeln!(w, "{}", row.to_csv_line())?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("trace is utf-8")
    }

    /// CSV body rows only (no provenance header), for physics comparisons.
    pub fn rows_csv(&self) -> String {
        self.rows.iter().map(|r| r.to_csv_line() + "\n").collect()
    }

    pub fn write_events<W: Write>(&self, mut w: W) -> Result<(), TraceError> {
        for ev in &self.events {
            writeln!(w, "{}", serde_json::to_string(ev)?)?;
        }
        Ok(())
    }

    pub fn events_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_events(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("events are utf-8")
    }

    /// Parses a CSV written by [`TraceLog::write_csv`]. Events are not part
    /// of the CSV; see [`read_events`].
    pub fn read_csv<R: BufRead>(mut r: R) -> Result<TraceLog, TraceError> {
        let mut line = String::new();
        r.read_line(&mut line)?;
        if line.trim_end() != TRACE_MAGIC {
            return Err(TraceError::Malformed(format!("missing `{TRACE_MAGIC}` header")));
        }
        line.clear();
        r.read_line(&mut line)?;
        let meta_json = line
            .trim_end()
            .strip_prefix(META_PREFIX)
            .ok_or_else(|| TraceError::Malformed("missing `# meta` line".into()))?;
        let meta: TraceMeta = serde_json::from_str(meta_json)?;
        let expected = column_names(meta.drone_count, meta.link_count);

        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if headers != expected {
            return Err(TraceError::Malformed("column layout does not match header".into()));
        }
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            rows.push(parse_row(&rec, meta.drone_count, meta.link_count)?);
        }
        Ok(TraceLog {
            meta,
            rows,
            events: Vec::new(),
        })
    }
}

fn parse_row(rec: &csv::StringRecord, drones: usize, links: usize) -> Result<TraceRow, TraceError> {
    let field = |i: usize| rec.get(i).ok_or_else(|| TraceError::Malformed(format!("short row at column {i}")));
    let num = |i: usize| -> Result<f64, TraceError> {
        field(i)?
            .parse::<f64>()
            .map_err(|e| TraceError::Malformed(format!("column {i}: {e}")))
    };
    let point = |i: usize| -> Result<Point, TraceError> { Ok(Point::new(num(i)?, num(i + 1)?, num(i + 2)?)) };
    let tick = field(0)?
        .parse::<u64>()
        .map_err(|e| TraceError::Malformed(format!("tick: {e}")))?;
    let mut col = 2;
    let hand = point(col)?;
    let hand_velocity = point(col + 3)?;
    col += 6;
    let (mut goals, mut positions, mut velocities) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..drones {
        goals.push(point(col)?);
        positions.push(point(col + 3)?);
        velocities.push(point(col + 6)?);
        col += 9;
    }
    let mut corrections = Vec::new();
    for _ in 0..links {
        corrections.push(point(col)?);
        col += 3;
    }
    let label = field(col)?.parse().map_err(TraceError::Malformed)?;
    let com_offset = match field(col + 1)? {
        "" => None,
        s => Some(s.parse::<f64>().map_err(|e| TraceError::Malformed(format!("com_offset: {e}")))?),
    };
    let pattern = match field(col + 2)? {
        "" => None,
        s => Some(s.parse().map_err(|e: crate::tactile::TactileError| TraceError::Malformed(e.to_string()))?),
    };
    Ok(TraceRow {
        tick,
        t: num(1)?,
        hand,
        hand_velocity,
        goals,
        positions,
        velocities,
        corrections,
        label,
        com_offset,
        pattern,
    })
}

/// Parses a JSONL event stream.
pub fn read_events<R: BufRead>(r: R) -> Result<Vec<TraceEvent>, TraceError> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
