//! Oslo rice-pile: a one-dimensional slope-threshold pile with quenched random
//! critical slopes, driven one grain at a time at column 0.
//!
//! The right edge is open (`h[length] = 0`). A column whose local slope
//! exceeds its critical slope passes one grain to the right and redraws its
//! critical slope uniformly from {1, 2}. Relaxation runs in parallel sweeps;
//! slopes are redrawn in ascending column order within a sweep.

use std::fmt::Write as _;

use crate::error::{ModelError, SnapshotError};
use crate::event::{size_magnitude, CascadeEvent, CascadeRecorder, Site, DEFAULT_MAX_SWEEPS};
use crate::rng::SimRng;

#[derive(Debug, Clone)]
pub struct OsloPile {
    h: Vec<u32>,
    critical: Vec<u8>,
    rng: SimRng,
    max_sweeps: u64,
    next_event_id: u64,
    marks: Vec<u64>,
}

impl OsloPile {
    /// Empty pile of `length` columns with critical slopes drawn from the seeded generator.
    pub fn new(length: usize, seed: u64) -> Result<Self, ModelError> {
        if length == 0 {
            return Err(ModelError::Config("pile length must be positive".into()));
        }
        let mut rng = SimRng::seed_from(seed);
        let critical = (0..length).map(|_| draw_slope(&mut rng)).collect();
        Ok(Self {
            h: vec![0; length],
            critical,
            rng,
            max_sweeps: DEFAULT_MAX_SWEEPS,
            next_event_id: 0,
            marks: vec![0; length],
        })
    }

    /// Pile with explicit heights and critical slopes. The configuration must be stable.
    pub fn from_parts(heights: Vec<u32>, critical: Vec<u8>, seed: u64) -> Result<Self, ModelError> {
        let length = heights.len();
        if length == 0 || critical.len() != length {
            return Err(ModelError::Config(format!(
                "need equally many heights and critical slopes, got {} and {}",
                length,
                critical.len()
            )));
        }
        if critical.iter().any(|&c| !(1..=2).contains(&c)) {
            return Err(ModelError::Config("critical slopes must be 1 or 2".into()));
        }
        let pile = Self {
            h: heights,
            critical,
            rng: SimRng::seed_from(seed),
            max_sweeps: DEFAULT_MAX_SWEEPS,
            next_event_id: 0,
            marks: vec![0; length],
        };
        if let Some(i) = (0..length).find(|&i| pile.slope(i) > i64::from(pile.critical[i])) {
            return Err(ModelError::Config(format!("column {i} is supercritical")));
        }
        Ok(pile)
    }

    pub fn with_max_sweeps(mut self, max_sweeps: u64) -> Self {
        self.max_sweeps = max_sweeps;
        self
    }

    pub fn length(&self) -> usize {
        self.h.len()
    }

    pub fn heights(&self) -> &[u32] {
        &self.h
    }

    pub fn critical_slopes(&self) -> &[u8] {
        &self.critical
    }

    pub fn total_grains(&self) -> u64 {
        self.h.iter().map(|&v| u64::from(v)).sum()
    }

    /// `h[i] - h[i + 1]`, with the open edge at height zero.
    pub fn slope(&self, i: usize) -> i64 {
        let right = self.h.get(i + 1).copied().unwrap_or(0);
        i64::from(self.h[i]) - i64::from(right)
    }

    pub fn is_stable(&self) -> bool {
        (0..self.h.len()).all(|i| self.slope(i) <= i64::from(self.critical[i]))
    }

    fn unstable(&self, i: usize) -> bool {
        self.slope(i) > i64::from(self.critical[i])
    }

    /// Adds one grain at column 0 and relaxes.
    pub fn add_grain(&mut self) -> Result<CascadeEvent, ModelError> {
        self.h[0] += 1;
        self.relax()
    }

    pub fn drive(&mut self, n: usize) -> Result<Vec<CascadeEvent>, ModelError> {
        (0..n).map(|_| self.add_grain()).collect()
    }

    fn relax(&mut self) -> Result<CascadeEvent, ModelError> {
        let event_id = self.next_event_id;
        self.next_event_id += 1;
        let n = self.h.len();
        let mut exited: u64 = 0;
        let mut active: Vec<usize> = if self.unstable(0) { vec![0] } else { Vec::new() };
        let mut candidates = Vec::new();
        let mut marks = std::mem::take(&mut self.marks);
        let mut rec = CascadeRecorder::new(&mut marks, event_id + 1, self.max_sweeps);

        let result = loop {
            if active.is_empty() {
                break Ok(());
            }
            if let Err(e) = rec.begin_sweep() {
                break Err(e);
            }
            // Toppling column i only changes the slopes of i - 1, i and i + 1.
            for &i in &active {
                self.h[i] -= 1;
                if i + 1 < n {
                    self.h[i + 1] += 1;
                } else {
                    exited += 1;
                }
                rec.record(i, Site::new(i, 0), 1.0);
            }
            for &i in &active {
                self.critical[i] = draw_slope(&mut self.rng);
            }
            candidates.clear();
            for &i in &active {
                candidates.extend(i.saturating_sub(1)..=(i + 1).min(n - 1));
            }
            candidates.sort_unstable();
            candidates.dedup();
            active.clear();
            active.extend(candidates.iter().copied().filter(|&i| self.unstable(i)));
        };
        let event = rec.finish(event_id, Site::new(0, 0), exited as f64, 0.0, None);
        self.marks = marks;
        result?;
        Ok(CascadeEvent {
            magnitude: size_magnitude(event.size),
            ..event
        })
    }

    /// Text snapshot: `oslo <length>`, then the heights row and the critical-slope row.
    pub fn snapshot(&self) -> String {
        let mut out = format!("oslo {}\n", self.h.len());
        let heights: Vec<String> = self.h.iter().map(u32::to_string).collect();
        let slopes: Vec<String> = self.critical.iter().map(u8::to_string).collect();
        let _ = writeln!(out, "{}", heights.join(" "));
        let _ = writeln!(out, "{}", slopes.join(" "));
        out
    }

    pub fn from_snapshot(text: &str, seed: u64) -> Result<Self, SnapshotError> {
        let lines: Vec<&str> = text.lines().collect();
        let header: Vec<&str> = lines.first().map(|l| l.split_whitespace().collect()).unwrap_or_default();
        if header.len() != 2 || header[0] != "oslo" {
            return Err(SnapshotError::new(1, "expected `oslo <length>`"));
        }
        let length: usize = header[1].parse().map_err(|_| SnapshotError::new(1, "bad length"))?;
        if lines.len() != 3 {
            return Err(SnapshotError::new(lines.len() + 1, "expected heights and slopes rows"));
        }
        let heights: Vec<u32> = parse_row(lines[1], 2, length)?;
        let slopes: Vec<u8> = parse_row(lines[2], 3, length)?;
        Self::from_parts(heights, slopes, seed).map_err(|e| SnapshotError::new(1, e.to_string()))
    }
}

fn parse_row<T: std::str::FromStr>(line: &str, number: usize, len: usize) -> Result<Vec<T>, SnapshotError> {
    let row: Vec<T> = line
        .split_whitespace()
        .map(|v| v.parse().map_err(|_| SnapshotError::new(number, format!("bad value `{v}`"))))
        .collect::<Result<_, _>>()?;
    if row.len() != len {
        return Err(SnapshotError::new(number, format!("expected {len} values, got {}", row.len())));
    }
    Ok(row)
}

fn draw_slope(rng: &mut SimRng) -> u8 {
    1 + rng.below(2) as u8
}
