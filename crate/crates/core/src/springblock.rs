//! Spring-block earthquake lattice in its quasi-static cellular-automaton
//! form (Olami–Feder–Christensen family).
//!
//! Each block carries a pulling force in units of the failure threshold. The
//! plate loads every block uniformly; a block at or above threshold slips,
//! drops to its residual force (zero unless residual noise is configured)
//! and hands `alpha` times the released force to each of its four
//! neighbours. Transfers across the lattice edge are lost. Relaxation runs in
//! parallel sweeps: all releases of a sweep are taken before any transfer of
//! that sweep is applied.

use std::fmt::Write as _;

use crate::error::{ModelError, SnapshotError};
use crate::event::{CascadeEvent, CascadeRecorder, Site, DEFAULT_MAX_SWEEPS};
use crate::rng::SimRng;

pub const FAILURE_THRESHOLD: f64 = 1.0;
pub const DEFAULT_ALPHA: f64 = 0.25;
pub const DEFAULT_INTERACTIVE_SIDE: usize = 5;
pub const DEFAULT_RATE_SCALE: f64 = 0.001;

#[derive(Debug, Clone)]
pub struct SpringBlock {
    side: usize,
    force: Vec<f64>,
    alpha: f64,
    plate_rate: f64,
    rate_scale: f64,
    drive_direction: [f64; 2],
    residual_noise: f64,
    rng: SimRng,
    max_sweeps: u64,
    next_event_id: u64,
    marks: Vec<u64>,
    pending: Vec<f64>,
}

impl SpringBlock {
    /// Lattice of `side` x `side` blocks with forces drawn uniformly on `[0, 1)`.
    pub fn new(side: usize, alpha: f64, seed: u64) -> Result<Self, ModelError> {
        if side < 2 {
            return Err(ModelError::Config(format!("lattice side must be at least 2, got {side}")));
        }
        check_alpha(alpha)?;
        let mut rng = SimRng::seed_from(seed);
        let n = side * side;
        let force = (0..n).map(|_| rng.unit_f64() * FAILURE_THRESHOLD).collect();
        Ok(Self {
            side,
            force,
            alpha,
            plate_rate: 0.0,
            rate_scale: DEFAULT_RATE_SCALE,
            drive_direction: [0.0, 0.0],
            residual_noise: 0.0,
            rng,
            max_sweeps: DEFAULT_MAX_SWEEPS,
            next_event_id: 0,
            marks: vec![0; n],
            pending: vec![0.0; n],
        })
    }

    /// Lattice with explicit row-major forces, each in `[0, 1)`.
    pub fn from_forces(side: usize, alpha: f64, forces: Vec<f64>, seed: u64) -> Result<Self, ModelError> {
        let mut lattice = Self::new(side, alpha, seed)?;
        if forces.len() != side * side {
            return Err(ModelError::Config(format!(
                "expected {} forces, got {}",
                side * side,
                forces.len()
            )));
        }
        if let Some(f) = forces.iter().find(|f| !(0.0..FAILURE_THRESHOLD).contains(*f)) {
            return Err(ModelError::Config(format!("force {f} outside [0, 1)")));
        }
        lattice.force = forces;
        Ok(lattice)
    }

    pub fn with_max_sweeps(mut self, max_sweeps: u64) -> Self {
        self.max_sweeps = max_sweeps;
        self
    }

    /// Slipped blocks keep a residual force drawn uniformly on `[0, sigma)`.
    pub fn with_residual_noise(mut self, sigma: f64) -> Result<Self, ModelError> {
        if !(0.0..FAILURE_THRESHOLD).contains(&sigma) {
            return Err(ModelError::Config(format!("residual noise {sigma} outside [0, 1)")));
        }
        self.residual_noise = sigma;
        Ok(self)
    }

    pub fn with_rate_scale(mut self, scale: f64) -> Result<Self, ModelError> {
        if !scale.is_finite() || scale < 0.0 {
            return Err(ModelError::Config(format!("rate scale must be finite and non-negative, got {scale}")));
        }
        self.rate_scale = scale;
        Ok(self)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn forces(&self) -> &[f64] {
        &self.force
    }

    pub fn plate_rate(&self) -> f64 {
        self.plate_rate
    }

    /// Last drive vector passed to [`set_plate_rate`](Self::set_plate_rate).
    /// Display only; it does not affect the dynamics.
    pub fn drive_direction(&self) -> [f64; 2] {
        self.drive_direction
    }

    pub fn total_force(&self) -> f64 {
        self.force.iter().sum()
    }

    pub fn max_force(&self) -> f64 {
        self.force.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_stable(&self) -> bool {
        self.force.iter().all(|&f| (0.0..FAILURE_THRESHOLD).contains(&f))
    }

    pub fn is_boundary(&self, site: Site) -> bool {
        site.x == 0 || site.y == 0 || site.x + 1 == self.side || site.y + 1 == self.side
    }

    /// Sets the plate loading rate from a drive vector: `rate_scale * |v|`.
    pub fn set_plate_rate(&mut self, v: [f64; 2]) -> Result<f64, ModelError> {
        if !v.iter().all(|c| c.is_finite()) {
            return Err(ModelError::Domain(format!("drive vector {v:?} is not finite")));
        }
        // sqrt is correctly rounded everywhere, unlike hypot.
        let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
        self.plate_rate = self.rate_scale * norm;
        self.drive_direction = v;
        Ok(self.plate_rate)
    }

    /// Advances the plate by `df` (every block gains `df`) and relaxes.
    pub fn load_step(&mut self, df: f64) -> Result<CascadeEvent, ModelError> {
        if !(df >= 0.0 && df.is_finite()) {
            return Err(ModelError::Domain(format!("plate increment must be finite and non-negative, got {df}")));
        }
        if df > 0.0 {
            for f in &mut self.force {
                *f += df;
            }
        }
        self.relax()
    }

    /// Advances the plate exactly until the most loaded block reaches threshold, then relaxes.
    pub fn drive_extremal(&mut self) -> Result<CascadeEvent, ModelError> {
        let max = self.max_force();
        let df = FAILURE_THRESHOLD - max;
        for f in &mut self.force {
            // The most loaded blocks land on the threshold exactly, whatever
            // rounding `max + df` would give.
            *f = if *f == max { FAILURE_THRESHOLD } else { *f + df };
        }
        self.relax()
    }

    /// Raises one block to the failure threshold and relaxes. Other blocks are untouched.
    pub fn kick(&mut self, site: Site) -> Result<CascadeEvent, ModelError> {
        if site.x >= self.side || site.y >= self.side {
            return Err(ModelError::OutOfBounds {
                site,
                width: self.side,
                height: self.side,
            });
        }
        self.force[site.y * self.side + site.x] = FAILURE_THRESHOLD;
        self.relax()
    }

    fn relax(&mut self) -> Result<CascadeEvent, ModelError> {
        let event_id = self.next_event_id;
        self.next_event_id += 1;
        let n = self.side;
        let alpha = self.alpha;
        let mut lost = 0.0;
        let mut moment = 0.0;
        let mut trigger = None;

        let mut active: Vec<usize> = (0..n * n).filter(|&i| self.force[i] >= FAILURE_THRESHOLD).collect();
        let mut touched: Vec<usize> = Vec::new();
        let mut rec = CascadeRecorder::new(&mut self.marks, event_id + 1, self.max_sweeps);

        while !active.is_empty() {
            rec.begin_sweep()?;
            if trigger.is_none() {
                trigger = Some(active[0]);
            }
            for &i in &active {
                let residual = if self.residual_noise > 0.0 {
                    self.rng.unit_f64() * self.residual_noise
                } else {
                    0.0
                };
                let released = self.force[i] - residual;
                self.force[i] = residual;
                self.pending[i] = released;
                moment += released;
                rec.record(i, Site::new(i % n, i / n), released);
            }
            touched.clear();
            for &i in &active {
                let share = alpha * self.pending[i];
                let (x, y) = (i % n, i / n);
                let mut give = |j: usize| {
                    self.force[j] += share;
                    touched.push(j);
                };
                if x > 0 { give(i - 1) } else { lost += share }
                if x + 1 < n { give(i + 1) } else { lost += share }
                if y > 0 { give(i - n) } else { lost += share }
                if y + 1 < n { give(i + n) } else { lost += share }
            }
            touched.sort_unstable();
            touched.dedup();
            active.clear();
            active.extend(touched.iter().copied().filter(|&j| self.force[j] >= FAILURE_THRESHOLD));
        }

        let trigger = trigger.map_or(Site::new(0, 0), |i| Site::new(i % n, i / n));
        let mut event = rec.finish(event_id, trigger, lost, 0.0, None);
        if event.size > 0 {
            event.moment = Some(moment);
            event.magnitude = quake_magnitude(moment);
        }
        Ok(event)
    }

    /// Text snapshot: `springblock <L> <alpha>`, then one row of forces per line.
    pub fn snapshot(&self) -> String {
        let mut out = format!("springblock {} {}\n", self.side, self.alpha);
        for row in self.force.chunks(self.side) {
            let line: Vec<String> = row.iter().map(f64::to_string).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn from_snapshot(text: &str, seed: u64) -> Result<Self, SnapshotError> {
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap_or("").split_whitespace().collect();
        if header.len() != 3 || header[0] != "springblock" {
            return Err(SnapshotError::new(1, "expected `springblock <L> <alpha>`"));
        }
        let side: usize = header[1].parse().map_err(|_| SnapshotError::new(1, "bad lattice side"))?;
        let alpha: f64 = header[2].parse().map_err(|_| SnapshotError::new(1, "bad alpha"))?;
        let mut forces = Vec::with_capacity(side * side);
        for (k, line) in lines.enumerate() {
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|v| v.parse().map_err(|_| SnapshotError::new(k + 2, format!("bad value `{v}`"))))
                .collect::<Result<_, _>>()?;
            if row.len() != side {
                return Err(SnapshotError::new(k + 2, format!("expected {side} values, got {}", row.len())));
            }
            forces.extend(row);
        }
        Self::from_forces(side, alpha, forces, seed).map_err(|e| SnapshotError::new(1, e.to_string()))
    }
}

/// `(2/3) log10(moment / F_th)`.
pub fn quake_magnitude(moment: f64) -> f64 {
    2.0 / 3.0 * libm::log10(moment / FAILURE_THRESHOLD)
}

pub fn check_alpha(alpha: f64) -> Result<(), ModelError> {
    if alpha > 0.0 && alpha <= 0.25 {
        Ok(())
    } else {
        Err(ModelError::Config(format!("alpha must lie in (0, 0.25], got {alpha}")))
    }
}
