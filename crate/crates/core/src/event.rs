//! Cascade events shared by the sandpile, Oslo pile and spring-block lattice.

use serde::{Deserialize, Serialize};

/// Lattice coordinate: `x` is the column, `y` the row. 1D piles use `y = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Site {
    pub x: usize,
    pub y: usize,
}

impl Site {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

impl From<[usize; 2]> for Site {
    fn from([x, y]: [usize; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Site> for [usize; 2] {
    fn from(s: Site) -> Self {
        [s.x, s.y]
    }
}

/// One toppling or slip: where it happened and how much it shed.
///
/// Serialized as `[x, y, released]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(usize, usize, f64)", into = "(usize, usize, f64)")]
pub struct Slip {
    pub site: Site,
    pub released: f64,
}

impl From<(usize, usize, f64)> for Slip {
    fn from((x, y, released): (usize, usize, f64)) -> Self {
        Self {
            site: Site::new(x, y),
            released,
        }
    }
}

impl From<Slip> for (usize, usize, f64) {
    fn from(s: Slip) -> Self {
        (s.site.x, s.site.y, s.released)
    }
}

/// A fully relaxed avalanche or quake triggered by one drive increment.
///
/// `steps` holds one list per parallel relaxation sweep. Spring-block quakes
/// additionally carry `moment`, the total force released.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeEvent {
    pub event_id: u64,
    pub trigger_site: Site,
    pub steps: Vec<Vec<Slip>>,
    pub size: u64,
    pub area: u64,
    pub duration: u64,
    pub boundary_loss: f64,
    pub magnitude: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moment: Option<f64>,
}

impl CascadeEvent {
    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    /// Slip counts per sweep.
    pub fn step_sizes(&self) -> impl Iterator<Item = usize> + '_ {
        self.steps.iter().map(Vec::len)
    }

    /// Checks the structural invariants tying `size`, `area`, `duration` and `steps` together.
    pub fn is_consistent(&self) -> bool {
        let total: usize = self.step_sizes().sum();
        self.size == total as u64
            && self.area <= self.size
            && self.duration == self.steps.len() as u64
            && ((self.size == 0) == self.steps.is_empty())
            && self.steps.iter().all(|s| !s.is_empty())
    }
}

/// Magnitude shared by the grain piles: `log10(max(size, 1))`.
pub fn size_magnitude(size: u64) -> f64 {
    libm::log10(size.max(1) as f64)
}

/// Sweep cap hit while relaxing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("relaxation did not settle within {max_sweeps} sweeps")]
pub struct Diverged {
    pub max_sweeps: u64,
}

pub const DEFAULT_MAX_SWEEPS: u64 = 10_000_000;

/// Accumulates the sweeps of one relaxation into a [`CascadeEvent`].
///
/// Area is tracked with a generation-stamped mark array owned by the model,
/// so nothing has to be cleared between events.
pub(crate) struct CascadeRecorder<'a> {
    marks: &'a mut Vec<u64>,
    generation: u64,
    steps: Vec<Vec<Slip>>,
    size: u64,
    area: u64,
    max_sweeps: u64,
}

impl<'a> CascadeRecorder<'a> {
    pub(crate) fn new(marks: &'a mut Vec<u64>, generation: u64, max_sweeps: u64) -> Self {
        Self {
            marks,
            generation,
            steps: Vec::new(),
            size: 0,
            area: 0,
            max_sweeps,
        }
    }

    /// Opens a new sweep, failing once the cap would be exceeded.
    pub(crate) fn begin_sweep(&mut self) -> Result<(), Diverged> {
        if self.steps.len() as u64 >= self.max_sweeps {
            return Err(Diverged {
                max_sweeps: self.max_sweeps,
            });
        }
        self.steps.push(Vec::new());
        Ok(())
    }

    pub(crate) fn record(&mut self, index: usize, site: Site, released: f64) {
        let mark = &mut self.marks[index];
        if *mark != self.generation {
            *mark = self.generation;
            self.area += 1;
        }
        self.size += 1;
        self.steps
            .last_mut()
            .expect("record called before begin_sweep")
            .push(Slip { site, released });
    }

    pub(crate) fn finish(
        mut self,
        event_id: u64,
        trigger_site: Site,
        boundary_loss: f64,
        magnitude: f64,
        moment: Option<f64>,
    ) -> CascadeEvent {
        if self.steps.last().is_some_and(Vec::is_empty) {
            self.steps.pop();
        }
        CascadeEvent {
            event_id,
            trigger_site,
            duration: self.steps.len() as u64,
            steps: self.steps,
            size: self.size,
            area: self.area,
            boundary_loss,
            magnitude,
            moment,
        }
    }
}
