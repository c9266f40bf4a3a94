//! Two-dimensional abelian (Bak–Tang–Wiesenfeld) sandpile.
//!
//! Every edge is open: grains pushed off the grid are lost and counted as
//! boundary loss. Relaxation proceeds in parallel sweeps, in which every
//! supercritical site topples exactly once, so avalanche duration is the
//! number of sweeps. The final configuration does not depend on the sweep
//! order (abelian property).

use std::fmt::Write as _;

use crate::error::{ModelError, SnapshotError};
use crate::event::{size_magnitude, CascadeEvent, CascadeRecorder, Site, DEFAULT_MAX_SWEEPS};
use crate::rng::SimRng;

pub const DEFAULT_THRESHOLD: u32 = 4;

#[derive(Debug, Clone)]
pub struct Sandpile {
    width: usize,
    height: usize,
    z: Vec<u32>,
    threshold: u32,
    total_grains: u64,
    rng: SimRng,
    max_sweeps: u64,
    next_event_id: u64,
    marks: Vec<u64>,
    queued: Vec<u64>,
    stamp: u64,
}

impl Sandpile {
    pub fn new(width: usize, height: usize, threshold: u32, seed: u64) -> Result<Self, ModelError> {
        if width == 0 || height == 0 {
            return Err(ModelError::Config(format!(
                "grid dimensions must be positive, got {width}x{height}"
            )));
        }
        if threshold == 0 {
            return Err(ModelError::Config("toppling threshold must be at least 1".into()));
        }
        let n = width * height;
        Ok(Self {
            width,
            height,
            z: vec![0; n],
            threshold,
            total_grains: 0,
            rng: SimRng::seed_from(seed),
            max_sweeps: DEFAULT_MAX_SWEEPS,
            next_event_id: 0,
            marks: vec![0; n],
            queued: vec![0; n],
            stamp: 0,
        })
    }

    /// Builds a pile from explicit row-major heights. The configuration must be stable.
    pub fn from_heights(
        width: usize,
        height: usize,
        threshold: u32,
        heights: Vec<u32>,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let mut pile = Self::new(width, height, threshold, seed)?;
        if heights.len() != width * height {
            return Err(ModelError::Config(format!(
                "expected {} heights, got {}",
                width * height,
                heights.len()
            )));
        }
        if let Some(i) = heights.iter().position(|&h| h >= threshold) {
            return Err(ModelError::Config(format!(
                "site {i} holds {} grains, at or above threshold {threshold}",
                heights[i]
            )));
        }
        pile.total_grains = heights.iter().map(|&h| u64::from(h)).sum();
        pile.z = heights;
        Ok(pile)
    }

    pub fn with_max_sweeps(mut self, max_sweeps: u64) -> Self {
        self.max_sweeps = max_sweeps;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn threshold(&self) -> u32 {
        self.threshold
    }

    pub fn total_grains(&self) -> u64 {
        self.total_grains
    }

    /// Row-major grain counts.
    pub fn heights(&self) -> &[u32] {
        &self.z
    }

    pub fn get(&self, site: Site) -> Option<u32> {
        self.index(site).map(|i| self.z[i])
    }

    pub fn mean_height(&self) -> f64 {
        self.total_grains as f64 / self.z.len() as f64
    }

    pub fn is_stable(&self) -> bool {
        self.z.iter().all(|&h| h < self.threshold)
    }

    fn index(&self, site: Site) -> Option<usize> {
        (site.x < self.width && site.y < self.height).then(|| site.y * self.width + site.x)
    }

    fn site(&self, index: usize) -> Site {
        Site::new(index % self.width, index / self.width)
    }

    /// Drops one grain on `site` and relaxes the pile to stability.
    pub fn add_grain(&mut self, site: Site) -> Result<CascadeEvent, ModelError> {
        let index = self.index(site).ok_or(ModelError::OutOfBounds {
            site,
            width: self.width,
            height: self.height,
        })?;
        self.z[index] += 1;
        self.total_grains += 1;
        self.relax(site, &[index])
    }

    /// Drops `n` grains at uniformly drawn sites.
    pub fn drive(&mut self, n: usize) -> Result<Vec<CascadeEvent>, ModelError> {
        (0..n)
            .map(|_| {
                let site = self.random_site();
                self.add_grain(site)
            })
            .collect()
    }

    pub fn random_site(&mut self) -> Site {
        let i = self.rng.below((self.width * self.height) as u64) as usize;
        self.site(i)
    }

    fn relax(&mut self, trigger: Site, seeds: &[usize]) -> Result<CascadeEvent, ModelError> {
        let event_id = self.next_event_id;
        self.next_event_id += 1;
        let grains_before = self.total_grains;
        let (w, h, zc) = (self.width, self.height, self.threshold);

        let mut active: Vec<usize> = seeds.iter().copied().filter(|&i| self.z[i] >= zc).collect();
        let mut next = Vec::new();
        let mut off_grid: u64 = 0;
        // Mark value 0 is the initial fill, so generations start at 1.
        let mut rec = CascadeRecorder::new(&mut self.marks, event_id + 1, self.max_sweeps);

        while !active.is_empty() {
            rec.begin_sweep()?;
            active.sort_unstable();
            for &i in &active {
                self.z[i] -= zc;
                rec.record(i, Site::new(i % w, i / w), f64::from(zc));
            }
            self.stamp += 1;
            let stamp = self.stamp;
            next.clear();
            let (z, queued) = (&mut self.z, &mut self.queued);
            let mut give = |j: usize| {
                z[j] += 1;
                if z[j] >= zc && queued[j] != stamp {
                    queued[j] = stamp;
                    next.push(j);
                }
            };
            for &i in &active {
                let (x, y) = (i % w, i / w);
                if x > 0 { give(i - 1) } else { off_grid += 1 }
                if x + 1 < w { give(i + 1) } else { off_grid += 1 }
                if y > 0 { give(i - w) } else { off_grid += 1 }
                if y + 1 < h { give(i + w) } else { off_grid += 1 }
            }
            // Sites that held at least 2*z_c topple again next sweep.
            for &i in &active {
                if self.z[i] >= zc && self.queued[i] != stamp {
                    self.queued[i] = stamp;
                    next.push(i);
                }
            }
            std::mem::swap(&mut active, &mut next);
        }

        let mut event = rec.finish(event_id, trigger, 0.0, 0.0, None);
        // Grains shed off-grid, plus the bulk excess z_c - 4 per toppling
        // (negative when z_c < 4).
        let removed = (i64::from(zc) - 4) * event.size as i64 + off_grid as i64;
        self.total_grains = (grains_before as i64 - removed) as u64;
        event.boundary_loss = removed as f64;
        event.magnitude = size_magnitude(event.size);
        Ok(event)
    }

    /// Text snapshot: `sandpile <width> <height> <z_c>` followed by one line per row.
    pub fn snapshot(&self) -> String {
        let mut out = format!("sandpile {} {} {}\n", self.width, self.height, self.threshold);
        for row in self.z.chunks(self.width) {
            let line: Vec<String> = row.iter().map(u32::to_string).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn from_snapshot(text: &str, seed: u64) -> Result<Self, SnapshotError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| SnapshotError::new(1, "empty snapshot"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "sandpile" {
            return Err(SnapshotError::new(1, "expected `sandpile <width> <height> <z_c>`"));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|e| SnapshotError::new(1, e.to_string()));
        let (width, height, zc) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
        let mut heights = Vec::with_capacity(width * height);
        for (n, line) in lines.enumerate() {
            let row: Result<Vec<u32>, _> = line.split_whitespace().map(str::parse).collect();
            let row = row.map_err(|e| SnapshotError::new(n + 2, e.to_string()))?;
            if row.len() != width {
                return Err(SnapshotError::new(n + 2, format!("expected {width} values, got {}", row.len())));
            }
            heights.extend(row);
        }
        Self::from_heights(width, height, zc as u32, heights, seed)
            .map_err(|e| SnapshotError::new(1, e.to_string()))
    }
}
