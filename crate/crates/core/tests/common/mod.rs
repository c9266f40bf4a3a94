//! Oracles shared by the integration tests. They use nothing from the crate
//! beyond its uniform random draws.

#![allow(dead_code)]

use socsim_core::rng::SimRng;

/// Integer power-law sample: the continuous inverse transform from
/// `s_min - 1/2`, rounded to the nearest integer.
pub fn power_law_sample(tau: f64, s_min: u64, n: usize, seed: u64) -> Vec<u64> {
    let mut rng = SimRng::seed_from(seed);
    let x0 = s_min as f64 - 0.5;
    (0..n)
        .map(|_| {
            let u = rng.unit_f64();
            let y = x0 * (1.0 - u).powf(-1.0 / (tau - 1.0));
            (y + 0.5).floor().min(u64::MAX as f64 / 2.0) as u64
        })
        .collect()
}

/// Sequential BTW relaxation with an explicit stack. Returns the number of
/// topplings; grains leaving the grid are dropped.
pub fn stack_relax(z: &mut [u32], width: usize, height: usize, threshold: u32, start: usize) -> u64 {
    let mut stack = vec![start];
    let mut topplings = 0;
    while let Some(i) = stack.pop() {
        while z[i] >= threshold {
            z[i] -= threshold;
            topplings += 1;
            let (x, y) = (i % width, i / width);
            let mut neighbours = Vec::with_capacity(4);
            if x > 0 {
                neighbours.push(i - 1);
            }
            if x + 1 < width {
                neighbours.push(i + 1);
            }
            if y > 0 {
                neighbours.push(i - width);
            }
            if y + 1 < height {
                neighbours.push(i + width);
            }
            for j in neighbours {
                z[j] += 1;
                if z[j] >= threshold {
                    stack.push(j);
                }
            }
        }
    }
    topplings
}

/// Adds one grain at `site` and relaxes with [`stack_relax`].
pub fn stack_add(z: &mut [u32], width: usize, height: usize, threshold: u32, site: usize) -> u64 {
    z[site] += 1;
    stack_relax(z, width, height, threshold, site)
}
