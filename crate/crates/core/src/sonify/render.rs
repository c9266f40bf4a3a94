use super::corpus::{hann, GrainCorpus};
use super::schedule::GrainSchedule;

/// Samples at or below this magnitude pass the limiter unchanged.
pub const LIMITER_KNEE: f64 = 0.9;

/// Soft limiter: identity up to the knee, then a tanh shoulder approaching 1.
pub fn soft_limit(x: f64) -> f64 {
    let a = x.abs();
    if a <= LIMITER_KNEE {
        return x;
    }
    let room = 1.0 - LIMITER_KNEE;
    let y = LIMITER_KNEE + room * libm::tanh((a - LIMITER_KNEE) / room);
    y.min(1.0).copysign(x)
}

/// Overlap-adds every scheduled grain into a mono signal at `sample_rate`.
///
/// Each grain is Hann-windowed, scaled by its amplitude and resampled by
/// linear interpolation at `pitch_ratio` (corrected for any difference
/// between corpus and output rates). The mix goes through [`soft_limit`].
/// Output length is `ceil(total_duration * sample_rate)`; grains running past
/// the end are cut.
pub fn render(schedule: &GrainSchedule, corpus: &GrainCorpus, sample_rate: u32) -> Vec<f32> {
    let sr = f64::from(sample_rate);
    let len = libm::ceil(schedule.total_duration * sr).max(0.0) as usize;
    let mut mix = vec![0.0f64; len];
    let rate_ratio = f64::from(corpus.sample_rate()) / sr;
    let mut windowed: Vec<f64> = Vec::new();
    let mut window_len = 0;
    let mut window = Vec::new();

    for entry in &schedule.entries {
        let src = corpus.grain_samples(entry.grain_index);
        if src.len() != window_len {
            window_len = src.len();
            window = hann(window_len);
        }
        windowed.clear();
        windowed.extend(src.iter().zip(&window).map(|(&x, &w)| f64::from(x) * w * entry.amplitude));

        let step = entry.pitch_ratio * rate_ratio;
        let start = libm::round(entry.onset * sr) as usize;
        let last = (windowed.len() - 1) as f64;
        let mut j = 0usize;
        loop {
            let pos = j as f64 * step;
            if pos > last {
                break;
            }
            let out = start + j;
            if out >= len {
                break;
            }
            let i = pos as usize;
            let frac = pos - i as f64;
            let v = if i + 1 < windowed.len() {
                windowed[i] + (windowed[i + 1] - windowed[i]) * frac
            } else {
                windowed[i]
            };
            mix[out] += v;
            j += 1;
        }
    }
    mix.into_iter().map(|x| soft_limit(x) as f32).collect()
}
