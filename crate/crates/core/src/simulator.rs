//! Detection-level scene synthesis: measurement noise, missed detections,
//! Poisson clutter and stop-and-go particle motion.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{Detection, DetectionTable, TrackPoint, TrackTable, CLUTTER};

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub name: String,
    pub sigma_m: f64,
    pub p_fn: f64,
    /// Clutter points per px² per frame.
    pub lambda_fp: f64,
}

/// Accepted task names, in table order.
pub const TASK_NAMES: [&str; 8] = ["phi", "A", "B", "C", "1", "2", "3", "4"];

impl TaskSpec {
    pub fn custom(name: &str, sigma_m: f64, p_fn: f64, lambda_fp: f64) -> Result<Self> {
        let spec = Self {
            name: name.to_string(),
            sigma_m,
            p_fn,
            lambda_fp,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let (canonical, sigma_m, p_fn, lambda_fp) = match name {
            "phi" | "φ" | "Phi" | "PHI" => ("phi", 0.0, 0.0, 0.0),
            "A" | "a" => ("A", 0.0, 0.1, 5e-5),
            "B" | "b" => ("B", 1.0, 0.1, 0.0),
            "C" | "c" => ("C", 1.0, 0.0, 5e-5),
            "1" => ("1", 1.0, 0.1, 5e-5),
            "2" => ("2", 1.0, 0.1, 2.5e-4),
            "3" => ("3", 3.0, 0.1, 2.5e-4),
            "4" => ("4", 3.0, 0.1, 3.3e-4),
            other => return Err(Error::UnknownTask(other.to_string())),
        };
        Self::custom(canonical, sigma_m, p_fn, lambda_fp)
    }

    pub fn all() -> Vec<Self> {
        TASK_NAMES.iter().map(|n| Self::preset(n).expect("preset")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_m >= 0.0 && self.sigma_m.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "sigma_m",
                reason: "must be finite and non-negative".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.p_fn) {
            return Err(Error::InvalidParameter {
                name: "p_fn",
                reason: "must lie in [0, 1]".into(),
            });
        }
        if !(self.lambda_fp >= 0.0 && self.lambda_fp.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "lambda_fp",
                reason: "must be finite and non-negative".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneBounds {
    pub x_lim: f64,
    pub y_lim: f64,
    pub frames: u32,
}

impl Default for SceneBounds {
    fn default() -> Self {
        Self {
            x_lim: 30.0,
            y_lim: 30.0,
            frames: 100,
        }
    }
}

impl SceneBounds {
    pub fn new(x_lim: f64, y_lim: f64, frames: u32) -> Result<Self> {
        if !(x_lim > 0.0 && y_lim > 0.0 && x_lim.is_finite() && y_lim.is_finite()) || frames == 0 {
            return Err(Error::InvalidParameter {
                name: "bounds",
                reason: "extent and frame count must be positive".into(),
            });
        }
        Ok(Self { x_lim, y_lim, frames })
    }

    pub fn area(&self) -> f64 {
        self.x_lim * self.y_lim
    }

    fn clamp(&self, x: f64, y: f64) -> (f64, f64) {
        (x.clamp(0.0, self.x_lim), y.clamp(0.0, self.y_lim))
    }
}

/// Adds i.i.d. `𝓝(0, σ_m²I₂)` offsets to every ground-truth point; the track
/// id becomes the label.
pub fn corrupt<R: Rng + ?Sized>(x: &TrackTable, sigma_m: f64, rng: &mut R) -> DetectionTable {
    let rows = x
        .rows()
        .iter()
        .map(|p| {
            let nx: f64 = rng.sample(StandardNormal);
            let ny: f64 = rng.sample(StandardNormal);
            Detection::labeled(p.x + sigma_m * nx, p.y + sigma_m * ny, p.t, p.id)
        })
        .collect();
    DetectionTable::with_frame_count(rows, x.frame_count())
}

/// Keeps each row independently with probability `1 − p_fn`.
pub fn drop_false_negatives<R: Rng + ?Sized>(z: &DetectionTable, p_fn: f64, rng: &mut R) -> Result<DetectionTable> {
    if !(0.0..=1.0).contains(&p_fn) {
        return Err(Error::InvalidParameter {
            name: "p_fn",
            reason: "must lie in [0, 1]".into(),
        });
    }
    let rows = z.rows.iter().filter(|_| rng.random::<f64>() >= p_fn).copied().collect();
    Ok(DetectionTable::with_frame_count(rows, z.frame_count))
}

/// Smallest `k` with `P(N ≤ k) ≥ u` for `N ~ Poisson(mean)`. Monotone in
/// `mean` for fixed `u`.
pub fn poisson_inverse(mean: f64, u: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let log_mean = libm::log(mean);
    let limit = mean + 40.0 * libm::sqrt(mean) + 40.0;
    let mut k = 0u64;
    let mut cdf = libm::exp(-mean);
    while cdf < u && (k as f64) < limit {
        k += 1;
        let kf = k as f64;
        cdf += libm::exp(-mean + kf * log_mean - libm::lgamma(kf + 1.0));
    }
    k
}

/// Adds `Poisson(λ_fp·x_lim·y_lim)` uniformly placed clutter points to every
/// frame `1..=T`. Each frame draws one count variate and one position seed
/// regardless of the rate, so the same `rng` state yields nested clutter sets
/// across rates.
pub fn add_clutter<R: RngCore + ?Sized>(
    z: &DetectionTable,
    lambda_fp: f64,
    bounds: &SceneBounds,
    rng: &mut R,
) -> Result<DetectionTable> {
    if !(lambda_fp >= 0.0 && lambda_fp.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "lambda_fp",
            reason: "must be finite and non-negative".into(),
        });
    }
    let mean = lambda_fp * bounds.area();
    let mut rows = z.rows.clone();
    for t in 1..=bounds.frames {
        let u: f64 = rng.random();
        let seed = rng.next_u64();
        let count = poisson_inverse(mean, u);
        let mut positions = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..count {
            let x = positions.random::<f64>() * bounds.x_lim;
            let y = positions.random::<f64>() * bounds.y_lim;
            rows.push(Detection::labeled(x, y, t, CLUTTER));
        }
    }
    Ok(DetectionTable::with_frame_count(rows, z.frame_count.max(bounds.frames)))
}

/// Sub-stream identifiers for [`make_task`].
pub const NOISE_STREAM: u64 = 1;
pub const DROP_STREAM: u64 = 2;
pub const CLUTTER_STREAM: u64 = 3;

pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Noise, drops, then clutter, each from its own sub-stream of `seed`.
/// Noisy positions are clamped into the window. Rows are ordered by frame.
/// Returns the labeled and unlabeled views of one realization.
pub fn make_task(
    x: &TrackTable,
    task: &TaskSpec,
    bounds: &SceneBounds,
    seed: u64,
) -> Result<(DetectionTable, DetectionTable)> {
    task.validate()?;
    let mut noisy = corrupt(x, task.sigma_m, &mut stream(seed, NOISE_STREAM));
    for d in &mut noisy.rows {
        (d.x, d.y) = bounds.clamp(d.x, d.y);
    }
    let kept = drop_false_negatives(&noisy, task.p_fn, &mut stream(seed, DROP_STREAM))?;
    let mut labeled = add_clutter(&kept, task.lambda_fp, bounds, &mut stream(seed, CLUTTER_STREAM))?;
    labeled.rows.sort_by_key(|d| d.t);
    let unlabeled = labeled.without_labels();
    Ok((labeled, unlabeled))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopAndGoParams {
    /// Per-frame probability of switching between Brownian and directed motion.
    pub switch_prob: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    /// Brownian step std per axis (px).
    pub sigma_d: f64,
    /// Probability that a particle starts in the directed state.
    pub initial_directed_prob: f64,
}

impl Default for StopAndGoParams {
    fn default() -> Self {
        Self {
            switch_prob: 0.05,
            speed_min: 0.5,
            speed_max: 2.0,
            sigma_d: 0.5,
            initial_directed_prob: 0.5,
        }
    }
}

/// Folds `v` back into `[lo, hi]`; returns whether the direction flipped.
fn reflect(v: &mut f64, lo: f64, hi: f64) -> bool {
    let width = hi - lo;
    if width <= 0.0 {
        *v = lo;
        return false;
    }
    let period = 2.0 * width;
    let mut r = libm::fmod(*v - lo, period);
    if r < 0.0 {
        r += period;
    }
    let flipped_parity = libm::floor((*v - lo) / width) as i64;
    if r > width {
        *v = lo + period - r;
    } else {
        *v = lo + r;
    }
    flipped_parity.rem_euclid(2) == 1
}

fn stop_and_go_track<R: Rng + ?Sized>(
    id: i64,
    frames: u32,
    area: [f64; 4],
    params: &StopAndGoParams,
    rng: &mut R,
) -> Vec<TrackPoint> {
    let [x_lo, x_hi, y_lo, y_hi] = area;
    let mut x = x_lo + rng.random::<f64>() * (x_hi - x_lo);
    let mut y = y_lo + rng.random::<f64>() * (y_hi - y_lo);
    let heading = rng.random::<f64>() * core::f64::consts::TAU;
    let speed = params.speed_min + rng.random::<f64>() * (params.speed_max - params.speed_min);
    let mut vx = speed * libm::cos(heading);
    let mut vy = speed * libm::sin(heading);
    let mut directed = rng.random::<f64>() < params.initial_directed_prob;
    let mut out = Vec::with_capacity(frames as usize);
    out.push(TrackPoint { id, t: 1, x, y });
    for t in 2..=frames {
        if rng.random::<f64>() < params.switch_prob {
            directed = !directed;
        }
        if directed {
            x += vx;
            y += vy;
        } else {
            let nx: f64 = rng.sample(StandardNormal);
            let ny: f64 = rng.sample(StandardNormal);
            x += params.sigma_d * nx;
            y += params.sigma_d * ny;
        }
        if reflect(&mut x, x_lo, x_hi) {
            vx = -vx;
        }
        if reflect(&mut y, y_lo, y_hi) {
            vy = -vy;
        }
        out.push(TrackPoint { id, t, x, y });
    }
    out
}

/// `n` particles alternating between Brownian and directed motion inside the
/// window, with reflecting walls. Every track spans all frames.
pub fn synth_stop_and_go<R: Rng + ?Sized>(
    n: usize,
    bounds: &SceneBounds,
    params: &StopAndGoParams,
    rng: &mut R,
) -> Result<TrackTable> {
    if n == 0 {
        return Err(Error::InvalidParameter {
            name: "n",
            reason: "need at least one particle".into(),
        });
    }
    let area = [0.0, bounds.x_lim, 0.0, bounds.y_lim];
    let rows = (0..n)
        .flat_map(|i| stop_and_go_track(i as i64, bounds.frames, area, params, rng))
        .collect();
    TrackTable::new(rows)
}

/// Like [`synth_stop_and_go`], but particle `i` is confined to the `i`-th of
/// `n` equal horizontal bands.
pub fn synth_banded_stop_and_go<R: Rng + ?Sized>(
    n: usize,
    bounds: &SceneBounds,
    params: &StopAndGoParams,
    rng: &mut R,
) -> Result<TrackTable> {
    if n == 0 {
        return Err(Error::InvalidParameter {
            name: "n",
            reason: "need at least one particle".into(),
        });
    }
    let band = bounds.y_lim / n as f64;
    let rows = (0..n)
        .flat_map(|i| {
            let area = [0.0, bounds.x_lim, band * i as f64, band * (i + 1) as f64];
            stop_and_go_track(i as i64, bounds.frames, area, params, rng)
        })
        .collect();
    TrackTable::new(rows)
}

/// Straight constant-velocity tracks that stay inside the window for all
/// frames and keep every pair farther apart than `min_separation` at every
/// frame. Candidates are drawn by rejection; fails after `max_attempts`.
pub fn synth_constant_velocity<R: Rng + ?Sized>(
    n: usize,
    bounds: &SceneBounds,
    speed: (f64, f64),
    min_separation: f64,
    max_attempts: usize,
    rng: &mut R,
) -> Result<TrackTable> {
    let last = f64::from(bounds.frames - 1);
    let mut tracks: Vec<([f64; 2], [f64; 2])> = Vec::with_capacity(n);
    let mut attempts = 0;
    while tracks.len() < n {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::InvalidParameter {
                name: "min_separation",
                reason: alloc::format!("could not place {n} tracks in {max_attempts} attempts"),
            });
        }
        let heading = rng.random::<f64>() * core::f64::consts::TAU;
        let s = speed.0 + rng.random::<f64>() * (speed.1 - speed.0);
        let v = [s * libm::cos(heading), s * libm::sin(heading)];
        let p0 = [rng.random::<f64>() * bounds.x_lim, rng.random::<f64>() * bounds.y_lim];
        let end = [p0[0] + v[0] * last, p0[1] + v[1] * last];
        if !(0.0..=bounds.x_lim).contains(&end[0]) || !(0.0..=bounds.y_lim).contains(&end[1]) {
            continue;
        }
        // squared distance is convex in time, so the minimum over frames
        // is attained at the continuous minimizer clamped to the frame range
        let clear = tracks.iter().all(|(q0, w)| {
            let dp = [p0[0] - q0[0], p0[1] - q0[1]];
            let dv = [v[0] - w[0], v[1] - w[1]];
            let vv = dv[0] * dv[0] + dv[1] * dv[1];
            let tau = if vv > 0.0 {
                (-(dp[0] * dv[0] + dp[1] * dv[1]) / vv).clamp(0.0, last)
            } else {
                0.0
            };
            let gap = libm::hypot(dp[0] + dv[0] * tau, dp[1] + dv[1] * tau);
            gap > min_separation
        });
        if clear {
            tracks.push((p0, v));
        }
    }
    let rows = tracks
        .iter()
        .enumerate()
        .flat_map(|(i, (p0, v))| {
            (1..=bounds.frames).map(move |t| {
                let s = f64::from(t - 1);
                TrackPoint {
                    id: i as i64,
                    t,
                    x: p0[0] + v[0] * s,
                    y: p0[1] + v[1] * s,
                }
            })
        })
        .collect();
    TrackTable::new(rows)
}
