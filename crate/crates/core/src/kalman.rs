//! Constant-velocity Kalman filter on the state `[x, ẋ, y, ẏ]`.
//!
//! Process noise is the integrated white-acceleration model: per axis
//! `σ_q²·[[dt³/3, dt²/2], [dt²/2, dt]]`. Positions are observed directly with
//! isotropic noise `R = σ_r²·I₂`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{DetectionTable, TrackPoint};

pub type Mat4 = [[f64; 4]; 4];
pub type Vec4 = [f64; 4];
pub type Mat2 = [[f64; 2]; 2];

/// Initial velocity variance for a freshly spawned track (px²/frame²).
pub const INITIAL_VELOCITY_VARIANCE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct MotionModel {
    pub f: Mat4,
    pub q: Mat4,
    pub h: [[f64; 4]; 2],
    pub r: Mat2,
    pub dt: f64,
    pub sigma_q: f64,
    pub sigma_r: f64,
}

impl MotionModel {
    pub fn constant_velocity(dt: f64, sigma_q: f64, sigma_r: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParameter {
                name: "dt",
                reason: "must be positive and finite".into(),
            });
        }
        if !(sigma_q >= 0.0) || !(sigma_r >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "sigma",
                reason: "noise parameters must be non-negative".into(),
            });
        }
        let mut f = identity4();
        f[0][1] = dt;
        f[2][3] = dt;

        let s2 = sigma_q * sigma_q;
        let pp = s2 * dt * dt * dt / 3.0;
        let pv = s2 * dt * dt / 2.0;
        let vv = s2 * dt;
        let q = [
            [pp, pv, 0.0, 0.0],
            [pv, vv, 0.0, 0.0],
            [0.0, 0.0, pp, pv],
            [0.0, 0.0, pv, vv],
        ];
        let h = [[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]];
        let r2 = sigma_r * sigma_r;
        let r = [[r2, 0.0], [0.0, r2]];
        Ok(Self {
            f,
            q,
            h,
            r,
            dt,
            sigma_q,
            sigma_r,
        })
    }

    /// `dt = 0.1`, `σ_q = σ_r = 1e-3`.
    pub fn default_paper() -> Self {
        Self::constant_velocity(0.1, 1e-3, 1e-3).expect("valid defaults")
    }
}

pub fn make_constant_velocity_model(dt: f64, sigma_q: f64, sigma_r: f64) -> Result<MotionModel> {
    MotionModel::constant_velocity(dt, sigma_q, sigma_r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    pub mean: Vec4,
    pub cov: Mat4,
}

impl GaussianState {
    /// Stationary track at `(x, y)` with position variance `σ_r²` and unit
    /// velocity variance.
    pub fn from_position(x: f64, y: f64, model: &MotionModel) -> Self {
        let r2 = model.sigma_r * model.sigma_r;
        let mut cov = [[0.0; 4]; 4];
        cov[0][0] = r2;
        cov[1][1] = INITIAL_VELOCITY_VARIANCE;
        cov[2][2] = r2;
        cov[3][3] = INITIAL_VELOCITY_VARIANCE;
        Self {
            mean: [x, 0.0, y, 0.0],
            cov,
        }
    }

    /// `H·mean`
    pub fn position(&self) -> [f64; 2] {
        [self.mean[0], self.mean[2]]
    }
}

pub fn predict(s: &GaussianState, m: &MotionModel) -> GaussianState {
    let mean = mat_vec(&m.f, &s.mean);
    let mut cov = mat_mul(&mat_mul(&m.f, &s.cov), &transpose(&m.f));
    for (row, q_row) in cov.iter_mut().zip(&m.q) {
        for (c, q) in row.iter_mut().zip(q_row) {
            *c += q;
        }
    }
    GaussianState {
        mean,
        cov: symmetrize(cov),
    }
}

/// Innovation `z − H·mean` and its covariance `H·P·Hᵀ + R`.
pub fn innovation(s: &GaussianState, z: [f64; 2], m: &MotionModel) -> ([f64; 2], Mat2) {
    let y = [z[0] - s.mean[0], z[1] - s.mean[2]];
    let p = &s.cov;
    let cov = [
        [p[0][0] + m.r[0][0], p[0][2] + m.r[0][1]],
        [p[2][0] + m.r[1][0], p[2][2] + m.r[1][1]],
    ];
    (y, cov)
}

/// Normalized innovation squared `yᵀ·S⁻¹·y`.
pub fn normalized_innovation_squared(s: &GaussianState, z: [f64; 2], m: &MotionModel) -> Result<f64> {
    let (y, cov) = innovation(s, z, m);
    let inv = invert2(&cov)?;
    Ok(y[0] * (inv[0][0] * y[0] + inv[0][1] * y[1]) + y[1] * (inv[1][0] * y[0] + inv[1][1] * y[1]))
}

/// Measurement update; covariance in Joseph form, re-symmetrized.
pub fn update(s: &GaussianState, z: [f64; 2], m: &MotionModel) -> Result<GaussianState> {
    if !z[0].is_finite() || !z[1].is_finite() {
        return Err(Error::InvalidParameter {
            name: "measurement",
            reason: "must be finite".into(),
        });
    }
    let (y, innov_cov) = innovation(s, z, m);
    let inv = invert2(&innov_cov)?;
    // P·Hᵀ picks columns 0 and 2.
    let mut gain = [[0.0; 2]; 4];
    for (i, g) in gain.iter_mut().enumerate() {
        let ph = [s.cov[i][0], s.cov[i][2]];
        g[0] = ph[0] * inv[0][0] + ph[1] * inv[1][0];
        g[1] = ph[0] * inv[0][1] + ph[1] * inv[1][1];
    }
    let mut mean = s.mean;
    for (mv, g) in mean.iter_mut().zip(&gain) {
        *mv += g[0] * y[0] + g[1] * y[1];
    }
    // I − K·H
    let mut ikh = identity4();
    for (i, g) in gain.iter().enumerate() {
        ikh[i][0] -= g[0];
        ikh[i][2] -= g[1];
    }
    let mut cov = mat_mul(&mat_mul(&ikh, &s.cov), &transpose(&ikh));
    for i in 0..4 {
        for j in 0..4 {
            let mut krk = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    krk += gain[i][a] * m.r[a][b] * gain[j][b];
                }
            }
            cov[i][j] += krk;
        }
    }
    Ok(GaussianState {
        mean,
        cov: symmetrize(cov),
    })
}

/// Filters one trajectory's detections (sorted by frame). Gaps of `g` frames
/// get `g` unit predicts before the update. Returns the posterior position at
/// every detection frame.
pub fn filter_track(track: &DetectionTable, id: i64, m: &MotionModel) -> Result<Vec<TrackPoint>> {
    let first = track.rows.first().ok_or(Error::Empty("track"))?;
    let mut state = GaussianState::from_position(first.x, first.y, m);
    let mut out = Vec::with_capacity(track.len());
    out.push(TrackPoint {
        id,
        t: first.t,
        x: first.x,
        y: first.y,
    });
    let mut last_t = first.t;
    for d in &track.rows[1..] {
        if d.t == last_t {
            return Err(Error::DuplicateFrame { frame: d.t });
        }
        if d.t < last_t {
            return Err(Error::UnorderedFrames { id, frame: d.t });
        }
        for _ in last_t..d.t {
            state = predict(&state, m);
        }
        state = update(&state, [d.x, d.y], m)?;
        let [x, y] = state.position();
        out.push(TrackPoint { id, t: d.t, x, y });
        last_t = d.t;
    }
    Ok(out)
}

fn identity4() -> Mat4 {
    let mut m = [[0.0; 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

fn mat_mul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn mat_vec(a: &Mat4, v: &Vec4) -> Vec4 {
    let mut out = [0.0; 4];
    for (o, row) in out.iter_mut().zip(a) {
        *o = row.iter().zip(v).map(|(x, y)| x * y).sum();
    }
    out
}

fn transpose(a: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[j][i] = a[i][j];
        }
    }
    out
}

fn symmetrize(mut a: Mat4) -> Mat4 {
    for i in 0..4 {
        for j in (i + 1)..4 {
            let avg = 0.5 * (a[i][j] + a[j][i]);
            a[i][j] = avg;
            a[j][i] = avg;
        }
    }
    a
}

fn invert2(a: &Mat2) -> Result<Mat2> {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let scale = a[0][0].abs().max(a[1][1].abs());
    if !(det > 0.0) || det <= f64::EPSILON * scale * scale || !det.is_finite() {
        return Err(Error::SingularInnovation);
    }
    Ok([[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]])
}

/// Eigenvalues of a symmetric 4×4 matrix by cyclic Jacobi rotations.
pub fn symmetric_eigenvalues(a: &Mat4) -> [f64; 4] {
    let mut m = *a;
    for _ in 0..100 {
        let off: f64 = (0..4)
            .flat_map(|i| (0..4).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..4 {
            for q in (p + 1)..4 {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..4 {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..4 {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    [m[0][0], m[1][1], m[2][2], m[3][3]]
}
