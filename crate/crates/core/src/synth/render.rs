//! Stroke-level rendering of passcodes into fingertip trajectories.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;
use crate::signal::{DeviceKind, RawTrajectory};

/// One stroke of a passcode: via points in the canonical writing plane
/// (x to the right, y up, z toward the writer) and a nominal duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stroke {
    pub via: Vec<[f64; 3]>,
    pub duration: f64,
    /// Glyph this stroke belongs to and its position within the glyph. Users
    /// write a glyph the same way wherever it appears, so style offsets are
    /// keyed by these.
    pub glyph: usize,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PasscodeSpec {
    pub glyphs: Vec<usize>,
    pub strokes: Vec<Stroke>,
}

impl PasscodeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.strokes.len() < 2 {
            return Err(Error::Validation("a passcode needs at least 2 strokes".into()));
        }
        let ok = self
            .strokes
            .iter()
            .all(|s| !s.via.is_empty() && s.duration > 0.0 && s.via.iter().flatten().all(|v| v.is_finite()));
        if !ok {
            return Err(Error::Validation("stroke with no via points or bad duration".into()));
        }
        Ok(())
    }
}

/// Shape of one glyph: strokes of 2D via points inside the unit box.
#[derive(Debug, Clone, PartialEq)]
pub struct Glyph {
    pub strokes: Vec<Vec<[f64; 2]>>,
}

/// A fixed procedural alphabet shared by every user.
pub fn alphabet(size: usize, seed: u64) -> Vec<Glyph> {
    let mut r = rng::rng(rng::derive_str(seed, "alphabet"));
    (0..size)
        .map(|g| {
            // Keep a healthy share of single-stroke glyphs so any stroke
            // budget can be met exactly.
            let n_strokes = match g % 6 {
                0..=2 => 1,
                3 | 4 => 2,
                _ => 3,
            };
            let strokes = (0..n_strokes)
                .map(|_| {
                    let n_via = r.random_range(2..=5);
                    let mut via: Vec<[f64; 2]> = Vec::with_capacity(n_via);
                    while via.len() < n_via {
                        let p = [r.random::<f64>(), r.random::<f64>()];
                        let far_enough = via.last().is_none_or(|q| (p[0] - q[0]).hypot(p[1] - q[1]) > 0.3);
                        if far_enough {
                            via.push(p);
                        }
                    }
                    via
                })
                .collect();
            Glyph { strokes }
        })
        .collect()
}

/// Lays glyphs out left to right, one unit cell per glyph.
pub fn layout(glyphs: &[usize], alphabet: &[Glyph]) -> PasscodeSpec {
    let mut strokes = Vec::new();
    for (slot, &g) in glyphs.iter().enumerate() {
        let x0 = 1.25 * slot as f64;
        for (index, s) in alphabet[g].strokes.iter().enumerate() {
            let via: Vec<[f64; 3]> = s.iter().map(|p| [x0 + p[0], p[1], 0.0]).collect();
            let length: f64 = via.windows(2).map(|w| dist(&w[0], &w[1])).sum();
            strokes.push(Stroke {
                via,
                duration: 0.05 + 0.09 * length,
                glyph: g,
                index,
            });
        }
    }
    PasscodeSpec {
        glyphs: glyphs.to_vec(),
        strokes,
    }
}

/// Common glyph sequences people reuse across passcodes, most popular
/// first.
pub fn word_pool(alphabet: &[Glyph], size: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut r = rng::rng(rng::derive_str(seed, "words"));
    (0..size)
        .map(|_| {
            let len = r.random_range(2..=3);
            (0..len).map(|_| r.random_range(0..alphabet.len())).collect()
        })
        .collect()
}

/// Draws glyphs until exactly `n_strokes` strokes are used. With
/// probability `common` each next chunk is a word from `pool` (Zipf-weighted)
/// instead of a single random glyph.
pub fn random_passcode<R: Rng>(
    n_strokes: usize,
    alphabet: &[Glyph],
    pool: &[Vec<usize>],
    common: f64,
    r: &mut R,
) -> PasscodeSpec {
    let strokes_of = |gs: &[usize]| gs.iter().map(|&g| alphabet[g].strokes.len()).sum::<usize>();
    let zipf: Vec<f64> = (1..=pool.len()).map(|k| 1.0 / k as f64).collect();
    let total: f64 = zipf.iter().sum();
    let mut glyphs = Vec::new();
    let mut left = n_strokes;
    while left > 0 {
        if !pool.is_empty() && r.random_bool(common) {
            let mut u = r.random::<f64>() * total;
            let mut k = 0;
            while k + 1 < pool.len() && u >= zipf[k] {
                u -= zipf[k];
                k += 1;
            }
            let word = &pool[k];
            if strokes_of(word) <= left {
                left -= strokes_of(word);
                glyphs.extend_from_slice(word);
                continue;
            }
        }
        let fitting: Vec<usize> = (0..alphabet.len())
            .filter(|&g| alphabet[g].strokes.len() <= left)
            .collect();
        let g = fitting[r.random_range(0..fitting.len())];
        left -= alphabet[g].strokes.len();
        glyphs.push(g);
    }
    layout(&glyphs, alphabet)
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// How one person writes. Fixed habits are keyed pseudo-random offsets, so
/// the same user reproduces them on every repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserStyle {
    pub key: u64,
    pub speed_scale: f64,
    pub slant: f64,
    pub size: f64,
    /// Scale of the user's fixed offsets on every via point.
    pub via_jitter: f64,
    /// Scale of the fresh via noise drawn on every repetition.
    pub rep_jitter: f64,
    /// Share of strokes the user writes inconsistently.
    pub sloppy_fraction: f64,
    /// Repetition noise multiplier on those strokes.
    pub sloppy_factor: f64,
    /// Log-scale spread of the user's fixed per-segment timing habits.
    pub timing_jitter: f64,
    pub tremor_sigma: f64,
    /// Random-walk step applied once per elapsed session.
    pub drift_step: f64,
    pub session: u32,
}

impl UserStyle {
    pub fn random<R: Rng>(key: u64, r: &mut R) -> Self {
        Self {
            key,
            speed_scale: r.random_range(0.8..1.25),
            slant: r.random_range(-0.25..0.25),
            size: r.random_range(0.85..1.15),
            via_jitter: 0.05,
            rep_jitter: r.random_range(0.015..0.045),
            sloppy_fraction: if r.random_bool(0.5) {
                r.random_range(0.1..0.4)
            } else {
                0.0
            },
            sloppy_factor: r.random_range(3.0..6.0),
            timing_jitter: 0.15,
            tremor_sigma: r.random_range(0.0005..0.0015),
            drift_step: 0.0,
            session: 0,
        }
    }

    /// The same writer after `session` sessions of drift.
    pub fn at_session(&self, session: u32, drift_step: f64) -> Self {
        Self {
            session,
            drift_step,
            ..self.clone()
        }
    }

    fn keyed(&self, tag: &[u64]) -> rng::Rng {
        rng::rng(tag.iter().fold(self.key, |acc, &t| rng::derive(acc, t)))
    }

    /// Fixed offset of a via point plus accumulated session drift.
    fn via_offset(&self, glyph: usize, stroke: usize, via: usize) -> [f64; 3] {
        let mut off = [0.0; 3];
        let mut r = self.keyed(&[1, glyph as u64, stroke as u64, via as u64]);
        for o in &mut off {
            *o = self.via_jitter * normal(&mut r);
        }
        off[2] *= 0.5;
        for s in 1..=self.session {
            let mut r = self.keyed(&[2, s as u64, glyph as u64, stroke as u64, via as u64]);
            for o in &mut off {
                *o += self.drift_step * normal(&mut r);
            }
        }
        off
    }

    fn timing(&self, glyph: usize, stroke: usize, segment: usize) -> f64 {
        let mut r = self.keyed(&[3, glyph as u64, stroke as u64, segment as u64]);
        (self.timing_jitter * normal(&mut r)).exp()
    }

    fn is_sloppy(&self, glyph: usize, stroke: usize) -> bool {
        let mut r = self.keyed(&[4, glyph as u64, stroke as u64]);
        r.random::<f64>() < self.sloppy_fraction
    }

    fn drifted_globals(&self) -> (f64, f64) {
        let (mut speed, mut slant) = (self.speed_scale.ln(), self.slant);
        for s in 1..=self.session {
            let mut r = self.keyed(&[5, s as u64]);
            speed += 0.5 * self.drift_step * normal(&mut r);
            slant += 0.5 * self.drift_step * normal(&mut r);
        }
        (speed.exp(), slant)
    }
}

#[inline]
fn normal<R: Rng>(r: &mut R) -> f64 {
    StandardNormal.sample(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    /// 2 for a pointer stand-in, 3 for a camera.
    pub dims: usize,
    pub rate_hz: f64,
    /// Largest relative speed change of the smooth random time warp.
    pub warp: f64,
    /// Largest posture rotation (radians) about the vertical axis.
    pub yaw: f64,
    pub tilt: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            dims: 3,
            rate_hz: 60.0,
            warp: 0.05,
            yaw: 0.35,
            tilt: 0.1,
        }
    }
}

struct Knot {
    t: f64,
    p: [f64; 3],
    v: [f64; 3],
}

/// Quintic (minimum-jerk) Hermite segment with zero end accelerations.
fn quintic(a: &Knot, b: &Knot, t: f64) -> [f64; 3] {
    let d = b.t - a.t;
    let s = ((t - a.t) / d).clamp(0.0, 1.0);
    let (s3, s4, s5) = (s.powi(3), s.powi(4), s.powi(5));
    let h0 = 1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5;
    let h1 = s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5;
    let h4 = -4.0 * s3 + 7.0 * s4 - 3.0 * s5;
    let h5 = 10.0 * s3 - 15.0 * s4 + 6.0 * s5;
    let mut out = [0.0; 3];
    for k in 0..3 {
        out[k] = h0 * a.p[k] + h1 * a.v[k] * d + h4 * b.v[k] * d + h5 * b.p[k];
    }
    out
}

/// Renders one repetition of `spec` written with `style`.
pub fn gen_signal(spec: &PasscodeSpec, style: &UserStyle, cfg: &RenderConfig, seed: u64) -> Result<RawTrajectory> {
    spec.validate()?;
    let mut r = rng::rng(seed);
    let (speed, slant) = style.drifted_globals();
    let (shear, size) = (slant.tan(), style.size);

    // Via points with habit offsets and fresh repetition noise, and the
    // duration of the segment arriving at each.
    let mut points: Vec<[f64; 3]> = Vec::new();
    let mut durations: Vec<f64> = Vec::new();
    let mut pen_up: Vec<bool> = Vec::new();
    for stroke in &spec.strokes {
        let sloppy = style.is_sloppy(stroke.glyph, stroke.index);
        let noise = style.rep_jitter * if sloppy { style.sloppy_factor } else { 1.0 };
        let seg_len: f64 = stroke.via.windows(2).map(|w| dist(&w[0], &w[1])).sum::<f64>().max(1e-9);
        for (vi, v) in stroke.via.iter().enumerate() {
            let off = style.via_offset(stroke.glyph, stroke.index, vi);
            let mut p = [0.0; 3];
            for k in 0..3 {
                p[k] = v[k] + off[k] + noise * normal(&mut r);
            }
            p[0] += shear * p[1];
            let p = [size * p[0], size * p[1], size * p[2]];
            let habit = style.timing(stroke.glyph, stroke.index, vi);
            let rep = (0.05 * normal(&mut r)).exp();
            let dur = if let Some(prev) = points.last() {
                let nominal = if vi == 0 {
                    0.04 + 0.07 * dist(prev, &p)
                } else {
                    stroke.duration * dist(&stroke.via[vi - 1], v) / seg_len
                };
                nominal.max(0.02) * habit * rep / speed
            } else {
                0.0
            };
            points.push(p);
            durations.push(dur);
            pen_up.push(vi == 0 || vi + 1 == stroke.via.len());
        }
    }

    let n = points.len();
    let mut knots: Vec<Knot> = Vec::with_capacity(n);
    let mut t = 0.0;
    for i in 0..n {
        t += durations[i];
        knots.push(Knot {
            t,
            p: points[i],
            v: [0.0; 3],
        });
    }
    // Catmull-Rom tangents, damped at stroke ends and zero at both ends.
    for i in 1..n.saturating_sub(1) {
        let dt = knots[i + 1].t - knots[i - 1].t;
        let damp = if pen_up[i] { 0.5 } else { 1.0 };
        for k in 0..3 {
            knots[i].v[k] = damp * (knots[i + 1].p[k] - knots[i - 1].p[k]) / dt;
        }
    }
    let writing = knots.last().map_or(0.0, |k| k.t);
    let lead_in = r.random_range(0.3..0.6);
    let lead_out = r.random_range(0.3..0.6);
    let total = lead_in + writing + lead_out;

    // Smooth monotone warp of the writing interval.
    let a1 = cfg.warp * r.random_range(-0.6..0.6);
    let a2 = (cfg.warp - a1.abs()) * r.random_range(-1.0..1.0);
    let warp = |x: f64| {
        use std::f64::consts::PI;
        x + a1 * (PI * x).sin() / PI + a2 * (2.0 * PI * x).sin() / (2.0 * PI)
    };

    let rotation = posture(cfg, &mut r);
    let offset = [
        r.random_range(-2.0..2.0),
        r.random_range(-1.0..1.0),
        r.random_range(-1.0..1.0),
    ];

    let samples = (total * cfg.rate_hz).floor() as usize + 1;
    let mut times = Vec::with_capacity(samples);
    let mut data = Vec::with_capacity(samples * cfg.dims);
    let mut seg = 0;
    for s in 0..samples {
        let ts = s as f64 / cfg.rate_hz;
        let p = if n == 1 || ts <= lead_in {
            knots[0].p
        } else if ts >= lead_in + writing {
            knots[n - 1].p
        } else {
            let u = writing * warp((ts - lead_in) / writing);
            while seg + 2 < n && knots[seg + 1].t < u {
                seg += 1;
            }
            quintic(&knots[seg], &knots[seg + 1], u)
        };
        let mut q = [0.0; 3];
        for (i, qi) in q.iter_mut().enumerate() {
            *qi = (0..3).map(|k| rotation[i][k] * p[k]).sum::<f64>() + offset[i];
            *qi += style.tremor_sigma * normal(&mut r);
        }
        times.push(ts);
        data.extend_from_slice(&q[..cfg.dims]);
    }
    let device = if cfg.dims == 2 {
        DeviceKind::Pointer2d
    } else {
        DeviceKind::Camera3d
    };
    RawTrajectory::new(device, times, Matrix::from_vec(samples, cfg.dims, data))
}

/// Random hand posture: yaw about the vertical axis and small tilts, or a
/// single in-plane rotation in 2D.
fn posture<R: Rng>(cfg: &RenderConfig, r: &mut R) -> [[f64; 3]; 3] {
    if cfg.dims == 2 {
        let a = r.random_range(-cfg.tilt..=cfg.tilt);
        let (s, c) = a.sin_cos();
        return [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]];
    }
    let (sy, cy) = r.random_range(-cfg.yaw..=cfg.yaw).sin_cos();
    let (sp, cp) = r.random_range(-cfg.tilt..=cfg.tilt).sin_cos();
    let (sr, cr) = r.random_range(-cfg.tilt..=cfg.tilt).sin_cos();
    let yaw = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let pitch = [[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]];
    let roll = [[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]];
    matmul3(&matmul3(&yaw, &pitch), &roll)
}

fn matmul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}
