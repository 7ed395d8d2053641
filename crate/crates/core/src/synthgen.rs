//! Seeded generator of labeled synthetic cutting motions.
//!
//! Quality class `c` controls two geometric axes: better cuts are longer and
//! straighter. Each recording is a straight segment of length
//! `base_length * (0.5 + 0.1 c)` with a half-sine bend, perpendicular jitter of
//! standard deviation `sigma(c) = 0.004 (5 - c) + 0.0005` meters, and tool
//! orientations that follow the direction of motion with small-angle noise.
//! Bend and orientation noise also shrink with `5 - c`.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::training::window_seed;
use crate::trajectory::{write_atomic, write_trajectory, Frame, RawTrajectory, TrajectoryError, LABELS_FILE};
use crate::NUM_SCORE_CLASSES;

/// Tool axis in its own frame; orientations rotate it onto the motion direction.
pub const TOOL_AXIS: [f64; 3] = [0.0, 0.0, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub per_class: usize,
    /// Inclusive range of recording lengths in frames.
    pub frames_range: (usize, usize),
    /// Meters.
    pub base_length: f64,
    /// Segment length is `base_length * (length_offset + length_step * c)`.
    pub length_offset: f64,
    pub length_step: f64,
    /// Jitter is `jitter_floor + jitter_step * (5 - c)` meters.
    pub jitter_floor: f64,
    pub jitter_step: f64,
    /// Bend amplitude per unit of `5 - c`, meters.
    pub bend_step: f64,
    /// Scatter of the bend's side around the first perpendicular of the cut
    /// direction, radians. `TAU` makes it uniform.
    pub bend_phase_spread: f64,
    /// Orientation noise standard deviation per unit of `5 - c`, radians.
    pub rotation_noise_step: f64,
    /// Strength of a random per-recording speed profile; progress along the
    /// cut is `s + warp * g * sin(pi s) / pi` with `g ~ N(0, 1)` clamped to
    /// keep it monotone.
    pub warp: f64,
    /// Standard deviation of a constant per-recording tilt of the tool in its
    /// own frame, radians.
    pub tilt_spread: f64,
    /// Half-width of the cube holding the start points, meters.
    pub origin_extent: f64,
    /// Nominal cut direction; ignored when `direction_spread` is `None`.
    pub incision_axis: [f64; 3],
    /// Angular scatter of cut directions around `incision_axis`, radians.
    /// `None` draws directions uniformly on the sphere.
    pub direction_spread: Option<f64>,
    /// Rotation applied to the whole scene, `(qx, qy, qz, qw)`.
    pub frame_rotation: [f64; 4],
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            per_class: 30,
            frames_range: (120, 400),
            base_length: 0.10,
            length_offset: 0.5,
            length_step: 0.1,
            jitter_floor: 0.0005,
            jitter_step: 0.004,
            bend_step: 0.006,
            bend_phase_spread: 0.3,
            rotation_noise_step: 0.02,
            warp: 0.0,
            tilt_spread: 0.0,
            origin_extent: 0.2,
            incision_axis: [1.0, 0.0, 0.0],
            direction_spread: Some(0.05),
            frame_rotation: [0.0, 0.0, 0.0, 1.0],
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), TrajectoryError> {
        let bad = |reason: String| {
            Err(TrajectoryError::Manifest {
                file: "synth config".into(),
                reason,
            })
        };
        if self.per_class == 0 {
            return bad("per_class must be at least 1".into());
        }
        let (lo, hi) = self.frames_range;
        if lo < 2 || hi < lo {
            return bad(format!("frames range ({lo}, {hi}) must satisfy 2 <= min <= max"));
        }
        if !(self.jitter_step > 0.0) || self.jitter_floor < 0.0 {
            return bad("jitter must be positive and strictly decreasing in class".into());
        }
        if !(self.base_length > 0.0) || self.length_offset <= 0.0 || !(self.length_step > 0.0) {
            return bad("lengths must be positive and increasing in class".into());
        }
        if self.bend_step < 0.0 || self.rotation_noise_step < 0.0 || self.origin_extent < 0.0 {
            return bad("noise scales must be non-negative".into());
        }
        if self.direction_spread.is_some_and(|s| !(s >= 0.0)) {
            return bad("direction spread must be non-negative".into());
        }
        if !(norm(&self.incision_axis) > 1e-9) {
            return bad("incision axis must be non-zero".into());
        }
        let n = norm(&self.frame_rotation);
        if !((n - 1.0).abs() < 1e-9) {
            return bad(format!("frame rotation has norm {n}"));
        }
        Ok(())
    }

    pub fn segment_length(&self, class: u8) -> f64 {
        self.base_length * (self.length_offset + self.length_step * f64::from(class))
    }

    pub fn jitter_sigma(&self, class: u8) -> f64 {
        self.jitter_floor + self.jitter_step * quality_gap(class)
    }
}

fn quality_gap(class: u8) -> f64 {
    (NUM_SCORE_CLASSES - 1) as f64 - f64::from(class)
}

type V3 = [f64; 3];

fn dot(a: &V3, b: &V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: &V3, b: &V3) -> V3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn scaled(v: &V3, s: f64) -> V3 {
    [v[0] * s, v[1] * s, v[2] * s]
}

fn unit(v: &V3) -> V3 {
    scaled(v, 1.0 / norm(v))
}

/// Hamilton product of `(x, y, z, w)` quaternions.
fn quat_mul(a: &[f64; 4], b: &[f64; 4]) -> [f64; 4] {
    let [ax, ay, az, aw] = *a;
    let [bx, by, bz, bw] = *b;
    [
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
        aw * bw - ax * bx - ay * by - az * bz,
    ]
}

fn rotate(q: &[f64; 4], v: &V3) -> V3 {
    let p = [v[0], v[1], v[2], 0.0];
    let conj = [-q[0], -q[1], -q[2], q[3]];
    let r = quat_mul(&quat_mul(q, &p), &conj);
    [r[0], r[1], r[2]]
}

fn axis_angle(axis: &V3, angle: f64) -> [f64; 4] {
    let s = (angle / 2.0).sin();
    [axis[0] * s, axis[1] * s, axis[2] * s, (angle / 2.0).cos()]
}

/// Some unit vector perpendicular to `v`, chosen deterministically.
fn perpendicular(v: &V3) -> V3 {
    let helper = if v[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    unit(&cross(v, &helper))
}

/// Smallest rotation taking unit vector `from` onto unit vector `to`.
/// Opposite vectors rotate half a turn about a fixed perpendicular axis.
pub fn shortest_arc(from: &V3, to: &V3) -> [f64; 4] {
    let d = dot(from, to);
    if d < -1.0 + 1e-12 {
        let axis = perpendicular(from);
        return [axis[0], axis[1], axis[2], 0.0];
    }
    let c = cross(from, to);
    let q = [c[0], c[1], c[2], 1.0 + d];
    let n = norm(&q);
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

fn random_unit<R: Rng>(rng: &mut R) -> V3 {
    loop {
        let v: V3 = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n = norm(&v);
        if n > 1e-9 {
            return scaled(&v, 1.0 / n);
        }
    }
}

/// Builds the `ordinal`-th recording, which belongs to `class`.
pub fn generate_trajectory(cfg: &SynthConfig, class: u8, ordinal: usize) -> RawTrajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(window_seed(cfg.seed, ordinal));
    let (lo, hi) = cfg.frames_range;
    let frames = rng.random_range(lo..=hi);
    let gap = quality_gap(class);

    let direction = match cfg.direction_spread {
        None => random_unit(&mut rng),
        Some(spread) => {
            let axis = unit(&cfg.incision_axis);
            let (u, v) = (perpendicular(&axis), cross(&axis, &perpendicular(&axis)));
            let (a, b): (f64, f64) = (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
            unit(&std::array::from_fn(|k| axis[k] + spread * (a * u[k] + b * v[k])))
        }
    };
    let origin: V3 = std::array::from_fn(|_| rng.random_range(-cfg.origin_extent..=cfg.origin_extent));
    let e1 = perpendicular(&direction);
    let e2 = cross(&direction, &e1);
    let phase = cfg.bend_phase_spread * (rng.random::<f64>() - 0.5);
    let bend_dir: V3 = std::array::from_fn(|i| phase.cos() * e1[i] + phase.sin() * e2[i]);

    let tilt = axis_angle(&random_unit(&mut rng), cfg.tilt_spread * { let g: f64 = StandardNormal.sample(&mut rng); g });
    let warp = {
        let g: f64 = StandardNormal.sample(&mut rng);
        (cfg.warp * g).clamp(-0.95, 0.95)
    };
    let length = cfg.segment_length(class);
    let bend = cfg.bend_step * gap;
    let jitter = Normal::new(0.0, cfg.jitter_sigma(class)).expect("positive sigma");
    let angle_noise = Normal::new(0.0, cfg.rotation_noise_step * gap).expect("finite sigma");

    let out = (0..frames)
        .map(|i| {
            let u = i as f64 / (frames - 1) as f64;
            let s = u + warp * (std::f64::consts::PI * u).sin() / std::f64::consts::PI;
            let arc = (std::f64::consts::PI * s).sin();
            let (j1, j2) = (jitter.sample(&mut rng), jitter.sample(&mut rng));
            let position: V3 = std::array::from_fn(|k| {
                origin[k] + s * length * direction[k] + bend * arc * bend_dir[k] + j1 * e1[k] + j2 * e2[k]
            });
            let slope = bend * std::f64::consts::PI * (std::f64::consts::PI * s).cos();
            let tangent = unit(&std::array::from_fn(|k| length * direction[k] + slope * bend_dir[k]));
            let align = shortest_arc(&TOOL_AXIS, &tangent);
            let wobble = axis_angle(&random_unit(&mut rng), angle_noise.sample(&mut rng));
            let q = quat_mul(&wobble, &quat_mul(&align, &tilt));
            let q = quat_mul(&cfg.frame_rotation, &q);
            let n = norm(&q);
            Frame {
                index: i as u64,
                translation: rotate(&cfg.frame_rotation, &position),
                rotation: [q[0] / n, q[1] / n, q[2] / n, q[3] / n],
            }
        })
        .collect();
    RawTrajectory::new(format!("c{class}_{ordinal:05}"), out, Some(class))
        .expect("generated frames are unique and labeled")
}

/// All recordings, class by class.
pub fn generate_trajectories(cfg: &SynthConfig) -> Result<Vec<RawTrajectory>, TrajectoryError> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.per_class * NUM_SCORE_CLASSES);
    for class in 0..NUM_SCORE_CLASSES as u8 {
        for k in 0..cfg.per_class {
            let ordinal = usize::from(class) * cfg.per_class + k;
            out.push(generate_trajectory(cfg, class, ordinal));
        }
    }
    Ok(out)
}

/// Writes one CSV per recording plus `labels.csv` into `dir`.
pub fn generate(cfg: &SynthConfig, dir: &Path) -> Result<Vec<RawTrajectory>, TrajectoryError> {
    let trajectories = generate_trajectories(cfg)?;
    fs::create_dir_all(dir).map_err(|source| TrajectoryError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut labels = String::from("file,label\n");
    for t in &trajectories {
        let file = format!("{}.csv", t.id);
        write_trajectory(t, &dir.join(&file))?;
        labels.push_str(&format!("{file},{}\n", t.label().expect("labeled")));
    }
    let path = dir.join(LABELS_FILE);
    write_atomic(&path, labels.as_bytes()).map_err(|source| TrajectoryError::Io { path, source })?;
    Ok(trajectories)
}

/// Chord length and straightness of a recording.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shape {
    /// Distance from the first to the last translation, meters.
    pub chord_length: f64,
    /// RMS distance of the translations from their orthogonal least-squares line.
    pub line_residual: f64,
}

pub fn describe(t: &RawTrajectory) -> Result<Shape, TrajectoryError> {
    if t.len() < 2 {
        return Err(TrajectoryError::TooShort {
            id: t.id.clone(),
            frames: t.len(),
        });
    }
    let points: Vec<V3> = t.frames().iter().map(|f| f.translation).collect();
    let first = points[0];
    let last = points[points.len() - 1];
    let chord_length = norm(&std::array::from_fn::<f64, 3, _>(|k| last[k] - first[k]));
    Ok(Shape {
        chord_length,
        line_residual: line_residual(&points),
    })
}

/// RMS perpendicular distance to the principal axis through the centroid.
pub fn line_residual(points: &[V3]) -> f64 {
    let n = points.len() as f64;
    let mean: V3 = std::array::from_fn(|k| points.iter().map(|p| p[k]).sum::<f64>() / n);
    let mut cov = [[0.0; 3]; 3];
    for p in points {
        let d: V3 = std::array::from_fn(|k| p[k] - mean[k]);
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += d[i] * d[j];
            }
        }
    }
    let axis = principal_axis(cov);
    let sum_sq: f64 = points
        .iter()
        .map(|p| {
            let d: V3 = std::array::from_fn(|k| p[k] - mean[k]);
            let along = dot(&d, &axis);
            let perp: V3 = std::array::from_fn(|k| d[k] - along * axis[k]);
            dot(&perp, &perp)
        })
        .sum();
    (sum_sq / n).sqrt()
}

/// Eigenvector of the largest eigenvalue of a symmetric 3x3 matrix, by
/// cyclic Jacobi rotations.
fn principal_axis(mut a: [[f64; 3]; 3]) -> V3 {
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _ in 0..50 {
        let off = a[0][1].abs() + a[0][2].abs() + a[1][2].abs();
        let scale = a[0][0].abs() + a[1][1].abs() + a[2][2].abs();
        if off <= f64::EPSILON * scale * 1e-3 || off == 0.0 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q] == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            for k in 0..3 {
                let (akp, akq) = (a[k][p], a[k][q]);
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let (apk, aqk) = (a[p][k], a[q][k]);
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for row in &mut v {
                let (vp, vq) = (row[p], row[q]);
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    let best = (0..3).fold(0, |b, i| if a[i][i] > a[b][b] { i } else { b });
    unit(&[v[0][best], v[1][best], v[2][best]])
}
