//! Tool trajectories, fixed-length windows, and the file formats that carry them.
//!
//! A recording is a variable-length list of per-frame tool poses. Classifiers
//! only accept fixed-length input, so each recording is cut into `floor(M/N)`
//! windows by [`sample_and_augment`]: one seeded permutation of the frame
//! positions is split into consecutive groups of `N`, every group is sorted
//! back into temporal order, and the leftover `M mod N` frames are dropped.
//! No frame is used twice.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::NUM_SCORE_CLASSES;

/// Channels per window row: `tx, ty, tz, qx, qy, qz, qw`.
pub const CHANNELS: usize = 7;

/// Window length used when none is given.
pub const DEFAULT_WINDOW_LEN: usize = 64;

/// Column header of the trajectory CSV format.
pub const TRAJECTORY_HEADER: &str = "frame,tx,ty,tz,qx,qy,qz,qw";

/// Largest deviation of a quaternion norm from 1 that ingestion repairs.
pub const QUATERNION_NORM_TOLERANCE: f64 = 1e-2;

#[derive(Debug, thiserror::Error)]
pub enum TrajectoryError {
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: malformed row: {reason}")]
    MalformedRow {
        file: String,
        line: usize,
        reason: String,
    },
    #[error("{file}:{line}: quaternion norm {norm} is not within {QUATERNION_NORM_TOLERANCE} of 1")]
    NonUnitQuaternion { file: String, line: usize, norm: f64 },
    #[error("{id}: trajectory has {frames} frames, at least 2 are required")]
    TooShort { id: String, frames: usize },
    #[error("{id}: frame index {index} appears more than once")]
    DuplicateFrameIndex { id: String, index: u64 },
    #[error("{id}: {frames} frames cannot fill a window of {window}")]
    TooShortForWindow {
        id: String,
        frames: usize,
        window: usize,
    },
    #[error("window length must be positive")]
    ZeroWindow,
    #[error("windows disagree on shape: expected {expected} rows, `{id}` has {found}")]
    HeterogeneousWindows {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("label {label} is outside 0..{NUM_SCORE_CLASSES}")]
    InvalidLabel { label: i64 },
    #[error("{file}: {reason}")]
    Manifest { file: String, reason: String },
}

/// One captured tool pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub index: u64,
    /// Meters.
    pub translation: [f64; 3],
    /// Unit quaternion `(qx, qy, qz, qw)`.
    pub rotation: [f64; 4],
}

/// A full recording of one user action.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrajectory {
    pub id: String,
    frames: Vec<Frame>,
    label: Option<u8>,
}

impl RawTrajectory {
    /// Builds a trajectory, sorting frames by index and checking the label.
    pub fn new(
        id: impl Into<String>,
        mut frames: Vec<Frame>,
        label: Option<u8>,
    ) -> Result<Self, TrajectoryError> {
        let id = id.into();
        if frames.len() < 2 {
            return Err(TrajectoryError::TooShort {
                id,
                frames: frames.len(),
            });
        }
        check_label(label)?;
        frames.sort_by_key(|f| f.index);
        if let Some(pair) = frames.windows(2).find(|p| p[0].index == p[1].index) {
            return Err(TrajectoryError::DuplicateFrameIndex {
                id,
                index: pair[0].index,
            });
        }
        Ok(Self { id, frames, label })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn label(&self) -> Option<u8> {
        self.label
    }

    pub fn set_label(&mut self, label: Option<u8>) -> Result<(), TrajectoryError> {
        check_label(label)?;
        self.label = label;
        Ok(())
    }
}

fn check_label(label: Option<u8>) -> Result<(), TrajectoryError> {
    match label {
        Some(l) if usize::from(l) >= NUM_SCORE_CLASSES => {
            Err(TrajectoryError::InvalidLabel { label: l.into() })
        }
        _ => Ok(()),
    }
}

/// A fixed-length, order-preserving subsample of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub source_id: String,
    pub rows: Vec<[f64; CHANNELS]>,
    pub label: Option<u8>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Row-major `N x 7` values.
    pub fn flatten(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().flat_map(|r| r.iter().copied())
    }
}

/// Shifts translations so the first row sits at the origin. Rotations and
/// the overall scale of the motion are left alone.
pub fn center_window(mut w: Window) -> Window {
    if let Some(first) = w.rows.first().copied() {
        for row in &mut w.rows {
            for (v, origin) in row.iter_mut().zip(&first[..3]) {
                *v -= origin;
            }
        }
    }
    w
}

/// Frame positions used by each window for a recording of `frames` frames.
///
/// Returns `floor(frames / window)` groups; each group ascends and no
/// position appears in two groups.
pub fn sample_indices(
    frames: usize,
    window: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, TrajectoryError> {
    if window == 0 {
        return Err(TrajectoryError::ZeroWindow);
    }
    if frames < window {
        return Err(TrajectoryError::TooShortForWindow {
            id: String::new(),
            frames,
            window,
        });
    }
    let mut order: Vec<usize> = (0..frames).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order
        .chunks_exact(window)
        .map(|chunk| {
            let mut group = chunk.to_vec();
            group.sort_unstable();
            group
        })
        .collect())
}

/// Cuts a recording into centered windows of `window` frames.
pub fn sample_and_augment(
    t: &RawTrajectory,
    window: usize,
    seed: u64,
) -> Result<Vec<Window>, TrajectoryError> {
    let groups = sample_indices(t.len(), window, seed).map_err(|e| match e {
        TrajectoryError::TooShortForWindow { frames, window, .. } => {
            TrajectoryError::TooShortForWindow {
                id: t.id.clone(),
                frames,
                window,
            }
        }
        other => other,
    })?;
    Ok(groups
        .into_iter()
        .map(|group| {
            let rows = group.iter().map(|&i| frame_row(&t.frames[i])).collect();
            center_window(Window {
                source_id: t.id.clone(),
                rows,
                label: t.label,
            })
        })
        .collect())
}

fn frame_row(f: &Frame) -> [f64; CHANNELS] {
    let [tx, ty, tz] = f.translation;
    let [qx, qy, qz, qw] = f.rotation;
    [tx, ty, tz, qx, qy, qz, qw]
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrajectoryError + '_ {
    move |source| TrajectoryError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads a trajectory CSV. The id is the file stem; the label is unset.
pub fn parse_trajectory(path: &Path) -> Result<RawTrajectory, TrajectoryError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_trajectory_str(&id, &text)
}

/// Parses trajectory CSV text, renormalizing every quaternion.
pub fn parse_trajectory_str(id: &str, text: &str) -> Result<RawTrajectory, TrajectoryError> {
    let malformed = |line: usize, reason: String| TrajectoryError::MalformedRow {
        file: id.to_string(),
        line,
        reason,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, header)) if header.trim() == TRAJECTORY_HEADER => {}
        Some((n, header)) => {
            return Err(malformed(
                n + 1,
                format!("expected header `{TRAJECTORY_HEADER}`, found `{}`", header.trim()),
            ))
        }
        None => {
            return Err(TrajectoryError::TooShort {
                id: id.to_string(),
                frames: 0,
            })
        }
    }

    let mut frames = Vec::new();
    for (n, line) in lines {
        let line_no = n + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 8 {
            return Err(malformed(
                line_no,
                format!("expected 8 columns, found {}", fields.len()),
            ));
        }
        let index: u64 = fields[0]
            .parse()
            .map_err(|_| malformed(line_no, format!("bad frame index `{}`", fields[0])))?;
        let mut vals = [0.0; 7];
        for (v, field) in vals.iter_mut().zip(&fields[1..]) {
            *v = field
                .parse()
                .ok()
                .filter(|x: &f64| x.is_finite())
                .ok_or_else(|| malformed(line_no, format!("bad number `{field}`")))?;
        }
        let mut rotation = [vals[3], vals[4], vals[5], vals[6]];
        let norm = rotation.iter().map(|q| q * q).sum::<f64>().sqrt();
        if !((norm - 1.0).abs() <= QUATERNION_NORM_TOLERANCE) {
            return Err(TrajectoryError::NonUnitQuaternion {
                file: id.to_string(),
                line: line_no,
                norm,
            });
        }
        rotation.iter_mut().for_each(|q| *q /= norm);
        frames.push(Frame {
            index,
            translation: [vals[0], vals[1], vals[2]],
            rotation,
        });
    }
    RawTrajectory::new(id, frames, None)
}

/// Renders a trajectory in the CSV format read by [`parse_trajectory`].
pub fn trajectory_to_csv(t: &RawTrajectory) -> String {
    let mut out = String::with_capacity(t.len() * 120);
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for f in &t.frames {
        let _ = write!(out, "{}", f.index);
        for v in f.translation.iter().chain(&f.rotation) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Writes `contents` to `path` via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), std::io::Error> {
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)
}

pub fn write_trajectory(t: &RawTrajectory, path: &Path) -> Result<(), TrajectoryError> {
    write_atomic(path, trajectory_to_csv(t).as_bytes()).map_err(io_err(path))
}

/// Renders windows as `#window` blocks. All windows must have the same length.
pub fn windows_to_csv(ws: &[Window]) -> Result<String, TrajectoryError> {
    let first = ws.first().ok_or(TrajectoryError::EmptyDataset)?;
    let n = first.len();
    let mut out = String::new();
    for w in ws {
        if w.len() != n {
            return Err(TrajectoryError::HeterogeneousWindows {
                id: w.source_id.clone(),
                expected: n,
                found: w.len(),
            });
        }
        let label = w.label.map_or_else(|| "none".to_string(), |l| l.to_string());
        let _ = writeln!(
            out,
            "#window N={n} C={CHANNELS} source={} label={label}",
            w.source_id
        );
        for row in &w.rows {
            let mut sep = "";
            for v in row {
                let _ = write!(out, "{sep}{v}");
                sep = ",";
            }
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn write_windows(ws: &[Window], path: &Path) -> Result<(), TrajectoryError> {
    let text = windows_to_csv(ws)?;
    write_atomic(path, text.as_bytes()).map_err(io_err(path))
}

pub fn read_windows(path: &Path) -> Result<Vec<Window>, TrajectoryError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_windows_str(&path.display().to_string(), &text)
}

pub fn parse_windows_str(file: &str, text: &str) -> Result<Vec<Window>, TrajectoryError> {
    let malformed = |line: usize, reason: String| TrajectoryError::MalformedRow {
        file: file.to_string(),
        line,
        reason,
    };
    let mut out: Vec<(usize, Window)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix("#window") {
            let mut rows = None;
            let mut source = None;
            let mut label = None;
            for part in header.split_whitespace() {
                match part.split_once('=') {
                    Some(("N", v)) => rows = v.parse::<usize>().ok(),
                    Some(("C", v)) if v != CHANNELS.to_string() => {
                        return Err(malformed(line_no, format!("unsupported channel count {v}")))
                    }
                    Some(("source", v)) => source = Some(v.to_string()),
                    Some(("label", "none")) => label = Some(None),
                    Some(("label", v)) => {
                        let l: i64 = v
                            .parse()
                            .map_err(|_| malformed(line_no, format!("bad label `{v}`")))?;
                        label = Some(Some(parse_label(l)?));
                    }
                    _ => {}
                }
            }
            let (Some(rows), Some(source), Some(label)) = (rows, source, label) else {
                return Err(malformed(line_no, "incomplete #window header".into()));
            };
            out.push((
                rows,
                Window {
                    source_id: source,
                    rows: Vec::with_capacity(rows),
                    label,
                },
            ));
            continue;
        }
        let Some((expected, w)) = out.last_mut() else {
            return Err(malformed(line_no, "data row before any #window header".into()));
        };
        if w.rows.len() == *expected {
            return Err(malformed(line_no, "more rows than the header declares".into()));
        }
        let mut row = [0.0; CHANNELS];
        let mut fields = line.split(',');
        for v in row.iter_mut() {
            let field = fields
                .next()
                .ok_or_else(|| malformed(line_no, "too few columns".into()))?
                .trim();
            *v = field
                .parse()
                .map_err(|_| malformed(line_no, format!("bad number `{field}`")))?;
        }
        if fields.next().is_some() {
            return Err(malformed(line_no, "too many columns".into()));
        }
        w.rows.push(row);
    }
    for (expected, w) in &out {
        if w.rows.len() != *expected {
            return Err(malformed(
                0,
                format!(
                    "window from `{}` has {} rows, header declares {expected}",
                    w.source_id,
                    w.rows.len()
                ),
            ));
        }
    }
    Ok(out.into_iter().map(|(_, w)| w).collect())
}

fn parse_label(l: i64) -> Result<u8, TrajectoryError> {
    u8::try_from(l)
        .ok()
        .filter(|&v| usize::from(v) < NUM_SCORE_CLASSES)
        .ok_or(TrajectoryError::InvalidLabel { label: l })
}

/// Name of the label manifest inside a dataset directory.
pub const LABELS_FILE: &str = "labels.csv";

/// Loads every trajectory listed in a `file,label` manifest, in manifest order.
/// Paths in the manifest are relative to `dir`.
pub fn load_dataset(dir: &Path, labels: Option<&Path>) -> Result<Vec<RawTrajectory>, TrajectoryError> {
    let labels_path = labels.map_or_else(|| dir.join(LABELS_FILE), Path::to_path_buf);
    let text = fs::read_to_string(&labels_path).map_err(io_err(&labels_path))?;
    let manifest = labels_path.display().to_string();
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    if lines.next().map(str::trim) != Some("file,label") {
        return Err(TrajectoryError::Manifest {
            file: manifest,
            reason: "expected header `file,label`".into(),
        });
    }
    let mut out = Vec::new();
    for line in lines {
        let Some((file, label)) = line.split_once(',') else {
            return Err(TrajectoryError::Manifest {
                file: manifest,
                reason: format!("bad row `{line}`"),
            });
        };
        let label: i64 = label.trim().parse().map_err(|_| TrajectoryError::Manifest {
            file: manifest.clone(),
            reason: format!("bad label in `{line}`"),
        })?;
        let mut t = parse_trajectory(&dir.join(file.trim()))?;
        t.set_label(Some(parse_label(label)?))?;
        out.push(t);
    }
    if out.is_empty() {
        return Err(TrajectoryError::EmptyDataset);
    }
    Ok(out)
}
