use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TrainError;
use crate::trajectory::{sample_and_augment, RawTrajectory, Window};
use crate::NUM_SCORE_CLASSES;

/// Which unit is assigned to train/validation/test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitLevel {
    /// Every window of a recording lands in the same split.
    #[default]
    Trajectory,
    /// Windows are split independently, so one recording can feed several
    /// splits.
    Window,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Vec<Window>,
    pub val: Vec<Window>,
    pub test: Vec<Window>,
    pub class_count: usize,
}

/// Maps a 0-5 quality class onto `classes` contiguous bands.
///
/// Six classes is the identity; three bands pair neighbours
/// (`{0,1} {2,3} {4,5}`); two bands split low from high (`{0,1,2} {3,4,5}`).
pub fn band_label(label: u8, classes: usize) -> Result<u8, TrainError> {
    match classes {
        NUM_SCORE_CLASSES => Ok(label),
        3 => Ok(label / 2),
        2 => Ok(label / 3),
        _ => Err(TrainError::InvalidConfig(format!(
            "class count must be 2, 3 or 6, got {classes}"
        ))),
    }
}

/// Per-split counts for `n` units: train and validation are rounded to the
/// nearest unit, test takes the rest.
fn split_counts(n: usize, ratios: [f64; 3]) -> (usize, usize) {
    let train = ((n as f64 * ratios[0]).round() as usize).min(n);
    let val = ((n as f64 * ratios[1]).round() as usize).min(n - train);
    (train, val)
}

fn label_of(w: &Window) -> Result<usize, TrainError> {
    w.label
        .map(usize::from)
        .ok_or_else(|| TrainError::UnlabeledWindow(w.source_id.clone()))
}

/// Stratified, seeded split. At trajectory level the unit is the set of
/// windows sharing a `source_id`; at window level it is a single window.
pub fn split_dataset(
    windows: Vec<Window>,
    class_count: usize,
    ratios: [f64; 3],
    seed: u64,
    level: SplitLevel,
) -> Result<SplitDataset, TrainError> {
    check_ratios(ratios)?;
    // units in first-appearance order, bucketed by class
    let mut units: Vec<Vec<Window>> = Vec::new();
    let mut unit_of: BTreeMap<String, usize> = BTreeMap::new();
    for w in windows {
        let label = label_of(&w)?;
        if label >= class_count {
            return Err(TrainError::LabelOutOfRange {
                label,
                classes: class_count,
            });
        }
        match level {
            SplitLevel::Trajectory => match unit_of.get(&w.source_id) {
                Some(&u) => {
                    if units[u][0].label != w.label {
                        return Err(TrainError::InvalidConfig(format!(
                            "windows of `{}` carry different labels",
                            w.source_id
                        )));
                    }
                    units[u].push(w)
                }
                None => {
                    unit_of.insert(w.source_id.clone(), units.len());
                    units.push(vec![w]);
                }
            },
            SplitLevel::Window => units.push(vec![w]),
        }
    }
    let mut by_class: Vec<Vec<Vec<Window>>> = vec![Vec::new(); class_count];
    for unit in units {
        let label = label_of(&unit[0])?;
        by_class[label].push(unit);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SplitDataset {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        class_count,
    };
    for (class, mut group) in by_class.into_iter().enumerate() {
        if group.is_empty() {
            return Err(TrainError::EmptyClass(class));
        }
        group.shuffle(&mut rng);
        let (n_train, n_val) = split_counts(group.len(), ratios);
        for (i, unit) in group.into_iter().enumerate() {
            let dst = if i < n_train {
                &mut out.train
            } else if i < n_train + n_val {
                &mut out.val
            } else {
                &mut out.test
            };
            dst.extend(unit);
        }
    }
    Ok(out)
}

pub(crate) fn check_ratios(ratios: [f64; 3]) -> Result<(), TrainError> {
    if ratios.iter().any(|&r| !(r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(TrainError::InvalidConfig(format!(
            "split ratios {ratios:?} must be positive and sum to 1"
        )));
    }
    Ok(())
}

/// Seed used to window the `ordinal`-th recording of a dataset.
pub fn window_seed(seed: u64, ordinal: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (ordinal as u64).wrapping_add(0xD1B5_4A32_D192_ED03)
}

/// Keeps the first `fraction` of each class's training units (recordings at
/// trajectory level, single windows at window level), at least one per class.
pub fn reduce_train(mut data: SplitDataset, fraction: f64, level: SplitLevel) -> Result<SplitDataset, TrainError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(TrainError::InvalidConfig(format!(
            "training fraction {fraction} must lie in (0, 1]"
        )));
    }
    let mut units: Vec<Vec<Vec<Window>>> = vec![Vec::new(); data.class_count];
    let mut last: Option<String> = None;
    for w in std::mem::take(&mut data.train) {
        let label = label_of(&w)?;
        let group = units.get_mut(label).ok_or(TrainError::LabelOutOfRange {
            label,
            classes: data.class_count,
        })?;
        let same = level == SplitLevel::Trajectory && last.as_deref() == Some(w.source_id.as_str());
        last = Some(w.source_id.clone());
        match group.last_mut() {
            Some(unit) if same => unit.push(w),
            _ => group.push(vec![w]),
        }
    }
    for group in units {
        let keep = ((group.len() as f64 * fraction).round() as usize).clamp(1, group.len().max(1));
        data.train.extend(group.into_iter().take(keep).flatten());
    }
    Ok(data)
}

/// Windows every recording (relabelled into `classes` bands) in order.
pub fn window_dataset(
    trajectories: &[RawTrajectory],
    window: usize,
    classes: usize,
    seed: u64,
) -> Result<Vec<Window>, TrainError> {
    let mut out = Vec::new();
    for (i, t) in trajectories.iter().enumerate() {
        let label = match t.label() {
            Some(l) => Some(band_label(l, classes)?),
            None => None,
        };
        for mut w in sample_and_augment(t, window, window_seed(seed, i))? {
            w.label = label;
            out.push(w);
        }
    }
    Ok(out)
}

/// Windows the recordings and splits them.
pub fn prepare_dataset(
    trajectories: &[RawTrajectory],
    window: usize,
    classes: usize,
    ratios: [f64; 3],
    seed: u64,
    level: SplitLevel,
) -> Result<SplitDataset, TrainError> {
    let windows = window_dataset(trajectories, window, classes, seed)?;
    split_dataset(windows, classes, ratios, seed, level)
}
