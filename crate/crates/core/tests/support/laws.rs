//! Seeded sweeps over the windowing and scoring laws.

#![allow(dead_code)]

use std::collections::HashSet;

use cutassess::assessment::score_window;
use cutassess::trajectory::{sample_and_augment, sample_indices, Frame, RawTrajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Frame `i` sits at `x = i`, so centered rows reveal their source frames.
pub fn ramp_trajectory(frames: usize) -> RawTrajectory {
    let frames = (0..frames)
        .map(|i| Frame {
            index: i as u64,
            translation: [i as f64, 0.0, 0.0],
            rotation: [0.0, 0.0, 0.0, 1.0],
        })
        .collect();
    RawTrajectory::new("ramp", frames, Some(1)).unwrap()
}

/// Checks count, partition, ordering, determinism and the window contents
/// for one `(M, N, seed)`.
pub fn check_augmentation(m: usize, n: usize, seed: u64) -> Result<(), String> {
    let groups = sample_indices(m, n, seed).map_err(|e| e.to_string())?;
    if groups.len() != m / n {
        return Err(format!("M={m} N={n}: {} windows", groups.len()));
    }
    let mut seen = HashSet::new();
    for g in &groups {
        if g.len() != n {
            return Err(format!("M={m} N={n}: window of {} frames", g.len()));
        }
        if g.windows(2).any(|p| p[0] >= p[1]) {
            return Err(format!("M={m} N={n} seed={seed}: indices not strictly increasing"));
        }
        for &i in g {
            if i >= m || !seen.insert(i) {
                return Err(format!("M={m} N={n} seed={seed}: frame {i} reused or out of range"));
            }
        }
    }
    if sample_indices(m, n, seed).map_err(|e| e.to_string())? != groups {
        return Err(format!("M={m} N={n} seed={seed}: not deterministic"));
    }
    let t = ramp_trajectory(m);
    let windows = sample_and_augment(&t, n, seed).map_err(|e| e.to_string())?;
    if windows != sample_and_augment(&t, n, seed).map_err(|e| e.to_string())? {
        return Err(format!("M={m} N={n} seed={seed}: windows not deterministic"));
    }
    for (w, g) in windows.iter().zip(&groups) {
        for (row, &i) in w.rows.iter().zip(g) {
            if row[0] != (i - g[0]) as f64 || row[6] != 1.0 || w.label != Some(1) {
                return Err(format!("M={m} N={n} seed={seed}: window rows do not match frames {g:?}"));
            }
        }
    }
    Ok(())
}

/// `trials` random triples with `1 <= N <= M <= 600`.
pub fn augmentation_sweep(trials: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let n = rng.random_range(1..=128);
        let m = rng.random_range(n..=600);
        check_augmentation(m, n, rng.random())?;
    }
    Ok(())
}

pub fn random_distribution(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..6)
        .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random::<f64>() })
        .collect();
    let sum: f64 = raw.iter().sum();
    if sum == 0.0 {
        let mut p = vec![0.0; 6];
        p[rng.random_range(0..6)] = 1.0;
        return p;
    }
    raw.iter().map(|v| v / sum).collect()
}

/// Range `[0, 10]`, and moving mass `d` from class `i` to a higher class `j`
/// raises the score by exactly `2 d (j - i)` (up to rounding).
pub fn scoring_sweep(trials: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let p = random_distribution(&mut rng);
        let s = score_window(&p).map_err(|e| e.to_string())?;
        if !(0.0..=10.0).contains(&s) {
            return Err(format!("score {s} for {p:?}"));
        }
        let i = rng.random_range(0..5);
        let j = rng.random_range(i + 1..6);
        if p[i] == 0.0 {
            continue;
        }
        let d = p[i] * rng.random_range(0.01..=1.0);
        let mut q = p.clone();
        q[i] -= d;
        q[j] += d;
        let s2 = score_window(&q).map_err(|e| e.to_string())?;
        let expected = 2.0 * d * (j - i) as f64;
        if !(s2 > s) || ((s2 - s) - expected).abs() > 1e-9 {
            return Err(format!("moving {d} from {i} to {j} changed {s} to {s2} for {p:?}"));
        }
    }
    Ok(())
}
