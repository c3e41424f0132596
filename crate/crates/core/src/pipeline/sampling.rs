use rand::Rng;

use crate::data::seeded_rng;
use crate::error::{Error, Result};
use crate::linalg::ParamVector;
use crate::solvers::Snapshot;

pub const DEFAULT_LOSS_BINS: usize = 20;

/// Indices of `k` draws that are roughly uniform in loss.
///
/// `[min, max]` of the finite losses is cut into `bins` equal-width bins.
/// A nonempty bin is chosen uniformly with replacement, then a member of
/// that bin uniformly. Non-finite losses are never drawn unless no finite
/// loss exists, in which case draws are uniform over all entries.
pub fn loss_uniform_indices(
    losses: &[f64],
    k: usize,
    seed: u64,
    bins: usize,
) -> Result<Vec<usize>> {
    if losses.is_empty() {
        return Err(Error::InvalidArgument(
            "loss-uniform sampling needs at least one snapshot".into(),
        ));
    }
    if k == 0 || bins == 0 {
        return Err(Error::InvalidArgument(
            "sample count and bin count must be at least 1".into(),
        ));
    }
    let finite: Vec<usize> = (0..losses.len())
        .filter(|&i| losses[i].is_finite())
        .collect();
    let pool = if finite.is_empty() {
        (0..losses.len()).collect()
    } else {
        finite
    };
    let lo = pool
        .iter()
        .map(|&i| losses[i])
        .fold(f64::INFINITY, f64::min);
    let hi = pool
        .iter()
        .map(|&i| losses[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let width = hi - lo;

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); bins];
    for &i in &pool {
        let b = if width > 0.0 && width.is_finite() {
            (((losses[i] - lo) / width * bins as f64) as usize).min(bins - 1)
        } else {
            0
        };
        members[b].push(i);
    }
    members.retain(|m| !m.is_empty());

    let mut rng = seeded_rng(seed);
    Ok((0..k)
        .map(|_| {
            let bin = &members[rng.random_range(0..members.len())];
            bin[rng.random_range(0..bin.len())]
        })
        .collect())
}

/// `k` parameter vectors drawn loss-uniformly from `snapshots`, using the
/// default bin count.
pub fn sample_loss_uniform(
    snapshots: &[Snapshot],
    k: usize,
    seed: u64,
) -> Result<Vec<ParamVector>> {
    let losses: Vec<f64> = snapshots.iter().map(|s| s.loss).collect();
    let idx = loss_uniform_indices(&losses, k, seed, DEFAULT_LOSS_BINS)?;
    Ok(idx
        .into_iter()
        .map(|i| snapshots[i].params.clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn snap(i: usize, loss: f64) -> Snapshot {
        Snapshot {
            iter: i,
            loss,
            params: DVector::from_vec(vec![i as f64]),
        }
    }

    #[test]
    fn single_snapshot_repeats() {
        let s = [snap(0, 3.0)];
        let out = sample_loss_uniform(&s, 4, 9).unwrap();
        assert_eq!(out.len(), 4);
        assert!(out.iter().all(|p| *p == s[0].params));
    }

    #[test]
    fn k_one_returns_a_snapshot_verbatim() {
        let s: Vec<_> = (0..10).map(|i| snap(i, i as f64 * 0.37)).collect();
        let out = sample_loss_uniform(&s, 1, 5).unwrap();
        assert_eq!(out.len(), 1);
        assert!(s.iter().any(|x| x.params == out[0]));
    }

    #[test]
    fn identical_losses_are_uniform_over_snapshots() {
        let losses = vec![1.5; 4];
        let idx = loss_uniform_indices(&losses, 4000, 1, 20).unwrap();
        for j in 0..4 {
            let c = idx.iter().filter(|&&i| i == j).count();
            // binomial(4000, 1/4): sd ≈ 27
            assert!((c as i64 - 1000).abs() < 150, "{j}: {c}");
        }
    }

    #[test]
    fn two_clusters_split_evenly() {
        // 90 points near 0, 10 near 100: draws must balance by loss, not count
        let mut losses: Vec<f64> = (0..90).map(|i| i as f64 * 1e-3).collect();
        losses.extend((0..10).map(|i| 100.0 - i as f64 * 1e-3));
        let idx = loss_uniform_indices(&losses, 1000, 42, 20).unwrap();
        let low = idx.iter().filter(|&&i| i < 90).count();
        assert!((450..=550).contains(&low), "{low}");
    }

    #[test]
    fn bins_are_equal_width() {
        // losses 0, 1, 2, 10 with 2 bins: {0,1,2} and {10}
        let idx = loss_uniform_indices(&[0.0, 1.0, 2.0, 10.0], 2000, 3, 2).unwrap();
        let top = idx.iter().filter(|&&i| i == 3).count();
        assert!((900..=1100).contains(&top), "{top}");
    }

    #[test]
    fn deterministic_under_seed_and_skips_non_finite() {
        let losses = [0.0, f64::NAN, 2.0, f64::INFINITY, 5.0];
        let a = loss_uniform_indices(&losses, 50, 8, 20).unwrap();
        assert_eq!(a, loss_uniform_indices(&losses, 50, 8, 20).unwrap());
        assert!(a.iter().all(|&i| losses[i].is_finite()));
        assert!(loss_uniform_indices(&[], 1, 0, 20).is_err());
        assert!(loss_uniform_indices(&[1.0], 0, 0, 20).is_err());
    }
}
