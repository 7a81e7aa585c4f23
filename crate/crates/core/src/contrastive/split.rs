use rand::seq::index;
use rand::Rng;

use crate::data::ContextSet;
use crate::error::{Error, Result};

/// Randomly partitions a context into `j` disjoint subsets of `⌊N/j⌋` points.
///
/// When `j` does not divide `N`, the `N mod j` leftover points are dropped
/// uniformly at random.
pub fn split_observations<R: Rng + ?Sized>(
    context: &ContextSet,
    j: usize,
    rng: &mut R,
) -> Result<Vec<ContextSet>> {
    let n = context.len();
    if j == 0 {
        return Err(Error::config("number of subsets must be positive"));
    }
    if n < j {
        return Err(Error::config(format!(
            "cannot split {n} observations into {j} non-empty subsets"
        )));
    }
    let per = n / j;
    let chosen = index::sample(rng, n, per * j).into_vec();
    Ok(chosen.chunks(per).map(|c| context.subset(c)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn numbered(n: usize) -> ContextSet {
        let mut c = ContextSet::new(1, 1);
        for i in 0..n {
            c.push(&[i as f64], &[0.0]);
        }
        c
    }

    fn ids(c: &ContextSet) -> Vec<usize> {
        c.xs().iter().map(|&x| x as usize).collect()
    }

    #[test]
    fn even_split_is_a_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let parts = split_observations(&numbered(20), 2, &mut rng).unwrap();
        assert_eq!(parts.len(), 2);
        assert!(parts.iter().all(|p| p.len() == 10));
        let mut all: Vec<usize> = parts.iter().flat_map(ids).collect();
        all.sort();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn j_equal_n_gives_singletons() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let parts = split_observations(&numbered(4), 4, &mut rng).unwrap();
        assert!(parts.iter().all(|p| p.len() == 1));
        let mut all: Vec<usize> = parts.iter().flat_map(ids).collect();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
    }

    #[test]
    fn too_few_points_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(split_observations(&numbered(3), 4, &mut rng).is_err());
    }

    #[test]
    fn dropped_point_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trials = 10_000;
        let mut dropped = [0usize; 21];
        for _ in 0..trials {
            let parts = split_observations(&numbered(21), 2, &mut rng).unwrap();
            assert!(parts.iter().all(|p| p.len() == 10));
            let mut seen = [false; 21];
            for i in parts.iter().flat_map(ids) {
                assert!(!seen[i]);
                seen[i] = true;
            }
            dropped[seen.iter().position(|s| !s).unwrap()] += 1;
        }
        // Each point is dropped with probability 1/21; binomial sd ≈ 14.
        let expected = trials as f64 / 21.0;
        for &c in &dropped {
            assert!((c as f64 - expected).abs() < 5.0 * expected.sqrt(), "{dropped:?}");
        }
        let chi2: f64 = dropped.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 99.9th percentile of χ² with 20 degrees of freedom.
        assert!(chi2 < 45.3, "chi2 = {chi2}");
    }
}
