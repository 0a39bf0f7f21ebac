use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::schedule::sample_categorical;
use crate::error::{Error, Result};
use crate::graph::Dag;

const MAX_RETRIES: usize = 32;

/// Empirical level-count and per-level size distributions.
///
/// `p_size` is keyed by intermediate level index (1 ..= N - 2) and then by
/// size; the bottom and top levels are fixed by the input and output counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStructureStats {
    pub p_levels: BTreeMap<usize, f64>,
    pub p_size: BTreeMap<usize, BTreeMap<usize, f64>>,
}

fn normalize(counts: BTreeMap<usize, usize>) -> BTreeMap<usize, f64> {
    let total: usize = counts.values().sum();
    counts.into_iter().map(|(k, c)| (k, c as f64 / total as f64)).collect()
}

fn draw<R: Rng + ?Sized>(dist: &BTreeMap<usize, f64>, rng: &mut R) -> usize {
    let keys: Vec<usize> = dist.keys().copied().collect();
    let weights: Vec<f64> = dist.values().copied().collect();
    keys[sample_categorical(&weights, rng)]
}

impl LevelStructureStats {
    pub fn from_dags<'a>(dags: impl IntoIterator<Item = &'a Dag>) -> Result<Self> {
        let mut levels = BTreeMap::new();
        let mut sizes: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
        for dag in dags {
            if dag.n() == 0 {
                continue;
            }
            let count = dag.max_level() + 1;
            *levels.entry(count).or_insert(0) += 1;
            let mut per = vec![0usize; count];
            for &l in dag.levels() {
                per[l] += 1;
            }
            for (idx, &m) in per.iter().enumerate().take(count.saturating_sub(1)).skip(1) {
                *sizes.entry(idx).or_default().entry(m).or_insert(0) += 1;
            }
        }
        if levels.is_empty() {
            return Err(Error::EmptyDistribution("level counts"));
        }
        Ok(LevelStructureStats {
            p_levels: normalize(levels),
            p_size: sizes.into_iter().map(|(i, c)| (i, normalize(c))).collect(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let stats: Self = serde_json::from_str(&text)?;
        stats.validate()?;
        Ok(stats)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.p_levels.is_empty() {
            return Err(Error::EmptyDistribution("p_levels"));
        }
        let check = |d: &BTreeMap<usize, f64>| -> Result<()> {
            let s: f64 = d.values().sum();
            if d.values().any(|p| !(p.is_finite() && *p >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                return Err(Error::Unnormalized { sum: s });
            }
            Ok(())
        };
        check(&self.p_levels)?;
        for d in self.p_size.values() {
            if d.is_empty() {
                return Err(Error::EmptyDistribution("p_size"));
            }
            check(d)?;
        }
        Ok(())
    }

    /// Samples a level label per node in canonical order: `n_in` inputs at
    /// level 0, the AND levels, then `n_out` outputs at the top level.
    pub fn sample<R: Rng + ?Sized>(&self, n_in: usize, n_out: usize, rng: &mut R) -> Result<Vec<usize>> {
        'retry: for _ in 0..MAX_RETRIES {
            let count = draw(&self.p_levels, rng);
            if count < 2 {
                continue;
            }
            let mut levels = vec![0; n_in];
            for idx in 1..count - 1 {
                let Some(dist) = self.p_size.get(&idx) else {
                    continue 'retry;
                };
                let m = draw(dist, rng);
                if m == 0 {
                    continue 'retry;
                }
                levels.extend(std::iter::repeat_n(idx, m));
            }
            levels.extend(std::iter::repeat_n(count - 1, n_out));
            return Ok(levels);
        }
        Err(Error::LevelStructure { retries: MAX_RETRIES })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aig::random_aig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dataset_stats() -> LevelStructureStats {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dags: Vec<Dag> = (0..300)
            .map(|_| random_aig(3, 1, 10, &mut rng).unwrap().0.to_dag().unwrap())
            .collect();
        LevelStructureStats::from_dags(&dags).unwrap()
    }

    #[test]
    fn boundaries_fixed_and_support_respected() {
        let stats = dataset_stats();
        stats.validate().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let levels = stats.sample(3, 1, &mut rng).unwrap();
            let top = *levels.last().unwrap();
            assert!(stats.p_levels.contains_key(&(top + 1)));
            let mut per = vec![0; top + 1];
            for &l in &levels {
                per[l] += 1;
            }
            assert_eq!(per[0], 3);
            assert_eq!(per[top], 1);
            assert!(per.iter().all(|&m| m >= 1));
            assert!(levels.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn point_mass_stats() {
        let stats = LevelStructureStats {
            p_levels: BTreeMap::from([(3, 1.0)]),
            p_size: BTreeMap::from([(1, BTreeMap::from([(2, 1.0)]))]),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            assert_eq!(stats.sample(4, 2, &mut rng).unwrap(), vec![0, 0, 0, 0, 1, 1, 2, 2]);
        }
    }

    #[test]
    fn unusable_stats_error_out() {
        let stats = LevelStructureStats {
            p_levels: BTreeMap::from([(1, 1.0)]),
            p_size: BTreeMap::new(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(stats.sample(3, 1, &mut rng), Err(Error::LevelStructure { retries: 32 })));
    }

    #[test]
    fn sidecar_roundtrip() {
        let stats = dataset_stats();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stats.json");
        stats.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"p_levels\"") && text.contains("\"p_size\""));
        let back = LevelStructureStats::load(&path).unwrap();
        assert_eq!(back.p_levels.keys().collect::<Vec<_>>(), stats.p_levels.keys().collect::<Vec<_>>());
        for (a, b) in back.p_levels.values().zip(stats.p_levels.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
