use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::sphere::GeoCoordinate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SplitSpec {
    Random {
        train: f64,
        val: f64,
        test: f64,
    },
    /// Every point with longitude in `[lon_lo, lon_hi)` goes to test, then a
    /// `fewshot_fraction` of them is moved to train. `val_fraction` of the
    /// remaining training points is held out for validation.
    RegionHoldout {
        lon_lo: f64,
        lon_hi: f64,
        fewshot_fraction: f64,
        val_fraction: f64,
    },
}

impl SplitSpec {
    /// Fractions used for synthetic downstream tasks.
    pub fn default_random() -> Self {
        SplitSpec::Random {
            train: 0.3,
            val: 0.1,
            test: 0.6,
        }
    }

    pub fn holdout(lon_lo: f64, lon_hi: f64, fewshot_fraction: f64) -> Self {
        SplitSpec::RegionHoldout {
            lon_lo,
            lon_hi,
            fewshot_fraction,
            val_fraction: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} fraction {v} outside [0, 1]")))
            }
        };
        match *self {
            SplitSpec::Random { train, val, test } => {
                unit("train", train)?;
                unit("val", val)?;
                unit("test", test)?;
                if ((train + val + test) - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!(
                        "split fractions sum to {}, not 1",
                        train + val + test
                    )));
                }
            }
            SplitSpec::RegionHoldout {
                lon_lo,
                lon_hi,
                fewshot_fraction,
                val_fraction,
            } => {
                if !(lon_lo.is_finite() && lon_hi.is_finite() && -180.0 <= lon_lo && lon_lo < lon_hi && lon_hi <= 180.0) {
                    return Err(Error::Config(format!(
                        "holdout interval [{lon_lo}, {lon_hi}) must be non-empty within [-180, 180]"
                    )));
                }
                unit("fewshot", fewshot_fraction)?;
                unit("val", val_fraction)?;
                if val_fraction >= 1.0 {
                    return Err(Error::Config("val fraction must be < 1".into()));
                }
            }
        }
        Ok(())
    }
}

/// Disjoint, covering, sorted index sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).round() as usize).min(n)
}

fn sorted(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v
}

pub fn split(coords: &[GeoCoordinate], spec: &SplitSpec, seed: u64) -> Result<SplitIndices> {
    spec.validate()?;
    let n = coords.len();
    let mut r = rng::stream(seed, "split");
    let out = match *spec {
        SplitSpec::Random { train, val, test } => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut r);
            let n_train = count(train, n);
            let n_val = count(val, n).min(n - n_train);
            let rest = idx.split_off(n_train);
            let (v, t) = rest.split_at(n_val);
            let out = SplitIndices {
                train: sorted(idx),
                val: sorted(v.to_vec()),
                test: sorted(t.to_vec()),
            };
            for (name, frac, set) in [("train", train, &out.train), ("val", val, &out.val), ("test", test, &out.test)] {
                if frac > 0.0 && set.is_empty() {
                    return Err(Error::EmptySplit(format!("{name} split of {n} points is empty")));
                }
            }
            out
        }
        SplitSpec::RegionHoldout {
            lon_lo,
            lon_hi,
            fewshot_fraction,
            val_fraction,
        } => {
            let (mut inside, mut outside): (Vec<usize>, Vec<usize>) =
                (0..n).partition(|&i| (lon_lo..lon_hi).contains(&coords[i].lon()));
            inside.shuffle(&mut r);
            let leaked = inside.split_off(inside.len() - count(fewshot_fraction, inside.len()));
            outside.extend(leaked);
            outside.shuffle(&mut r);
            let n_val = count(val_fraction, outside.len());
            let val = outside.split_off(outside.len() - n_val);
            let out = SplitIndices {
                train: sorted(outside),
                val: sorted(val),
                test: sorted(inside),
            };
            if out.test.is_empty() {
                return Err(Error::EmptySplit(format!("no points in holdout band [{lon_lo}, {lon_hi})")));
            }
            if out.train.is_empty() {
                return Err(Error::EmptySplit("no training points outside the holdout band".into()));
            }
            if val_fraction > 0.0 && out.val.is_empty() {
                return Err(Error::EmptySplit("validation split is empty".into()));
            }
            out
        }
    };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n: usize) -> Vec<GeoCoordinate> {
        (0..n)
            .map(|i| GeoCoordinate::new(-180.0 + 360.0 * (i as f64 + 0.5) / n as f64, ((i * 37) % 180) as f64 - 89.5).unwrap())
            .collect()
    }

    fn assert_partition(s: &SplitIndices, n: usize) {
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn random_ninety_ten() {
        let spec = SplitSpec::Random { train: 0.9, val: 0.1, test: 0.0 };
        let s = split(&grid(1000), &spec, 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (900, 100, 0));
        assert_partition(&s, 1000);
        assert_eq!(s, split(&grid(1000), &spec, 1).unwrap());
        assert_ne!(s, split(&grid(1000), &spec, 2).unwrap());
    }

    #[test]
    fn holdout_band_goes_to_test() {
        let coords = grid(2000);
        let s = split(&coords, &SplitSpec::holdout(0.0, 60.0, 0.0), 3).unwrap();
        let band: Vec<usize> = (0..2000).filter(|&i| (0.0..60.0).contains(&coords[i].lon())).collect();
        assert_eq!(s.test, band);
        assert_partition(&s, 2000);
    }

    #[test]
    fn fewshot_leaks_exact_count() {
        let coords: Vec<GeoCoordinate> = (0..12_000)
            .map(|i| {
                let lon = if i < 10_000 { 10.0 + 40.0 * i as f64 / 10_000.0 } else { -100.0 };
                GeoCoordinate::new(lon, 0.0).unwrap()
            })
            .collect();
        let s = split(&coords, &SplitSpec::holdout(0.0, 60.0, 0.01), 4).unwrap();
        assert_eq!(s.test.len(), 9_900);
        let leaked = s.train.iter().chain(&s.val).filter(|&&i| i < 10_000).count();
        assert_eq!(leaked, 100);
    }

    #[test]
    fn empty_splits_are_errors() {
        let coords = grid(3);
        assert!(matches!(
            split(&coords, &SplitSpec::Random { train: 0.9, val: 0.1, test: 0.0 }, 0),
            Err(Error::EmptySplit(_))
        ));
        let west: Vec<GeoCoordinate> = (0..10).map(|_| GeoCoordinate::new(-90.0, 0.0).unwrap()).collect();
        assert!(split(&west, &SplitSpec::holdout(0.0, 60.0, 0.0), 0).is_err());
        assert!(split(&coords, &SplitSpec::Random { train: 0.5, val: 0.1, test: 0.1 }, 0).is_err());
        assert!(split(&coords, &SplitSpec::holdout(60.0, 0.0, 0.0), 0).is_err());
    }

    proptest! {
        #[test]
        fn splits_partition_indices(n in 20usize..400, seed in any::<u64>(), lo in -180.0f64..100.0, f in 0.0f64..0.5) {
            let coords = grid(n);
            let s = split(&coords, &SplitSpec::Random { train: 0.5, val: 0.2, test: 0.3 }, seed).unwrap();
            assert_partition(&s, n);
            if let Ok(s) = split(&coords, &SplitSpec::holdout(lo, lo + 80.0, f), seed) {
                assert_partition(&s, n);
            }
        }
    }
}
