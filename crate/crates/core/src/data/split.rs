use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::sample::Sample;
use crate::error::{Error, Result};
use crate::kv;

/// Datasets at least this large must give every split a sample.
pub const MIN_SPLIT_GUARD: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for (key, r) in [("split_train", self.train), ("split_val", self.val), ("split_test", self.test)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::config(key, format!("{r} is outside [0, 1]")));
            }
        }
        let sum = self.train + self.val + self.test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config("split_train", format!("ratios sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Train and validation take `floor(n·ratio)`; test takes the rest.
    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        let take = |r: f64| ((n as f64 * r) + 1e-9).floor() as usize;
        let train = take(self.train).min(n);
        let val = take(self.val).min(n - train);
        let test = n - train - val;
        if n >= MIN_SPLIT_GUARD {
            for (name, len) in [("train", train), ("val", val), ("test", test)] {
                if len == 0 {
                    return Err(Error::Contract(format!("{name} split of {n} samples would be empty")));
                }
            }
        }
        Ok((train, val, test))
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        vec![
            ("split_train".into(), kv::float(self.train)),
            ("split_val".into(), kv::float(self.val)),
            ("split_test".into(), kv::float(self.test)),
            ("split_seed".into(), self.seed.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        match key {
            "split_train" => self.train = kv::parse_f64(key, v)?,
            "split_val" => self.val = kv::parse_f64(key, v)?,
            "split_test" => self.test = kv::parse_f64(key, v)?,
            "split_seed" => self.seed = kv::parse_num(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Seeded shuffle, then consecutive train/val/test runs.
pub fn split(samples: &[Sample], spec: &SplitSpec) -> Result<Split> {
    let (a, b, _) = spec.sizes(samples.len())?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect();
    Ok(Split {
        train: pick(&order[..a]),
        val: pick(&order[a..a + b]),
        test: pick(&order[a + b..]),
    })
}
