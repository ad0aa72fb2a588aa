use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::evaluate::evaluate;
use super::optim::{OptimizerConfig, OptimizerKind, OptimizerState};
use crate::autodiff::{Graph, Tape};
use crate::data::{images_tensor, masks_tensor, AugmentationPolicy, Sample};
use crate::error::{Error, Result};
use crate::kv;
use crate::metrics::Metrics;
use crate::model::checkpoint::{Container, EXTRA_PREFIX};
use crate::model::CascnModel;
use crate::nn::{apply_running_updates, Mode, Session};
use crate::tensor::Tensor;

/// Batches prepared ahead of the optimizer.
const QUEUE_DEPTH: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many optimizer steps in total; 0 means no limit.
    pub max_steps: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 4,
            max_steps: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        vec![
            ("epochs".into(), self.epochs.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("max_steps".into(), self.max_steps.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        match key {
            "epochs" => self.epochs = kv::parse_num(key, v)?,
            "batch_size" => self.batch_size = kv::parse_num(key, v)?,
            "max_steps" => self.max_steps = kv::parse_num(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub epoch: usize,
    /// Next batch within `epoch`.
    pub batch: usize,
    pub epoch_loss_sum: f64,
    pub best_val_di: Option<f64>,
    pub best_path: Option<PathBuf>,
    pub optimizer: OptimizerState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: Option<Metrics>,
}

impl EpochLog {
    /// Tab-separated: epoch, train loss, then validation SE SP AC DI JA.
    pub fn line(&self) -> String {
        let mut s = format!("{}\t{:.4}", self.epoch, self.train_loss);
        match &self.val {
            Some(m) => m.values().iter().for_each(|v| write!(s, "\t{v:.4}").unwrap()),
            None => (0..5).for_each(|_| s.push_str("\t-")),
        }
        s
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FitSummary {
    pub epochs: Vec<EpochLog>,
    /// Loss of every optimizer step taken by this call.
    pub step_losses: Vec<f64>,
}

pub struct Trainer {
    pub model: CascnModel,
    pub optimizer: OptimizerConfig,
    pub state: TrainState,
}

/// Mixes run coordinates into one seed.
fn derive_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9e37_79b9_7f4a_7c15u64;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

/// Sample order for one epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 0, epoch as u64])));
    order
}

/// Images and masks of batch `b`, augmented with per-position streams.
pub fn make_batch(
    samples: &[Sample],
    order: &[usize],
    b: usize,
    batch_size: usize,
    policy: &AugmentationPolicy,
    seed: u64,
    epoch: usize,
) -> Result<(Tensor, Tensor)> {
    let idx = &order[b * batch_size..((b + 1) * batch_size).min(order.len())];
    let batch: Vec<Sample> = idx
        .iter()
        .enumerate()
        .map(|(j, &i)| {
            let pos = (b * batch_size + j) as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 1, epoch as u64, pos]));
            policy.apply(&samples[i], &mut rng)
        })
        .collect();
    Ok((images_tensor(&batch)?, masks_tensor(&batch)?))
}

impl Trainer {
    pub fn new(model: CascnModel, optimizer: OptimizerConfig) -> Result<Self> {
        optimizer.validate()?;
        let state = TrainState {
            step: 0,
            epoch: 0,
            batch: 0,
            epoch_loss_sum: 0.0,
            best_val_di: None,
            best_path: None,
            optimizer: OptimizerState::new(model.store()),
        };
        Ok(Self { model, optimizer, state })
    }

    /// Forward, loss, backward and one optimizer step. Returns the loss.
    pub fn train_step(&mut self, images: &Tensor, masks: &Tensor) -> Result<f64> {
        let (loss, grads, updates) = {
            let mut s = Session::new(Tape::new(), self.model.store(), Mode::Train);
            let p = self.model.forward(&mut s, images)?;
            let l = s.graph.seg_loss(&p, masks)?;
            let loss = s.value(&l).item()?;
            if !loss.is_finite() {
                let layer = s.graph.first_non_finite().unwrap_or_else(|| "loss".to_string());
                return Err(Error::NonFinite { layer });
            }
            let mut g = s.graph.backward(l)?;
            let grads = s.param_grads(&mut g);
            if let Some((id, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
                let layer = self.model.store().param(*id).name.clone();
                return Err(Error::NonFinite { layer });
            }
            let (_, updates) = s.into_parts();
            (loss, grads, updates)
        };
        self.state.optimizer.apply(self.model.store_mut(), &grads, &self.optimizer)?;
        apply_running_updates(self.model.store_mut(), &updates);
        self.state.step += 1;
        Ok(loss)
    }

    /// Runs epochs `state.epoch..cfg.epochs`, resuming mid-epoch if the state
    /// says so. With `out`, writes `train.log`, `best.ckpt` on improved
    /// validation DI and `last.state` after every epoch.
    pub fn fit(
        &mut self,
        train: &[Sample],
        val: &[Sample],
        cfg: &TrainConfig,
        policy: &AugmentationPolicy,
        out: Option<&Path>,
    ) -> Result<FitSummary> {
        cfg.validate()?;
        policy.validate()?;
        let mut summary = FitSummary::default();
        if train.is_empty() {
            return if cfg.epochs > self.state.epoch {
                Err(Error::Data("empty training set".into()))
            } else {
                Ok(summary)
            };
        }
        let want = self.model.config().input_size;
        if let Some(s) = train.iter().chain(val).find(|s| s.size() != want) {
            return Err(Error::Data(format!(
                "{} is {}×{}, model expects {}×{}",
                s.id, s.height, s.width, want.0, want.1
            )));
        }
        if let Some(dir) = out {
            fs::create_dir_all(dir)?;
        }
        let seed = self.model.config().seed;
        let batches = train.len().div_ceil(cfg.batch_size);
        while self.state.epoch < cfg.epochs {
            if cfg.max_steps > 0 && self.state.step >= cfg.max_steps {
                break;
            }
            let epoch = self.state.epoch;
            let order = epoch_order(train.len(), seed, epoch);
            let first = self.state.batch;
            let finished = std::thread::scope(|scope| -> Result<bool> {
                let (tx, rx) = mpsc::sync_channel(QUEUE_DEPTH);
                let order = &order;
                scope.spawn(move || {
                    for b in first..batches {
                        let item = make_batch(train, order, b, cfg.batch_size, policy, seed, epoch);
                        if tx.send(item).is_err() {
                            break;
                        }
                    }
                });
                for batch in rx {
                    if cfg.max_steps > 0 && self.state.step >= cfg.max_steps {
                        return Ok(false);
                    }
                    let (x, y) = batch?;
                    let loss = self.train_step(&x, &y)?;
                    summary.step_losses.push(loss);
                    self.state.epoch_loss_sum += loss;
                    self.state.batch += 1;
                }
                Ok(true)
            })?;
            if !finished {
                break;
            }
            let log = self.end_epoch(val, batches, out)?;
            summary.epochs.push(log);
        }
        if let Some(dir) = out.filter(|_| !summary.step_losses.is_empty()) {
            self.save_state(&dir.join("last.state"))?;
        }
        Ok(summary)
    }

    fn end_epoch(&mut self, val: &[Sample], batches: usize, out: Option<&Path>) -> Result<EpochLog> {
        let metrics = if val.is_empty() {
            None
        } else {
            evaluate(&self.model, val)?.mean()
        };
        let log = EpochLog {
            epoch: self.state.epoch + 1,
            train_loss: self.state.epoch_loss_sum / batches as f64,
            val: metrics,
        };
        self.state.epoch += 1;
        self.state.batch = 0;
        self.state.epoch_loss_sum = 0.0;
        if let Some(dir) = out {
            use std::io::Write;
            let mut f = fs::OpenOptions::new().create(true).append(true).open(dir.join("train.log"))?;
            writeln!(f, "{}", log.line())?;
            if let Some(m) = metrics {
                if self.state.best_val_di.map_or(true, |best| m.di > best) {
                    let path = dir.join("best.ckpt");
                    self.model.save(&path)?;
                    self.state.best_val_di = Some(m.di);
                    self.state.best_path = Some(path);
                }
            }
            self.save_state(&dir.join("last.state"))?;
        }
        Ok(log)
    }

    pub fn to_container(&self) -> Container {
        let mut c = self.model.to_container();
        let st = &self.state;
        let mut extra = vec![
            ("step", st.step.to_string()),
            ("epoch", st.epoch.to_string()),
            ("batch", st.batch.to_string()),
            ("epoch_loss_sum", format!("{:016x}", st.epoch_loss_sum.to_bits())),
            ("opt_step", st.optimizer.step.to_string()),
        ];
        if let Some(di) = st.best_val_di {
            extra.push(("best_val_di", format!("{:016x}", di.to_bits())));
        }
        if let Some(p) = &st.best_path {
            extra.push(("best_path", p.display().to_string()));
        }
        for (k, v) in self.optimizer.entries() {
            c.config.push((format!("{EXTRA_PREFIX}{k}"), v));
        }
        for (k, v) in extra {
            c.config.push((format!("{EXTRA_PREFIX}{k}"), v));
        }
        for (id, p) in self.model.store().iter() {
            let i = id.index();
            if let Some(t) = &st.optimizer.first[i] {
                c.tensors.push((format!("{EXTRA_PREFIX}first.{}", p.name), t.clone()));
            }
            if let Some(t) = &st.optimizer.second[i] {
                c.tensors.push((format!("{EXTRA_PREFIX}second.{}", p.name), t.clone()));
            }
        }
        c
    }

    pub fn save_state(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let model = CascnModel::from_container(c)?;
        let get = |k: &str| c.get(&format!("{EXTRA_PREFIX}{k}"));
        let need = |k: &str| get(k).ok_or_else(|| Error::Checkpoint(format!("training state lacks {k}")));
        let bits = |k: &str, v: &str| {
            u64::from_str_radix(v, 16)
                .map(f64::from_bits)
                .map_err(|_| Error::Checkpoint(format!("bad {k} value {v:?}")))
        };
        let mut optimizer = OptimizerConfig::default();
        for (k, v) in &c.config {
            if let Some(key) = k.strip_prefix(EXTRA_PREFIX) {
                optimizer.set(key, v)?;
            }
        }
        let mut state = OptimizerState::new(model.store());
        state.step = kv::parse_num("opt_step", need("opt_step")?)?;
        for (id, p) in model.store().iter() {
            let i = id.index();
            state.first[i] = c.tensor(&format!("{EXTRA_PREFIX}first.{}", p.name)).cloned();
            state.second[i] = c.tensor(&format!("{EXTRA_PREFIX}second.{}", p.name)).cloned();
            if optimizer.kind == OptimizerKind::SgdNesterov {
                state.second[i] = None;
            }
        }
        let train_state = TrainState {
            step: kv::parse_num("step", need("step")?)?,
            epoch: kv::parse_num("epoch", need("epoch")?)?,
            batch: kv::parse_num("batch", need("batch")?)?,
            epoch_loss_sum: bits("epoch_loss_sum", need("epoch_loss_sum")?)?,
            best_val_di: get("best_val_di").map(|v| bits("best_val_di", v)).transpose()?,
            best_path: get("best_path").map(PathBuf::from),
            optimizer: state,
        };
        Ok(Self {
            model,
            optimizer,
            state: train_state,
        })
    }

    pub fn resume(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(&[1, 0, 0]), derive_seed(&[1, 0, 1]));
        assert_ne!(derive_seed(&[1, 2]), derive_seed(&[2, 1]));
        assert_eq!(epoch_order(10, 3, 4), epoch_order(10, 3, 4));
        assert_ne!(epoch_order(10, 3, 4), epoch_order(10, 3, 5));
    }

    #[test]
    fn log_line_format() {
        let l = EpochLog {
            epoch: 3,
            train_loss: 0.123456,
            val: None,
        };
        assert_eq!(l.line(), "3\t0.1235\t-\t-\t-\t-\t-");
    }
}
