//! End-to-end runs: resize, split, train, then score the held-out split.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::config::RunConfig;
use crate::data::{resize, split, Sample};
use crate::error::{Error, Result};
use crate::metrics::{MetricReport, Metrics};
use crate::model::{CascnModel, Variant};
use crate::train::{evaluate, FitSummary, Trainer};

/// Resamples every sample to `size`.
pub fn prepare(samples: &[Sample], size: (usize, usize)) -> Vec<Sample> {
    samples.iter().map(|s| resize(s, size)).collect()
}

pub struct RunOutcome {
    pub trainer: Trainer,
    pub summary: FitSummary,
    /// Scores of the retained model on the test split.
    pub test: MetricReport,
}

/// Trains on the train split and scores the test split with the model of best
/// validation DI, or the final model when there was no validation split. With
/// `out`, also writes `report.csv` and `final.ckpt` next to the training files.
pub fn run(config: &RunConfig, samples: &[Sample], out: Option<&Path>) -> Result<RunOutcome> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    let data = prepare(samples, config.model.input_size);
    let parts = split(&data, &config.split)?;
    let model = CascnModel::build(config.model.clone())?;
    let mut trainer = Trainer::new(model, config.optimizer.clone())?;
    let summary = trainer.fit(&parts.train, &parts.val, &config.train, &config.augmentation, out)?;
    let best = match &trainer.state.best_path {
        Some(p) => Some(CascnModel::load(p)?),
        None => None,
    };
    let test = evaluate(best.as_ref().unwrap_or(&trainer.model), &parts.test)?;
    if let Some(dir) = out {
        fs::write(dir.join("report.csv"), test.to_csv())?;
        trainer.model.save(&dir.join("final.ckpt"))?;
    }
    Ok(RunOutcome { trainer, summary, test })
}

/// Mean test scores of each ablation row.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<(Variant, Option<Metrics>)>,
}

impl AblationTable {
    /// `variant,SE,SP,AC,DI,JA`; empty cells when the test split was empty.
    pub fn to_csv(&self) -> String {
        let mut out = format!("variant,{}\n", Metrics::NAMES.join(","));
        for (v, m) in &self.rows {
            out.push_str(v.label());
            match m {
                Some(m) => m.values().iter().for_each(|x| write!(out, ",{x:.4}").unwrap()),
                None => out.push_str(",,,,,"),
            }
            out.push('\n');
        }
        out
    }
}

/// Runs every ablation variant of `config` under the same seed and data.
/// With `out`, each variant trains into its own subdirectory and the table is
/// written to `ablation.csv`.
pub fn ablate(config: &RunConfig, samples: &[Sample], out: Option<&Path>) -> Result<AblationTable> {
    let mut rows = Vec::new();
    for v in Variant::ALL {
        let mut c = config.clone();
        c.model = config.model.with_variant(v);
        let dir = out.map(|d| d.join(v.key().replace('+', "_")));
        let outcome = run(&c, samples, dir.as_deref())?;
        rows.push((v, outcome.test.mean()));
    }
    let table = AblationTable { rows };
    if let Some(dir) = out {
        fs::write(dir.join("ablation.csv"), table.to_csv())?;
    }
    Ok(table)
}
