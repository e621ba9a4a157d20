//! Multi-seed comparison of decoder variants.

use crate::body::MotionSequence;
use crate::ddt::Variant;
use crate::metrics::MetricsReport;
use crate::Result;

use super::config::{ModelKind, TrainConfig};
use super::eval::evaluate;
use super::train::train;

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub seeds: Vec<u64>,
    pub reports: Vec<MetricsReport>,
}

impl AblationRow {
    pub fn mean(&self) -> [f64; 4] {
        let n = self.reports.len().max(1) as f64;
        let mut m = [0.0; 4];
        for r in &self.reports {
            for (a, v) in m.iter_mut().zip(r.values()) {
                *a += v / n;
            }
        }
        m
    }

    /// Standard error of each mean.
    pub fn std_err(&self) -> [f64; 4] {
        let n = self.reports.len();
        if n < 2 {
            return [0.0; 4];
        }
        let mean = self.mean();
        let mut s = [0.0; 4];
        for r in &self.reports {
            for ((a, v), m) in s.iter_mut().zip(r.values()).zip(mean) {
                *a += (v - m).powi(2);
            }
        }
        s.map(|v| (v / (n - 1) as f64).sqrt() / (n as f64).sqrt())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ordering {
    Holds,
    /// Reversed, but by no more than one standard error of the difference.
    WithinNoise,
    Violated,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrderCheck {
    pub ordering: Ordering,
    /// `mean(better) − mean(worse)`
    pub difference: f64,
    pub std_err: f64,
}

/// Whether `better` has a mean no larger than `worse` on metric `index`
/// (order of [`MetricsReport::KEYS`]).
pub fn check_order(better: &AblationRow, worse: &AblationRow, index: usize) -> OrderCheck {
    let difference = better.mean()[index] - worse.mean()[index];
    let std_err = better.std_err()[index].hypot(worse.std_err()[index]);
    let ordering = if difference <= 0.0 {
        Ordering::Holds
    } else if difference <= std_err {
        Ordering::WithinNoise
    } else {
        Ordering::Violated
    };
    OrderCheck { ordering, difference, std_err }
}

/// Train and evaluate each variant once per seed.
pub fn ablate(
    base: &TrainConfig,
    train_set: &[MotionSequence],
    test_set: &[MotionSequence],
    fps: f64,
    variants: &[Variant],
    seeds: &[u64],
) -> Result<Vec<AblationRow>> {
    variants
        .iter()
        .map(|&variant| {
            let reports = seeds
                .iter()
                .map(|&seed| {
                    let mut cfg = base.clone();
                    cfg.model = ModelKind::Ddt;
                    cfg.variant = variant;
                    cfg.seed = seed;
                    let outcome = train(&cfg, train_set)?;
                    evaluate(&outcome.model, test_set, fps)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(AblationRow { variant, seeds: seeds.to_vec(), reports })
        })
        .collect()
}

/// Delimited table: one row per variant with means and standard errors.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let keys = &MetricsReport::KEYS[..4];
    let mut out = String::from("variant,seeds");
    for k in keys {
        out.push_str(&format!(",{k},{k}_se"));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{}", r.variant, r.reports.len()));
        for (m, s) in r.mean().iter().zip(r.std_err()) {
            out.push_str(&format!(",{m},{s}"));
        }
        out.push('\n');
    }
    out
}
