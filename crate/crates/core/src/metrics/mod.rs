//! Fréchet feature distance, R-precision and the unseen-caption pool.

mod frechet;
mod pool;
mod rprecision;

pub use frechet::{frechet_distance, frechet_from_moments, trace_sqrt_product, FeatureSet, EIGEN_CLAMP};
pub use pool::{random_caption_pool, WordMarginals};
pub use rprecision::{
    partial_shuffle, r_precision, r_precision_embedded, r_precision_repeated, sample_distractors, RankingQuery,
    Spread, DEFAULT_R,
};

use std::path::Path;

use crate::error::{Error, Result};
use crate::numfmt::sig9;

/// Ordered `metric<TAB>value` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub entries: Vec<(String, f64)>,
}

impl MetricReport {
    pub fn push(&mut self, name: impl Into<String>, value: f64) {
        self.entries.push((name.into(), value));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(n, v)| format!("{n}\t{}\n", sig9(*v))).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut r = Self::default();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (name, value) = line
                .split_once('\t')
                .ok_or_else(|| Error::at_line("metric report", i + 1, "expected metric<TAB>value"))?;
            let v = value
                .parse::<f64>()
                .map_err(|e| Error::at_line("metric report", i + 1, e.to_string()))?;
            r.push(name, v);
        }
        Ok(r)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
