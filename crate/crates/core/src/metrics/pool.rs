use std::collections::BTreeSet;

use rand::Rng;

use crate::captions::{render_template, CaptionDataset};
use crate::error::{Error, Result};

/// Empirical word statistics of a caption dataset, kept as occurrence lists
/// so that a uniform index draws from the empirical distribution.
#[derive(Debug, Clone)]
pub struct WordMarginals {
    pub nouns: Vec<String>,
    pub adjectives: Vec<String>,
    pub adjective_counts: Vec<usize>,
}

impl WordMarginals {
    pub fn from_dataset(captions: &CaptionDataset) -> Result<Self> {
        if captions.records.is_empty() {
            return Err(Error::EmptyDataset("caption dataset has no records".into()));
        }
        let mut m = Self {
            nouns: Vec::new(),
            adjectives: Vec::new(),
            adjective_counts: Vec::new(),
        };
        for c in &captions.records {
            m.nouns.push(c.noun.clone());
            m.adjectives.extend(c.adjectives.iter().cloned());
            m.adjective_counts.push(c.adjectives.len());
        }
        if m.adjectives.is_empty() {
            return Err(Error::InvalidInput("captions carry no adjectives".into()));
        }
        Ok(m)
    }

    /// Number of distinct template captions over the observed support.
    pub fn capacity(&self) -> u128 {
        let n = self.nouns.iter().collect::<BTreeSet<_>>().len() as u128;
        let a = self.adjectives.iter().collect::<BTreeSet<_>>().len() as u128;
        let counts: BTreeSet<usize> = self.adjective_counts.iter().copied().collect();
        counts
            .into_iter()
            .map(|k| {
                (0..k as u128)
                    .map(|i| a.saturating_sub(i))
                    .fold(n, |acc, f| acc.saturating_mul(f))
            })
            .fold(0u128, |acc, v| acc.saturating_add(v))
    }
}

/// `count` new captions with independently sampled noun, adjective count
/// and distinct adjectives, excluding every existing caption and repeats.
pub fn random_caption_pool<R: Rng + ?Sized>(captions: &CaptionDataset, count: usize, rng: &mut R) -> Result<Vec<String>> {
    let m = WordMarginals::from_dataset(captions)?;
    let existing: BTreeSet<&str> = captions.records.iter().map(|c| c.text.as_str()).collect();
    let available = m.capacity().saturating_sub(existing.len() as u128);
    if (count as u128) > available {
        return Err(Error::InvalidInput(format!(
            "vocabulary supports only {available} unseen captions, {count} requested"
        )));
    }
    let max_attempts = count.saturating_mul(1000).saturating_add(100_000);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::InvalidInput(format!(
                "gave up after {max_attempts} draws with {} of {count} captions",
                out.len()
            )));
        }
        let k = m.adjective_counts[rng.random_range(0..m.adjective_counts.len())];
        let noun = &m.nouns[rng.random_range(0..m.nouns.len())];
        let mut adjs: Vec<String> = Vec::with_capacity(k);
        while adjs.len() < k {
            let a = &m.adjectives[rng.random_range(0..m.adjectives.len())];
            if !adjs.contains(a) {
                adjs.push(a.clone());
            }
        }
        let text = render_template(&adjs, noun);
        if existing.contains(text.as_str()) || !seen.insert(text.clone()) {
            continue;
        }
        out.push(text);
    }
    Ok(out)
}
