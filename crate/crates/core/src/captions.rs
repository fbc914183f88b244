//! Pseudo-caption generation: retrieve nouns and adjectives per object from
//! its rendered views, enumerate templated candidates, keep the best-scoring
//! ones.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::embedding::{cosine, EmbeddingProvider, EmbeddingVector};
use crate::error::{Error, Result};
use crate::numfmt::sig9;
use crate::raster::Raster;
use crate::vocab::Vocabulary;

pub const DEFAULT_K1: usize = 3;
pub const DEFAULT_K2: usize = 6;
pub const DEFAULT_CAPTIONS_PER_OBJECT: usize = 20;

/// How an object's multiple views are combined when scoring words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ViewAggregation {
    /// Mean cosine over all views; one caption set per object.
    #[default]
    Mean,
    /// Every view is captioned on its own; the object gets one set per view.
    PerView,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionGenConfig {
    pub k1: usize,
    pub k2: usize,
    pub captions_per_object: usize,
    pub max_adjectives_per_caption: usize,
    pub aggregation: ViewAggregation,
}

impl Default for CaptionGenConfig {
    fn default() -> Self {
        Self {
            k1: DEFAULT_K1,
            k2: DEFAULT_K2,
            captions_per_object: DEFAULT_CAPTIONS_PER_OBJECT,
            max_adjectives_per_caption: 2,
            aggregation: ViewAggregation::Mean,
        }
    }
}

impl CaptionGenConfig {
    pub fn candidate_count(&self) -> usize {
        let pairs = if self.max_adjectives_per_caption >= 2 {
            self.k2 * self.k2.saturating_sub(1)
        } else {
            0
        };
        self.k1 * (self.k2 + pairs)
    }

    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        if self.k1 == 0 || self.k2 == 0 || self.captions_per_object == 0 {
            return Err(Error::InvalidConfig("k1, k2 and captions per object must be positive".into()));
        }
        if !(1..=2).contains(&self.max_adjectives_per_caption) {
            return Err(Error::InvalidConfig("max adjectives per caption must be 1 or 2".into()));
        }
        if self.k1 > vocab.nouns().len() {
            return Err(Error::InvalidConfig(format!(
                "k1 = {} exceeds {} nouns",
                self.k1,
                vocab.nouns().len()
            )));
        }
        if self.k2 > vocab.adjectives().len() {
            return Err(Error::InvalidConfig(format!(
                "k2 = {} exceeds {} adjectives",
                self.k2,
                vocab.adjectives().len()
            )));
        }
        if self.captions_per_object > self.candidate_count() {
            return Err(Error::InvalidConfig(format!(
                "{} captions per object requested but only {} candidates exist",
                self.captions_per_object,
                self.candidate_count()
            )));
        }
        Ok(())
    }
}

/// Noun plus one or two adjectives, before scoring.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub noun: String,
    pub adjectives: Vec<String>,
}

impl Candidate {
    pub fn text(&self) -> String {
        render_template(&self.adjectives, &self.noun)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Caption {
    pub text: String,
    pub noun: String,
    pub adjectives: Vec<String>,
    pub score: f64,
    pub object_id: String,
}

/// `"a {adjective} {noun}"` or `"a {adjective} {adjective} {noun}"`.
pub fn render_template(adjectives: &[String], noun: &str) -> String {
    let mut s = String::from("a");
    for a in adjectives {
        s.push(' ');
        s.push_str(a);
    }
    s.push(' ');
    s.push_str(noun);
    s
}

/// Inverse of [`render_template`]; returns `(adjectives, noun)`.
pub fn parse_template(text: &str) -> Option<(Vec<String>, String)> {
    let mut words: Vec<&str> = text.split(' ').collect();
    if words.len() < 3 || words.len() > 4 || words[0] != "a" || words.iter().any(|w| w.is_empty()) {
        return None;
    }
    let noun = words.pop()?.to_string();
    Some((words[1..].iter().map(|w| w.to_string()).collect(), noun))
}

/// Text embeddings of every vocabulary word, computed once per provider.
#[derive(Debug, Clone)]
pub struct WordEmbeddings {
    pub nouns: Vec<(String, EmbeddingVector)>,
    pub adjectives: Vec<(String, EmbeddingVector)>,
}

impl WordEmbeddings {
    pub fn compute(vocab: &Vocabulary, provider: &dyn EmbeddingProvider) -> Result<Self> {
        let embed = |words: &[String]| -> Result<Vec<(String, EmbeddingVector)>> {
            words
                .par_iter()
                .map(|w| Ok((w.clone(), provider.encode_text(w)?)))
                .collect()
        };
        Ok(Self {
            nouns: embed(vocab.nouns())?,
            adjectives: embed(vocab.adjectives())?,
        })
    }
}

/// Words ranked for one object, best first, with their mean cosine.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievedWords {
    pub nouns: Vec<(String, f64)>,
    pub adjectives: Vec<(String, f64)>,
}

impl RetrievedWords {
    pub fn noun_tokens(&self) -> Vec<String> {
        self.nouns.iter().map(|(w, _)| w.clone()).collect()
    }

    pub fn adjective_tokens(&self) -> Vec<String> {
        self.adjectives.iter().map(|(w, _)| w.clone()).collect()
    }
}

/// Mean of `cosine(target, v)` over `views`, summed in view order.
pub fn mean_cosine(views: &[EmbeddingVector], target: &EmbeddingVector) -> Result<f64> {
    let mut acc = 0.0;
    for v in views {
        acc += cosine(v, target)?;
    }
    Ok(acc / views.len() as f64)
}

fn top_k(words: &[(String, EmbeddingVector)], views: &[EmbeddingVector], k: usize) -> Result<Vec<(String, f64)>> {
    let mut scored = words
        .iter()
        .map(|(w, e)| Ok((w.clone(), mean_cosine(views, e)?)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}

/// Top-`k1` nouns and top-`k2` adjectives by mean cosine against the views.
/// Ties go to the lexicographically smaller token.
pub fn retrieve_words(
    image_embeddings: &[EmbeddingVector],
    words: &WordEmbeddings,
    config: &CaptionGenConfig,
) -> Result<RetrievedWords> {
    if image_embeddings.is_empty() {
        return Err(Error::InvalidInput("no image embeddings for object".into()));
    }
    if config.k1 == 0 || config.k1 > words.nouns.len() {
        return Err(Error::InvalidConfig(format!(
            "k1 = {} not in 1..={}",
            config.k1,
            words.nouns.len()
        )));
    }
    if config.k2 == 0 || config.k2 > words.adjectives.len() {
        return Err(Error::InvalidConfig(format!(
            "k2 = {} not in 1..={}",
            config.k2,
            words.adjectives.len()
        )));
    }
    Ok(RetrievedWords {
        nouns: top_k(&words.nouns, image_embeddings, config.k1)?,
        adjectives: top_k(&words.adjectives, image_embeddings, config.k2)?,
    })
}

/// Every single-adjective and ordered distinct-pair caption, nouns outermost.
pub fn build_candidates(nouns: &[String], adjectives: &[String], max_adjectives: usize) -> Vec<Candidate> {
    let mut out = Vec::new();
    for noun in nouns {
        for a in adjectives {
            out.push(Candidate {
                noun: noun.clone(),
                adjectives: vec![a.clone()],
            });
        }
        if max_adjectives >= 2 {
            for (i, a) in adjectives.iter().enumerate() {
                for (j, b) in adjectives.iter().enumerate() {
                    if i != j {
                        out.push(Candidate {
                            noun: noun.clone(),
                            adjectives: vec![a.clone(), b.clone()],
                        });
                    }
                }
            }
        }
    }
    out
}

/// Scores candidates by mean cosine against the views and keeps the best
/// `captions_per_object`; ties keep enumeration order.
pub fn rank_and_select(
    candidates: &[Candidate],
    image_embeddings: &[EmbeddingVector],
    provider: &dyn EmbeddingProvider,
    config: &CaptionGenConfig,
    object_id: &str,
) -> Result<Vec<Caption>> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput("no candidates to rank".into()));
    }
    if config.captions_per_object > candidates.len() {
        return Err(Error::InvalidConfig(format!(
            "{} captions requested from {} candidates",
            config.captions_per_object,
            candidates.len()
        )));
    }
    let mut scored = candidates
        .iter()
        .map(|c| {
            let text = c.text();
            let e = provider.encode_text(&text)?;
            Ok(Caption {
                score: mean_cosine(image_embeddings, &e)?,
                text,
                noun: c.noun.clone(),
                adjectives: c.adjectives.clone(),
                object_id: object_id.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    // sort_by is stable
    scored.sort_by(|a, b| b.score.total_cmp(&a.score));
    scored.truncate(config.captions_per_object);
    Ok(scored)
}

/// One object's rendered views.
#[derive(Debug, Clone)]
pub struct ObjectViews {
    pub object_id: String,
    pub views: Vec<Raster>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionRun {
    pub dataset: CaptionDataset,
    /// Objects without views.
    pub skipped: Vec<String>,
}

fn caption_views(
    object_id: &str,
    embeddings: &[EmbeddingVector],
    words: &WordEmbeddings,
    provider: &dyn EmbeddingProvider,
    config: &CaptionGenConfig,
) -> Result<Vec<Caption>> {
    let retrieved = retrieve_words(embeddings, words, config)?;
    let candidates = build_candidates(
        &retrieved.noun_tokens(),
        &retrieved.adjective_tokens(),
        config.max_adjectives_per_caption,
    );
    rank_and_select(&candidates, embeddings, provider, config, object_id)
}

/// Runs the full pipeline over `objects`. Output is ordered by object id
/// regardless of processing order.
pub fn generate_pseudo_captions(
    objects: &[ObjectViews],
    vocab: &Vocabulary,
    provider: &dyn EmbeddingProvider,
    config: &CaptionGenConfig,
) -> Result<CaptionRun> {
    config.validate(vocab)?;
    let words = WordEmbeddings::compute(vocab, provider)?;
    let mut sorted: Vec<&ObjectViews> = objects.iter().collect();
    sorted.sort_by(|a, b| a.object_id.cmp(&b.object_id));

    let per_object: Vec<Option<Vec<Caption>>> = sorted
        .par_iter()
        .map(|obj| {
            if obj.views.is_empty() {
                return Ok(None);
            }
            let embeddings = obj
                .views
                .iter()
                .map(|v| provider.encode_image(v))
                .collect::<Result<Vec<_>>>()?;
            let captions = match config.aggregation {
                ViewAggregation::Mean => caption_views(&obj.object_id, &embeddings, &words, provider, config)?,
                ViewAggregation::PerView => {
                    let mut all = Vec::new();
                    for e in &embeddings {
                        all.extend(caption_views(
                            &obj.object_id,
                            std::slice::from_ref(e),
                            &words,
                            provider,
                            config,
                        )?);
                    }
                    all
                }
            };
            Ok(Some(captions))
        })
        .collect::<Result<_>>()?;

    let desc = provider.descriptor();
    let mut dataset = CaptionDataset::new(desc.dimension, &desc.name);
    let mut skipped = Vec::new();
    for (obj, caps) in sorted.iter().zip(per_object) {
        match caps {
            Some(c) => dataset.records.extend(c),
            None => {
                log::warn!("object {} has no views; skipped", obj.object_id);
                skipped.push(obj.object_id.clone());
            }
        }
    }
    Ok(CaptionRun { dataset, skipped })
}

/// Per-object caption sets as persisted on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionDataset {
    pub dimension: usize,
    pub provider: String,
    pub records: Vec<Caption>,
}

const CAPTIONS_HEADER: &str = "#taps-captions v1";

impl CaptionDataset {
    pub fn new(dimension: usize, provider: &str) -> Self {
        Self {
            dimension,
            provider: provider.to_string(),
            records: Vec::new(),
        }
    }

    pub fn header_line(&self) -> String {
        format!("{CAPTIONS_HEADER} dim={} provider={}", self.dimension, self.provider)
    }

    pub fn to_text(&self) -> String {
        let mut s = self.header_line();
        s.push('\n');
        for c in &self.records {
            writeln!(s, "{}\t{}\t{}", c.object_id, c.text, sig9(c.score)).unwrap();
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        const WHAT: &str = "caption file";
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::at_line(WHAT, 1, "missing header"))?;
        let rest = header
            .strip_prefix(CAPTIONS_HEADER)
            .ok_or_else(|| Error::at_line(WHAT, 1, "bad header"))?;
        let mut dimension = None;
        let mut provider = None;
        for field in rest.split_whitespace() {
            match field.split_once('=') {
                Some(("dim", v)) => {
                    dimension = Some(v.parse::<usize>().map_err(|_| Error::at_line(WHAT, 1, "bad dim"))?)
                }
                Some(("provider", v)) => provider = Some(v.to_string()),
                _ => return Err(Error::at_line(WHAT, 1, format!("unknown header field {field:?}"))),
            }
        }
        let mut ds = CaptionDataset::new(
            dimension.ok_or_else(|| Error::at_line(WHAT, 1, "header lacks dim"))?,
            &provider.ok_or_else(|| Error::at_line(WHAT, 1, "header lacks provider"))?,
        );
        for (i, line) in lines.enumerate() {
            let ln = i + 2;
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(Error::at_line(WHAT, ln, format!("expected 3 fields, got {}", f.len())));
            }
            let (adjectives, noun) =
                parse_template(f[1]).ok_or_else(|| Error::at_line(WHAT, ln, "caption does not match template"))?;
            let score: f64 = f[2].parse().map_err(|_| Error::at_line(WHAT, ln, "bad score"))?;
            ds.records.push(Caption {
                text: f[1].to_string(),
                noun,
                adjectives,
                score,
                object_id: f[0].to_string(),
            });
        }
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn by_object(&self) -> BTreeMap<&str, Vec<&Caption>> {
        let mut m: BTreeMap<&str, Vec<&Caption>> = BTreeMap::new();
        for c in &self.records {
            m.entry(c.object_id.as_str()).or_default().push(c);
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::ReferenceProvider;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn hand_enumeration() {
        let c = build_candidates(&s(&["car"]), &s(&["red", "fast"]), 2);
        let texts: Vec<String> = c.iter().map(Candidate::text).collect();
        assert_eq!(texts, ["a red car", "a fast car", "a red fast car", "a fast red car"]);
    }

    #[test]
    fn candidate_counts() {
        let nouns = s(&["a1", "a2", "a3"]);
        let adjs = s(&["b1", "b2", "b3", "b4", "b5", "b6"]);
        assert_eq!(build_candidates(&nouns, &adjs, 2).len(), 3 * (6 + 30));
        assert_eq!(CaptionGenConfig::default().candidate_count(), 108);
        let one = build_candidates(&nouns, &adjs[..1], 2);
        assert_eq!(one.len(), 3);
        assert!(one.iter().all(|c| c.adjectives.len() == 1));
    }

    #[test]
    fn template_roundtrip() {
        let t = render_template(&s(&["red", "fast"]), "car");
        assert_eq!(t, "a red fast car");
        assert_eq!(parse_template(&t), Some((s(&["red", "fast"]), "car".to_string())));
        assert_eq!(parse_template("a car"), None);
        assert_eq!(parse_template("the red car"), None);
        assert_eq!(parse_template("a  red car"), None);
    }

    fn unit(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::normalize(v.to_vec()).unwrap()
    }

    #[test]
    fn ties_break_lexicographically() {
        let e = unit(&[1.0, 0.0]);
        let words = WordEmbeddings {
            nouns: vec![("zebra".into(), e.clone()), ("apple".into(), e.clone())],
            adjectives: vec![("red".into(), e.clone())],
        };
        let cfg = CaptionGenConfig {
            k1: 2,
            k2: 1,
            ..Default::default()
        };
        let r = retrieve_words(&[e], &words, &cfg).unwrap();
        assert_eq!(r.noun_tokens(), ["apple", "zebra"]);
    }

    #[test]
    fn k_too_large() {
        let e = unit(&[1.0, 0.0]);
        let words = WordEmbeddings {
            nouns: vec![("car".into(), e.clone())],
            adjectives: vec![("red".into(), e.clone())],
        };
        let cfg = CaptionGenConfig { k1: 2, k2: 1, ..Default::default() };
        assert!(matches!(retrieve_words(&[e], &words, &cfg), Err(Error::InvalidConfig(_))));
    }

    /// Provider that maps every text to the same vector.
    struct Constant;
    impl EmbeddingProvider for Constant {
        fn descriptor(&self) -> crate::embedding::ProviderDescriptor {
            crate::embedding::ProviderDescriptor {
                name: "constant".into(),
                dimension: 2,
                differentiable: false,
                seed: None,
            }
        }
        fn encode_text(&self, _: &str) -> Result<EmbeddingVector> {
            Ok(unit(&[1.0, 0.0]))
        }
        fn encode_image(&self, _: &Raster) -> Result<EmbeddingVector> {
            Ok(unit(&[1.0, 1.0]))
        }
        fn content_hash(&self) -> String {
            String::new()
        }
    }

    #[test]
    fn identical_scores_keep_enumeration_order() {
        let cands = build_candidates(&s(&["n1", "n2", "n3"]), &s(&["a", "b", "c", "d", "e", "f"]), 2);
        let cfg = CaptionGenConfig::default();
        let out = rank_and_select(&cands, &[unit(&[0.0, 1.0])], &Constant, &cfg, "o").unwrap();
        let expect: Vec<String> = cands[..20].iter().map(Candidate::text).collect();
        let got: Vec<String> = out.iter().map(|c| c.text.clone()).collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn too_many_requested() {
        let cands = build_candidates(&s(&["n"]), &s(&["a"]), 2);
        let cfg = CaptionGenConfig { captions_per_object: 2, ..Default::default() };
        assert!(matches!(
            rank_and_select(&cands, &[unit(&[1.0, 0.0])], &Constant, &cfg, "o"),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn empty_dataset_writes_header_only() {
        let p = ReferenceProvider::new(3, 16);
        let vocab = Vocabulary::new(s(&["car", "sofa"]), s(&["red", "blue"]), "t").unwrap();
        let cfg = CaptionGenConfig { k1: 1, k2: 2, captions_per_object: 2, ..Default::default() };
        let run = generate_pseudo_captions(&[], &vocab, &p, &cfg).unwrap();
        assert_eq!(run.dataset.to_text(), "#taps-captions v1 dim=16 provider=reference\n");
        let back = CaptionDataset::parse(&run.dataset.to_text()).unwrap();
        assert_eq!(back, run.dataset);
    }

    #[test]
    fn zero_view_objects_are_skipped() {
        let p = ReferenceProvider::new(3, 16);
        let vocab = Vocabulary::new(s(&["car", "sofa"]), s(&["red", "blue"]), "t").unwrap();
        let cfg = CaptionGenConfig { k1: 1, k2: 2, captions_per_object: 2, ..Default::default() };
        let objs = vec![
            ObjectViews { object_id: "b".into(), views: vec![Raster::filled(8, 8, [0.3, 0.2, 0.9, 1.0])] },
            ObjectViews { object_id: "a".into(), views: vec![] },
        ];
        let run = generate_pseudo_captions(&objs, &vocab, &p, &cfg).unwrap();
        assert_eq!(run.skipped, ["a"]);
        assert_eq!(run.dataset.records.len(), 2);
        assert!(run.dataset.records.iter().all(|c| c.object_id == "b"));
    }

    #[test]
    fn per_view_mode_captions_each_view() {
        let p = ReferenceProvider::new(3, 16);
        let vocab = Vocabulary::new(s(&["car", "sofa"]), s(&["red", "blue"]), "t").unwrap();
        let cfg = CaptionGenConfig {
            k1: 1,
            k2: 2,
            captions_per_object: 2,
            aggregation: ViewAggregation::PerView,
            ..Default::default()
        };
        let objs = vec![ObjectViews {
            object_id: "x".into(),
            views: vec![Raster::filled(8, 8, [0.3, 0.2, 0.9, 1.0]), Raster::filled(8, 8, [0.9, 0.9, 0.1, 1.0])],
        }];
        let run = generate_pseudo_captions(&objs, &vocab, &p, &cfg).unwrap();
        assert_eq!(run.dataset.records.len(), 4);
    }
}
