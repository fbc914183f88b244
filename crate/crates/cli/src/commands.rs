use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use taps_core::captions::{generate_pseudo_captions, CaptionDataset, CaptionGenConfig, ObjectViews, ViewAggregation};
use taps_core::dataset::{assign_splits, load_manifest, DatasetManifest, Split, TrainingSet};
use taps_core::digest::derive_seed;
use taps_core::embedding::{EmbeddingProvider, ReferenceProvider, ServiceProvider};
use taps_core::fixture::{make_fixture as build_fixture, parse_geometry_codes, FixtureConfig};
use taps_core::metrics::{
    frechet_distance, random_caption_pool, r_precision_repeated, FeatureSet, MetricReport, RankingQuery,
};
use taps_core::model::{interpolate as lerp, map, Checkpoint, LatentNoise, ToyGenerator};
use taps_core::raster::{tile_grid, CameraPose, Raster};
use taps_core::train::{OptimizerKind, TrainConfig};
use taps_core::vocab::{build_adjectives, load_vocabulary, parse_token_list, Allowlist, Vocabulary};
use taps_core::Error;

use crate::config::{KeySpec, Settings};
use crate::manifest::RunManifest;
use crate::GlobalArgs;

const CAPTIONS_FILE: &str = "captions.tsv";
const METRICS_FILE: &str = "metrics.tsv";
const SPLIT_SEED_STREAM: u64 = 0x5B17;
const SAMPLE_STREAM: u64 = 0x5A3B;

fn opt<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

fn opt_path(v: &Option<PathBuf>) -> Option<String> {
    v.as_ref().map(|p| p.to_string_lossy().into_owned())
}

fn resolve(
    g: &GlobalArgs,
    keys: KeySpec,
    overrides: Vec<(&'static str, Option<String>)>,
) -> Result<Settings> {
    let mut all = vec![("seed", opt(&g.seed))];
    all.extend(overrides);
    Ok(Settings::resolve(keys, g.config.as_deref(), all)?)
}

fn prepare_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    Ok(())
}

fn finish(g: &GlobalArgs, command: &str, s: &Settings) -> Result<()> {
    let seed = s.get::<u64>("seed")?;
    RunManifest::scan(command, s.digest(), seed, &g.out)?.write(&g.out)?;
    log::info!("{command}: outputs in {}", g.out.display());
    Ok(())
}

fn provider_from(s: &Settings) -> Result<Box<dyn EmbeddingProvider>> {
    match s.raw("provider") {
        "reference" => Ok(Box::new(ReferenceProvider::new(
            s.get("embedding_seed")?,
            s.get("embedding_dim")?,
        ))),
        "service" => {
            let addr = s.raw("service_addr");
            if addr.is_empty() {
                return Err(Error::InvalidConfig("provider = service needs service_addr".into()).into());
            }
            Ok(Box::new(ServiceProvider::connect(addr)?))
        }
        other => Err(Error::InvalidConfig(format!("unknown provider {other:?}")).into()),
    }
}

fn generator_from(s: &Settings) -> Result<ToyGenerator> {
    Ok(ToyGenerator::new(s.get("generator_seed")?, s.get("resolution")?)?)
}

#[derive(Debug, Args)]
pub struct BuildVocabArgs {
    /// Noun list, one per line. Defaults to the bundled list.
    #[arg(long)]
    pub nouns: Option<PathBuf>,
    /// Raw candidate tokens to filter into adjectives.
    #[arg(long)]
    pub adjectives: Option<PathBuf>,
    /// Tokens accepted as adjectives. Defaults to the bundled lexicon.
    #[arg(long)]
    pub allowlist: Option<PathBuf>,
}

const BUILD_VOCAB_KEYS: KeySpec = &[("seed", "0"), ("nouns", ""), ("adjectives", ""), ("allowlist", "")];

pub fn build_vocab(g: &GlobalArgs, a: &BuildVocabArgs) -> Result<()> {
    let s = resolve(
        g,
        BUILD_VOCAB_KEYS,
        vec![
            ("nouns", opt_path(&a.nouns)),
            ("adjectives", opt_path(&a.adjectives)),
            ("allowlist", opt_path(&a.allowlist)),
        ],
    )?;
    let bundled = Vocabulary::bundled();
    let read = |p: &Path, what: &str| -> Result<Vec<String>> {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        Ok(parse_token_list(&text, what)?)
    };
    let nouns = match s.path("nouns") {
        Some(p) => read(&p, "nouns")?,
        None => bundled.nouns().to_vec(),
    };
    let allow = match s.path("allowlist") {
        Some(p) => Allowlist::load(&p)?,
        None => Allowlist::bundled(),
    };
    let adjectives = match s.path("adjectives") {
        Some(p) => build_adjectives(&read(&p, "adjectives")?, |t| allow.contains(t)),
        None => bundled.adjectives().to_vec(),
    };
    let vocab = Vocabulary::new(nouns, adjectives, "build-vocab")?;
    prepare_out(&g.out)?;
    vocab.save(&g.out.join("nouns.txt"), &g.out.join("adjectives.txt"))?;
    log::info!("{} nouns, {} adjectives", vocab.nouns().len(), vocab.adjectives().len());
    finish(g, "build-vocab", &s)
}

#[derive(Debug, Args)]
pub struct MakeFixtureArgs {
    #[arg(long)]
    pub objects: Option<usize>,
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub generator_seed: Option<u64>,
}

const MAKE_FIXTURE_KEYS: KeySpec = &[
    ("seed", "0"),
    ("objects", "8"),
    ("views", "8"),
    ("resolution", "32"),
    ("generator_seed", "1853766913"),
];

pub fn make_fixture(g: &GlobalArgs, a: &MakeFixtureArgs) -> Result<()> {
    let s = resolve(
        g,
        MAKE_FIXTURE_KEYS,
        vec![
            ("objects", opt(&a.objects)),
            ("views", opt(&a.views)),
            ("resolution", opt(&a.resolution)),
            ("generator_seed", opt(&a.generator_seed)),
        ],
    )?;
    let generator = generator_from(&s)?;
    let config = FixtureConfig {
        objects: s.get("objects")?,
        views: s.get("views")?,
        seed: s.get("seed")?,
        ..FixtureConfig::default()
    };
    let world = build_fixture(&config, &generator)?;
    prepare_out(&g.out)?;
    let manifest = world.write(&g.out, &generator)?;
    log::info!("{} objects, {} images", world.objects.len(), manifest.records.len());
    finish(g, "make-fixture", &s)
}

#[derive(Debug, Args)]
pub struct GenCaptionsArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub nouns: Option<PathBuf>,
    #[arg(long)]
    pub adjectives: Option<PathBuf>,
    /// Nouns retrieved per object.
    #[arg(long)]
    pub k1: Option<usize>,
    /// Adjectives retrieved per object.
    #[arg(long)]
    pub k2: Option<usize>,
    #[arg(long)]
    pub captions_per_object: Option<usize>,
    #[arg(long)]
    pub max_adjectives: Option<usize>,
    /// `mean` or `per-view`.
    #[arg(long)]
    pub aggregation: Option<String>,
    /// `reference` or `service`.
    #[arg(long)]
    pub provider: Option<String>,
    /// `host:port` of the embedding service.
    #[arg(long)]
    pub service_addr: Option<String>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    #[arg(long)]
    pub embedding_seed: Option<u64>,
}

const GEN_CAPTIONS_KEYS: KeySpec = &[
    ("seed", "0"),
    ("manifest", ""),
    ("nouns", ""),
    ("adjectives", ""),
    ("k1", "3"),
    ("k2", "6"),
    ("captions_per_object", "20"),
    ("max_adjectives", "2"),
    ("aggregation", "mean"),
    ("provider", "reference"),
    ("service_addr", ""),
    ("embedding_dim", "64"),
    ("embedding_seed", "2056600832"),
];

fn vocabulary_from(s: &Settings) -> Result<Vocabulary> {
    match (s.path("nouns"), s.path("adjectives")) {
        (None, None) => Ok(Vocabulary::bundled()),
        (Some(n), Some(a)) => Ok(load_vocabulary(&n, &a)?),
        _ => Err(Error::InvalidConfig("give both nouns and adjectives, or neither".into()).into()),
    }
}

pub fn gen_captions(g: &GlobalArgs, a: &GenCaptionsArgs) -> Result<()> {
    let s = resolve(
        g,
        GEN_CAPTIONS_KEYS,
        vec![
            ("manifest", opt_path(&a.manifest)),
            ("nouns", opt_path(&a.nouns)),
            ("adjectives", opt_path(&a.adjectives)),
            ("k1", opt(&a.k1)),
            ("k2", opt(&a.k2)),
            ("captions_per_object", opt(&a.captions_per_object)),
            ("max_adjectives", opt(&a.max_adjectives)),
            ("aggregation", a.aggregation.clone()),
            ("provider", a.provider.clone()),
            ("service_addr", a.service_addr.clone()),
            ("embedding_dim", opt(&a.embedding_dim)),
            ("embedding_seed", opt(&a.embedding_seed)),
        ],
    )?;
    let aggregation = match s.raw("aggregation") {
        "mean" => ViewAggregation::Mean,
        "per-view" => ViewAggregation::PerView,
        v => return Err(Error::InvalidConfig(format!("aggregation must be mean or per-view, got {v:?}")).into()),
    };
    let config = CaptionGenConfig {
        k1: s.get("k1")?,
        k2: s.get("k2")?,
        captions_per_object: s.get("captions_per_object")?,
        max_adjectives_per_caption: s.get("max_adjectives")?,
        aggregation,
    };
    let vocab = vocabulary_from(&s)?;
    config.validate(&vocab)?;
    let manifest = load_manifest(&s.require_path("manifest")?)?;
    let provider = provider_from(&s)?;

    let mut objects = Vec::new();
    for id in manifest.object_ids() {
        let views = manifest
            .records_for(&id)
            .map(|r| Ok(manifest.load_image(r)?.raster))
            .collect::<Result<Vec<_>, Error>>()?;
        objects.push(ObjectViews { object_id: id, views });
    }
    let run = generate_pseudo_captions(&objects, &vocab, provider.as_ref(), &config)?;
    prepare_out(&g.out)?;
    run.dataset.save(&g.out.join(CAPTIONS_FILE))?;
    log::info!("{} captions for {} objects", run.dataset.records.len(), objects.len() - run.skipped.len());
    finish(g, "gen-captions", &s)
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub captions: Option<PathBuf>,
    /// `train` uses the train split only; `all` uses every object.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub iters: Option<u64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr_geo: Option<f64>,
    #[arg(long)]
    pub lr_tex: Option<f64>,
    /// `sgd` or `adam`.
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub no_clip_loss: bool,
    #[arg(long)]
    pub no_img_loss: bool,
    #[arg(long)]
    pub no_bg_aug: bool,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[arg(long)]
    pub generator_seed: Option<u64>,
    /// `reference` or `service`.
    #[arg(long)]
    pub provider: Option<String>,
    /// `host:port` of the embedding service.
    #[arg(long)]
    pub service_addr: Option<String>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    #[arg(long)]
    pub embedding_seed: Option<u64>,
}

const TRAIN_KEYS: KeySpec = &[
    ("seed", "0"),
    ("manifest", ""),
    ("captions", ""),
    ("split", "train"),
    ("iters", "500"),
    ("batch", "16"),
    ("lr_geo", "0.004"),
    ("lr_tex", "0.0005"),
    ("optimizer", "sgd"),
    ("clip_loss", "true"),
    ("img_loss", "true"),
    ("bg_aug", "true"),
    ("checkpoint_every", "100"),
    ("generator_seed", "1853766913"),
    ("provider", "reference"),
    ("service_addr", ""),
    ("embedding_dim", "64"),
    ("embedding_seed", "2056600832"),
];

fn off(flag: bool) -> Option<String> {
    flag.then(|| "false".to_string())
}

/// Manifest with splits assigned; the split seed derives from the run seed.
fn split_manifest(s: &Settings) -> Result<DatasetManifest> {
    let m = load_manifest(&s.require_path("manifest")?)?;
    Ok(assign_splits(&m, derive_seed(s.get("seed")?, SPLIT_SEED_STREAM)))
}

fn objects_for(manifest: &DatasetManifest, split: &str) -> Result<Vec<String>> {
    match split {
        "all" => Ok(manifest.object_ids()),
        "train" => Ok(manifest.objects_in(Split::Train)),
        "val" => Ok(manifest.objects_in(Split::Validation)),
        "test" => Ok(manifest.objects_in(Split::Test)),
        v => Err(Error::InvalidConfig(format!("split must be train, val, test or all, got {v:?}")).into()),
    }
}

pub fn train(g: &GlobalArgs, a: &TrainArgs) -> Result<()> {
    let s = resolve(
        g,
        TRAIN_KEYS,
        vec![
            ("manifest", opt_path(&a.manifest)),
            ("captions", opt_path(&a.captions)),
            ("split", a.split.clone()),
            ("iters", opt(&a.iters)),
            ("batch", opt(&a.batch)),
            ("lr_geo", opt(&a.lr_geo)),
            ("lr_tex", opt(&a.lr_tex)),
            ("optimizer", a.optimizer.clone()),
            ("clip_loss", off(a.no_clip_loss)),
            ("img_loss", off(a.no_img_loss)),
            ("bg_aug", off(a.no_bg_aug)),
            ("checkpoint_every", opt(&a.checkpoint_every)),
            ("generator_seed", opt(&a.generator_seed)),
            ("embedding_dim", opt(&a.embedding_dim)),
            ("embedding_seed", opt(&a.embedding_seed)),
            ("provider", a.provider.clone()),
            ("service_addr", a.service_addr.clone()),
        ],
    )?;
    let optimizer = match s.raw("optimizer") {
        "sgd" => OptimizerKind::Sgd,
        "adam" => OptimizerKind::adam(),
        v => return Err(Error::InvalidConfig(format!("optimizer must be sgd or adam, got {v:?}")).into()),
    };
    let mut config = TrainConfig {
        seed: s.get("seed")?,
        iterations: s.get("iters")?,
        batch_size: s.get("batch")?,
        lr_geometry: s.get("lr_geo")?,
        lr_texture: s.get("lr_tex")?,
        optimizer,
        checkpoint_every: s.get("checkpoint_every")?,
        ..TrainConfig::default()
    };
    config.flags.clip = s.flag("clip_loss")?;
    config.flags.img = s.flag("img_loss")?;
    config.flags.bg_aug = s.flag("bg_aug")?;
    if config.lr_geometry <= 0.0 || config.lr_texture <= 0.0 {
        return Err(Error::InvalidConfig("learning rates must be positive".into()).into());
    }
    config.validate()?;

    let manifest = split_manifest(&s)?;
    let captions = CaptionDataset::load(&s.require_path("captions")?)?;
    let ids = objects_for(&manifest, s.raw("split"))?;
    let images = manifest
        .records
        .iter()
        .filter(|r| ids.contains(&r.object_id))
        .map(|r| manifest.load_image(r))
        .collect::<Result<Vec<_>, Error>>()?;
    let set = TrainingSet::new(images, &captions)?;

    let provider = provider_from(&s)?;
    if provider.descriptor().dimension != captions.dimension {
        return Err(Error::InvalidConfig(format!(
            "captions were embedded at dim {} but the provider has dim {}",
            captions.dimension,
            provider.descriptor().dimension
        ))
        .into());
    }
    let resolution = set.images().next().map(|i| i.raster.height()).unwrap_or(32);
    let generator = ToyGenerator::new(s.get("generator_seed")?, resolution)?;
    prepare_out(&g.out)?;
    let outcome = taps_core::train::train(&config, &set, provider.as_ref(), &generator, Some(&g.out))?;
    if let (Some(first), Some(last)) = (outcome.trace.first(), outcome.trace.last()) {
        log::info!("loss {:.4} -> {:.4} over {} iterations", first.total, last.total, outcome.trace.len());
    }
    finish(g, "train", &s)
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Feature file of the first set (feature-file mode).
    #[arg(long)]
    pub features_a: Option<PathBuf>,
    #[arg(long)]
    pub features_b: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub captions: Option<PathBuf>,
    /// Hidden geometry codes of the real objects, for the shape distance.
    #[arg(long)]
    pub latents: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    /// Distractors per ranking query.
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub pool_size: Option<usize>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long)]
    pub samples_per_object: Option<usize>,
    #[arg(long)]
    pub generator_seed: Option<u64>,
    /// `reference` or `service`.
    #[arg(long)]
    pub provider: Option<String>,
    /// `host:port` of the embedding service.
    #[arg(long)]
    pub service_addr: Option<String>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    #[arg(long)]
    pub embedding_seed: Option<u64>,
}

const EVAL_KEYS: KeySpec = &[
    ("seed", "0"),
    ("features_a", ""),
    ("features_b", ""),
    ("checkpoint", ""),
    ("manifest", ""),
    ("captions", ""),
    ("latents", ""),
    ("split", "test"),
    ("r", "100"),
    ("pool_size", "200"),
    ("repetitions", "5"),
    ("samples_per_object", "4"),
    ("generator_seed", "1853766913"),
    ("provider", "reference"),
    ("service_addr", ""),
    ("embedding_dim", "64"),
    ("embedding_seed", "2056600832"),
];

fn load_features(path: &Path) -> Result<FeatureSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(FeatureSet::parse(&path.to_string_lossy(), &text)?)
}

pub fn eval(g: &GlobalArgs, a: &EvalArgs) -> Result<()> {
    let s = resolve(
        g,
        EVAL_KEYS,
        vec![
            ("features_a", opt_path(&a.features_a)),
            ("features_b", opt_path(&a.features_b)),
            ("checkpoint", opt_path(&a.checkpoint)),
            ("manifest", opt_path(&a.manifest)),
            ("captions", opt_path(&a.captions)),
            ("latents", opt_path(&a.latents)),
            ("split", a.split.clone()),
            ("r", opt(&a.r)),
            ("pool_size", opt(&a.pool_size)),
            ("repetitions", opt(&a.repetitions)),
            ("samples_per_object", opt(&a.samples_per_object)),
            ("generator_seed", opt(&a.generator_seed)),
            ("embedding_dim", opt(&a.embedding_dim)),
            ("embedding_seed", opt(&a.embedding_seed)),
            ("provider", a.provider.clone()),
            ("service_addr", a.service_addr.clone()),
        ],
    )?;
    let mut report = MetricReport::default();
    match (s.path("features_a"), s.path("features_b"), s.path("checkpoint")) {
        (Some(fa), Some(fb), None) => {
            let d = frechet_distance(&load_features(&fa)?, &load_features(&fb)?)?;
            println!("fid\t{}", taps_core::numfmt::sig9(d));
            report.push("fid", d);
        }
        (None, None, Some(ck)) => eval_checkpoint(&s, &ck, &mut report)?,
        _ => {
            return Err(Error::InvalidConfig(
                "give either --features-a and --features-b, or --checkpoint".into(),
            )
            .into())
        }
    }
    prepare_out(&g.out)?;
    report.save(&g.out.join(METRICS_FILE))?;
    finish(g, "eval", &s)
}

fn eval_checkpoint(s: &Settings, ck: &Path, report: &mut MetricReport) -> Result<()> {
    let checkpoint = Checkpoint::load(ck)?;
    let manifest = split_manifest(s)?;
    let captions = CaptionDataset::load(&s.require_path("captions")?)?;
    let provider = provider_from(s)?;
    let seed: u64 = s.get("seed")?;
    let per_object: usize = s.get("samples_per_object")?;
    if per_object == 0 {
        return Err(Error::InvalidConfig("samples_per_object must be positive".into()).into());
    }
    let ids = objects_for(&manifest, s.raw("split"))?;
    let by_object = captions.by_object();

    let mut real_images = Vec::new();
    let mut generated: Vec<(Raster, String, Vec<f64>)> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, SAMPLE_STREAM));
    let mut generator: Option<ToyGenerator> = None;
    for id in &ids {
        let records: Vec<_> = manifest.records_for(id).collect();
        let Some(caps) = by_object.get(id.as_str()) else {
            log::warn!("object {id} has no captions; not evaluated");
            continue;
        };
        for r in &records {
            real_images.push(manifest.load_image(r)?.raster);
        }
        let gen = match &generator {
            Some(g) => g,
            None => generator.insert(ToyGenerator::new(s.get("generator_seed")?, real_images[0].height())?),
        };
        for k in 0..per_object {
            let caption = caps[k % caps.len()];
            let e = provider.encode_text(&caption.text)?;
            let w_geo = map(&checkpoint.geometry, &LatentNoise::sample(checkpoint.geometry.noise_dim, &mut rng), &e)?;
            let w_tex = map(&checkpoint.texture, &LatentNoise::sample(checkpoint.texture.noise_dim, &mut rng), &e)?;
            let pose = records[k % records.len()].pose;
            let img = gen.generate(&w_geo, &w_tex, &pose)?;
            generated.push((img, caption.text.clone(), gen.geometry_features(&w_geo.w).to_vec()));
        }
    }
    if generated.len() < 2 || real_images.len() < 2 {
        return Err(Error::EmptyDataset(format!(
            "split {:?} yields too few samples for the Fréchet distance",
            s.raw("split")
        ))
        .into());
    }

    let embed_rows = |imgs: &mut dyn Iterator<Item = &Raster>| -> Result<Vec<Vec<f64>>, Error> {
        imgs.map(|i| Ok(provider.encode_image(i)?.values().to_vec())).collect()
    };
    let name = provider.descriptor().name;
    let real = FeatureSet::new(name.clone(), embed_rows(&mut real_images.iter())?)?;
    let fake = FeatureSet::new(name, embed_rows(&mut generated.iter().map(|g| &g.0))?)?;
    report.push("fid", frechet_distance(&real, &fake)?);

    if let Some(lat) = s.path("latents") {
        let text = std::fs::read_to_string(&lat).map_err(|e| Error::io(&lat, e))?;
        let codes: BTreeMap<String, Vec<f64>> = parse_geometry_codes(&text)?.into_iter().collect();
        let rows: Vec<Vec<f64>> = ids
            .iter()
            .filter(|id| by_object.contains_key(id.as_str()))
            .filter_map(|id| codes.get(id).cloned())
            .collect();
        if rows.len() < 2 {
            log::warn!("fpd skipped: only {} evaluated objects have reference codes", rows.len());
        } else {
            let real_shapes = FeatureSet::new("geometry-codes", rows)?;
            let fake_shapes = FeatureSet::new("geometry-codes", generated.iter().map(|g| g.2.clone()).collect())?;
            report.push("fpd", frechet_distance(&real_shapes, &fake_shapes)?);
        }
    }

    let pool = random_caption_pool(&captions, s.get("pool_size")?, &mut rng)?;
    let refs: Vec<&str> = pool.iter().map(String::as_str).collect();
    let pool_embeddings = provider.encode_texts(&refs)?;
    let queries = generated
        .iter()
        .map(|(img, cap, _)| {
            Ok(RankingQuery {
                image: provider.encode_image(img)?,
                caption: cap.clone(),
                caption_embedding: provider.encode_text(cap)?,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let spread = r_precision_repeated(&queries, &pool, &pool_embeddings, s.get("r")?, seed, s.get("repetitions")?)?;
    report.push("r_precision", spread.mean);
    report.push("r_precision_std", spread.std);
    for (k, v) in &report.entries {
        println!("{k}\t{}", taps_core::numfmt::sig9(*v));
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct RenderSamplesArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Captions separated by `;`.
    #[arg(long)]
    pub captions: Option<String>,
    #[arg(long)]
    pub views: Option<usize>,
    /// Noise draws per caption.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub generator_seed: Option<u64>,
    /// `reference` or `service`.
    #[arg(long)]
    pub provider: Option<String>,
    /// `host:port` of the embedding service.
    #[arg(long)]
    pub service_addr: Option<String>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    #[arg(long)]
    pub embedding_seed: Option<u64>,
}

const RENDER_KEYS: KeySpec = &[
    ("seed", "0"),
    ("checkpoint", ""),
    ("captions", ""),
    ("views", "4"),
    ("samples", "2"),
    ("resolution", "32"),
    ("generator_seed", "1853766913"),
    ("provider", "reference"),
    ("service_addr", ""),
    ("embedding_dim", "64"),
    ("embedding_seed", "2056600832"),
];

fn split_captions(s: &Settings) -> Result<Vec<String>> {
    let list: Vec<String> = s
        .raw("captions")
        .split(';')
        .map(str::trim)
        .filter(|c| !c.is_empty())
        .map(String::from)
        .collect();
    if list.is_empty() {
        return Err(Error::InvalidConfig("captions is required (separate several with `;`)".into()).into());
    }
    Ok(list)
}

pub fn render_samples(g: &GlobalArgs, a: &RenderSamplesArgs) -> Result<()> {
    let s = resolve(
        g,
        RENDER_KEYS,
        vec![
            ("checkpoint", opt_path(&a.checkpoint)),
            ("captions", a.captions.clone()),
            ("views", opt(&a.views)),
            ("samples", opt(&a.samples)),
            ("resolution", opt(&a.resolution)),
            ("generator_seed", opt(&a.generator_seed)),
            ("embedding_dim", opt(&a.embedding_dim)),
            ("embedding_seed", opt(&a.embedding_seed)),
            ("provider", a.provider.clone()),
            ("service_addr", a.service_addr.clone()),
        ],
    )?;
    let checkpoint = Checkpoint::load(&s.require_path("checkpoint")?)?;
    let captions = split_captions(&s)?;
    let views: usize = s.get("views")?;
    let samples: usize = s.get("samples")?;
    if views == 0 || samples == 0 {
        return Err(Error::InvalidConfig("views and samples must be positive".into()).into());
    }
    let provider = provider_from(&s)?;
    let generator = generator_from(&s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(s.get("seed")?, SAMPLE_STREAM));
    let mut rows = Vec::new();
    for caption in &captions {
        let e = provider.encode_text(caption)?;
        for _ in 0..samples {
            let w_geo = map(&checkpoint.geometry, &LatentNoise::sample(checkpoint.geometry.noise_dim, &mut rng), &e)?;
            let w_tex = map(&checkpoint.texture, &LatentNoise::sample(checkpoint.texture.noise_dim, &mut rng), &e)?;
            let row = (0..views)
                .map(|v| {
                    let pose = CameraPose::new(std::f64::consts::TAU * v as f64 / views as f64, 0.3);
                    generator.generate(&w_geo, &w_tex, &pose)
                })
                .collect::<Result<Vec<_>, Error>>()?;
            rows.push(row);
        }
    }
    prepare_out(&g.out)?;
    tile_grid(&rows)?.save_png(&g.out.join("samples.png"))?;
    finish(g, "render-samples", &s)
}

#[derive(Debug, Args)]
pub struct InterpolateArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub source: Option<String>,
    #[arg(long)]
    pub target: Option<String>,
    /// Frames including both endpoints.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub generator_seed: Option<u64>,
    /// `reference` or `service`.
    #[arg(long)]
    pub provider: Option<String>,
    /// `host:port` of the embedding service.
    #[arg(long)]
    pub service_addr: Option<String>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    #[arg(long)]
    pub embedding_seed: Option<u64>,
}

const INTERPOLATE_KEYS: KeySpec = &[
    ("seed", "0"),
    ("checkpoint", ""),
    ("source", ""),
    ("target", ""),
    ("steps", "8"),
    ("resolution", "32"),
    ("generator_seed", "1853766913"),
    ("provider", "reference"),
    ("service_addr", ""),
    ("embedding_dim", "64"),
    ("embedding_seed", "2056600832"),
];

pub fn interpolate(g: &GlobalArgs, a: &InterpolateArgs) -> Result<()> {
    let s = resolve(
        g,
        INTERPOLATE_KEYS,
        vec![
            ("checkpoint", opt_path(&a.checkpoint)),
            ("source", a.source.clone()),
            ("target", a.target.clone()),
            ("steps", opt(&a.steps)),
            ("resolution", opt(&a.resolution)),
            ("generator_seed", opt(&a.generator_seed)),
            ("embedding_dim", opt(&a.embedding_dim)),
            ("embedding_seed", opt(&a.embedding_seed)),
            ("provider", a.provider.clone()),
            ("service_addr", a.service_addr.clone()),
        ],
    )?;
    let checkpoint = Checkpoint::load(&s.require_path("checkpoint")?)?;
    let (src, dst) = (s.raw("source"), s.raw("target"));
    if src.is_empty() || dst.is_empty() {
        return Err(Error::InvalidConfig("source and target captions are required".into()).into());
    }
    let steps: usize = s.get("steps")?;
    if steps < 2 {
        return Err(Error::InvalidConfig("steps must be at least 2".into()).into());
    }
    let provider = provider_from(&s)?;
    let generator = generator_from(&s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(s.get("seed")?, SAMPLE_STREAM));
    let z_geo = LatentNoise::sample(checkpoint.geometry.noise_dim, &mut rng);
    let z_tex = LatentNoise::sample(checkpoint.texture.noise_dim, &mut rng);
    let (es, et) = (provider.encode_text(src)?, provider.encode_text(dst)?);
    let (gs, gt) = (map(&checkpoint.geometry, &z_geo, &es)?, map(&checkpoint.geometry, &z_geo, &et)?);
    let (ts, tt) = (map(&checkpoint.texture, &z_tex, &es)?, map(&checkpoint.texture, &z_tex, &et)?);
    let pose = CameraPose::new(0.8, 0.3);
    let frames = (0..steps)
        .map(|i| {
            let alpha = i as f64 / (steps - 1) as f64;
            generator
                .generate(&lerp(&gs, &gt, alpha)?, &lerp(&ts, &tt, alpha)?, &pose)
                .with_context(|| format!("frame {i}"))
        })
        .collect::<Result<Vec<_>>>()?;
    prepare_out(&g.out)?;
    tile_grid(&[frames])?.save_png(&g.out.join("interpolation.png"))?;
    finish(g, "interpolate", &s)
}
