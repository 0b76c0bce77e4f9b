//! Seeded synthetic image/sentence data for exercising the full pipeline
//! without external datasets.
//!
//! Every image has a latent vector `z`. Image features are a fixed linear map
//! of `z` plus Gaussian noise. Sentences describe their image with words drawn
//! from a small vocabulary, where the word distribution is a softmax over a
//! linear function of `z`; each word occurrence is its vocabulary embedding
//! plus Laplacian noise. A separate unlabeled word corpus, generated from
//! fresh latents, stands in for the word-embedding corpus used to fit the
//! sentence representation.

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::io::{Manifest, ManifestPair, SetEntry, SetIndex, Split};
use crate::matrix::Matrix;
use crate::pipeline::PipelineData;

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureConfig {
    pub images: usize,
    pub sentences_per_image: usize,
    pub latent_dim: usize,
    pub image_dim: usize,
    pub word_dim: usize,
    pub vocabulary: usize,
    pub words_min: usize,
    pub words_max: usize,
    /// Number of word occurrences in the unlabeled corpus.
    pub corpus_words: usize,
    pub image_noise: f64,
    pub word_noise: f64,
    /// Sharpness of the latent-dependent word distribution.
    pub topic_strength: f64,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            images: 100,
            sentences_per_image: 5,
            latent_dim: 6,
            image_dim: 20,
            word_dim: 8,
            vocabulary: 40,
            words_min: 5,
            words_max: 10,
            corpus_words: 4000,
            image_noise: 0.5,
            word_noise: 0.3,
            topic_strength: 1.5,
            train_fraction: 0.6,
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

impl FixtureConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.images,
            self.sentences_per_image,
            self.latent_dim,
            self.image_dim,
            self.word_dim,
            self.vocabulary,
            self.words_min,
            self.corpus_words,
        ];
        if positive.contains(&0) || self.words_max < self.words_min {
            return Err(Error::validation("fixture sizes must be positive with words_min <= words_max"));
        }
        let fractions_ok = self.train_fraction > 0.0
            && self.validation_fraction >= 0.0
            && self.train_fraction + self.validation_fraction < 1.0;
        if !fractions_ok {
            return Err(Error::validation("split fractions must leave room for a test split"));
        }
        if !(self.image_noise >= 0.0 && self.word_noise >= 0.0 && self.topic_strength >= 0.0) {
            return Err(Error::validation("noise levels must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    /// One row per image.
    pub image_features: Matrix,
    pub image_ids: Vec<String>,
    /// All sentence word vectors, stacked; sentences index into it.
    pub words: Matrix,
    pub sentences: SetIndex,
    pub manifest: Manifest,
    /// Unlabeled word vectors for fitting whitening and mixtures.
    pub corpus: Matrix,
}

impl Fixture {
    /// Borrows the fixture as pipeline input.
    pub fn data(&self) -> PipelineData<'_> {
        PipelineData {
            image_features: &self.image_features,
            image_ids: &self.image_ids,
            words: &self.words,
            sentences: &self.sentences,
            manifest: &self.manifest,
            corpus: &self.corpus,
        }
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

fn laplace(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    let u: f64 = rng.random::<f64>() - 0.5;
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
}

struct Generator {
    mixing: Matrix,
    vocab: Matrix,
    topics: Matrix,
}

impl Generator {
    fn new(cfg: &FixtureConfig, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (cfg.latent_dim as f64).sqrt();
        Generator {
            mixing: gaussian_matrix(rng, cfg.image_dim, cfg.latent_dim, scale),
            vocab: gaussian_matrix(rng, cfg.vocabulary, cfg.word_dim, 1.5),
            topics: gaussian_matrix(rng, cfg.vocabulary, cfg.latent_dim, scale),
        }
    }

    fn image(&self, cfg: &FixtureConfig, z: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.mixing
            .iter_rows()
            .map(|a| {
                let signal: f64 = a.iter().zip(z).map(|(x, y)| x * y).sum();
                signal + cfg.image_noise * rng.sample::<f64, _>(StandardNormal)
            })
            .collect()
    }

    fn word_weights(&self, cfg: &FixtureConfig, z: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> = self
            .topics
            .iter_rows()
            .map(|t| cfg.topic_strength * t.iter().zip(z).map(|(x, y)| x * y).sum::<f64>())
            .collect();
        let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        logits.iter().map(|l| (l - top).exp()).collect()
    }

    fn word(&self, cfg: &FixtureConfig, weights: &[f64], rng: &mut ChaCha8Rng, out: &mut Vec<f64>) {
        let total: f64 = weights.iter().sum();
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = weights.len() - 1;
        for (v, w) in weights.iter().enumerate() {
            acc += w;
            if acc >= target {
                pick = v;
                break;
            }
        }
        for &e in self.vocab.row(pick) {
            out.push(e + laplace(rng, cfg.word_noise));
        }
    }
}

pub fn generate(cfg: &FixtureConfig) -> Result<Fixture> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gen = Generator::new(cfg, &mut rng);
    let latent = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..cfg.latent_dim).map(|_| rng.sample(StandardNormal)).collect()
    };

    let width = cfg.images.to_string().len().max(4);
    let image_ids: Vec<String> = (0..cfg.images).map(|i| format!("img{i:0width$}")).collect();
    let mut order: Vec<usize> = (0..cfg.images).collect();
    order.shuffle(&mut rng);
    let n_train = ((cfg.images as f64 * cfg.train_fraction).round() as usize).max(1);
    let n_val = (cfg.images as f64 * cfg.validation_fraction).round() as usize;
    if n_train + n_val >= cfg.images {
        return Err(Error::validation("too few images for a non-empty test split"));
    }
    let mut split_of = vec![Split::Test; cfg.images];
    for (pos, &i) in order.iter().enumerate() {
        if pos < n_train {
            split_of[i] = Split::Train;
        } else if pos < n_train + n_val {
            split_of[i] = Split::Validation;
        }
    }

    let mut features = Vec::with_capacity(cfg.images * cfg.image_dim);
    let mut words = Vec::new();
    let mut entries = Vec::new();
    let mut pairs = Vec::new();
    for (i, image_id) in image_ids.iter().enumerate() {
        let z = latent(&mut rng);
        features.extend(gen.image(cfg, &z, &mut rng));
        let weights = gen.word_weights(cfg, &z);
        for s in 0..cfg.sentences_per_image {
            let count = rng.random_range(cfg.words_min..=cfg.words_max);
            let begin = words.len() / cfg.word_dim;
            for _ in 0..count {
                gen.word(cfg, &weights, &mut rng, &mut words);
            }
            let sentence_id = format!("{image_id}#{s}");
            entries.push(SetEntry {
                set_id: sentence_id.clone(),
                row_begin: begin,
                row_end: begin + count,
            });
            pairs.push(ManifestPair {
                sentence_id,
                image_id: image_id.clone(),
                split: split_of[i],
            });
        }
    }

    let mut corpus = Vec::with_capacity(cfg.corpus_words * cfg.word_dim);
    let mut remaining = cfg.corpus_words;
    while remaining > 0 {
        let weights = gen.word_weights(cfg, &latent(&mut rng));
        let count = rng.random_range(cfg.words_min..=cfg.words_max).min(remaining);
        for _ in 0..count {
            gen.word(cfg, &weights, &mut rng, &mut corpus);
        }
        remaining -= count;
    }

    let word_rows = words.len() / cfg.word_dim;
    Ok(Fixture {
        image_features: Matrix::from_vec(cfg.images, cfg.image_dim, features)?,
        image_ids,
        words: Matrix::from_vec(word_rows, cfg.word_dim, words)?,
        sentences: SetIndex::new(entries)?,
        manifest: Manifest::new(pairs)?,
        corpus: Matrix::from_vec(cfg.corpus_words, cfg.word_dim, corpus)?,
    })
}
