//! End-to-end text/image matching: whitening of word vectors, mixture
//! fitting on the unlabeled corpus, sentence encoding, CCA trained on the
//! training split with its ridge tuned on validation, and evaluation of the
//! three retrieval tasks on the test split.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::cca::{cca_fit, default_reg_grid, project, similarity, CcaConfig, CcaModel, Side};
use crate::error::{Error, Result};
use crate::fisher::{encode_sets, fuse_concat, mean_pool_sets, EncodeConfig};
use crate::io::{Manifest, SetIndex, Split};
use crate::matrix::Matrix;
use crate::mixtures::{fit_em, Family, FitConfig, Mixture};
use crate::retrieval::{
    evaluate_annotation, evaluate_search, evaluate_sentence_similarity, EvalSummary, TaskMetrics,
};
use crate::whitening::{apply, ica_fit, IcaConfig, LinearTransform};

/// How sentences are pooled into a single vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Mean,
    Fisher(Family),
    /// Concatenation of the GMM and HGLMM encodings.
    GmmPlusHglmm,
}

impl Encoding {
    pub fn families(self) -> Vec<Family> {
        match self {
            Encoding::Mean => vec![],
            Encoding::Fisher(f) => vec![f],
            Encoding::GmmPlusHglmm => vec![Family::Gmm, Family::Hglmm],
        }
    }
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Encoding::Mean => f.write_str("mean"),
            Encoding::Fisher(family) => write!(f, "{family}"),
            Encoding::GmmPlusHglmm => f.write_str("gmm+hglmm"),
        }
    }
}

impl FromStr for Encoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Encoding::Mean),
            "gmm+hglmm" => Ok(Encoding::GmmPlusHglmm),
            other => other.parse().map(Encoding::Fisher).map_err(|_| {
                Error::validation(format!(
                    "unknown encoding {other:?}; expected gmm, lmm, hglmm, gmm+hglmm or mean"
                ))
            }),
        }
    }
}

/// Ridge selection for CCA.
#[derive(Debug, Clone, PartialEq)]
pub enum RegChoice {
    Fixed(f64),
    /// Grid search on the validation split.
    Auto(Vec<f64>),
}

impl FromStr for RegChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(RegChoice::Auto(default_reg_grid()));
        }
        match s.parse::<f64>() {
            Ok(v) if v >= 0.0 && v.is_finite() => Ok(RegChoice::Fixed(v)),
            _ => Err(Error::validation(format!(
                "CCA regularization must be \"auto\" or a non-negative number, got {s:?}"
            ))),
        }
    }
}

/// Validation task whose recall@1 drives the ridge search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TuneTask {
    Annotation,
    Search,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub encoding: Encoding,
    pub k: usize,
    pub alpha: f64,
    pub ica: bool,
    pub cca_reg: RegChoice,
    pub tune_task: TuneTask,
    pub seed: u64,
    pub weight_exp: f64,
    pub max_iters: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            encoding: Encoding::Fisher(Family::Hglmm),
            k: 30,
            alpha: 0.5,
            ica: true,
            cca_reg: RegChoice::Auto(default_reg_grid()),
            tune_task: TuneTask::Annotation,
            seed: 0,
            weight_exp: 0.0,
            max_iters: 100,
        }
    }
}

/// Inputs: image features (one row per id), sentence word vectors grouped by
/// a set index, ground truth, and an unlabeled word corpus.
#[derive(Debug, Clone, Copy)]
pub struct PipelineData<'a> {
    pub image_features: &'a Matrix,
    pub image_ids: &'a [String],
    pub words: &'a Matrix,
    pub sentences: &'a SetIndex,
    pub manifest: &'a Manifest,
    pub corpus: &'a Matrix,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub test: EvalSummary,
    pub reg: f64,
    pub cca: CcaModel,
    pub whitening: Option<LinearTransform>,
    pub models: Vec<Mixture>,
}

/// Projected rows of one split, ready for ranking.
pub struct SplitView {
    pub image_ids: Vec<String>,
    pub images: Matrix,
    pub sentence_ids: Vec<String>,
    pub sentences: Matrix,
}

/// Image features and pooled sentence vectors, labeled by id and tied
/// together by a manifest.
pub struct PairedData<'a> {
    pub image_features: &'a Matrix,
    pub image_ids: &'a [String],
    pub sentence_vectors: &'a Matrix,
    pub sentence_ids: &'a [String],
    pub manifest: &'a Manifest,
    sentence_row: HashMap<&'a str, usize>,
    image_row: HashMap<&'a str, usize>,
}

impl<'a> PairedData<'a> {
    pub fn new(
        image_features: &'a Matrix,
        image_ids: &'a [String],
        sentence_vectors: &'a Matrix,
        sentence_ids: &'a [String],
        manifest: &'a Manifest,
    ) -> Result<Self> {
        if image_features.rows() != image_ids.len() {
            return Err(Error::shape(format!(
                "{} image rows but {} image ids",
                image_features.rows(),
                image_ids.len()
            )));
        }
        if sentence_vectors.rows() != sentence_ids.len() {
            return Err(Error::shape(format!(
                "{} sentence rows but {} sentence ids",
                sentence_vectors.rows(),
                sentence_ids.len()
            )));
        }
        let index = |ids: &'a [String]| -> HashMap<&'a str, usize> {
            ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
        };
        Ok(Self {
            image_features,
            image_ids,
            sentence_vectors,
            sentence_ids,
            manifest,
            sentence_row: index(sentence_ids),
            image_row: index(image_ids),
        })
    }

    fn image_row(&self, id: &str) -> Result<usize> {
        self.image_row
            .get(id)
            .copied()
            .ok_or_else(|| Error::validation(format!("image {id} has no feature row")))
    }

    fn sentence_row(&self, id: &str) -> Result<usize> {
        self.sentence_row
            .get(id)
            .copied()
            .ok_or_else(|| Error::validation(format!("sentence {id} has no vector")))
    }

    /// Paired training rows: each training sentence with its image's features.
    pub fn training_pairs(&self) -> Result<(Matrix, Matrix)> {
        let mut images = Vec::new();
        let mut sentences = Vec::new();
        for pair in self.manifest.split(Split::Train) {
            images.push(self.image_row(&pair.image_id)?);
            sentences.push(self.sentence_row(&pair.sentence_id)?);
        }
        if images.is_empty() {
            return Err(Error::validation("the training split is empty"));
        }
        Ok((
            self.image_features.select_rows(&images)?,
            self.sentence_vectors.select_rows(&sentences)?,
        ))
    }

    /// Projects the images and sentences of one split.
    pub fn view(&self, model: &CcaModel, split: Split) -> Result<SplitView> {
        let image_ids = self.manifest.images_in(split);
        let image_rows = image_ids
            .iter()
            .map(|id| self.image_row(id))
            .collect::<Result<Vec<_>>>()?;
        let mut sentence_ids = Vec::new();
        let mut sentence_rows = Vec::new();
        for pair in self.manifest.split(split) {
            sentence_rows.push(self.sentence_row(&pair.sentence_id)?);
            sentence_ids.push(pair.sentence_id.clone());
        }
        if image_rows.is_empty() {
            return Err(Error::validation(format!("the {split} split is empty")));
        }
        let images = project(model, Side::X, &self.image_features.select_rows(&image_rows)?)?;
        let sentences = project(model, Side::Y, &self.sentence_vectors.select_rows(&sentence_rows)?)?;
        Ok(SplitView {
            image_ids,
            images,
            sentence_ids,
            sentences,
        })
    }

    /// Fits CCA on the training split, choosing the ridge on validation when
    /// asked to. Returns the model and the ridge used.
    pub fn fit_cca(
        &self,
        base: &CcaConfig,
        reg: &RegChoice,
        tune_task: TuneTask,
        weight_exp: f64,
    ) -> Result<(CcaModel, f64)> {
        let (x, y) = self.training_pairs()?;
        let reg = match reg {
            RegChoice::Fixed(r) => *r,
            RegChoice::Auto(grid) => self.select_reg(&x, &y, base, grid, tune_task, weight_exp)?,
        };
        let cfg = CcaConfig { reg, ..*base };
        Ok((cca_fit(&x, &y, &cfg)?, reg))
    }

    /// Picks the ridge with the best validation recall@1; ties go to the
    /// lower mean rank, then to the smaller ridge.
    fn select_reg(
        &self,
        x: &Matrix,
        y: &Matrix,
        base: &CcaConfig,
        grid: &[f64],
        tune_task: TuneTask,
        weight_exp: f64,
    ) -> Result<f64> {
        let mut sorted = grid.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut best: Option<(f64, f64, f64)> = None;
        let mut last_err = None;
        for reg in sorted {
            let model = match cca_fit(x, y, &CcaConfig { reg, ..*base }) {
                Ok(m) => m,
                Err(e @ Error::Numerical(_)) => {
                    last_err = Some(e);
                    continue;
                }
                Err(e) => return Err(e),
            };
            let view = self.view(&model, Split::Validation)?;
            let m = match tune_task {
                TuneTask::Annotation => annotation(&view, self.manifest, &model, weight_exp)?,
                TuneTask::Search => search(&view, self.manifest, &model, weight_exp)?,
            };
            let better = match best {
                None => true,
                Some((_, r1, mean)) => m.recall_at_1 > r1 || (m.recall_at_1 == r1 && m.mean_rank < mean),
            };
            if better {
                best = Some((reg, m.recall_at_1, m.mean_rank));
            }
        }
        match (best, last_err) {
            (Some((reg, _, _)), _) => Ok(reg),
            (None, Some(e)) => Err(e),
            (None, None) => Err(Error::validation("empty regularization grid")),
        }
    }

    /// All three tasks on one split.
    pub fn evaluate(&self, model: &CcaModel, split: Split, weight_exp: f64) -> Result<EvalSummary> {
        let view = self.view(model, split)?;
        Ok(EvalSummary {
            search: Some(search(&view, self.manifest, model, weight_exp)?),
            annotation: Some(annotation(&view, self.manifest, model, weight_exp)?),
            sentence_mean_rank: Some(evaluate_sentence_similarity(
                &view.sentences,
                &view.sentence_ids,
                self.manifest,
                scorer(model, weight_exp),
            )?),
        })
    }
}

fn scorer(model: &CcaModel, weight_exp: f64) -> impl Fn(&[f64], &[f64]) -> f64 + Sync + '_ {
    move |u, v| similarity(u, v, weight_exp, &model.correlations)
}

fn annotation(view: &SplitView, manifest: &Manifest, model: &CcaModel, w: f64) -> Result<TaskMetrics> {
    evaluate_annotation(
        &view.images,
        &view.image_ids,
        &view.sentences,
        &view.sentence_ids,
        manifest,
        scorer(model, w),
    )
}

fn search(view: &SplitView, manifest: &Manifest, model: &CcaModel, w: f64) -> Result<TaskMetrics> {
    evaluate_search(
        &view.sentences,
        &view.sentence_ids,
        &view.images,
        &view.image_ids,
        manifest,
        scorer(model, w),
    )
}

/// Encodes every set of the index. `models` must hold one model of the
/// encoding's family, both a GMM and an HGLMM for the fused encoding (in
/// either order), or nothing for mean pooling.
pub fn encode_sentences(
    words: &Matrix,
    sentences: &SetIndex,
    encoding: Encoding,
    models: &[Mixture],
    cfg: &EncodeConfig,
) -> Result<Matrix> {
    let wanted = encoding.families();
    let find = |family: Family| {
        models
            .iter()
            .find(|m| m.family() == family)
            .ok_or_else(|| Error::validation(format!("{encoding} encoding needs a {family} model")))
    };
    if models.len() != wanted.len() {
        return Err(Error::validation(format!(
            "{encoding} encoding takes {} model(s), got {}",
            wanted.len(),
            models.len()
        )));
    }
    let sets = sentences.extract(words)?;
    match encoding {
        Encoding::Mean => mean_pool_sets(&sets),
        Encoding::Fisher(family) => encode_sets(&sets, find(family)?, cfg),
        Encoding::GmmPlusHglmm => {
            let a = encode_sets(&sets, find(Family::Gmm)?, cfg)?;
            let b = encode_sets(&sets, find(Family::Hglmm)?, cfg)?;
            let mut data = Vec::with_capacity(a.rows() * (a.cols() + b.cols()));
            for (ra, rb) in a.iter_rows().zip(b.iter_rows()) {
                data.extend(fuse_concat(ra, rb)?);
            }
            Matrix::from_vec(a.rows(), a.cols() + b.cols(), data)
        }
    }
}

pub fn run(data: PipelineData<'_>, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    if data.image_features.rows() != data.image_ids.len() {
        return Err(Error::shape(format!(
            "{} image rows but {} image ids",
            data.image_features.rows(),
            data.image_ids.len()
        )));
    }
    if data.words.cols() != data.corpus.cols() {
        return Err(Error::shape("sentence words and corpus differ in dimension"));
    }
    let (whitening, corpus, words) = if cfg.ica {
        let fit = ica_fit(
            data.corpus,
            data.corpus.cols(),
            &IcaConfig {
                seed: cfg.seed,
                ..IcaConfig::default()
            },
        )?;
        let corpus = apply(&fit.transform, data.corpus)?;
        let words = apply(&fit.transform, data.words)?;
        (Some(fit.transform), corpus, words)
    } else {
        (None, data.corpus.clone(), data.words.clone())
    };

    let fit_cfg = FitConfig {
        k: cfg.k,
        max_iters: cfg.max_iters,
        seed: cfg.seed,
        ..FitConfig::default()
    };
    let models = cfg
        .encoding
        .families()
        .into_iter()
        .map(|family| fit_em(&corpus, &fit_cfg, family).map(|(m, _)| m))
        .collect::<Result<Vec<_>>>()?;
    let encode_cfg = EncodeConfig {
        alpha: cfg.alpha,
        ..EncodeConfig::default()
    };
    let sentence_vectors = encode_sentences(&words, data.sentences, cfg.encoding, &models, &encode_cfg)?;

    let sentence_ids = data.sentences.ids();
    let paired = PairedData::new(
        data.image_features,
        data.image_ids,
        &sentence_vectors,
        &sentence_ids,
        data.manifest,
    )?;
    let (model, reg) = paired.fit_cca(&CcaConfig::default(), &cfg.cca_reg, cfg.tune_task, cfg.weight_exp)?;
    let test = paired.evaluate(&model, Split::Test, cfg.weight_exp)?;
    Ok(PipelineOutput {
        test,
        reg,
        cca: model,
        whitening,
        models,
    })
}

/// Expected recall@k of a uniformly random ranking over `candidates` items
/// with `truths` relevant ones: `1 - C(c - t, k) / C(c, k)`.
pub fn random_recall_at(k: usize, candidates: usize, truths: usize) -> f64 {
    if truths == 0 || candidates == 0 {
        return 0.0;
    }
    if k >= candidates || truths > candidates - k {
        return 1.0;
    }
    // C(c - t, k) / C(c, k) = prod_{i<k} (c - t - i) / (c - i)
    let miss: f64 = (0..k)
        .map(|i| (candidates - truths - i) as f64 / (candidates - i) as f64)
        .product();
    1.0 - miss
}
