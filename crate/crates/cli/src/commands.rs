use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;

use hglmm::cca::{cca_fit, project, similarity, CcaConfig, CcaModel, Side};
use hglmm::fisher::EncodeConfig;
use hglmm::fixture::{generate, FixtureConfig};
use hglmm::io::{load_ids, load_manifest, load_matrix, load_set_index, save_ids, save_manifest, save_matrix, save_set_index, Split};
use hglmm::mixtures::{fit_em, Family, FitConfig, Mixture};
use hglmm::pipeline::{encode_sentences, Encoding, PairedData, RegChoice, TuneTask};
use hglmm::retrieval::{
    evaluate_annotation, evaluate_search, evaluate_sentence_similarity, render_table, EvalSummary,
};
use hglmm::whitening::{apply, ica_fit, pca_fit, IcaConfig, LinearTransform};
use hglmm::{Error, Matrix};

use crate::args::*;
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Whiten(WhitenCommand::Fit(a)) => whiten_fit(a),
        Command::Whiten(WhitenCommand::Apply(a)) => whiten_apply(a),
        Command::Fit(a) => fit(a),
        Command::Encode(a) => encode(a),
        Command::Cca(CcaCommand::Fit(a)) => cca_fit_cmd(a),
        Command::Cca(CcaCommand::Project(a)) => cca_project(a),
        Command::Eval(a) => eval(a),
        Command::GenFixture(a) => gen_fixture(a),
    }
}

fn whiten_fit(a: WhitenFitArgs) -> Result<()> {
    let x = load_matrix(&a.input)?;
    let dim = a.dim.unwrap_or(x.cols());
    let transform = match a.method {
        WhitenMethod::Pca => pca_fit(&x, dim)?,
        WhitenMethod::Ica => {
            let cfg = IcaConfig {
                max_iters: a.max_iters,
                tol: a.tol,
                seed: a.seed,
            };
            let fit = ica_fit(&x, dim, &cfg)?;
            if !fit.converged {
                eprintln!("hglmm: warning: ICA stopped after {} iterations without converging", fit.iterations);
            }
            fit.transform
        }
    };
    transform.save(&a.output)?;
    Ok(())
}

fn whiten_apply(a: WhitenApplyArgs) -> Result<()> {
    let t = LinearTransform::load(&a.transform)?;
    let x = load_matrix(&a.input)?;
    save_matrix(&apply(&t, &x)?, &a.output)?;
    Ok(())
}

fn fit(a: FitArgs) -> Result<()> {
    let family: Family = a.family.parse()?;
    let x = load_matrix(&a.input)?;
    let cfg = FitConfig {
        k: a.k as usize,
        max_iters: a.max_iters,
        rel_tol: a.tol,
        seed: a.seed,
        scale_floor: a.scale_floor,
        restarts: a.restarts as usize,
    };
    let (model, report) = fit_em(&x, &cfg, family)?;
    model.save(&a.output)?;
    if let Some(path) = &a.trace {
        let mut tsv = String::from("iteration\tlog_likelihood\n");
        for (i, ll) in report.log_likelihood_trace.iter().enumerate() {
            let _ = writeln!(tsv, "{i}\t{ll}");
        }
        fs::write(path, tsv)?;
    }
    println!(
        "{family} K={} iterations={} converged={} reseeded={} log_likelihood={}",
        cfg.k,
        report.iterations_run,
        report.converged,
        report.reseeded,
        report.final_log_likelihood()
    );
    Ok(())
}

fn encode(a: EncodeArgs) -> Result<()> {
    let encoding: Encoding = a.family.parse()?;
    let models = a.model.iter().map(Mixture::load).collect::<hglmm::Result<Vec<_>>>()?;
    let words = load_matrix(&a.input)?;
    let sets = load_set_index(&a.sets)?;
    let cfg = EncodeConfig {
        alpha: a.alpha,
        apply_fim: !a.no_fim,
        apply_l2: !a.no_l2,
    };
    let vectors = encode_sentences(&words, &sets, encoding, &models, &cfg)?;
    save_matrix(&vectors, &a.output)?;
    Ok(())
}

fn reg_choice(s: &str) -> Result<RegChoice> {
    Ok(s.parse()?)
}

fn cca_fit_cmd(a: CcaFitArgs) -> Result<()> {
    let base = CcaConfig {
        reg: 0.0,
        reg_x: a.reg_x,
        reg_y: a.reg_y,
        r: a.r,
    };
    let reg = reg_choice(&a.reg)?;
    let (model, used) = match (&a.x, &a.y, &a.manifest) {
        (Some(x), Some(y), None) => {
            let RegChoice::Fixed(r) = reg else {
                return Err(CliError::Usage(
                    "--reg auto needs validation data: use --images/--sentences/--manifest".into(),
                ));
            };
            let model = cca_fit(&load_matrix(x)?, &load_matrix(y)?, &CcaConfig { reg: r, ..base })?;
            (model, r)
        }
        (None, None, Some(manifest)) => {
            let need = |p: &Option<std::path::PathBuf>, flag: &str| {
                p.clone()
                    .ok_or_else(|| CliError::Usage(format!("--manifest mode needs --{flag}")))
            };
            let images = load_matrix(need(&a.images, "images")?)?;
            let image_ids = load_ids(need(&a.image_ids, "image-ids")?)?;
            let sentences = load_matrix(need(&a.sentences, "sentences")?)?;
            let sentence_ids = load_ids(need(&a.sentence_ids, "sentence-ids")?)?;
            let manifest = load_manifest(manifest)?;
            let data = PairedData::new(&images, &image_ids, &sentences, &sentence_ids, &manifest)?;
            let tune = match a.tune_task {
                TuneTaskArg::Annotation => TuneTask::Annotation,
                TuneTaskArg::Search => TuneTask::Search,
            };
            data.fit_cca(&base, &reg, tune, a.weight_exp)?
        }
        _ => {
            return Err(CliError::Usage(
                "give either --x and --y, or --images, --image-ids, --sentences, --sentence-ids and --manifest".into(),
            ))
        }
    };
    model.save(&a.output)?;
    println!("reg={used} r={}", model.r());
    Ok(())
}

fn cca_project(a: CcaProjectArgs) -> Result<()> {
    let model = CcaModel::load(&a.model)?;
    let side = match a.side {
        SideArg::X => Side::X,
        SideArg::Y => Side::Y,
    };
    let m = load_matrix(&a.input)?;
    save_matrix(&project(&model, side, &m)?, &a.output)?;
    Ok(())
}

/// Rows of `m` whose ids are listed in `wanted`, in that order.
fn select_by_id(m: &Matrix, ids: &[String], wanted: &[String], what: &str) -> Result<Matrix> {
    if m.rows() != ids.len() {
        return Err(Error::Shape(format!("{what}: {} rows but {} ids", m.rows(), ids.len())).into());
    }
    let pos: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let rows = wanted
        .iter()
        .map(|id| {
            pos.get(id.as_str())
                .copied()
                .ok_or_else(|| Error::Validation(format!("{what}: no row for {id}")))
        })
        .collect::<hglmm::Result<Vec<_>>>()?;
    Ok(m.select_rows(&rows)?)
}

fn eval(a: EvalArgs) -> Result<()> {
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Validation => Split::Validation,
        SplitArg::Test => Split::Test,
    };
    let manifest = load_manifest(&a.manifest)?;
    let correlations = match &a.model {
        Some(p) => CcaModel::load(p)?.correlations,
        None if a.weight_exp != 0.0 => {
            return Err(CliError::Usage("--weight-exp needs --model for the correlations".into()))
        }
        None => Vec::new(),
    };
    let weight_exp = a.weight_exp;
    let scorer = |u: &[f64], v: &[f64]| similarity(u, v, weight_exp, &correlations);

    let sentence_ids: Vec<String> = manifest.split(split).map(|p| p.sentence_id.clone()).collect();
    if sentence_ids.is_empty() {
        return Err(Error::Validation(format!("the {split} split is empty")).into());
    }
    let sentences = select_by_id(
        &load_matrix(&a.sentences)?,
        &load_ids(&a.sentence_ids)?,
        &sentence_ids,
        "sentences",
    )?;

    let wants_images = matches!(a.task, TaskArg::Annotation | TaskArg::Search | TaskArg::All);
    let images = if wants_images {
        let (Some(img), Some(ids)) = (&a.images, &a.image_ids) else {
            return Err(CliError::Usage("annotation and search need --images and --image-ids".into()));
        };
        let image_ids = manifest.images_in(split);
        let m = select_by_id(&load_matrix(img)?, &load_ids(ids)?, &image_ids, "images")?;
        Some((m, image_ids))
    } else {
        None
    };

    let mut summary = EvalSummary::default();
    if let Some((m, ids)) = &images {
        if matches!(a.task, TaskArg::Search | TaskArg::All) {
            summary.search = Some(evaluate_search(&sentences, &sentence_ids, m, ids, &manifest, scorer)?);
        }
        if matches!(a.task, TaskArg::Annotation | TaskArg::All) {
            summary.annotation = Some(evaluate_annotation(m, ids, &sentences, &sentence_ids, &manifest, scorer)?);
        }
    }
    if matches!(a.task, TaskArg::Sentence | TaskArg::All) {
        summary.sentence_mean_rank =
            Some(evaluate_sentence_similarity(&sentences, &sentence_ids, &manifest, scorer)?);
    }
    if let Some(path) = &a.output {
        fs::write(path, summary.to_tsv())?;
    }
    print!("{}", render_table(&[(a.label.clone(), summary)]));
    Ok(())
}

fn gen_fixture(a: GenFixtureArgs) -> Result<()> {
    let cfg = FixtureConfig {
        images: a.images,
        sentences_per_image: a.sentences_per_image,
        corpus_words: a.corpus_words,
        seed: a.seed,
        ..FixtureConfig::default()
    };
    let f = generate(&cfg)?;
    let dir = &a.output_dir;
    fs::create_dir_all(dir)?;
    save_matrix(&f.image_features, dir.join("images.fvm"))?;
    save_ids(&f.image_ids, dir.join("image_ids.txt"))?;
    save_matrix(&f.words, dir.join("words.fvm"))?;
    save_set_index(&f.sentences, dir.join("sentences.tsv"))?;
    save_matrix(&f.corpus, dir.join("corpus.fvm"))?;
    // Encoded sentence rows follow the set index, so the ids do too.
    save_ids(&f.sentences.ids(), dir.join("sentence_ids.txt"))?;
    save_manifest(&f.manifest, dir.join("manifest.tsv"))?;
    Ok(())
}
