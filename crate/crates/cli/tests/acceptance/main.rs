//! Acceptance checks, one line of output per criterion. Runs without the
//! libtest harness so the report reads top to bottom; any failure makes the
//! process exit nonzero.

#[path = "../../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use common::*;
use hglmm::cca::{cca_fit, CcaConfig};
use hglmm::fisher::{fim_diagonal, fv_raw};
use hglmm::fixture::{generate, FixtureConfig};
use hglmm::io::Split;
use hglmm::mixtures::{
    e_step, fit_em, m_step_gmm, m_step_hglmm, m_step_lmm, weighted_median, Branch, Family, FitConfig, HglmmModel,
    LmmModel, MStepConfig, Mixture, Responsibilities,
};
use hglmm::pipeline::{random_recall_at, run, PipelineConfig};
use hglmm::retrieval::evaluate_scores;
use hglmm::whitening::{apply, ica_fit, IcaConfig};
use hglmm::Matrix;
use rand::seq::SliceRandom;
use rand::Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn em_monotonicity() -> Outcome {
    let mut fits = 0;
    let mut steps = 0;
    for family in Family::ALL {
        for seed in 0..50u64 {
            let mut r = rng(1000 + seed);
            let x = clustered(&mut r, 500, 8, 4);
            let cfg = FitConfig { seed, ..FitConfig::with_k(4) };
            let (_, report) = fit_em(&x, &cfg, family).map_err(|e| e.to_string())?;
            for w in report.log_likelihood_trace.windows(2) {
                check(w[1] >= w[0] - 1e-8 * w[0].abs(), || {
                    format!("{family} seed {seed}: {} then {}", w[0], w[1])
                })?;
                steps += 1;
            }
            fits += 1;
        }
    }
    Ok(format!("{fits} fits, {steps} iterations, none decreased"))
}

fn median_oracle() -> Outcome {
    let mut r = rng(2);
    for case in 0..1000 {
        let n = r.random_range(1..=101);
        let coarse = case % 3 == 0;
        let values: Vec<f64> = (0..n)
            .map(|_| if coarse { f64::from(r.random_range(-3..=3)) } else { r.random_range(-100.0..100.0) })
            .collect();
        let mut weights: Vec<f64> = (0..n)
            .map(|_| if r.random_bool(0.2) { 0.0 } else { r.random_range(0.0..5.0) })
            .collect();
        if weights.iter().all(|w| *w == 0.0) {
            weights[0] = 1.0;
        }
        let got = weighted_median(&values, &weights).map_err(|e| e.to_string())?;
        let want = median_by_scan(&values, &weights);
        check(got == want, || format!("case {case}: got {got}, scan gives {want}"))?;
    }
    Ok("1000 instances equal the exhaustive scan".into())
}

fn branch_selection() -> Outcome {
    let mut r = rng(3);
    let mut decisions = 0;
    let mut laplacian = 0;
    for case in 0..200 {
        let (n, d, k) = (r.random_range(5..80), r.random_range(1..6), r.random_range(1..5));
        let x = clustered(&mut r, n, d, k);
        let t = Responsibilities::new(random_responsibilities(&mut r, n, k)).map_err(|e| e.to_string())?;
        let h = m_step_hglmm(&x, &t, &MStepConfig::default()).map_err(|e| e.to_string())?.model;
        for c in 0..k {
            let tc: Vec<f64> = (0..n).map(|i| t.get(i, c)).collect();
            for j in 0..d {
                let (l, g) =
                    branch_objectives(&x.column(j), &tc, h.mu.get(c, j), h.sigma.get(c, j), h.m.get(c, j), h.s.get(c, j));
                let want = if l > g { Branch::Laplacian } else { Branch::Gaussian };
                check(h.branch(c, j) == want, || format!("case {case} ({c},{j}): L={l} G={g}"))?;
                decisions += 1;
                laplacian += usize::from(want == Branch::Laplacian);
            }
        }
    }
    Ok(format!("{decisions} selectors checked, {laplacian} Laplacian"))
}

fn forced(g: &hglmm::mixtures::GmmModel, l: &LmmModel, branch: Branch) -> Mixture {
    Mixture::Hglmm(HglmmModel {
        tau: g.tau.clone(),
        mu: g.mu.clone(),
        sigma: g.sigma.clone(),
        m: l.m.clone(),
        s: l.s.clone(),
        b: vec![branch; g.mu.rows() * g.mu.cols()],
    })
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn reduction_consistency() -> Outcome {
    let mut r = rng(4);
    for case in 0..50 {
        let (k, d) = (r.random_range(1..5), r.random_range(1..6));
        let g = random_gmm(&mut r, k, d);
        let l = LmmModel { tau: g.tau.clone(), ..random_lmm(&mut r, k, d) };
        let x = gaussian_matrix(&mut r, 300, d).scale(2.0);
        for (pure, hybrid) in [
            (Mixture::Gmm(g.clone()), forced(&g, &l, Branch::Gaussian)),
            (Mixture::Lmm(l.clone()), forced(&g, &l, Branch::Laplacian)),
        ] {
            let ep = e_step(&x, &pure).map_err(|e| e.to_string())?;
            let eh = e_step(&x, &hybrid).map_err(|e| e.to_string())?;
            check(
                bits(ep.responsibilities.as_matrix().as_slice()) == bits(eh.responsibilities.as_matrix().as_slice())
                    && bits(&ep.sample_log_likelihoods) == bits(&eh.sample_log_likelihoods),
                || format!("case {case}: {} E-step differs", pure.family()),
            )?;
            let fp = fv_raw(&x, &pure).map_err(|e| e.to_string())?;
            let fh = fv_raw(&x, &hybrid).map_err(|e| e.to_string())?;
            check(bits(fp.as_slice()) == bits(fh.as_slice()), || {
                format!("case {case}: {} fv_raw differs", pure.family())
            })?;
            let cfg = MStepConfig::default();
            let h = m_step_hglmm(&x, &eh.responsibilities, &cfg).map_err(|e| e.to_string())?.model;
            let same = match &pure {
                Mixture::Gmm(_) => {
                    let mg = m_step_gmm(&x, &ep.responsibilities, &cfg).map_err(|e| e.to_string())?.model;
                    bits(&mg.tau) == bits(&h.tau)
                        && bits(mg.mu.as_slice()) == bits(h.mu.as_slice())
                        && bits(mg.sigma.as_slice()) == bits(h.sigma.as_slice())
                }
                _ => {
                    let ml = m_step_lmm(&x, &ep.responsibilities, &cfg).map_err(|e| e.to_string())?.model;
                    bits(&ml.tau) == bits(&h.tau)
                        && bits(ml.m.as_slice()) == bits(h.m.as_slice())
                        && bits(ml.s.as_slice()) == bits(h.s.as_slice())
                }
            };
            check(same, || format!("case {case}: {} M-step differs", pure.family()))?;
        }
    }
    Ok("50 models, E-step, M-step and fv_raw bitwise equal for both reductions".into())
}

fn gradient_checks() -> Outcome {
    let mut r = rng(5);
    let mut compared = 0;
    let mut skipped = 0;
    let mut worst = 0.0f64;
    for family in Family::ALL {
        for case in 0..20 {
            let model = random_mixture(&mut r, family, 3, 4);
            let x = gaussian_matrix(&mut r, 10, 4);
            let p = Params::of(&model);
            let (loc, scale) = finite_difference_gradient(&p, &x, 1e-5);
            let fv = fv_raw(&x, &model).map_err(|e| e.to_string())?;
            for c in 0..3 {
                for j in 0..4 {
                    let i = c * 4 + j;
                    let kink = p.laplacian[i] && x.column(j).iter().any(|v| (v - p.loc[i]).abs() <= 1e-3);
                    let mut pairs = vec![(fv.scale(c, j), scale[i])];
                    if kink {
                        skipped += 1;
                    } else {
                        pairs.push((fv.location(c, j), loc[i]));
                    }
                    for (a, n) in pairs {
                        let err = (a - n).abs() / n.abs().max(1.0);
                        worst = worst.max(err);
                        check(err <= 1e-4, || format!("{family} case {case} ({c},{j}): {a} vs {n}"))?;
                        compared += 1;
                    }
                }
            }
        }
    }
    Ok(format!("{compared} coordinates, worst relative error {worst:.1e}, {skipped} kink locations skipped"))
}

fn fim_closed_forms() -> Outcome {
    let mut r = rng(6);
    for case in 0..20 {
        let family = Family::ALL[case % 3];
        let (k, d, n) = (r.random_range(1..6), r.random_range(1..6), r.random_range(1..50));
        let model = random_mixture(&mut r, family, k, d);
        let p = Params::of(&model);
        let fim = fim_diagonal(&model, n).map_err(|e| e.to_string())?;
        for i in 0..k * d {
            let c = i / d;
            let w = n as f64 * p.tau[c] / (p.scale[i] * p.scale[i]);
            let want = if p.laplacian[i] { [w, w] } else { [w, 2.0 * w] };
            for (got, want) in fim.values[2 * i..2 * i + 2].iter().zip(want) {
                check((got - want).abs() <= 1e-12 * want.abs(), || format!("case {case}: {got} vs {want}"))?;
            }
        }
    }
    Ok("20 models match the closed forms to 1e-12".into())
}

fn cca_oracle() -> Outcome {
    let mut worst = 0.0f64;
    for case in 0..20u64 {
        let mut r = rng(700 + case);
        let x = gaussian_matrix(&mut r, 200, 5);
        let a = gaussian_matrix(&mut r, 5, 5);
        let rows: Vec<Vec<f64>> = x
            .iter_rows()
            .map(|xr| (0..5).map(|j| (0..5).map(|k| xr[k] * a.get(k, j)).sum::<f64>() + 2.0 * normal(&mut r)).collect())
            .collect();
        let y = Matrix::from_rows(&rows).unwrap();
        let reg = [0.0, 1e-2, 1.0][case as usize % 3];
        let model = cca_fit(&x, &y, &CcaConfig::with_reg(reg)).map_err(|e| e.to_string())?;
        let want = cca_correlations_by_eigen(&x, &y, reg);
        for (g, w) in model.correlations.iter().zip(&want) {
            worst = worst.max((g - w).abs());
            check((g - w).abs() <= 1e-6, || format!("case {case}: {g} vs {w}"))?;
        }
        let own = cca_fit(&x, &x, &CcaConfig::with_reg(0.0)).map_err(|e| e.to_string())?;
        check(own.correlations.iter().all(|c| (c - 1.0).abs() <= 1e-8), || {
            format!("case {case}: self correlations {:?}", own.correlations)
        })?;
    }
    Ok(format!("20 datasets, worst deviation {worst:.1e}; self-correlation 1 within 1e-8"))
}

fn ica_recovery() -> Outcome {
    let mut r = rng(8);
    let n = 5000;
    let s: Vec<[f64; 2]> = (0..n).map(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]).collect();
    let mix = [[0.8, 0.6], [-0.6, 0.8]];
    let rows: Vec<[f64; 2]> = s
        .iter()
        .map(|u| [mix[0][0] * u[0] + mix[0][1] * u[1], mix[1][0] * u[0] + mix[1][1] * u[1]])
        .collect();
    let x = Matrix::from_rows(&rows).unwrap();
    let fit = ica_fit(&x, 2, &IcaConfig { seed: 1, ..IcaConfig::default() }).map_err(|e| e.to_string())?;
    let y = apply(&fit.transform, &x).map_err(|e| e.to_string())?;
    let src = [s.iter().map(|u| u[0]).collect::<Vec<_>>(), s.iter().map(|u| u[1]).collect()];
    let c = |a: usize, b: usize| pearson(&y.column(a), &src[b]).abs();
    let straight = c(0, 0).min(c(1, 1));
    let crossed = c(0, 1).min(c(1, 0));
    let best = straight.max(crossed);
    check(best >= 0.95, || format!("best matched |corr| {best:.4}"))?;
    Ok(format!("min matched |corr| {best:.4} after {} iterations", fit.iterations))
}

fn metric_oracle() -> Outcome {
    let mut r = rng(9);
    for case in 0..100 {
        let (q, c) = (r.random_range(1..40), r.random_range(1..60));
        let levels = r.random_range(1..20);
        let scores = Matrix::from_vec(q, c, (0..q * c).map(|_| f64::from(r.random_range(0..levels))).collect()).unwrap();
        let truths: Vec<Vec<usize>> = (0..q)
            .map(|_| {
                let mut all: Vec<usize> = (0..c).collect();
                all.shuffle(&mut r);
                all.truncate(r.random_range(1..=c.min(5)));
                all
            })
            .collect();
        let (_, m) = evaluate_scores(&scores, &truths).map_err(|e| e.to_string())?;
        let ranks: Vec<usize> = (0..q).map(|i| rank_by_counting(scores.row(i), &truths[i])).collect();
        let (r1, r5, r10, median, mean) = metrics_by_counting(&ranks);
        check(
            m.recall_at_1 == r1 && m.recall_at_5 == r5 && m.recall_at_10 == r10 && m.median_rank == median,
            || format!("case {case}: {m:?} vs counting ({r1}, {r5}, {r10}, {median})"),
        )?;
        check((m.mean_rank - mean).abs() <= 1e-12 * mean, || format!("case {case}: mean {} vs {mean}", m.mean_rank))?;
        check(m.recall_at_1 <= m.recall_at_5 && m.recall_at_5 <= m.recall_at_10, || format!("case {case}: not monotone"))?;
    }
    Ok("100 score matrices agree with brute-force counting".into())
}

fn end_to_end() -> Outcome {
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let fixture = generate(&FixtureConfig { seed, ..FixtureConfig::default() }).map_err(|e| e.to_string())?;
        let test_images = fixture.manifest.images_in(Split::Test).len();
        let test_sentences = fixture.manifest.split(Split::Test).count();
        let per_image = test_sentences / test_images;
        let cfg = PipelineConfig { k: 10, seed, ..PipelineConfig::default() };
        let out = run(fixture.data(), &cfg).map_err(|e| e.to_string())?;
        let annotation = out.test.annotation.expect("annotation metrics");
        let search = out.test.search.expect("search metrics");
        let base_annotation = random_recall_at(10, test_sentences, per_image);
        let base_search = random_recall_at(10, test_images, 1);
        check(annotation.recall_at_10 > base_annotation && search.recall_at_10 > base_search, || {
            format!(
                "seed {seed}: annotation r@10 {:.3} vs {base_annotation:.3}, search r@10 {:.3} vs {base_search:.3}",
                annotation.recall_at_10, search.recall_at_10
            )
        })?;
        lines.push(format!(
            "seed {seed}: annotation {:.2}>{base_annotation:.2} search {:.2}>{base_search:.2}",
            annotation.recall_at_10, search.recall_at_10
        ));
    }
    Ok(lines.join("; "))
}

// ---- CLI determinism ----------------------------------------------------

fn hglmm(threads: usize, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_hglmm"))
        .arg("--threads")
        .arg(threads.to_string())
        .args(args)
        .env_remove("HGLMM_THREADS")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("hglmm {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

/// Runs every command in `dir` and returns its stdout transcript.
fn cli_pipeline(dir: &Path, threads: usize) -> Result<String, String> {
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let mut transcript = String::new();
    let mut step = |args: Vec<String>| -> Result<(), String> {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        transcript.push_str(&hglmm(threads, &args)?);
        Ok(())
    };
    let s = |v: &[&str]| v.iter().map(|a| a.to_string()).collect::<Vec<_>>();
    let d = dir.to_string_lossy().into_owned();
    step(s(&["gen-fixture", "--output-dir", &d, "--seed", "5", "--images", "60"]))?;
    step(s(&["whiten", "fit", "--input", &p("corpus.fvm"), "--output", &p("ica.bin"), "--seed", "5"]))?;
    step(s(&["whiten", "fit", "--method", "pca", "--dim", "4", "--input", &p("corpus.fvm"), "--output", &p("pca.bin")]))?;
    step(s(&["whiten", "apply", "--transform", &p("ica.bin"), "--input", &p("corpus.fvm"), "--output", &p("corpus_w.fvm")]))?;
    step(s(&["whiten", "apply", "--transform", &p("ica.bin"), "--input", &p("words.fvm"), "--output", &p("words_w.fvm")]))?;
    for family in ["gmm", "lmm", "hglmm"] {
        step(s(&[
            "fit", "--family", family, "--k", "6", "--seed", "7", "--restarts", "2",
            "--input", &p("corpus_w.fvm"), "--output", &p(&format!("{family}.bin")),
            "--trace", &p(&format!("{family}_trace.tsv")),
        ]))?;
    }
    step(s(&["encode", "--family", "gmm+hglmm", "--model", &p("gmm.bin"), "--model", &p("hglmm.bin"),
        "--input", &p("words_w.fvm"), "--sets", &p("sentences.tsv"), "--output", &p("fv.fvm")]))?;
    step(s(&["encode", "--family", "lmm", "--model", &p("lmm.bin"),
        "--input", &p("words_w.fvm"), "--sets", &p("sentences.tsv"), "--output", &p("fv_lmm.fvm")]))?;
    step(s(&["encode", "--family", "mean",
        "--input", &p("words_w.fvm"), "--sets", &p("sentences.tsv"), "--output", &p("mean.fvm")]))?;
    step(s(&["cca", "fit", "--images", &p("images.fvm"), "--image-ids", &p("image_ids.txt"),
        "--sentences", &p("fv.fvm"), "--sentence-ids", &p("sentence_ids.txt"), "--manifest", &p("manifest.tsv"),
        "--output", &p("cca.bin")]))?;
    step(s(&["cca", "project", "--model", &p("cca.bin"), "--side", "x", "--input", &p("images.fvm"), "--output", &p("img_proj.fvm")]))?;
    step(s(&["cca", "project", "--model", &p("cca.bin"), "--side", "y", "--input", &p("fv.fvm"), "--output", &p("sen_proj.fvm")]))?;
    step(s(&["eval", "--task", "all", "--images", &p("img_proj.fvm"), "--image-ids", &p("image_ids.txt"),
        "--sentences", &p("sen_proj.fvm"), "--sentence-ids", &p("sentence_ids.txt"), "--manifest", &p("manifest.tsv"),
        "--output", &p("metrics.tsv")]))?;
    Ok(transcript)
}

fn snapshot(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| e.to_string())?
        .map(|e| e.map(|e| e.path()).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    files.sort();
    files
        .into_iter()
        .map(|f| {
            let name = f.file_name().unwrap().to_string_lossy().into_owned();
            fs::read(&f).map(|b| (name, b)).map_err(|e| e.to_string())
        })
        .collect()
}

fn cli_determinism() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for (label, threads) in [("a", 1), ("b", 1), ("c", 8)] {
        let dir = root.path().join(label);
        fs::create_dir(&dir).map_err(|e| e.to_string())?;
        let transcript = cli_pipeline(&dir, threads)?;
        runs.push((threads, transcript, snapshot(&dir)?));
    }
    let (_, t0, files0) = &runs[0];
    for (threads, t, files) in &runs[1..] {
        check(t == t0, || format!("stdout differs with --threads {threads}"))?;
        check(files.len() == files0.len(), || "different file sets".into())?;
        for ((name, a), (_, b)) in files0.iter().zip(files) {
            check(a == b, || format!("{name} differs with --threads {threads}"))?;
        }
    }
    Ok(format!("{} output files byte-identical across repeats and --threads 1/8", files0.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("EM monotonicity", em_monotonicity),
        ("weighted-median oracle", median_oracle),
        ("HGLMM branch selection", branch_selection),
        ("reduction consistency", reduction_consistency),
        ("Fisher gradient checks", gradient_checks),
        ("FIM closed forms", fim_closed_forms),
        ("CCA oracle", cca_oracle),
        ("ICA source recovery", ica_recovery),
        ("metric oracle", metric_oracle),
        ("end-to-end synthetic benchmark", end_to_end),
        ("CLI determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail}; {secs:.1}s)", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({why}; {secs:.1}s)", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
