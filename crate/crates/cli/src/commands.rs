use std::collections::BTreeMap;
use std::fmt::{Display, Write as _};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use splice_core::correspondence::correspondence_matrix;
use splice_core::io::{
    encode_htk, load_stereo, parse_csv, parse_htk, read_features, to_csv, write_features, CorpusManifest,
    ManifestRecord,
};
use splice_core::mllr::estimate_global_mllr_mean_with;
use splice_core::model_io::{
    gmm_from_str, gmm_to_string, read_gmm, read_oracle, read_transform_file, read_transform_for,
    transform_file_from_str, write_adapted, write_gmm, write_oracle, write_transform, TransformFile, GMM_MAGIC,
    ORACLE_MAGIC, TRANSFORM_MAGIC,
};
use splice_core::runtime::adapted_biases;
use splice_core::synthetic::{generate, match_mixtures, split_indices, SyntheticSpec};
use splice_core::transform::enhance_with_posteriors;
use splice_core::{
    accumulate_moments, estimate as estimate_transform, estimate_nonstereo, fit_em, AdaptedTransform, AssignmentMode,
    CorrespondenceMatrix, CovarianceMode, EmFit, EmOptions, Error, EstimateOptions, FeatureMatrix, Gmm,
    MllrOptions, MixtureFit, MomentKind, NonStereoModel, NonStereoOptions, PiecewiseTransform, PosteriorModel,
    Result, StereoDataset, TransformKind,
};

use crate::context::{ensure_dir, file_stem, output_path, write_text, Context};
use crate::{
    AdaptArgs, ConditionKey, EnhanceArgs, EstimateKind, FormatArg, StereoArgs, SynthArgs, TrainGmmArgs, VerifyArgs,
    VmatrixArgs,
};

/// `key=value` output lines.
#[derive(Default)]
pub struct Report {
    lines: Vec<String>,
}

impl Report {
    pub fn line(&mut self, fields: &[(&str, &dyn Display)]) {
        let mut s = String::new();
        for (i, (k, v)) in fields.iter().enumerate() {
            if i > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{k}={v}");
        }
        self.lines.push(s);
    }

    pub fn text(&self) -> String {
        self.lines.iter().map(|l| format!("{l}\n")).collect()
    }

    pub fn print(&self) {
        print!("{}", self.text());
    }

    pub fn extend(&mut self, other: Report) {
        self.lines.extend(other.lines);
    }
}

fn all(m: &CorpusManifest) -> Vec<&ManifestRecord> {
    m.records().iter().collect()
}

// ---------------------------------------------------------------- train-gmm

pub fn train(ctx: &Context, frames: &FeatureMatrix, mixtures: usize, iters: usize, mode: CovarianceMode) -> Result<EmFit> {
    fit_em(frames, &EmOptions::new(mixtures, iters, ctx.seed).mode(mode))
}

pub fn em_log(fit: &EmFit, frames: usize) -> Report {
    let mut r = Report::default();
    for (i, ll) in fit.log_likelihood.iter().enumerate() {
        r.line(&[("iter", &i), ("loglik", ll), ("loglik_per_frame", &(ll / frames as f64))]);
    }
    r
}

pub fn train_gmm(ctx: &Context, a: &TrainGmmArgs) -> Result<()> {
    let m = ctx.manifest(&a.manifest)?;
    let frames = ctx.load_stacked(&all(&m))?;
    let fit = train(ctx, &frames, a.mixtures, a.iters, a.covariance.into())?;
    let mut r = em_log(&fit, frames.n_frames());
    if let Some(p) = &a.log {
        write_text(p, &r.text())?;
    }
    let out = ctx.model_path(&a.out);
    write_gmm(&fit.gmm, &out)?;
    r.line(&[
        ("mixtures", &fit.gmm.n_mixtures()),
        ("dim", &fit.gmm.dim()),
        ("frames", &frames.n_frames()),
        ("final_loglik", &fit.final_log_likelihood()),
        ("max_decrease", &fit.max_decrease()),
        ("fingerprint", &fit.gmm.fingerprint()),
    ]);
    r.print();
    Ok(())
}

// ----------------------------------------------------------------- estimate

pub fn transform_summary(t: &PiecewiseTransform) -> Report {
    let count = |f: MixtureFit| t.fits().iter().filter(|x| **x == f).count();
    let mut r = Report::default();
    r.line(&[
        ("kind", &t.kind().as_str()),
        ("mixtures", &t.n_mixtures()),
        ("dim", &t.dim()),
        ("full", &count(MixtureFit::Full)),
        ("bias_only", &count(MixtureFit::BiasOnly)),
        ("identity", &count(MixtureFit::Identity)),
        ("alignment", &t.alignment_model()),
    ]);
    r
}

pub fn load_stereo_for(ctx: &Context, manifest: &CorpusManifest) -> Result<StereoDataset> {
    load_stereo(manifest, ctx.cms)
}

pub fn estimate_stereo(
    ctx: &Context,
    kind: TransformKind,
    gmm: &Gmm,
    manifest: &CorpusManifest,
    moments: MomentKind,
) -> Result<PiecewiseTransform> {
    let stereo = load_stereo_for(ctx, manifest)?;
    estimate_transform(kind, &stereo, gmm, &EstimateOptions { moments })
}

fn estimate_stereo_cmd(ctx: &Context, kind: TransformKind, a: &StereoArgs) -> Result<()> {
    let gmm = read_gmm(ctx.model_path(&a.gmm))?;
    let m = ctx.manifest(&a.manifest)?;
    let t = estimate_stereo(ctx, kind, &gmm, &m, a.moments.into())?;
    write_transform(&t, ctx.model_path(&a.out))?;
    transform_summary(&t).print();
    Ok(())
}

pub fn nonstereo(
    ctx: &Context,
    clean: &CorpusManifest,
    noisy: &CorpusManifest,
    opts: &NonStereoOptions,
) -> Result<(NonStereoModel, Report)> {
    let clean_frames = ctx.load_stacked(&all(clean))?;
    let noisy_frames = ctx.load_stacked(&all(noisy))?;
    let model = estimate_nonstereo(&noisy_frames, &clean_frames, opts)?;
    let mut r = Report::default();
    r.line(&[
        ("clean_frames", &clean_frames.n_frames()),
        ("noisy_frames", &noisy_frames.n_frames()),
        ("noisy_final_loglik", &model.noisy_fit.final_log_likelihood()),
        ("mllr_loglik_before", &model.clean.mllr.log_likelihood_before),
        ("mllr_loglik_after", &model.clean.mllr.log_likelihood_after),
        ("refine_final_loglik", &model.clean.refinement.final_log_likelihood()),
    ]);
    r.extend(transform_summary(&model.transform));
    Ok((model, r))
}

pub fn estimate(ctx: &Context, kind: &EstimateKind) -> Result<()> {
    match kind {
        EstimateKind::Splice(a) => estimate_stereo_cmd(ctx, TransformKind::Splice, a),
        EstimateKind::Msplice(a) => estimate_stereo_cmd(ctx, TransformKind::MSplice, a),
        EstimateKind::Diag(a) => estimate_stereo_cmd(ctx, TransformKind::Diagonal, a),
        EstimateKind::Bias(a) => estimate_stereo_cmd(ctx, TransformKind::BiasOnly, a),
        EstimateKind::Nonstereo(a) => {
            let clean = ctx.manifest(&a.clean_manifest)?;
            let noisy = ctx.manifest(&a.noisy_manifest)?;
            let mut opts = NonStereoOptions::new(a.mixtures, a.iters, ctx.seed);
            opts.refine_iters = a.refine_iters;
            opts.mode = a.covariance.into();
            let (model, r) = nonstereo(ctx, &clean, &noisy, &opts)?;
            write_transform(&model.transform, ctx.model_path(&a.out))?;
            write_gmm(&model.noisy_gmm, ctx.model_path(&a.noisy_gmm_out))?;
            if let Some(p) = &a.clean_gmm_out {
                write_gmm(&model.clean.gmm, ctx.model_path(p))?;
            }
            r.print();
            Ok(())
        }
    }
}

// ------------------------------------------------------------------ enhance

/// Frame-weighted MSE accumulator over files with a stereo partner.
#[derive(Default)]
struct MseTally {
    frames: usize,
    before: f64,
    after: f64,
}

impl MseTally {
    fn add(&mut self, frames: usize, before: f64, after: f64) {
        self.frames += frames;
        self.before += before * frames as f64;
        self.after += after * frames as f64;
    }

    fn report(&self, r: &mut Report, fields: &[(&str, &dyn Display)]) {
        let mut f: Vec<(&str, &dyn Display)> = fields.to_vec();
        if self.frames == 0 {
            r.line(&f);
            return;
        }
        let before = self.before / self.frames as f64;
        let after = self.after / self.frames as f64;
        let drop = 1.0 - after / before;
        f.extend_from_slice(&[("mse_before", &before), ("mse_after", &after), ("mse_drop", &drop)]);
        r.line(&f);
    }
}

fn partner_frames(ctx: &Context, manifest: &CorpusManifest, r: &ManifestRecord) -> Result<Option<FeatureMatrix>> {
    match r.partner.as_deref().and_then(|p| manifest.get(p)) {
        Some(p) => ctx.load(&p.path).map(Some),
        None => Ok(None),
    }
}

/// Enhance every record of `manifest` into `out_dir`.
pub fn enhance_manifest(
    ctx: &Context,
    file: &TransformFile,
    gmm: &Gmm,
    manifest: &CorpusManifest,
    out_dir: &Path,
    posterior_model: PosteriorModel,
) -> Result<Report> {
    enhance_records(ctx, file, gmm, manifest, &all(manifest), out_dir, posterior_model)
}

/// Enhance `records` into `out_dir`. Partners are looked up in `manifest`
/// and, when present, used to report MSE.
pub fn enhance_records(
    ctx: &Context,
    file: &TransformFile,
    gmm: &Gmm,
    manifest: &CorpusManifest,
    records: &[&ManifestRecord],
    out_dir: &Path,
    posterior_model: PosteriorModel,
) -> Result<Report> {
    ensure_dir(out_dir)?;
    let (transform, scoring, condition) = match file {
        TransformFile::Plain(t) => {
            if posterior_model == PosteriorModel::Adapted {
                log::warn!("transform carries no adaptation; scoring with the original model");
            }
            (t.clone(), gmm.clone(), None)
        }
        TransformFile::Adapted(a) => {
            let scoring = match posterior_model {
                PosteriorModel::Original => gmm.clone(),
                PosteriorModel::Adapted => a.adapted_gmm(gmm)?,
            };
            (a.to_transform(), scoring, Some(a.condition()))
        }
    };
    let results: Vec<(usize, Option<(f64, f64)>, bool)> = records
        .par_iter()
        .map(|r| {
            let y = ctx.load(&r.path)?;
            let post = scoring.posteriors(&y)?;
            let x_hat = enhance_with_posteriors(&transform, &post, &y)?;
            write_features(&x_hat, output_path(out_dir, r))?;
            let mismatch = matches!((condition, r.condition.as_deref()), (Some(a), Some(b)) if a != b);
            let mse = match partner_frames(ctx, manifest, r)? {
                Some(x) if x.n_frames() == y.n_frames() => Some((y.mse(&x)?, x_hat.mse(&x)?)),
                Some(_) => {
                    return Err(Error::Format {
                        path: Some(r.path.clone()),
                        msg: "stereo partner has a different frame count".into(),
                    })
                }
                None => None,
            };
            Ok((y.n_frames(), mse, mismatch))
        })
        .collect::<Result<_>>()?;
    let mut rep = Report::default();
    let mut tally = MseTally::default();
    let mut total = 0;
    for (r, (n, mse, mismatch)) in records.iter().zip(&results) {
        total += n;
        let id = r.id.as_str();
        if *mismatch {
            log::warn!(
                "{id}: condition '{}' differs from the transform's '{}'",
                r.condition.as_deref().unwrap_or(""),
                condition.unwrap_or("")
            );
        }
        match mse {
            Some((b, a)) => {
                tally.add(*n, *b, *a);
                rep.line(&[("file", &id), ("frames", n), ("mse_before", b), ("mse_after", a)]);
            }
            None => rep.line(&[("file", &id), ("frames", n)]),
        }
    }
    tally.report(&mut rep, &[("files", &records.len()), ("frames", &total)]);
    Ok(rep)
}

pub fn enhance(ctx: &Context, a: &EnhanceArgs) -> Result<()> {
    let gmm = read_gmm(ctx.model_path(&a.gmm))?;
    let file = read_transform_for(ctx.model_path(&a.transform), &gmm, a.force)?;
    let m = ctx.manifest(&a.manifest)?;
    enhance_manifest(ctx, &file, &gmm, &m, &a.out_dir, a.posterior_model.into())?.print();
    Ok(())
}

// -------------------------------------------------------------------- adapt

fn group(m: &CorpusManifest, key: ConditionKey) -> Result<BTreeMap<String, Vec<&ManifestRecord>>> {
    let mut groups: BTreeMap<String, Vec<&ManifestRecord>> = BTreeMap::new();
    let mut unlabelled = Vec::new();
    for r in m.records() {
        let label = match key {
            ConditionKey::Condition => r.condition.clone(),
            ConditionKey::Directory => r
                .path
                .parent()
                .and_then(|p| p.file_name())
                .map(|n| n.to_string_lossy().into_owned()),
        };
        match label {
            Some(l) => groups.entry(l).or_default().push(r),
            None => unlabelled.push(r.id.as_str()),
        }
    }
    if !unlabelled.is_empty() {
        return Err(Error::Usage(format!("records without a condition label: {}", unlabelled.join(", "))));
    }
    Ok(groups)
}

pub fn adapt_manifest(
    ctx: &Context,
    base: &PiecewiseTransform,
    gmm: &Gmm,
    manifest: &CorpusManifest,
    out_dir: &Path,
    key: ConditionKey,
    posterior_model: PosteriorModel,
    mllr: &MllrOptions,
) -> Result<Report> {
    base.check_alignment(gmm)?;
    ensure_dir(out_dir)?;
    let mut rep = Report::default();
    for (condition, records) in group(manifest, key)? {
        let stem = file_stem(&condition);
        let frames = ctx.load_each(&records)?;
        let stacked = FeatureMatrix::concat(&frames)?;
        let est = estimate_global_mllr_mean_with(gmm, &stacked, mllr)?;
        let biases = adapted_biases(base, gmm, &est.transform);
        let adapted = AdaptedTransform::new(base.clone(), biases, est.transform.clone(), condition.clone())?;
        write_adapted(&adapted, out_dir.join(format!("{stem}.adapted")))?;

        let file = TransformFile::Adapted(adapted);
        let enhanced = enhance_records(ctx, &file, gmm, manifest, &records, &out_dir.join(&stem), posterior_model)?;
        let summary = enhanced.lines.last().cloned().unwrap_or_default();
        rep.line(&[
            ("condition", &condition),
            ("files", &records.len()),
            ("frames", &stacked.n_frames()),
            ("loglik_before", &est.log_likelihood_before),
            ("loglik_after", &est.log_likelihood_after),
            ("mllr_rank", &est.rank),
        ]);
        rep.line(&[("condition", &condition), ("enhanced", &summary)]);
    }
    Ok(rep)
}

pub fn adapt(ctx: &Context, a: &AdaptArgs) -> Result<()> {
    let gmm = read_gmm(ctx.model_path(&a.gmm))?;
    let file = read_transform_for(ctx.model_path(&a.transform), &gmm, false)?;
    if let TransformFile::Adapted(t) = &file {
        log::warn!("transform was already adapted to '{}'; adapting its base instead", t.condition());
    }
    let m = ctx.manifest(&a.manifest)?;
    let mllr = MllrOptions { cycles: a.mllr_cycles };
    adapt_manifest(ctx, file.base(), &gmm, &m, &a.out_dir, a.condition_key, a.posterior_model.into(), &mllr)?
        .print();
    Ok(())
}

// ------------------------------------------------------------------ vmatrix

pub fn v_report(v: &CorrespondenceMatrix) -> Report {
    let (perm, mass) = v.best_permutation();
    let perm_text: Vec<String> = perm.iter().map(|p| p.to_string()).collect();
    let mut r = Report::default();
    r.line(&[
        ("mode", &v.mode.as_str()),
        ("frames", &v.n_frames),
        ("total", &v.total()),
        ("off_diagonal", &v.off_diagonal_mass()),
        ("row_argmax_is_permutation", &v.row_argmax_permutation().is_some()),
        ("best_permutation", &perm_text.join(",")),
        ("best_permutation_mass", &mass),
    ]);
    r
}

pub fn vmatrix(ctx: &Context, a: &VmatrixArgs) -> Result<()> {
    let clean = read_gmm(ctx.model_path(&a.clean_gmm))?;
    let noisy = read_gmm(ctx.model_path(&a.noisy_gmm))?;
    let m = ctx.manifest(&a.manifest)?;
    let stereo = load_stereo_for(ctx, &m)?;
    let mode: AssignmentMode = a.mode.into();
    let v = correspondence_matrix(&clean, &noisy, &stereo, mode)?;
    write_text(&a.out, &v.to_text())?;
    v_report(&v).print();
    Ok(())
}

// -------------------------------------------------------------------- synth

fn write_utterances(
    frames: &FeatureMatrix,
    per_utt: usize,
    dir: &Path,
    prefix: &str,
    ext: &str,
) -> Result<Vec<(String, PathBuf)>> {
    ensure_dir(dir)?;
    let n = frames.n_frames();
    let starts: Vec<usize> = (0..n).step_by(per_utt).collect();
    starts
        .par_iter()
        .enumerate()
        .map(|(u, &s)| {
            let idx: Vec<usize> = (s..(s + per_utt).min(n)).collect();
            let name = format!("{prefix}{u:05}");
            let rel = PathBuf::from(dir.file_name().expect("named dir")).join(format!("{name}.{ext}"));
            write_features(&frames.select(&idx)?, dir.join(format!("{name}.{ext}")))?;
            Ok((name, rel))
        })
        .collect()
}

fn manifest_text(rows: &[(String, PathBuf, &str, Option<String>)]) -> String {
    let mut s = String::from("id\tpath\tcondition\tpartner\n");
    for (id, path, cond, partner) in rows {
        let _ = writeln!(s, "{id}\t{}\t{cond}\t{}", path.display(), partner.as_deref().unwrap_or(""));
    }
    s
}

pub fn synth(_: &Context, a: &SynthArgs) -> Result<()> {
    if !a.spec.exists() {
        return Err(Error::Usage(format!("spec file {} does not exist", a.spec.display())));
    }
    let spec = SyntheticSpec::read(&a.spec)?;
    let corpus = generate(&spec)?;
    let ext = if a.format == FormatArg::Csv { "csv" } else { "htk" };
    let out = &a.out;
    ensure_dir(out)?;
    let fpu = spec.frames_per_utterance;
    let stereo = &corpus.stereo;

    let clean = write_utterances(stereo.clean(), fpu, &out.join("clean"), "u", ext)?;
    let noisy = write_utterances(stereo.noisy(), fpu, &out.join("noisy"), "u", ext)?;
    let clean_rows: Vec<_> =
        clean.iter().map(|(n, p)| (format!("{n}.clean"), p.clone(), "clean", None)).collect();
    let noisy_rows: Vec<_> =
        noisy.iter().map(|(n, p)| (format!("{n}.noisy"), p.clone(), "synthetic", None)).collect();
    let stereo_rows: Vec<_> = noisy
        .iter()
        .map(|(n, p)| (format!("{n}.noisy"), p.clone(), "synthetic", Some(format!("{n}.clean"))))
        .chain(clean_rows.iter().cloned())
        .collect();
    write_text(&out.join("clean.tsv"), &manifest_text(&clean_rows))?;
    write_text(&out.join("noisy.tsv"), &manifest_text(&noisy_rows))?;
    write_text(&out.join("stereo.tsv"), &manifest_text(&stereo_rows))?;

    let (ci, ni) = split_indices(stereo.n_frames(), spec.seed);
    let uc = write_utterances(&stereo.clean().select(&ci)?, fpu, &out.join("unpaired_clean"), "c", ext)?;
    let un = write_utterances(&stereo.noisy().select(&ni)?, fpu, &out.join("unpaired_noisy"), "n", ext)?;
    let rows = |v: &[(String, PathBuf)], cond: &'static str| -> Vec<(String, PathBuf, &str, Option<String>)> {
        v.iter().map(|(n, p)| (n.clone(), p.clone(), cond, None)).collect()
    };
    write_text(&out.join("unpaired_clean.tsv"), &manifest_text(&rows(&uc, "clean")))?;
    write_text(&out.join("unpaired_noisy.tsv"), &manifest_text(&rows(&un, "synthetic")))?;

    write_oracle(&corpus.oracle, out.join("oracle.txt"))?;
    write_gmm(&corpus.clean_gmm, out.join("clean_source.gmm"))?;
    write_text(&out.join("spec.toml"), &spec.to_toml())?;

    let mut r = Report::default();
    r.line(&[
        ("frames", &stereo.n_frames()),
        ("utterances", &clean.len()),
        ("dim", &spec.d),
        ("mixtures", &spec.m),
        ("residual_sigma", &spec.residual_sigma),
        ("mse_noisy", &stereo.noisy().mse(stereo.clean())?),
        ("unpaired_clean_frames", &ci.len()),
        ("unpaired_noisy_frames", &ni.len()),
    ]);
    r.print();
    Ok(())
}

// ------------------------------------------------------------------- verify

struct Checks {
    report: Report,
    failed: usize,
}

impl Checks {
    fn record(&mut self, name: &str, ok: bool, detail: &dyn Display) {
        if !ok {
            self.failed += 1;
        }
        let status = if ok { "pass" } else { "fail" };
        self.report.line(&[("check", &name), ("status", &status), ("detail", detail)]);
    }

    fn info(&mut self, name: &str, detail: &dyn Display) {
        self.report.line(&[("check", &name), ("status", &"info"), ("detail", detail)]);
    }
}

fn whitening_error(t: &PiecewiseTransform, cov_x: &[nalgebra::DMatrix<f64>], cov_y: &[nalgebra::DMatrix<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for (k, c) in t.matrices().iter().enumerate() {
        if t.fits()[k] == MixtureFit::Full {
            let e = (c * &cov_y[k] * c.transpose() - &cov_x[k]).norm() / cov_x[k].norm();
            worst = worst.max(e);
        }
    }
    worst
}

fn file_roundtrip(path: &Path) -> Result<bool> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let text = String::from_utf8_lossy(&bytes);
        let f = parse_csv(&text).map_err(|e| e.at_path(path))?;
        Ok(parse_csv(&to_csv(&f))? == f)
    } else {
        let f = parse_htk(&bytes).map_err(|e| e.at_path(path))?;
        Ok(encode_htk(&f)? == bytes)
    }
}

pub fn verify(ctx: &Context, a: &VerifyArgs) -> Result<()> {
    let mut c = Checks { report: Report::default(), failed: 0 };
    let gmm = a.gmm.as_ref().map(|p| read_gmm(ctx.model_path(p))).transpose()?;
    let clean_gmm = a.clean_gmm.as_ref().map(|p| read_gmm(ctx.model_path(p))).transpose()?;
    let transform = a.transform.as_ref().map(|p| read_transform_file(ctx.model_path(p))).transpose()?;
    let manifest = a.manifest.as_ref().map(|p| ctx.manifest(p)).transpose()?;

    for (name, g) in [("gmm", &gmm), ("clean_gmm", &clean_gmm)] {
        let Some(g) = g else { continue };
        let text = gmm_to_string(g);
        let back = gmm_from_str(&text)?;
        c.record(&format!("{name}_roundtrip"), back == *g && gmm_to_string(&back) == text, &"text");
        let w = g.weights();
        let sum_err = (w.sum() - 1.0).abs();
        c.record(&format!("{name}_weights_simplex"), w.iter().all(|v| *v >= 0.0) && sum_err <= 1e-10, &sum_err);
        let min_eig = g.components().iter().map(|k| k.covariance().min_eigenvalue()).fold(f64::INFINITY, f64::min);
        c.record(&format!("{name}_covariances_positive"), min_eig > 0.0, &min_eig);
    }

    if let Some(file) = &transform {
        let text = match file {
            TransformFile::Plain(t) => splice_core::model_io::transform_to_string(t),
            TransformFile::Adapted(t) => splice_core::model_io::adapted_to_string(t),
        };
        c.record("transform_roundtrip", transform_file_from_str(&text)? == *file, &"text");
        let t = file.base();
        if let Some(g) = &gmm {
            let ok = t.check_alignment(g).is_ok();
            c.record("transform_alignment", ok, &t.alignment_model());
        }
        if t.kind() == TransformKind::MSplice {
            if let (Some(g), Some(cg)) = (&gmm, &clean_gmm) {
                let covs = |m: &Gmm| m.components().iter().map(|k| k.covariance().to_dense()).collect::<Vec<_>>();
                let e = whitening_error(t, &covs(cg), &covs(g));
                c.record("whitening_models", e <= 1e-8, &e);
            }
            if let (Some(g), Some(m)) = (&gmm, &manifest) {
                if m.records().iter().any(|r| r.partner.is_some()) {
                    let stereo = load_stereo_for(ctx, m)?;
                    let moments = accumulate_moments(&stereo, g)?;
                    let e = whitening_error(t, &moments.cov_x, &moments.cov_y);
                    c.record("whitening_data", e <= 1e-8, &e);
                }
            }
        }
    }

    if let Some(m) = &manifest {
        let mut bad = Vec::new();
        for r in m.records() {
            if !file_roundtrip(&r.path)? {
                bad.push(r.id.clone());
            }
        }
        c.record("feature_roundtrip", bad.is_empty(), &format!("files={} failed={}", m.len(), bad.join(",")));
        if m.records().iter().any(|r| r.partner.is_some()) {
            let stereo = load_stereo_for(ctx, m)?;
            c.record("stereo_frame_counts", true, &stereo.n_frames());
        }
        if let Some(g) = &gmm {
            let mut worst = 0.0f64;
            for r in m.records() {
                let post = g.posteriors(&ctx.load(&r.path)?)?;
                for row in post.row_iter() {
                    worst = worst.max((row.sum() - 1.0).abs());
                    if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                        worst = f64::INFINITY;
                    }
                }
            }
            c.record("posterior_simplex", worst <= 1e-10, &worst);
        }
    }

    if let Some(p) = &a.against_oracle {
        let (Some(g), Some(file)) = (&gmm, &transform) else {
            return Err(Error::Usage("--against-oracle needs --gmm and --transform".into()));
        };
        let oracle = read_oracle(p)?;
        let t = file.base();
        if oracle.matrices.len() != t.n_mixtures() {
            return Err(Error::Usage(format!(
                "oracle has {} mixtures, transform {}",
                oracle.matrices.len(),
                t.n_mixtures()
            )));
        }
        let perm = match_mixtures(g, &oracle.noisy_means)?;
        let mut worst = 0.0f64;
        for (k, &src) in perm.iter().enumerate() {
            let aug = |m: &nalgebra::DMatrix<f64>, b: &nalgebra::DVector<f64>| {
                let mut x = m.clone().insert_column(m.ncols(), 0.0);
                x.column_mut(m.ncols()).copy_from(b);
                x
            };
            let truth = aug(&oracle.matrices[src], &oracle.biases[src]);
            let err = (aug(&t.matrices()[k], &t.biases()[k]) - &truth).norm() / truth.norm();
            worst = worst.max(err);
            c.report.line(&[("oracle_mixture", &k), ("generating_mixture", &src), ("rel_err", &err)]);
        }
        match a.oracle_tolerance {
            Some(tol) => c.record("oracle", worst <= tol, &worst),
            None => c.info("oracle", &worst),
        }
    }

    c.report.line(&[("checks_failed", &c.failed)]);
    c.report.print();
    if c.failed > 0 {
        return Err(Error::Numerical(format!("{} verification checks failed", c.failed)));
    }
    Ok(())
}

// ------------------------------------------------------------------ inspect

pub fn inspect(_: &Context, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let text = std::str::from_utf8(&bytes).ok();
    let first = text.and_then(|t| t.lines().next()).unwrap_or("");
    let mut r = Report::default();
    let at = |e: Error| e.at_path(path);
    if first.starts_with(GMM_MAGIC) {
        let g = gmm_from_str(text.unwrap_or_default()).map_err(at)?;
        r.line(&[
            ("type", &"gmm"),
            ("mixtures", &g.n_mixtures()),
            ("dim", &g.dim()),
            ("covariance", &g.mode().as_str()),
            ("fingerprint", &g.fingerprint()),
        ]);
        for (k, c) in g.components().iter().enumerate() {
            r.line(&[
                ("component", &k),
                ("weight", &g.weights()[k]),
                ("mean_norm", &c.mean().norm()),
                ("min_eigenvalue", &c.covariance().min_eigenvalue()),
            ]);
        }
    } else if first.starts_with(TRANSFORM_MAGIC) {
        let file = transform_file_from_str(text.unwrap_or_default()).map_err(at)?;
        let mut s = transform_summary(file.base());
        s.lines[0].insert_str(0, "type=transform ");
        r.extend(s);
        let t = file.base();
        for k in 0..t.n_mixtures() {
            let d = t.dim();
            let dev = (&t.matrices()[k] - nalgebra::DMatrix::<f64>::identity(d, d)).norm();
            r.line(&[
                ("mixture", &k),
                ("fit", &t.fits()[k].as_str()),
                ("matrix_minus_identity", &dev),
                ("bias_norm", &t.biases()[k].norm()),
            ]);
        }
        if let TransformFile::Adapted(a) = &file {
            r.line(&[
                ("condition", &a.condition()),
                ("mllr_offset_norm", &a.mllr().offset().norm()),
                ("mllr_linear_minus_identity", &(a.mllr().linear() - nalgebra::DMatrix::<f64>::identity(t.dim(), t.dim())).norm()),
            ]);
        }
    } else if first.starts_with(ORACLE_MAGIC) {
        let o = splice_core::model_io::oracle_from_str(text.unwrap_or_default()).map_err(at)?;
        r.line(&[("type", &"oracle"), ("mixtures", &o.matrices.len()), ("dim", &o.biases[0].len())]);
    } else if first.starts_with("# mixtures=") {
        let v = CorrespondenceMatrix::from_text(text.unwrap_or_default()).map_err(at)?;
        let mut s = v_report(&v);
        s.lines[0].insert_str(0, "type=vmatrix ");
        r.extend(s);
    } else {
        let f = read_features(path)?;
        let means = f.column_means();
        r.line(&[
            ("type", &"features"),
            ("frames", &f.n_frames()),
            ("dim", &f.dim()),
            ("mean_norm", &means.norm()),
        ]);
        if let Ok(h) = parse_htk(&bytes) {
            r.line(&[("sample_period", &h.sample_period), ("param_kind", &h.param_kind), ("sample_size", &(h.frames.dim() * 4))]);
        }
    }
    r.print();
    Ok(())
}
