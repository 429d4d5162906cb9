//! `run-pipeline`: train, estimate, enhance and adapt from one TOML file.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::Deserialize;
use splice_core::model_io::{write_gmm, write_transform, TransformFile};
use splice_core::{CovarianceMode, Error, MllrOptions, MomentKind, NonStereoOptions, PosteriorModel, Result, TransformKind};

use crate::commands::{
    adapt_manifest, em_log, enhance_manifest, estimate_stereo, load_stereo_for, nonstereo, train, Report,
};
use crate::context::{ensure_dir, write_text, Context};
use crate::ConditionKey;

/// Paths are relative to the directory holding the config file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Stereo manifest for `splice`, `msplice`, `diag` and `bias`.
    pub stereo_manifest: Option<PathBuf>,
    /// Unpaired manifests for `nonstereo`.
    pub clean_manifest: Option<PathBuf>,
    pub noisy_manifest: Option<PathBuf>,
    /// Enhanced (and adapted, if `adapt`) with every estimated transform.
    pub test_manifest: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default = "default_mixtures")]
    pub mixtures: usize,
    #[serde(default = "default_iters")]
    pub em_iters: usize,
    #[serde(default = "default_refine")]
    pub refine_iters: usize,
    #[serde(default = "default_covariance")]
    pub covariance: String,
    #[serde(default = "default_kinds")]
    pub kinds: Vec<String>,
    #[serde(default)]
    pub adapt: bool,
    #[serde(default = "default_condition_key")]
    pub condition_key: String,
    /// Overrides `--seed`.
    pub seed: Option<u64>,
    /// Overrides `--no-cms`.
    pub cms: Option<bool>,
}

fn default_mixtures() -> usize {
    128
}

fn default_iters() -> usize {
    20
}

fn default_refine() -> usize {
    3
}

fn default_covariance() -> String {
    "full".into()
}

fn default_kinds() -> Vec<String> {
    vec!["msplice".into()]
}

fn default_condition_key() -> String {
    "condition".into()
}

enum Step {
    Stereo(TransformKind),
    NonStereo,
}

impl Step {
    fn name(&self) -> &'static str {
        match self {
            Step::Stereo(k) => k.as_str(),
            Step::NonStereo => "nonstereo",
        }
    }
}

struct Plan {
    steps: Vec<Step>,
    mode: CovarianceMode,
    condition_key: ConditionKey,
}

impl PipelineConfig {
    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Usage(format!("config {} does not exist", path.display())));
        }
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        let mut cfg: PipelineConfig = toml::from_str(&text)
            .map_err(|e| Error::Format { path: Some(path.to_path_buf()), msg: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut cfg.stereo_manifest, &mut cfg.clean_manifest, &mut cfg.noisy_manifest, &mut cfg.test_manifest]
            .into_iter()
            .flatten()
        {
            rebase(p);
        }
        rebase(&mut cfg.output_dir);
        Ok(cfg)
    }

    fn plan(&self) -> Result<Plan> {
        if self.mixtures == 0 {
            return Err(Error::Usage("mixtures must be at least 1".into()));
        }
        if self.em_iters == 0 {
            return Err(Error::Usage("em_iters must be at least 1".into()));
        }
        let mode: CovarianceMode = self.covariance.parse()?;
        let condition_key = ConditionKey::from_str(&self.condition_key, true)
            .map_err(|_| Error::Usage(format!("unknown condition_key '{}'", self.condition_key)))?;
        if self.kinds.is_empty() {
            return Err(Error::Usage("kinds lists no transforms".into()));
        }
        let mut steps = Vec::new();
        for k in &self.kinds {
            let step = match k.as_str() {
                "nonstereo" => Step::NonStereo,
                other => Step::Stereo(other.parse()?),
            };
            let needed: &[(&str, &Option<PathBuf>)] = match step {
                Step::NonStereo => &[("clean_manifest", &self.clean_manifest), ("noisy_manifest", &self.noisy_manifest)],
                Step::Stereo(_) => &[("stereo_manifest", &self.stereo_manifest)],
            };
            for (name, p) in needed {
                match p {
                    None => return Err(Error::Usage(format!("kind '{k}' needs {name}"))),
                    Some(p) if !p.exists() => {
                        return Err(Error::Usage(format!("{name} {} does not exist", p.display())))
                    }
                    Some(_) => {}
                }
            }
            steps.push(step);
        }
        if let Some(p) = &self.test_manifest {
            if !p.exists() {
                return Err(Error::Usage(format!("test_manifest {} does not exist", p.display())));
            }
        } else if self.adapt {
            return Err(Error::Usage("adapt needs test_manifest".into()));
        }
        Ok(Plan { steps, mode, condition_key })
    }
}

pub fn run(ctx: &Context, config: &Path) -> Result<()> {
    let cfg = PipelineConfig::read(config)?;
    let plan = cfg.plan()?;
    let ctx = Context {
        seed: cfg.seed.unwrap_or(ctx.seed),
        cms: cfg.cms.unwrap_or(ctx.cms),
        model_dir: None,
    };
    let out = &cfg.output_dir;
    ensure_dir(out)?;
    let mut summary = Report::default();
    let test = cfg.test_manifest.as_deref().map(|p| ctx.manifest(p)).transpose()?;

    // one noisy GMM serves every stereo kind
    let mut stereo_gmm = None;
    for step in &plan.steps {
        let name = step.name();
        let (transform, gmm) = match step {
            Step::Stereo(kind) => {
                let manifest = ctx.manifest(cfg.stereo_manifest.as_deref().expect("validated"))?;
                if stereo_gmm.is_none() {
                    let stereo = load_stereo_for(&ctx, &manifest)?;
                    let fit = train(&ctx, stereo.noisy(), cfg.mixtures, cfg.em_iters, plan.mode)?;
                    write_text(&out.join("noisy_gmm.log"), &em_log(&fit, stereo.n_frames()).text())?;
                    write_gmm(&fit.gmm, out.join("noisy.gmm"))?;
                    summary.line(&[
                        ("step", &"train-gmm"),
                        ("frames", &stereo.n_frames()),
                        ("final_loglik", &fit.final_log_likelihood()),
                        ("fingerprint", &fit.gmm.fingerprint()),
                    ]);
                    stereo_gmm = Some(fit.gmm);
                }
                let gmm = stereo_gmm.clone().expect("trained above");
                let t = estimate_stereo(&ctx, *kind, &gmm, &manifest, MomentKind::Central)?;
                (t, gmm)
            }
            Step::NonStereo => {
                let clean = ctx.manifest(cfg.clean_manifest.as_deref().expect("validated"))?;
                let noisy = ctx.manifest(cfg.noisy_manifest.as_deref().expect("validated"))?;
                let mut opts = NonStereoOptions::new(cfg.mixtures, cfg.em_iters, ctx.seed);
                opts.refine_iters = cfg.refine_iters;
                opts.mode = plan.mode;
                let (model, r) = nonstereo(&ctx, &clean, &noisy, &opts)?;
                write_gmm(&model.noisy_gmm, out.join("nonstereo_noisy.gmm"))?;
                write_gmm(&model.clean.gmm, out.join("nonstereo_clean.gmm"))?;
                summary.line(&[("step", &"nonstereo")]);
                summary.extend(r);
                (model.transform, model.noisy_gmm)
            }
        };
        write_transform(&transform, out.join(format!("{name}.transform")))?;
        summary.line(&[("step", &"estimate"), ("kind", &name)]);

        if let Some(test) = &test {
            let file = TransformFile::Plain(transform.clone());
            let r = enhance_manifest(&ctx, &file, &gmm, test, &out.join("enhanced").join(name), PosteriorModel::Original)?;
            let last = r.text().lines().last().unwrap_or_default().to_string();
            summary.line(&[("step", &"enhance"), ("kind", &name), ("result", &last)]);
            if cfg.adapt {
                let r = adapt_manifest(
                    &ctx,
                    &transform,
                    &gmm,
                    test,
                    &out.join("adapted").join(name),
                    plan.condition_key,
                    PosteriorModel::Original,
                    &MllrOptions::default(),
                )?;
                summary.line(&[("step", &"adapt"), ("kind", &name)]);
                summary.extend(r);
            }
        }
    }
    write_text(&out.join("summary.txt"), &summary.text())?;
    summary.print();
    Ok(())
}
