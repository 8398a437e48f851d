use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use rayon::prelude::*;

use diffsumm::dataset::{
    generate_synthetic, load_dataset, load_datasets, make_splits, write_dataset, Dataset, SplitManifest,
};
use diffsumm::diffusion::{build_schedule, NoisePredictor, NoiseSchedule, NoisyScores};
use diffsumm::evaluate::{
    evaluate_checkpoint, fmt_metric, sample_video, score_curves_tsv, EvalReport, MultiSplitReport,
};
use diffsumm::predictor::Checkpoint;
use diffsumm::summarize::summarize_video;
use diffsumm::training::{train, TrainConfig};
use diffsumm::unsupervised::{write_score_file, ScorerSpec};
use diffsumm::{Error, FrameFeatures, Predictor, Result, VideoRecord};

use crate::config::RunConfig;
use crate::{Command, ConfigArgs};

pub const METRICS_FILE: &str = "metrics.txt";
pub const REPORT_FILE: &str = "report.txt";
pub const TRAIN_REPORT_FILE: &str = "train_report.txt";
pub const SPLIT_FILE: &str = "split.json";
pub const SCORES_DIR: &str = "scores";
pub const GENERATED_DIR: &str = "generated";
pub const SUMMARIES_FILE: &str = "summaries.txt";
pub const CONVERTER_ENV: &str = "DIFFSUMM_CONVERTER";

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth { spec, out, cfg } => synth(spec.as_deref(), &out, &cfg),
        Command::Train {
            data,
            aux,
            split_setting,
            split_index,
            no_shuffle,
            out,
            cfg,
        } => {
            let mut run = load_config(&cfg)?;
            if let Some(s) = split_setting {
                run.set("split.setting", &s)?;
            }
            if let Some(i) = split_index {
                run.set("split.index", &i.to_string())?;
            }
            if no_shuffle {
                run.set("train.shuffle", "false")?;
            }
            train_cmd(&run, &data, &aux, &out)
        }
        Command::Sample {
            data,
            ckpt,
            scorer,
            t_active,
            out,
            cfg,
        } => {
            let mut run = load_config(&cfg)?;
            apply_scorer(&mut run, scorer.as_deref())?;
            if let Some(t) = t_active {
                run.set("train.t_active", &t.to_string())?;
            }
            sample_cmd(&run, &data, ckpt.as_deref(), &out)
        }
        Command::Eval {
            data,
            aux,
            ckpt,
            scorer,
            protocol,
            splits,
            split_setting,
            t_active,
            out,
            cfg,
        } => {
            let mut run = load_config(&cfg)?;
            apply_scorer(&mut run, scorer.as_deref())?;
            if let Some(p) = protocol {
                run.set("eval.fscore_mode", &p)?;
            }
            if let Some(n) = splits {
                run.set("eval.n_splits", &n.to_string())?;
            }
            if let Some(s) = split_setting {
                run.set("split.setting", &s)?;
            }
            if let Some(t) = t_active {
                run.set("train.t_active", &t.to_string())?;
            }
            eval_cmd(&run, &data, &aux, &ckpt, &out)
        }
        Command::SweepT {
            data,
            values,
            ckpt,
            scorer,
            protocol,
            split_setting,
            out,
            cfg,
        } => {
            let mut run = load_config(&cfg)?;
            apply_scorer(&mut run, scorer.as_deref())?;
            if let Some(p) = protocol {
                run.set("eval.fscore_mode", &p)?;
            }
            if let Some(s) = split_setting {
                run.set("split.setting", &s)?;
            }
            sweep_cmd(&run, &data, &values, ckpt.as_deref(), &out)
        }
        Command::Schedule {
            t_base,
            t_active,
            beta_start,
            beta_end,
            out,
        } => schedule_cmd(t_base, t_active, beta_start, beta_end, out.as_deref()),
        Command::Convert {
            check,
            input,
            out,
            tvsum_anno,
            converter,
        } => convert_cmd(
            check.as_deref(),
            input.as_deref(),
            out.as_deref(),
            tvsum_anno.as_deref(),
            converter,
        ),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut run = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::new(),
    };
    run.apply_overrides(&args.overrides)?;
    if let Some(seed) = args.seed {
        run.set("seed", &seed.to_string())?;
    }
    let seed = run.resolve_seed()?;
    log::info!("seed {seed}");
    Ok(run)
}

fn apply_scorer(run: &mut RunConfig, flag: Option<&str>) -> Result<()> {
    if let Some(s) = flag {
        let mut spec: ScorerSpec = s.parse()?;
        // A repdiv scorer without an explicit seed follows the master seed.
        if matches!(spec, ScorerSpec::RepDiv { .. }) && !s.contains("seed=") {
            spec = spec.with_seed(run.get("seed").and_then(|v| v.parse().ok()).unwrap_or(0));
        }
        run.set_scorer(&spec)?;
    }
    Ok(())
}

/// Target dataset plus auxiliary datasets, with ids unique across all of them.
fn load_all(data: &Path, aux: &[PathBuf]) -> Result<(Dataset, Vec<Dataset>)> {
    let mut dirs = vec![data.to_path_buf()];
    dirs.extend(aux.iter().cloned());
    let mut all = load_datasets(&dirs)?;
    let target = all.remove(0);
    for ds in &all {
        if ds.d_feature != target.d_feature {
            return Err(Error::Config(format!(
                "dataset `{}` has feature width {}, target `{}` has {}",
                ds.name, ds.d_feature, target.name, target.d_feature
            )));
        }
    }
    Ok((target, all))
}

fn build_splits(run: &RunConfig, target: &Dataset, aux: &[Dataset], n_splits: usize) -> Result<Vec<SplitManifest>> {
    let aux_ids: Vec<String> = aux.iter().flat_map(|d| d.ids()).collect();
    let seed = run.get("seed").and_then(|v| v.parse().ok()).unwrap_or(0);
    make_splits(
        &target.ids(),
        &aux_ids,
        run.split_setting()?,
        n_splits,
        run.train_ratio()?,
        seed,
    )
}

fn pick_split(splits: Vec<SplitManifest>, index: usize) -> Result<SplitManifest> {
    let n = splits.len();
    splits
        .into_iter()
        .nth(index)
        .ok_or_else(|| Error::Config(format!("split index {index} out of range ({n} splits)")))
}

fn load_predictor(path: &Path, d_feature: usize) -> Result<Predictor> {
    let ckpt = Checkpoint::load(path)?;
    if ckpt.predictor.config.d_feature != d_feature {
        return Err(Error::ConfigMismatch {
            key: "d_feature".into(),
            expected: d_feature.to_string(),
            found: ckpt.predictor.config.d_feature.to_string(),
        });
    }
    Ok(ckpt.predictor)
}

fn t_active(run: &RunConfig) -> Result<usize> {
    match run.get("train.t_active") {
        Some(v) => v
            .parse()
            .map_err(|_| Error::Config(format!("`train.t_active` has an invalid value `{v}`"))),
        None => Ok(TrainConfig::default().t_active),
    }
}

fn synth(spec_file: Option<&Path>, out: &Path, args: &ConfigArgs) -> Result<()> {
    let mut run = match spec_file {
        Some(path) => RunConfig::from_spec_file(path)?,
        None => match &args.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::new(),
        },
    };
    run.apply_overrides(&args.overrides)?;
    if let Some(seed) = args.seed {
        run.set("seed", &seed.to_string())?;
    }
    run.resolve_seed()?;
    let spec = run.synthetic_spec()?;
    let videos = generate_synthetic(&spec)?;
    write_dataset(out, "synthetic", &videos)?;
    run.echo(out, &[("synth.seed", spec.seed.to_string())])?;
    println!("wrote {} synthetic videos to {}", videos.len(), out.display());
    Ok(())
}

fn train_cmd(run: &RunConfig, data: &Path, aux: &[PathBuf], out: &Path) -> Result<()> {
    let (target, aux) = load_all(data, aux)?;
    let protocol = run.eval_protocol()?;
    let split = pick_split(build_splits(run, &target, &aux, protocol.n_splits)?, run.split_index()?)?;
    let tcfg = run.train_config()?;
    let pcfg = run.predictor_config(Some(target.d_feature))?;
    let schedule = run.schedule(tcfg.t_active)?;
    let videos: Vec<VideoRecord> = target
        .videos
        .into_iter()
        .chain(aux.into_iter().flat_map(|d| d.videos))
        .collect();

    create_dir(out)?;
    run.echo(
        out,
        &[
            ("train.seed", tcfg.seed.to_string()),
            ("predictor.seed", pcfg.seed.to_string()),
            ("predictor.d_feature", pcfg.d_feature.to_string()),
        ],
    )?;
    split.save(out.join(SPLIT_FILE))?;
    log::info!(
        "training on split `{}`: {} train / {} test videos",
        split.name,
        split.train_ids.len(),
        split.test_ids.len()
    );
    let outcome = train(&videos, &split, &tcfg, &pcfg, &schedule, Some(out))?;
    write_file(&out.join(TRAIN_REPORT_FILE), &outcome.report.to_text())?;
    if let Some(last) = outcome.report.epochs.last() {
        println!(
            "trained {} epochs ({} steps), final mean loss {:.5}",
            outcome.report.epochs.len(),
            outcome.report.steps,
            last.mean_loss
        );
    }
    Ok(())
}

/// Stand-in when sampling with a zero horizon, where the chain never runs.
struct NoModel;

impl NoisePredictor for NoModel {
    fn predict_noise(&self, _: &NoisyScores, _: &FrameFeatures) -> Result<Vec<f64>> {
        Err(Error::Config("no checkpoint loaded".into()))
    }
}

fn sample_cmd(run: &RunConfig, data: &Path, ckpt: Option<&Path>, out: &Path) -> Result<()> {
    let dataset = load_dataset(data)?;
    let t = t_active(run)?;
    let schedule = run.schedule(t)?;
    let scorer = run.scorer()?;
    let protocol = run.eval_protocol()?;
    let predictor: Box<dyn NoisePredictor + Sync> = match ckpt {
        Some(path) => Box::new(load_predictor(path, dataset.d_feature)?),
        None if t == 0 => Box::new(NoModel),
        None => return Err(Error::Config("sample needs --ckpt unless --t-active is 0".into())),
    };

    let results = dataset
        .videos
        .par_iter()
        .map(|v| sample_video(&schedule, predictor.as_ref(), &scorer, v, protocol.seed))
        .collect::<Vec<_>>();

    create_dir(out)?;
    run.echo(out, &[("eval.seed", protocol.seed.to_string()), ("scorer", scorer.to_string())])?;
    let mut summaries = String::new();
    for (video, result) in dataset.videos.iter().zip(results) {
        let (initial, generated) = result?;
        write_file(
            &out.join(SCORES_DIR).join(format!("{}.tsv", video.id)),
            &score_curves_tsv(&initial, &generated, &video.annotation_mean()),
        )?;
        write_score_file(
            &out.join(GENERATED_DIR).join(format!("{}.txt", video.id)),
            &video.id,
            &generated,
        )?;
        let sel = summarize_video(&generated, &video.change_points, protocol.summary_ratio)?;
        summaries.push_str(&sel.dump(&video.id, &video.change_points));
    }
    write_file(&out.join(SUMMARIES_FILE), &summaries)?;
    println!(
        "sampled {} videos with t_active {t} and scorer {scorer}",
        dataset.videos.len()
    );
    Ok(())
}

fn write_curves(dir: &Path, report: &EvalReport) -> Result<()> {
    for v in &report.videos {
        write_file(&dir.join(format!("{}.tsv", v.id)), &v.curves_tsv())?;
    }
    Ok(())
}

fn eval_cmd(run: &RunConfig, data: &Path, aux: &[PathBuf], ckpts: &[PathBuf], out: &Path) -> Result<()> {
    let (target, aux) = load_all(data, aux)?;
    let protocol = run.eval_protocol()?;
    let scorer = run.scorer()?;
    let t = t_active(run)?;
    let schedule = run.schedule(t)?;
    let splits = build_splits(run, &target, &aux, protocol.n_splits)?;
    if ckpts.len() != 1 && ckpts.len() != splits.len() {
        return Err(Error::Config(format!(
            "got {} checkpoints for {} splits; pass one, or one per split",
            ckpts.len(),
            splits.len()
        )));
    }
    if ckpts.len() == 1 && splits.len() > 1 {
        log::warn!("evaluating one checkpoint on {} splits; its training videos may appear in test sets", splits.len());
    }
    let videos: Vec<VideoRecord> = target
        .videos
        .into_iter()
        .chain(aux.into_iter().flat_map(|d| d.videos))
        .collect();

    let mut reports = Vec::with_capacity(splits.len());
    for (i, split) in splits.iter().enumerate() {
        let path = if ckpts.len() == 1 { &ckpts[0] } else { &ckpts[i] };
        let predictor = load_predictor(path, target.d_feature)?;
        log::info!("evaluating split `{}` with {}", split.name, path.display());
        reports.push(evaluate_checkpoint(&videos, split, &predictor, &scorer, &schedule, &protocol)?);
    }

    create_dir(out)?;
    run.echo(out, &[("eval.seed", protocol.seed.to_string()), ("scorer", scorer.to_string())])?;
    if reports.len() == 1 {
        write_curves(&out.join(SCORES_DIR), &reports[0])?;
    } else {
        for (i, r) in reports.iter().enumerate() {
            write_curves(&out.join(SCORES_DIR).join(format!("split_{i}")), r)?;
        }
    }
    for (i, r) in reports.iter().enumerate() {
        write_file(&out.join(format!("report_split_{i}.txt")), &r.to_kv())?;
    }
    let multi = MultiSplitReport::new(reports);
    let table = multi.to_table();
    write_file(&out.join(METRICS_FILE), &table)?;
    write_file(&out.join(REPORT_FILE), &multi.to_kv())?;
    print!("{table}");
    Ok(())
}

fn sweep_cmd(run: &RunConfig, data: &Path, values: &[usize], ckpt: Option<&Path>, out: &Path) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Config("--values needs at least one horizon".into()));
    }
    if ckpt.is_none() && values.contains(&0) {
        return Err(Error::Config("training needs horizons of at least 1".into()));
    }
    let (target, _) = load_all(data, &[])?;
    let protocol = run.eval_protocol()?;
    let scorer = run.scorer()?;
    let split = pick_split(build_splits(run, &target, &[], protocol.n_splits)?, run.split_index()?)?;
    let fixed = ckpt.map(|p| load_predictor(p, target.d_feature)).transpose()?;
    create_dir(out)?;
    run.echo(out, &[("eval.seed", protocol.seed.to_string()), ("scorer", scorer.to_string())])?;
    split.save(out.join(SPLIT_FILE))?;

    let mut rows = Vec::with_capacity(values.len());
    for &t in values {
        let schedule = run.schedule(t)?;
        let report = match &fixed {
            Some(p) => evaluate_checkpoint(&target.videos, &split, p, &scorer, &schedule, &protocol)?,
            None => {
                let mut tcfg = run.train_config()?;
                tcfg.t_active = t;
                let pcfg = run.predictor_config(Some(target.d_feature))?;
                let dir = out.join(format!("t_{t}"));
                log::info!("training with t_active {t}");
                let outcome = train(&target.videos, &split, &tcfg, &pcfg, &schedule, Some(&dir))?;
                write_file(&dir.join(TRAIN_REPORT_FILE), &outcome.report.to_text())?;
                let predictor = outcome.checkpoint.predictor;
                evaluate_checkpoint(&target.videos, &split, &predictor, &scorer, &schedule, &protocol)?
            }
        };
        log::info!("t_active {t}: kendall tau {}", fmt_metric(report.diffusion.tau));
        rows.push((t, report));
    }

    let mut table = format!(
        "{:>8} {:>8} {:>8} {:>8} {:>9} {:>9} {:>10} {:>10}\n",
        "t_active", "fscore", "tau", "rho", "tau_true", "rho_true", "unsup_tau", "unsup_true"
    );
    let mut kv = String::new();
    let _ = writeln!(kv, "split = {}", split.name);
    let _ = writeln!(kv, "scorer = {scorer}");
    let _ = writeln!(kv, "values = {}", values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
    for (t, r) in &rows {
        let d = &r.diffusion;
        let _ = writeln!(
            table,
            "{:>8} {:>8} {:>8} {:>8} {:>9} {:>9} {:>10} {:>10}",
            t,
            short(d.fscore),
            short(d.tau),
            short(d.rho),
            short(d.tau_truth),
            short(d.rho_truth),
            short(r.unsupervised.tau),
            short(r.unsupervised.tau_truth)
        );
        for (key, value) in [
            ("fscore", d.fscore),
            ("kendall_tau", d.tau),
            ("spearman_rho", d.rho),
            ("kendall_tau_truth", d.tau_truth),
            ("spearman_rho_truth", d.rho_truth),
            ("unsupervised_kendall_tau", r.unsupervised.tau),
            ("unsupervised_kendall_tau_truth", r.unsupervised.tau_truth),
        ] {
            let _ = writeln!(kv, "t.{t}.{key} = {}", fmt_metric(value));
        }
    }
    for (label, pick) in [
        ("best_t_active", (|r: &EvalReport| r.diffusion.tau) as fn(&EvalReport) -> f64),
        ("best_t_active_truth", |r: &EvalReport| r.diffusion.tau_truth),
    ] {
        let best = rows
            .iter()
            .filter(|(_, r)| pick(r).is_finite())
            .max_by(|a, b| pick(&a.1).total_cmp(&pick(&b.1)));
        if let Some((t, _)) = best {
            let _ = writeln!(kv, "{label} = {t}");
        }
    }
    write_file(&out.join(METRICS_FILE), &table)?;
    write_file(&out.join(REPORT_FILE), &kv)?;
    print!("{table}");
    Ok(())
}

fn short(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.4}")
    }
}

fn schedule_cmd(
    t_base: usize,
    t_active: Option<usize>,
    beta_start: f64,
    beta_end: f64,
    out: Option<&Path>,
) -> Result<()> {
    let active = t_active.unwrap_or(t_base.min(TrainConfig::default().t_active).max(1));
    let schedule: NoiseSchedule = build_schedule(t_base, beta_start, beta_end, active)?;
    log::info!("t_base {t_base}, t_active {active}");
    let table = schedule.to_tsv();
    match out {
        Some(path) => write_file(path, &table),
        None => {
            print!("{table}");
            Ok(())
        }
    }
}

fn convert_cmd(
    check: Option<&Path>,
    input: Option<&Path>,
    out: Option<&Path>,
    tvsum_anno: Option<&Path>,
    converter: Option<String>,
) -> Result<()> {
    let dir = match (input, check, out) {
        (Some(input), _, Some(out)) => {
            let program = converter
                .or_else(|| std::env::var(CONVERTER_ENV).ok())
                .unwrap_or_else(|| "diffsumm-convert".to_string());
            let mut cmd = Process::new(&program);
            cmd.arg("--in").arg(input).arg("--out").arg(out);
            if let Some(anno) = tvsum_anno {
                cmd.arg("--tvsum-anno").arg(anno);
            }
            log::info!("running converter `{program}`");
            let status = cmd.status().map_err(io_err(Path::new(&program)))?;
            if !status.success() {
                return Err(Error::Io {
                    path: PathBuf::from(&program),
                    source: std::io::Error::other(format!("converter exited with {status}")),
                });
            }
            out.to_path_buf()
        }
        (Some(_), _, None) => return Err(Error::Config("convert --in needs --out".into())),
        (None, Some(check), _) => check.to_path_buf(),
        (None, None, _) => return Err(Error::Config("convert needs --check DIR or --in FILE --out DIR".into())),
    };
    let dataset = load_dataset(&dir)?;
    let frames: usize = dataset.videos.iter().map(|v| v.n_frames()).sum();
    let annotators: Vec<usize> = dataset.videos.iter().map(|v| v.annotations.len()).collect();
    let with_summaries = dataset.videos.iter().filter(|v| v.user_summaries.is_some()).count();
    println!("dataset = {}", dataset.name);
    println!("directory = {}", dir.display());
    println!("d_feature = {}", dataset.d_feature);
    println!("n_videos = {}", dataset.videos.len());
    println!("n_frames = {frames}");
    println!(
        "annotations_per_video = {}..{}",
        annotators.iter().min().copied().unwrap_or(0),
        annotators.iter().max().copied().unwrap_or(0)
    );
    println!("videos_with_user_summaries = {with_summaries}");
    println!("status = ok");
    Ok(())
}
