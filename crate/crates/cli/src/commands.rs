use std::collections::HashMap;
use std::path::Path;

use anyhow::{Context, Result};
use fome::model::{param_specs, AttentionScale, Fome, ModelConfig};
use fome::preprocess::{preprocess_pipeline, PatchGrid, PreprocessConfig};
use fome::signal::{generate_synthetic, write_recording_to, Gaussian, RecordingFormat, SyntheticSpec, ToneComponent};
use fome::spectral::{band_powers_with, BandScheme, Taper, BAND_NAMES};
use fome::tensor::{read_checkpoint, write_checkpoint, CheckpointDtype};
use fome::train::{
    classification_metrics, finetune_classify_on, finetune_forecast_on, impute_on, pretrain, ForecastSample,
    ImputeSample, LabeledSample, LossRecord, LossScope, MaskMode, MaskPlan, MetricsReport, TrainConfig,
};
use fome::Error;
use serde::Deserialize;
use serde_json::json;

use crate::data::{decode_grids, decode_recording, samples_of, windows_of, Grouped, Manifest};
use crate::run::{sidecar, Run};
use crate::*;

pub fn dispatch(cli: Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(Error::Config("--threads must be at least 1".into()).into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .context("starting the thread pool")?;
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let name = match &cli.command {
        Command::Synth(_) => "synth",
        Command::Preprocess(_) => "preprocess",
        Command::Spectra(_) => "spectra",
        Command::Pretrain(_) => "pretrain",
        Command::Finetune(FinetuneTask::Classify { .. }) => "finetune classify",
        Command::Finetune(FinetuneTask::Forecast { .. }) => "finetune forecast",
        Command::Finetune(FinetuneTask::Impute { .. }) => "finetune impute",
        Command::Eval(_) => "eval",
        Command::InspectCheckpoint(_) => "inspect-checkpoint",
    };
    let mut run = Run::new(name, argv, cli.threads);
    match &cli.command {
        Command::Synth(a) => synth(&mut run, a)?,
        Command::Preprocess(a) => preprocess(&mut run, a)?,
        Command::Spectra(a) => spectra(&mut run, a)?,
        Command::Pretrain(a) => pretrain_cmd(&mut run, a)?,
        Command::Finetune(t) => finetune(&mut run, t)?,
        Command::Eval(a) => eval(&mut run, a)?,
        Command::InspectCheckpoint(a) => inspect(&mut run, a)?,
    }
    run.finish(cli.run_manifest.as_deref())
}

fn file_manifest(run: &mut Run, out: &str) {
    if out != "-" {
        run.default_manifest_path = Some(sidecar(Path::new(out), ".run.json"));
    }
}

fn synth(run: &mut Run, a: &SynthArgs) -> Result<()> {
    let mut components = Vec::new();
    for t in &a.tones {
        let channels: Vec<usize> = match t.channel {
            Some(c) => vec![c],
            None => (0..a.channels).collect(),
        };
        components.extend(channels.into_iter().map(|channel| ToneComponent {
            channel,
            frequency_hz: t.frequency_hz,
            amplitude: t.amplitude,
            phase_rad: t.phase_rad,
        }));
    }
    let spec = SyntheticSpec {
        channels: a.channels,
        components,
        noise_std: a.noise,
        duration_s: a.seconds,
        sample_rate_hz: a.rate,
        seed: a.seed,
    };
    let format = match a.format {
        Some(FileFormat::Csv) => RecordingFormat::Csv,
        Some(FileFormat::Binary) => RecordingFormat::Binary,
        None if a.out.ends_with(".csv") => RecordingFormat::Csv,
        None => RecordingFormat::Binary,
    };
    run.manifest.seed = Some(a.seed);
    run.manifest.config = json!({ "synthetic": spec, "format": format!("{format:?}").to_lowercase() });
    let r = generate_synthetic(&spec)?;
    let mut bytes = Vec::new();
    write_recording_to(&r, &mut bytes, format)?;
    run.write(&a.out, &bytes)?;
    file_manifest(run, &a.out);
    Ok(())
}

fn stem(path: &str) -> String {
    if path == "-" {
        return "stdin".into();
    }
    Path::new(path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.into())
}

fn preprocess(run: &mut Run, a: &PreprocessArgs) -> Result<()> {
    let cfg = PreprocessConfig {
        notch_hz: a.notch,
        band_lo_hz: a.band.0,
        band_hi_hz: a.band.1,
        target_rate_hz: a.rate,
        window_len_samples: a.window,
        patch_len: a.patch_len.unwrap_or(a.window),
        ..PreprocessConfig::default()
    };
    cfg.validate()?;
    run.manifest.config = json!({ "preprocess": cfg });
    let bytes = run.read(&a.input)?;
    let r = decode_recording(&bytes, &stem(&a.input))?;
    let grid = preprocess_pipeline(&r, &cfg)?;
    log::info!(
        "{} channels, {} patches of {} samples",
        grid.channels(),
        grid.patches(),
        grid.patch_len()
    );
    let mut out = Vec::new();
    grid.write_to(&mut out)?;
    run.write(&a.out, &out)?;
    file_manifest(run, &a.out);
    Ok(())
}

fn spectra(run: &mut Run, a: &SpectraArgs) -> Result<()> {
    let taper = match a.taper {
        TaperArg::None => Taper::None,
        TaperArg::Hann => Taper::Hann,
    };
    run.manifest.config = json!({ "taper": format!("{taper:?}").to_lowercase(), "bands": BAND_NAMES });
    let bytes = run.read(&a.input)?;
    let grids = decode_grids(&bytes)?;
    if grids.len() != 1 {
        return Err(Error::InvalidData(format!("spectra takes one grid, got {}", grids.len())).into());
    }
    let bands = band_powers_with(&grids[0], &BandScheme::default(), taper)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["channel".to_string(), "patch".to_string()];
    header.extend(BAND_NAMES.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for c in 0..bands.channels() {
        for p in 0..bands.patches() {
            let mut row = vec![c.to_string(), p.to_string()];
            row.extend(bands.at(c, p).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
    }
    let out = w.into_inner().map_err(|e| e.into_error())?;
    run.write(&a.out, &out)?;
    file_manifest(run, &a.out);
    Ok(())
}

fn model_config(run: &mut Run, a: &ModelArgs, patch_len: usize) -> Result<ModelConfig> {
    let mut cfg = match &a.config {
        Some(path) => ModelConfig::from_kv(&run.read_text(path)?)?,
        None => ModelConfig::preset(&a.preset)?,
    };
    cfg.patch_len = patch_len;
    match a.scale {
        Some(ScaleArg::D) => cfg.attention_scale = AttentionScale::D,
        Some(ScaleArg::Dk) => cfg.attention_scale = AttentionScale::Dk,
        None => {}
    }
    for &ab in &a.ablate {
        cfg = cfg.with_ablation(ab);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match a.steps {
        Some(n) => TrainConfig::with_steps(n),
        None => TrainConfig::default(),
    };
    cfg.mask_ratio = a.mask_ratio;
    cfg.mask_mode = a.mask_mode;
    cfg.loss_scope = if a.loss_all { LossScope::All } else { LossScope::MaskedOnly };
    if let Some(lr) = a.lr {
        cfg.lr.peak = lr;
    }
    cfg.batch_size = a.batch_size;
    cfg.grad_accum = a.grad_accum;
    cfg.patches_per_sample = a.patches_per_sample;
    cfg.seed = a.seed;
    cfg.checkpoint_every = a.checkpoint_every;
    cfg.eval_every = a.eval_every;
    cfg.validate()?;
    Ok(cfg)
}

fn dtype(a: DtypeArg) -> CheckpointDtype {
    match a {
        DtypeArg::F32 => CheckpointDtype::F32,
        DtypeArg::F64 => CheckpointDtype::F64,
    }
}

fn checkpoint_bytes(model: &Fome, dtype: CheckpointDtype) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    write_checkpoint(model.params(), &mut bytes, dtype)?;
    Ok(bytes)
}

fn save_model(run: &mut Run, out: &Path, model: &Fome, dtype: CheckpointDtype) -> Result<()> {
    run.write_path(out, &checkpoint_bytes(model, dtype)?)?;
    run.write_path(&sidecar(out, ".cfg"), model.config().to_kv().as_bytes())
}

fn load_model(run: &mut Run, path: &Path) -> Result<Fome> {
    let bytes = run.read_path(path)?;
    let cfg = ModelConfig::from_kv(&run.read_text(&sidecar(path, ".cfg"))?)?;
    Ok(Fome::from_checkpoint(cfg, read_checkpoint(&mut &bytes[..])?)?)
}

fn loss_csv(trace: &[LossRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in trace {
        w.serialize(r)?;
    }
    if trace.is_empty() {
        w.write_record(["step", "lr", "loss"])?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

fn same_patch_len<'a>(grids: impl IntoIterator<Item = &'a PatchGrid>) -> Result<usize> {
    let mut len = None;
    for g in grids {
        match len {
            None => len = Some(g.patch_len()),
            Some(l) if l != g.patch_len() => {
                return Err(Error::InvalidData(format!("mixed patch lengths {l} and {}", g.patch_len())).into())
            }
            Some(_) => {}
        }
    }
    len.ok_or_else(|| Error::Empty("no input grids".into()).into())
}

fn pretrain_cmd(run: &mut Run, a: &PretrainArgs) -> Result<()> {
    let tcfg = train_config(&a.train)?;
    let mut grids = Vec::new();
    for input in &a.inputs {
        let bytes = run.read(input)?;
        grids.extend(decode_grids(&bytes)?);
    }
    let l = same_patch_len(&grids)?;
    let mcfg = model_config(run, &a.model, l)?;
    let mut corpus = Vec::new();
    for g in &grids {
        corpus.extend(samples_of(g, tcfg.patches_per_sample)?);
    }
    run.manifest.seed = Some(tcfg.seed);
    run.manifest.config = json!({ "model": mcfg, "train": tcfg, "grids": grids.len(), "samples": corpus.len() });
    log::info!("pre-training on {} samples for {} steps", corpus.len(), tcfg.steps);

    let dt = dtype(a.train.dtype);
    let mut model = Fome::new(mcfg, tcfg.seed)?;
    let trace = pretrain(&mut model, &corpus, &tcfg, |step, m| {
        log::info!("checkpoint at step {step}");
        let bytes = checkpoint_bytes(m, dt).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        std::fs::write(&a.out, bytes)?;
        Ok(())
    })?;

    save_model(run, &a.out, &model, dt)?;
    let loss_path = a.loss_csv.clone().unwrap_or_else(|| sidecar(&a.out, ".loss.csv"));
    run.write_path(&loss_path, &loss_csv(&trace)?)?;
    run.default_manifest_path = Some(sidecar(&a.out, ".run.json"));
    Ok(())
}

fn finetune(run: &mut Run, task: &FinetuneTask) -> Result<()> {
    let common = match task {
        FinetuneTask::Classify { common, .. }
        | FinetuneTask::Forecast { common, .. }
        | FinetuneTask::Impute { common, .. } => common,
    };
    let tcfg = train_config(&common.train)?;
    let mut model = load_model(run, &common.checkpoint)?;
    let manifest = Manifest::load(run, &common.manifest)?;
    let splits = manifest.splits()?;
    let mut per_row = Vec::new();
    for row in &manifest.rows {
        let bytes = run.read_path(&manifest.resolve(row))?;
        per_row.push(decode_grids(&bytes)?);
    }
    run.manifest.seed = Some(tcfg.seed);
    let mode = common.mode;

    let done = match task {
        FinetuneTask::Classify { classes, .. } => {
            let labels = manifest.rows.iter().map(|r| r.label()).collect::<Result<Vec<_>>>()?;
            let n = classes.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
            let mut items = Vec::new();
            for (grids, &label) in per_row.iter().zip(&labels) {
                let mut row = Vec::new();
                for g in grids {
                    row.extend(
                        samples_of(g, tcfg.patches_per_sample)?
                            .into_iter()
                            .map(|sample| LabeledSample { sample, label }),
                    );
                }
                items.push(row);
            }
            let data = Grouped::from_rows(items, splits);
            run.manifest.config = json!({ "task": "classify", "classes": n, "mode": mode, "train": tcfg });
            finetune_classify_on(&mut model, data.splits(), &tcfg, n, mode)?
        }
        FinetuneTask::Forecast { context, horizon, .. } => {
            let mut items = Vec::new();
            for grids in &per_row {
                let mut row = Vec::new();
                for g in grids {
                    for w in windows_of(g, context + horizon)? {
                        row.push(ForecastSample::from_grid(&w, *context, *horizon)?);
                    }
                }
                items.push(row);
            }
            let data = Grouped::from_rows(items, splits);
            run.manifest.config = json!({
                "task": "forecast", "context": context, "horizon": horizon, "mode": mode, "train": tcfg,
            });
            finetune_forecast_on(&mut model, data.splits(), &tcfg, *context, *horizon, mode)?
        }
        FinetuneTask::Impute { missing_ratio, .. } => {
            if !(0.0..1.0).contains(missing_ratio) {
                return Err(Error::Config(format!("missing ratio {missing_ratio} outside [0, 1)")).into());
            }
            let mut rng = Gaussian::new(tcfg.seed ^ 0x1A9E);
            let mut items = Vec::new();
            for grids in &per_row {
                let mut row = Vec::new();
                for g in grids {
                    for w in windows_of(g, tcfg.patches_per_sample)? {
                        row.push(hide_patches(w, *missing_ratio, &mut rng)?);
                    }
                }
                items.push(row);
            }
            let data = Grouped::from_rows(items, splits);
            run.manifest.config = json!({ "task": "impute", "missing_ratio": missing_ratio, "train": tcfg });
            impute_on(&mut model, data.splits(), &tcfg)?
        }
    };

    save_model(run, &common.out, &model, dtype(common.train.dtype))?;
    let metrics_path = common.metrics.clone().unwrap_or_else(|| sidecar(&common.out, ".metrics.json"));
    run.write_path(&metrics_path, metrics_json(&done.report)?.as_bytes())?;
    let loss_path = common.loss_csv.clone().unwrap_or_else(|| sidecar(&common.out, ".loss.csv"));
    run.write_path(&loss_path, &loss_csv(&done.trace)?)?;
    run.default_manifest_path = Some(sidecar(&common.out, ".run.json"));
    Ok(())
}

/// Hides `ratio` of the patch slots, drawn like a slot mask.
fn hide_patches(grid: PatchGrid, ratio: f64, rng: &mut Gaussian) -> Result<ImputeSample> {
    let (c, p, l) = (grid.channels(), grid.patches(), grid.patch_len());
    let mut missing = vec![false; c * p * l];
    if ratio > 0.0 {
        for &(ch, q) in MaskPlan::sample(c, p, ratio, MaskMode::Slot, rng)?.slots() {
            let start = (ch * p + q) * l;
            missing[start..start + l].fill(true);
        }
    }
    Ok(ImputeSample::new(grid, &missing)?)
}

fn metrics_json(report: &MetricsReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)? + "\n")
}

#[derive(Deserialize)]
struct PredRow {
    path: String,
    #[serde(alias = "label")]
    pred: usize,
}

fn eval(run: &mut Run, a: &EvalArgs) -> Result<()> {
    let manifest = Manifest::load(run, &a.manifest)?;
    let rows: Vec<_> = manifest
        .rows
        .iter()
        .filter(|r| a.split.as_deref().is_none_or(|s| r.split.as_deref().map(str::trim) == Some(s)))
        .collect();
    if rows.is_empty() {
        return Err(Error::Empty("no manifest rows to evaluate".into()).into());
    }
    let labels = rows.iter().map(|r| r.label()).collect::<Result<Vec<_>>>()?;

    let (preds, model_classes) = match (&a.preds, &a.checkpoint) {
        (Some(path), _) => {
            let bytes = run.read_path(path)?;
            let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(&bytes[..]);
            let mut by_path = HashMap::new();
            for rec in reader.deserialize::<PredRow>() {
                let rec = rec.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
                if by_path.insert(rec.path.clone(), rec.pred).is_some() {
                    return Err(Error::InvalidData(format!("duplicate prediction for {}", rec.path)).into());
                }
            }
            let preds = rows
                .iter()
                .map(|r| {
                    by_path
                        .get(&r.path)
                        .copied()
                        .ok_or_else(|| Error::InvalidData(format!("no prediction for {}", r.path)).into())
                })
                .collect::<Result<Vec<_>>>()?;
            (preds, None)
        }
        (None, Some(ckpt)) => {
            let model = load_model(run, ckpt)?;
            let k = model
                .config()
                .n_classes
                .ok_or_else(|| Error::Config("checkpoint has no classification head".into()))?;
            let mut preds = Vec::new();
            for r in &rows {
                let bytes = run.read_path(&manifest.resolve(r))?;
                let mut sum = vec![0.0; k];
                for g in decode_grids(&bytes)? {
                    for s in samples_of(&g, a.patches_per_sample)? {
                        for (acc, p) in sum.iter_mut().zip(model.predict_proba(&s.grid, &s.bands)?) {
                            *acc += p;
                        }
                    }
                }
                let best = (0..k).max_by(|&i, &j| sum[i].total_cmp(&sum[j]).then(j.cmp(&i))).unwrap_or(0);
                preds.push(best);
            }
            (preds, Some(k))
        }
        (None, None) => unreachable!("clap requires --preds or --checkpoint"),
    };

    let seen = labels.iter().chain(&preds).max().map_or(1, |m| m + 1);
    let n = a.classes.or(model_classes).unwrap_or(seen);
    run.manifest.config = json!({ "classes": n, "split": a.split, "rows": rows.len() });
    let report = MetricsReport::classification("eval", classification_metrics(&preds, &labels, n)?);
    run.write(&a.out, metrics_json(&report)?.as_bytes())?;
    if let Some(path) = &a.preds_out {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["path", "pred"])?;
        for (r, p) in rows.iter().zip(&preds) {
            w.write_record([r.path.as_str(), &p.to_string()])?;
        }
        run.write_path(path, &w.into_inner().map_err(|e| e.into_error())?)?;
    }
    file_manifest(run, &a.out);
    Ok(())
}

fn inspect(run: &mut Run, a: &InspectArgs) -> Result<()> {
    let bytes = run.read_path(&a.input)?;
    let tensors = read_checkpoint(&mut &bytes[..])?;
    let default_cfg = sidecar(&a.input, ".cfg");
    let cfg_path = a.config.clone().or_else(|| default_cfg.exists().then_some(default_cfg));

    let params: Vec<_> = tensors
        .iter()
        .map(|(name, t)| json!({ "name": name, "shape": t.shape(), "elements": t.len() }))
        .collect();
    let total: usize = tensors.iter().map(|(_, t)| t.len()).sum();
    let mut out = json!({
        "checkpoint": a.input,
        "tensors": tensors.len(),
        "total_elements": total,
        "parameters": params,
        "config": cfg_path,
    });
    if let Some(path) = &cfg_path {
        let cfg = ModelConfig::from_kv(&run.read_text(path)?)?;
        let found: HashMap<&str, &[usize]> = tensors.iter().map(|(n, t)| (n.as_str(), t.shape())).collect();
        let specs = param_specs(&cfg);
        let mut missing = Vec::new();
        let mut mismatched = Vec::new();
        for s in &specs {
            match found.get(s.name.as_str()) {
                None => missing.push(s.name.clone()),
                Some(shape) if *shape != s.shape.as_slice() => {
                    mismatched.push(json!({ "name": s.name, "expected": s.shape, "found": shape }))
                }
                Some(_) => {}
            }
        }
        let unexpected: Vec<&str> = tensors
            .iter()
            .map(|(n, _)| n.as_str())
            .filter(|n| !specs.iter().any(|s| s.name == *n))
            .collect();
        out["matches_config"] = json!(missing.is_empty() && mismatched.is_empty() && unexpected.is_empty());
        out["missing"] = json!(missing);
        out["unexpected"] = json!(unexpected);
        out["shape_mismatches"] = json!(mismatched);
    }
    run.manifest.config = json!({ "config": cfg_path });
    run.write(&a.out, (serde_json::to_string_pretty(&out)? + "\n").as_bytes())?;
    file_manifest(run, &a.out);
    Ok(())
}
