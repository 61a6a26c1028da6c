use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use ndarray::Array2;
use serde::Serialize;
use vprd::config::Config;
use vprd::data::{split_dataset, Dataset, Sample};
use vprd::evaluation::evaluate;
use vprd::io::{self, RunManifest};
use vprd::mlp::LossKind;
use vprd::preprocess::energy_weighted_projection;
use vprd::reconstruct::{bench_inference, predict_from_raw, reconstruct_shot};
use vprd::synthetic::{draw_jitter, gen_dataset, phase_image, Mapping};
use vprd::training::train;
use vprd::{pipeline, preprocess};

use crate::{
    BenchArgs, Command, Common, EvaluateArgs, LossArg, MappingArg, PredictArgs, PreprocessArgs, ReconstructArgs, RunArgs,
    SynthArgs, TrainArgs,
};

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Preprocess(a) => preprocess_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Predict(a) => predict(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Bench(a) => bench(a),
        Command::Run(a) => run(a),
    }
}

/// Config from defaults, `VPRD_SEED` and the file, then the seed flag.
fn load_config(common: &Common) -> Result<Config> {
    let mut cfg = Config::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn validate(cfg: &Config) -> Result<()> {
    for w in cfg.validate()? {
        eprintln!("warning: {w}");
    }
    Ok(())
}

/// `<dir>/<stem>.<suffix>` next to a file output.
fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.{suffix}"))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

/// Collects inputs and outputs of one command and writes its manifest and
/// resolved config.
struct Run {
    manifest: RunManifest,
    cfg_toml: String,
    started: Instant,
}

impl Run {
    fn new(command: &str, cfg: &Config) -> Result<Self> {
        Ok(Self {
            manifest: RunManifest::new(command, serde_json::to_value(cfg)?),
            cfg_toml: cfg.to_toml()?,
            started: Instant::now(),
        })
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        Ok(self.manifest.input(path)?)
    }

    /// Writes the config to `config_path`, then the manifest listing every
    /// output including the config.
    fn finish(mut self, outputs: &[&Path], config_path: &Path, manifest_path: &Path) -> Result<()> {
        fs::write(config_path, &self.cfg_toml).with_context(|| format!("writing {}", config_path.display()))?;
        for o in outputs {
            self.manifest.output(o)?;
        }
        self.manifest.output(config_path)?;
        let duration = self.started.elapsed().as_secs_f64();
        self.manifest.write(manifest_path, duration)?;
        Ok(())
    }

    fn finish_dir(self, dir: &Path, outputs: &[&Path]) -> Result<()> {
        self.finish(outputs, &dir.join("config.toml"), &dir.join("manifest.json"))
    }

    fn finish_file(self, out: &Path, outputs: &[&Path]) -> Result<()> {
        self.finish(outputs, &sidecar(out, "config.toml"), &sidecar(out, "manifest.json"))
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    let s = &mut cfg.synth;
    if let Some(v) = a.n_samples {
        s.n_samples = v;
    }
    if let Some(v) = a.d_out {
        s.d_out = v;
    }
    if let Some(m) = a.mapping {
        s.mapping = match m {
            MappingArg::Linear => Mapping::Linear,
            MappingArg::Bump => Mapping::Bump,
        };
    }
    if let Some(v) = a.jitter_std {
        s.jitter_std_px = v;
    }
    if let Some(v) = a.noise_std {
        s.noise_std = v;
    }
    validate(&cfg)?;
    let run = Run::new("synth", &cfg)?;
    let (dataset, truth) = gen_dataset(&cfg.synth)?;
    io::write_dataset(&a.out, &dataset, "synthetic lasing-off profiles")?;
    let truth_path = a.out.join("ground_truth.json");
    io::write_json(&truth_path, &truth)?;
    let data_files: Vec<PathBuf> = ["params.csv", "profiles.bin", "meta.json"].iter().map(|f| a.out.join(f)).collect();
    let mut outputs: Vec<&Path> = data_files.iter().map(PathBuf::as_path).collect();
    outputs.push(&truth_path);

    if let Some(dir) = &a.images {
        let mut writer = io::PhaseImagesWriter::create(dir, dataset.param_names().to_vec())?;
        let mut shifts = Vec::with_capacity(dataset.len());
        for s in dataset.samples() {
            let shift = draw_jitter(&cfg.synth, s.shot_index);
            let image = phase_image(&cfg.synth, &s.profile, shift).with_context(|| format!("imaging shot {}", s.shot_index))?;
            writer.push(s.shot_index, &s.params, &image)?;
            shifts.push(shift);
        }
        writer.finish()?;
        io::write_json(&dir.join("jitter.json"), &shifts)?;
        outputs.push(dir);
    }
    run.finish_dir(&a.out, &outputs)?;
    eprintln!("wrote {} shots to {}", dataset.len(), a.out.display());
    Ok(())
}

fn preprocess_cmd(a: PreprocessArgs) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    let p = &mut cfg.preprocess;
    if let Some(v) = a.smooth_radius {
        p.smooth_radius = v;
    }
    if let Some(v) = a.padding {
        p.padding = v;
    }
    if let Some(v) = a.otsu_bins {
        p.otsu_bins = v;
    }
    validate(&cfg)?;
    let mut run = Run::new("preprocess", &cfg)?;
    run.input(&a.images)?;
    let images = io::PhaseImagesDir::open(&a.images)?;
    let table = io::read_params_csv(&a.images.join("params.csv"))?;
    let mut projected = Vec::with_capacity(images.len());
    let mut time_bin_fs = None;
    for i in 0..images.len() {
        let image = images.load(i)?;
        time_bin_fs.get_or_insert(image.time_calibration_fs_per_px);
        projected.push(energy_weighted_projection(&image)?);
    }
    let (profiles, report) = preprocess::preprocess_profiles(&projected, &cfg.preprocess)?;
    let samples = table
        .params
        .into_iter()
        .zip(table.shot_index)
        .zip(profiles)
        .map(|((params, shot_index), profile)| Sample { params, profile, shot_index })
        .collect();
    let dataset = Dataset::new(table.names, samples, time_bin_fs.unwrap_or(1.0))?;
    io::write_dataset(&a.out, &dataset, "projected, de-jittered and cropped phase-space images")?;
    let alignment = a.out.join("alignment.json");
    io::write_json(&alignment, &report)?;
    let files: Vec<PathBuf> = ["params.csv", "profiles.bin", "meta.json", "alignment.json"].iter().map(|f| a.out.join(f)).collect();
    let outputs: Vec<&Path> = files.iter().map(PathBuf::as_path).collect();
    run.finish_dir(&a.out, &outputs)?;
    eprintln!("wrote {} profiles of {} bins to {}", dataset.len(), dataset.d_out(), a.out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    let t = &mut cfg.train;
    if let Some(v) = a.hidden {
        t.hidden = v;
    }
    if let Some(v) = a.dropout {
        t.dropout = v;
    }
    if let Some(v) = a.lr {
        t.lr = v;
    }
    if let Some(v) = a.loss {
        t.loss = match v {
            LossArg::Mse => LossKind::Mse,
            LossArg::AntiMean => LossKind::AntiMean,
        };
    }
    if let Some(v) = a.alpha {
        t.alpha = v;
        if a.loss.is_none() && v > 0.0 {
            t.loss = LossKind::AntiMean;
        }
    }
    if let Some(v) = a.scheduler_factor {
        t.scheduler_factor = v;
    }
    if let Some(v) = a.scheduler_patience {
        t.scheduler_patience = v;
    }
    if let Some(v) = a.early_stop_patience {
        t.early_stop_patience = v;
    }
    if let Some(v) = a.max_steps {
        t.max_steps = v;
    }
    validate(&cfg)?;
    let mut run = Run::new("train", &cfg)?;
    run.input(&a.data)?;
    let dataset = io::read_dataset(&a.data)?;
    let split = split_dataset(dataset.len(), cfg.train.split_fractions, cfg.train.seed)?;
    let out = train(&dataset, &split, &cfg.train)?;
    ensure_parent(&a.out)?;
    io::write_checkpoint(&a.out, &out.model)?;
    let report = sidecar(&a.out, "report.json");
    io::write_json(&report, &out.report)?;
    let history = sidecar(&a.out, "loss.csv");
    io::write_loss_history(&history, &out.report)?;
    let split_path = sidecar(&a.out, "split.json");
    io::write_json(&split_path, &split)?;
    run.finish_file(&a.out, &[&a.out, &report, &history, &split_path])?;
    eprintln!(
        "trained {} steps (best {} with validation loss {:.6e}) in {:.1} s",
        out.report.steps, out.report.best_step, out.report.best_val_loss, out.report.duration_s
    );
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let cfg = load_config(&a.common)?;
    validate(&cfg)?;
    let mut run = Run::new("evaluate", &cfg)?;
    run.input(&a.model)?;
    run.input(&a.data)?;
    let model = io::read_checkpoint(&a.model)?;
    let dataset = io::read_dataset(&a.data)?;
    let indices: Vec<usize> = if a.all {
        (0..dataset.len()).collect()
    } else {
        split_dataset(dataset.len(), model.split_fractions, model.split_seed)?.test
    };
    let (errors, report) = evaluate(&model, &dataset, &indices, &model.label_mean, &cfg.eval)?;
    ensure_parent(&a.out)?;
    io::write_json(&a.out, &report)?;
    let csv = sidecar(&a.out, "errors.csv");
    io::write_errors_csv(&csv, &errors)?;
    run.finish_file(&a.out, &[&a.out, &csv])?;
    println!(
        "median MSE: prediction {:.4e}, mean {:.4e}, neighbor {:.4e}",
        report.prediction.median, report.mean.median, report.neighbor.median
    );
    for (name, outcome) in [("mean", &report.prediction_vs_mean), ("neighbor", &report.prediction_vs_neighbor)] {
        match outcome.result() {
            Some(r) => println!("prediction vs {name}: p (Bonferroni) = {:.3e}", r.p_bonferroni),
            None => println!("prediction vs {name}: indistinguishable"),
        }
    }
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let cfg = load_config(&a.common)?;
    let mut run = Run::new("predict", &cfg)?;
    run.input(&a.model)?;
    run.input(&a.params)?;
    let model = io::read_checkpoint(&a.model)?;
    let table = io::read_params_csv(&a.params)?;
    let d = model.dims();
    if table.names.len() != d.d_in {
        bail!("{} has {} parameter columns, the model expects {}", a.params.display(), table.names.len(), d.d_in);
    }
    let mut out = Array2::zeros((table.params.len(), d.d_out));
    for (i, p) in table.params.iter().enumerate() {
        let pred = predict_from_raw(&model, p).with_context(|| format!("row {i}"))?;
        out.row_mut(i).assign(&ndarray::ArrayView1::from(&pred.power));
    }
    ensure_parent(&a.out)?;
    io::write_matrix(&a.out, out.view())?;
    run.finish_file(&a.out, &[&a.out])?;
    eprintln!("predicted {} profiles", table.params.len());
    Ok(())
}

#[derive(Serialize)]
struct PhotonProvenance {
    model_id: String,
    time_bin_fs: f64,
    shot_index: Vec<u64>,
}

fn reconstruct(a: ReconstructArgs) -> Result<()> {
    let cfg = load_config(&a.common)?;
    let mut run = Run::new("reconstruct", &cfg)?;
    run.input(&a.model)?;
    run.input(&a.lasing_on)?;
    let model = io::read_checkpoint(&a.model)?;
    let model_id = io::model_id(&model)?;
    let shots = io::read_dataset(&a.lasing_on)?;
    let mut out = Array2::zeros((shots.len(), shots.d_out()));
    let mut shot_index = Vec::with_capacity(shots.len());
    for (i, s) in shots.samples().iter().enumerate() {
        let photon = reconstruct_shot(&model, &model_id, s).with_context(|| format!("shot {}", s.shot_index))?;
        out.row_mut(i).assign(&ndarray::ArrayView1::from(&photon.power));
        shot_index.push(photon.provenance.shot_index);
    }
    ensure_parent(&a.out)?;
    io::write_matrix(&a.out, out.view())?;
    let prov_path = sidecar(&a.out, "json");
    io::write_json(&prov_path, &PhotonProvenance { model_id, time_bin_fs: shots.time_bin_fs(), shot_index })?;
    run.finish_file(&a.out, &[&a.out, &prov_path])?;
    eprintln!("reconstructed {} shots", shots.len());
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let model = io::read_checkpoint(&a.model)?;
    let report = bench_inference(&model, a.runs, a.warmup)?;
    let bytes = io::to_json_bytes(&report)?;
    print!("{}", String::from_utf8(bytes.clone())?);
    if let Some(out) = &a.out {
        ensure_parent(out)?;
        fs::write(out, &bytes).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let cfg = load_config(&a.common)?;
    validate(&cfg)?;
    let rec = Run::new("run", &cfg)?;
    let out = pipeline::run(&cfg)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let summary = a.out.join("summary.json");
    io::write_json(&summary, &out.summary())?;
    let truth = a.out.join("ground_truth.json");
    io::write_json(&truth, &out.truth)?;
    let ckpt = a.out.join("model.ckpt");
    io::write_checkpoint(&ckpt, &out.trained.model)?;
    let history = a.out.join("loss.csv");
    io::write_loss_history(&history, &out.trained.report)?;
    let errors = a.out.join("errors.csv");
    io::write_errors_csv(&errors, &out.errors)?;
    rec.finish_dir(&a.out, &[&summary, &truth, &ckpt, &history, &errors])?;
    let r = &out.report;
    println!(
        "median MSE: prediction {:.4e}, mean {:.4e}, neighbor {:.4e}",
        r.prediction.median, r.mean.median, r.neighbor.median
    );
    Ok(())
}
