//! Photon power by subtraction, and the inference latency benchmark.

use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{MachineParameters, PowerProfile, Sample, StandardizedParams};
use crate::error::{Error, Result};
use crate::rng;
use crate::training::TrainedModel;

/// Eval-mode prediction of the lasing-off profile for one shot.
pub fn predict_lasing_off(model: &TrainedModel, params: &StandardizedParams) -> Result<PowerProfile> {
    let d = model.dims();
    if params.len() != d.d_in {
        return Err(Error::shape("standardized parameters", d.d_in, params.len()));
    }
    let mut hidden = vec![0.0; d.hidden];
    let mut out = vec![0.0; d.d_out];
    model.mlp.predict_into(params.values(), &mut hidden, &mut out)?;
    Ok(PowerProfile::new(out, model.time_bin_fs))
}

/// Standardizes raw readings with the model's stored statistics, then predicts.
pub fn predict_from_raw(model: &TrainedModel, params: &MachineParameters) -> Result<PowerProfile> {
    predict_lasing_off(model, &model.standardize(params)?)
}

/// Which model and shot a photon profile came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub model_id: String,
    pub shot_index: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotonPower {
    pub power: Vec<f64>,
    pub time_bin_fs: f64,
    pub provenance: Provenance,
}

fn same_binning(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

/// Element-wise predicted lasing-off minus measured lasing-on. Negative bins
/// are kept as they are.
pub fn photon_power(pred_lasing_off: &PowerProfile, measured_lasing_on: &PowerProfile) -> Result<PowerProfile> {
    if pred_lasing_off.len() != measured_lasing_on.len() {
        return Err(Error::shape("photon_power profiles", pred_lasing_off.len(), measured_lasing_on.len()));
    }
    if !same_binning(pred_lasing_off.time_bin_fs, measured_lasing_on.time_bin_fs) {
        return Err(Error::InvalidArgument(format!(
            "time binning differs: {} fs vs {} fs",
            pred_lasing_off.time_bin_fs, measured_lasing_on.time_bin_fs
        )));
    }
    let power = pred_lasing_off
        .power
        .iter()
        .zip(&measured_lasing_on.power)
        .map(|(p, m)| p - m)
        .collect();
    Ok(PowerProfile::new(power, pred_lasing_off.time_bin_fs))
}

/// Photon power for one measured lasing-on shot.
pub fn reconstruct_shot(model: &TrainedModel, model_id: &str, shot: &Sample) -> Result<PhotonPower> {
    let pred = predict_from_raw(model, &shot.params)?;
    let diff = photon_power(&pred, &shot.profile)?;
    Ok(PhotonPower {
        power: diff.power,
        time_bin_fs: diff.time_bin_fs,
        provenance: Provenance { model_id: model_id.to_string(), shot_index: shot.shot_index },
    })
}

/// Preallocated buffers for allocation-free single-shot inference.
#[derive(Debug, Clone)]
pub struct InferenceScratch {
    standardized: Vec<f64>,
    hidden: Vec<f64>,
    pub out: Vec<f64>,
}

impl InferenceScratch {
    pub fn new(model: &TrainedModel) -> Self {
        let d = model.dims();
        Self { standardized: vec![0.0; d.d_in], hidden: vec![0.0; d.hidden], out: vec![0.0; d.d_out] }
    }

    /// Standardizes `raw` and predicts into `self.out`. Does not allocate.
    pub fn predict(&mut self, model: &TrainedModel, raw: &[f64]) -> Result<&[f64]> {
        match &model.standardization {
            Some(s) => s.apply_into(raw, &mut self.standardized)?,
            None => {
                if raw.len() != self.standardized.len() {
                    return Err(Error::shape("machine parameters", self.standardized.len(), raw.len()));
                }
                self.standardized.copy_from_slice(raw);
            }
        }
        model.mlp.predict_into(&self.standardized, &mut self.hidden, &mut self.out)?;
        Ok(&self.out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub latencies_us: Vec<f64>,
    pub mean_us: f64,
    pub std_us: f64,
    pub n_runs: usize,
    pub warmup_runs: usize,
    pub threads: usize,
    pub cpu_model: String,
    pub dims: [usize; 3],
}

pub const MIN_TIMED_RUNS: usize = 1000;
pub const MIN_WARMUP_RUNS: usize = 100;

/// Fixed pseudo-random raw input for benchmarking, drawn around the stored
/// means and spreads.
pub fn bench_input(model: &TrainedModel) -> Vec<f64> {
    let mut rng = rng::stream(0, rng::tag::BENCH, 0);
    let d_in = model.dims().d_in;
    (0..d_in)
        .map(|j| {
            let z: f64 = StandardNormal.sample(&mut rng);
            match &model.standardization {
                Some(s) => s.mean[j] + s.std[j] * z,
                None => z,
            }
        })
        .collect()
}

/// Times one prediction per slot of `latencies_us`. Performs no heap
/// allocation once `scratch` exists.
pub fn timed_loop(model: &TrainedModel, scratch: &mut InferenceScratch, input: &[f64], latencies_us: &mut [f64]) -> Result<()> {
    for slot in latencies_us.iter_mut() {
        let t0 = Instant::now();
        let out = scratch.predict(model, input)?;
        std::hint::black_box(out);
        *slot = t0.elapsed().as_secs_f64() * 1e6;
    }
    Ok(())
}

/// Single-threaded latency benchmark. Run counts are raised to at least
/// 1000 timed and 100 warmup runs.
pub fn bench_inference(model: &TrainedModel, n_runs: usize, warmup: usize) -> Result<LatencyReport> {
    let n_runs = n_runs.max(MIN_TIMED_RUNS);
    let warmup = warmup.max(MIN_WARMUP_RUNS);
    let input = bench_input(model);
    let mut scratch = InferenceScratch::new(model);
    let mut warm = vec![0.0; warmup];
    timed_loop(model, &mut scratch, &input, &mut warm)?;
    let mut latencies = vec![0.0; n_runs];
    timed_loop(model, &mut scratch, &input, &mut latencies)?;
    let n = n_runs as f64;
    let mean = latencies.iter().sum::<f64>() / n;
    let var = latencies.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / (n - 1.0);
    let d = model.dims();
    Ok(LatencyReport {
        latencies_us: latencies,
        mean_us: mean,
        std_us: var.sqrt(),
        n_runs,
        warmup_runs: warmup,
        threads: 1,
        cpu_model: cpu_model(),
        dims: [d.d_in, d.hidden, d.d_out],
    })
}

/// CPU model string from `/proc/cpuinfo`, or `"unknown"`.
pub fn cpu_model() -> String {
    std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        })
        .unwrap_or_else(|| "unknown".to_string())
}
