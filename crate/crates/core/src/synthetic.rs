//! Synthetic shots with a known parameters-to-profile mapping.
//!
//! Machine parameters are drawn as `x_j = nominal_j + spread_j · z_j` with
//! `z ~ N(0, I)`. Labels depend on the scaled deviations `z`:
//!
//! - `linear`: `y = A·z + b`, `A` entries `N(0, 1)·0.3/√d_in`, `b` entries
//!   `N(0, 1)·0.1 + 1`.
//! - `bump`: three unit-norm projections `u = P·z` set a Gaussian bump on
//!   the `d_out` bins,
//!   `y_k = a·exp(−½((k − c)/w)²)` with
//!   `c = d_out/2 + (d_out/20)·tanh(u₀)`,
//!   `w = (d_out/14)·exp(0.3·tanh(u₁))`,
//!   `a = 1 + 0.3·tanh(u₂)`.
//!
//! Gaussian noise of std `noise_std` is added to every bin; bump profiles are
//! then clamped at zero since they stand for charge.
//!
//! Every sample `i` draws from its own stream
//! `rng::stream(seed, tag::SYNTH_SAMPLE, i)` (23 normals: `z`, then one per
//! bin of noise), so generation order does not matter.

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{default_parameter_names, Dataset, MachineParameters, PowerProfile, Sample, DEFAULT_D_IN};
use crate::error::{Error, Result};
use crate::preprocess::{shift_zero_fill, PhaseImage};
use crate::rng::{self, Rng};

pub const NOMINAL_CHARGE_PC: f64 = 200.0;
pub const NOMINAL_ENERGY_MEV: f64 = 875.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mapping {
    Linear,
    #[default]
    Bump,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub d_in: usize,
    /// Profile width before any cropping.
    pub d_out: usize,
    pub seed: u64,
    pub noise_std: f64,
    pub jitter_std_px: f64,
    pub mapping: Mapping,
    pub nominal_charge_pc: f64,
    pub nominal_energy_mev: f64,
    pub time_bin_fs: f64,
    /// Energy rows of generated phase images.
    pub energy_rows: usize,
    pub energy_calibration_kev_per_px: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_samples: 2826,
            d_in: DEFAULT_D_IN,
            d_out: 700,
            seed: 42,
            noise_std: 0.02,
            jitter_std_px: 15.0,
            mapping: Mapping::Bump,
            nominal_charge_pc: NOMINAL_CHARGE_PC,
            nominal_energy_mev: NOMINAL_ENERGY_MEV,
            time_bin_fs: 1.13,
            energy_rows: 16,
            energy_calibration_kev_per_px: 21.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.d_in == 0 || self.d_out == 0 || self.energy_rows == 0 {
            return Err(Error::Config("synthetic sizes must be positive".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("noise_std must be non-negative, got {}", self.noise_std)));
        }
        if !(self.jitter_std_px >= 0.0 && self.jitter_std_px.is_finite()) {
            return Err(Error::Config(format!("jitter_std_px must be non-negative, got {}", self.jitter_std_px)));
        }
        if !(self.time_bin_fs > 0.0 && self.nominal_charge_pc > 0.0 && self.nominal_energy_mev > 0.0) {
            return Err(Error::Config("calibrations and nominal scales must be positive".into()));
        }
        Ok(())
    }
}

/// Nominal value and spread of every input channel.
///
/// With the default 22-channel layout the scales follow the channel kind
/// (pyroelectric counts, charge-normalized counts, arrival times in ps,
/// charges in pC, energy in MeV, positions in mm); other widths use unit
/// nominals with 2 % spread.
pub fn parameter_scales(d_in: usize, charge_pc: f64, energy_mev: f64) -> Vec<(f64, f64)> {
    if d_in != DEFAULT_D_IN {
        return vec![(1.0, 0.02); d_in];
    }
    let bcm = [1.2, 0.6, 2.4, 1.1, 3.0, 1.5];
    let mut scales = Vec::with_capacity(d_in);
    for &raw in &bcm {
        scales.push((raw, 0.03 * raw));
        scales.push((raw / charge_pc, 0.03 * raw / charge_pc));
    }
    for t in [10.0, 12.0, 20.0, 25.0, 30.0] {
        scales.push((t, 0.05));
    }
    scales.push((charge_pc, 0.01 * charge_pc));
    scales.push((0.97 * charge_pc, 0.01 * charge_pc));
    scales.push((energy_mev, 0.001 * energy_mev));
    scales.push((0.0, 0.1));
    scales.push((0.0, 0.1));
    scales
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mapping", rename_all = "snake_case")]
pub enum MappingParams {
    Linear {
        /// `d_out × d_in`, row-major.
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
    },
    Bump {
        /// Three unit-norm rows of length `d_in`.
        projections: Vec<Vec<f64>>,
    },
}

/// Everything needed to recompute every noiseless label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub nominal: Vec<f64>,
    pub spread: Vec<f64>,
    pub d_out: usize,
    pub params: MappingParams,
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

impl GroundTruth {
    pub fn new(cfg: &SynthConfig) -> Self {
        let mut rng = rng::stream(cfg.seed, rng::tag::SYNTH_TRUTH, 0);
        let (nominal, spread) = parameter_scales(cfg.d_in, cfg.nominal_charge_pc, cfg.nominal_energy_mev)
            .into_iter()
            .unzip();
        let params = match cfg.mapping {
            Mapping::Linear => {
                let scale = 0.3 / (cfg.d_in as f64).sqrt();
                let a = (0..cfg.d_out)
                    .map(|_| (0..cfg.d_in).map(|_| normal(&mut rng) * scale).collect())
                    .collect();
                let b = (0..cfg.d_out).map(|_| normal(&mut rng) * 0.1 + 1.0).collect();
                MappingParams::Linear { a, b }
            }
            Mapping::Bump => {
                let projections = (0..3)
                    .map(|_| {
                        let v: Vec<f64> = (0..cfg.d_in).map(|_| normal(&mut rng)).collect();
                        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                        v.into_iter().map(|x| x / norm).collect()
                    })
                    .collect();
                MappingParams::Bump { projections }
            }
        };
        Self { nominal, spread, d_out: cfg.d_out, params }
    }

    /// Scaled deviations `z_j = (x_j − nominal_j) / spread_j`.
    pub fn latent(&self, params: &MachineParameters) -> Vec<f64> {
        params
            .values()
            .iter()
            .zip(&self.nominal)
            .zip(&self.spread)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    /// Noiseless label for one shot.
    pub fn label(&self, params: &MachineParameters) -> Vec<f64> {
        let z = self.latent(params);
        let dot = |row: &[f64]| row.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
        match &self.params {
            MappingParams::Linear { a, b } => a.iter().zip(b).map(|(row, bias)| dot(row) + bias).collect(),
            MappingParams::Bump { projections } => {
                let u: Vec<f64> = projections.iter().map(|p| dot(p)).collect();
                let d = self.d_out as f64;
                let center = d / 2.0 + d / 20.0 * u[0].tanh();
                let width = d / 14.0 * (0.3 * u[1].tanh()).exp();
                let amplitude = 1.0 + 0.3 * u[2].tanh();
                (0..self.d_out)
                    .map(|k| {
                        let x = (k as f64 - center) / width;
                        amplitude * (-0.5 * x * x).exp()
                    })
                    .collect()
            }
        }
    }
}

/// Generates the dataset and the ground truth it was drawn from.
pub fn gen_dataset(cfg: &SynthConfig) -> Result<(Dataset, GroundTruth)> {
    cfg.validate()?;
    let truth = GroundTruth::new(cfg);
    let samples = (0..cfg.n_samples)
        .map(|i| {
            let mut rng = rng::stream(cfg.seed, rng::tag::SYNTH_SAMPLE, i as u64);
            let values = truth
                .nominal
                .iter()
                .zip(&truth.spread)
                .map(|(m, s)| m + s * normal(&mut rng))
                .collect();
            let params = MachineParameters::new(values)?;
            let mut label = truth.label(&params);
            if cfg.noise_std > 0.0 {
                label.iter_mut().for_each(|y| *y += cfg.noise_std * normal(&mut rng));
            }
            if cfg.mapping == Mapping::Bump {
                label.iter_mut().for_each(|y| *y = y.max(0.0));
            }
            Ok(Sample {
                params,
                profile: PowerProfile::new(label, cfg.time_bin_fs),
                shot_index: i as u64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let dataset = Dataset::new(default_parameter_names(cfg.d_in), samples, cfg.time_bin_fs)?;
    Ok((dataset, truth))
}

/// Energy axis of generated images, centered on the nominal energy.
pub fn energy_axis(cfg: &SynthConfig) -> Vec<f64> {
    let mid = (cfg.energy_rows as f64 - 1.0) / 2.0;
    (0..cfg.energy_rows)
        .map(|r| cfg.nominal_energy_mev + (r as f64 - mid) * cfg.energy_calibration_kev_per_px * 1e-3)
        .collect()
}

/// Integer arrival-time jitter for shot `index`.
pub fn draw_jitter(cfg: &SynthConfig, index: u64) -> i64 {
    if cfg.jitter_std_px == 0.0 {
        return 0;
    }
    let mut rng = rng::stream(cfg.seed, rng::tag::SYNTH_IMAGE, index);
    (cfg.jitter_std_px * normal(&mut rng)).round() as i64
}

/// One phase image whose energy-weighted projection is `profile` shifted by
/// `shift` bins.
///
/// The charge of column `c` is spread over the energy rows with a Gaussian
/// weight `g_r(c)` (σ = rows/6, center drifting linearly with `c` as an
/// energy chirp) and scaled so that `Σ_r charge[r][c]·E_r = power[c]`.
pub fn phase_image(cfg: &SynthConfig, profile: &PowerProfile, shift: i64) -> Result<PhaseImage> {
    let len = profile.len();
    if profile.power.iter().any(|p| *p < 0.0) {
        return Err(Error::InvalidArgument("phase images need a non-negative profile".into()));
    }
    let had_signal = profile.power.iter().any(|p| *p > 0.0);
    if shift.unsigned_abs() as usize >= len && had_signal {
        return Err(Error::ShiftTooLarge { profile: 0, shift, len });
    }
    let shifted = shift_zero_fill(&profile.power, shift);
    if had_signal && shifted.iter().all(|p| *p == 0.0) {
        return Err(Error::ShiftTooLarge { profile: 0, shift, len });
    }
    let energy = energy_axis(cfg);
    let rows = cfg.energy_rows;
    let sigma = (rows as f64 / 6.0).max(0.5);
    let mut charge = Array2::zeros((rows, len));
    let mut weights = vec![0.0; rows];
    for (c, p) in shifted.iter().enumerate() {
        if *p == 0.0 {
            continue;
        }
        let center = (rows as f64 - 1.0) / 2.0 + (rows as f64 / 8.0) * (c as f64 / len as f64 - 0.5);
        for (r, w) in weights.iter_mut().enumerate() {
            let x = (r as f64 - center) / sigma;
            *w = (-0.5 * x * x).exp();
        }
        let norm: f64 = weights.iter().zip(&energy).map(|(w, e)| w * e).sum();
        for (r, w) in weights.iter().enumerate() {
            charge[[r, c]] = p * w / norm;
        }
    }
    PhaseImage::new(charge, energy, cfg.time_bin_fs, cfg.energy_calibration_kev_per_px)
}

/// Images for a batch of profiles with their applied shifts.
#[derive(Debug, Clone)]
pub struct JitteredImages {
    pub images: Vec<PhaseImage>,
    pub shifts: Vec<i64>,
}

/// Images with jitter drawn per shot (std `cfg.jitter_std_px`).
pub fn gen_phase_images(cfg: &SynthConfig, profiles: &[PowerProfile]) -> Result<JitteredImages> {
    let shifts: Vec<i64> = (0..profiles.len() as u64).map(|i| draw_jitter(cfg, i)).collect();
    gen_phase_images_with_shifts(cfg, profiles, &shifts)
}

pub fn gen_phase_images_with_shifts(cfg: &SynthConfig, profiles: &[PowerProfile], shifts: &[i64]) -> Result<JitteredImages> {
    if shifts.len() != profiles.len() {
        return Err(Error::shape("jitter shifts", profiles.len(), shifts.len()));
    }
    let images = profiles
        .iter()
        .zip(shifts)
        .enumerate()
        .map(|(i, (p, &s))| {
            phase_image(cfg, p, s).map_err(|e| match e {
                Error::ShiftTooLarge { shift, len, .. } => Error::ShiftTooLarge { profile: i, shift, len },
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(JitteredImages { images, shifts: shifts.to_vec() })
}
