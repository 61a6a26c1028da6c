//! The full synthetic run: generate, image with jitter, preprocess, split,
//! train, evaluate.

use serde::Serialize;

use crate::config::Config;
use crate::data::{split_dataset, Dataset, PowerProfile, Sample, SplitIndices};
use crate::error::Result;
use crate::evaluation::{evaluate, ErrorTriple, EvaluationReport};
use crate::preprocess::{energy_weighted_projection, preprocess_profiles, AlignmentReport, PreprocessConfig};
use crate::synthetic::{draw_jitter, gen_dataset, phase_image, GroundTruth, SynthConfig};
use crate::training::{train, TrainOutput};

/// Projections of jittered phase images, one shot at a time so only one
/// image is alive at once. Returns the profiles and the applied shifts.
pub fn jittered_projections(cfg: &SynthConfig, dataset: &Dataset) -> Result<(Vec<PowerProfile>, Vec<i64>)> {
    let mut profiles = Vec::with_capacity(dataset.len());
    let mut shifts = Vec::with_capacity(dataset.len());
    for (i, s) in dataset.samples().iter().enumerate() {
        let shift = draw_jitter(cfg, s.shot_index);
        let image = phase_image(cfg, &s.profile, shift).map_err(|e| match e {
            crate::Error::ShiftTooLarge { shift, len, .. } => crate::Error::ShiftTooLarge { profile: i, shift, len },
            other => other,
        })?;
        profiles.push(energy_weighted_projection(&image)?);
        shifts.push(shift);
    }
    Ok((profiles, shifts))
}

/// Replaces every profile of `dataset` with its preprocessed version.
pub fn preprocess_dataset(
    dataset: &Dataset,
    profiles: &[PowerProfile],
    cfg: &PreprocessConfig,
) -> Result<(Dataset, AlignmentReport)> {
    let (processed, report) = preprocess_profiles(profiles, cfg)?;
    let samples = dataset
        .samples()
        .iter()
        .zip(processed)
        .map(|(s, profile)| Sample { params: s.params.clone(), profile, shot_index: s.shot_index })
        .collect();
    let out = Dataset::new(dataset.param_names().to_vec(), samples, dataset.time_bin_fs())?;
    Ok((out, report))
}

/// Everything one synthetic run produces.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub truth: GroundTruth,
    pub dataset: Dataset,
    pub alignment: AlignmentReport,
    pub jitter: Vec<i64>,
    pub split: SplitIndices,
    pub trained: TrainOutput,
    pub errors: ErrorTriple,
    pub report: EvaluationReport,
}

/// Serializable summary used to compare runs byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineSummary<'a> {
    pub alignment: &'a AlignmentReport,
    pub split: &'a SplitIndices,
    pub train: &'a crate::training::TrainReport,
    pub evaluation: &'a EvaluationReport,
}

impl PipelineOutput {
    pub fn summary(&self) -> PipelineSummary<'_> {
        PipelineSummary {
            alignment: &self.alignment,
            split: &self.split,
            train: &self.trained.report,
            evaluation: &self.report,
        }
    }
}

pub fn run(cfg: &Config) -> Result<PipelineOutput> {
    cfg.validate()?;
    let (raw, truth) = gen_dataset(&cfg.synth)?;
    let (projected, jitter) = jittered_projections(&cfg.synth, &raw)?;
    let (dataset, alignment) = preprocess_dataset(&raw, &projected, &cfg.preprocess)?;
    drop(projected);
    let split = split_dataset(dataset.len(), cfg.train.split_fractions, cfg.train.seed)?;
    let trained = train(&dataset, &split, &cfg.train)?;
    let (errors, report) = evaluate(&trained.model, &dataset, &split.test, &trained.model.label_mean, &cfg.eval)?;
    Ok(PipelineOutput { truth, dataset, alignment, jitter, split, trained, errors, report })
}
