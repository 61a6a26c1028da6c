//! Shot-level data types, the dataset container, seeded splitting and input
//! standardization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Default input width.
pub const DEFAULT_D_IN: usize = 22;

/// Default machine-parameter layout, in beamline order.
///
/// The two BAM time-delay channels are linear combinations of the BAM
/// readings and are left out; the BPM contributes separate x and y channels.
/// Datasets carry their own header, so this list only names columns when
/// nothing else does.
pub const PARAMETER_NAMES: [&str; DEFAULT_D_IN] = [
    "BCM.1a",
    "norm. BCM.1a",
    "BCM.1b",
    "norm. BCM.1b",
    "BCM.2a",
    "norm. BCM.2a",
    "BCM.2b",
    "norm. BCM.2b",
    "BCM.3a",
    "norm. BCM.3a",
    "BCM.3b",
    "norm. BCM.3b",
    "BAM1-1",
    "BAM1-2",
    "BAM2-1",
    "BAM2-2",
    "BAM3",
    "CHARGE in Gun",
    "CHARGE in FLASH2",
    "ENERGY in FLASH2",
    "BPM x",
    "BPM y",
];

pub fn default_parameter_names(d_in: usize) -> Vec<String> {
    (0..d_in)
        .map(|i| match PARAMETER_NAMES.get(i) {
            Some(name) if d_in == DEFAULT_D_IN => (*name).to_string(),
            _ => format!("param_{i}"),
        })
        .collect()
}

/// Beamline readings for one shot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MachineParameters(pub Vec<f64>);

impl MachineParameters {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("machine parameters".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Machine parameters after z-scoring with a fitted [`Standardization`].
///
/// Only [`Standardization::apply`] (or [`StandardizedParams::identity`] when
/// standardization is switched off) constructs one, so model entry points can
/// refuse raw readings at the type level.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedParams(Vec<f64>);

impl StandardizedParams {
    /// Pass-through used when a model was trained without standardization.
    pub fn identity(params: &MachineParameters) -> Self {
        Self(params.0.clone())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Energy-weighted charge per time bin (arbitrary units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerProfile {
    pub power: Vec<f64>,
    /// Femtoseconds per bin.
    pub time_bin_fs: f64,
}

impl PowerProfile {
    pub fn new(power: Vec<f64>, time_bin_fs: f64) -> Self {
        Self { power, time_bin_fs }
    }

    pub fn len(&self) -> usize {
        self.power.len()
    }

    pub fn is_empty(&self) -> bool {
        self.power.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub params: MachineParameters,
    pub profile: PowerProfile,
    /// Position in acquisition order.
    pub shot_index: u64,
}

/// Ordered shots sharing one input width and one profile width.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    param_names: Vec<String>,
    samples: Vec<Sample>,
    time_bin_fs: f64,
    pub standardization: Option<Standardization>,
}

impl Dataset {
    /// Validates widths, finiteness and strictly increasing shot indices.
    pub fn new(param_names: Vec<String>, samples: Vec<Sample>, time_bin_fs: f64) -> Result<Self> {
        let d_in = param_names.len();
        if d_in == 0 {
            return Err(Error::Empty("parameter names"));
        }
        let d = samples.first().map(|s| s.profile.len()).unwrap_or(0);
        for (i, s) in samples.iter().enumerate() {
            if s.params.len() != d_in {
                return Err(Error::shape("dataset parameters", d_in, format!("{} at sample {i}", s.params.len())));
            }
            if s.profile.len() != d {
                return Err(Error::shape("dataset profiles", d, format!("{} at sample {i}", s.profile.len())));
            }
            if s.params.0.iter().chain(&s.profile.power).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("sample {i}")));
            }
            if i > 0 && s.shot_index <= samples[i - 1].shot_index {
                return Err(Error::InvalidArgument(format!(
                    "shot indices must increase: sample {i} has {} after {}",
                    s.shot_index,
                    samples[i - 1].shot_index
                )));
            }
        }
        Ok(Self {
            param_names,
            samples,
            time_bin_fs,
            standardization: None,
        })
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn d_in(&self) -> usize {
        self.param_names.len()
    }

    /// Profile width, zero for an empty dataset.
    pub fn d_out(&self) -> usize {
        self.samples.first().map(|s| s.profile.len()).unwrap_or(0)
    }

    pub fn time_bin_fs(&self) -> f64 {
        self.time_bin_fs
    }

    pub fn select(&self, indices: &[usize]) -> Vec<&Sample> {
        indices.iter().map(|&i| &self.samples[i]).collect()
    }
}

/// Disjoint train/validation/test indices; each list is sorted ascending so
/// acquisition order survives the split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Split sizes: floor each `fraction * n`, then hand the remainder out one
/// sample at a time starting from the train split.
pub fn split_sizes(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    check_fractions(fractions)?;
    if n < 3 {
        return Err(Error::DatasetTooSmall { n });
    }
    let mut sizes = fractions.map(|f| (f * n as f64).floor() as usize);
    let mut remainder = n - sizes.iter().sum::<usize>();
    let mut k = 0;
    while remainder > 0 {
        sizes[k % 3] += 1;
        remainder -= 1;
        k += 1;
    }
    if sizes.contains(&0) {
        return Err(Error::DatasetTooSmall { n });
    }
    Ok(sizes)
}

/// Split fractions must be positive and sum to 1 within 1e-9.
pub fn check_fractions(fractions: [f64; 3]) -> Result<()> {
    if fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(Error::InvalidArgument(format!("split fractions must be positive, got {fractions:?}")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split fractions sum to {total}, expected 1")));
    }
    Ok(())
}

/// Seeded random split.
///
/// The permutation is `rng::shuffle` (Fisher–Yates) of `0..n` on the stream
/// `rng::stream(seed, tag::SPLIT, 0)`; the first `train` entries form the
/// training split, the next `val` the validation split, the rest the test
/// split. Sizes follow [`split_sizes`].
pub fn split_dataset(n: usize, fractions: [f64; 3], seed: u64) -> Result<SplitIndices> {
    let [n_train, n_val, _] = split_sizes(n, fractions)?;
    let mut perm: Vec<usize> = (0..n).collect();
    rng::shuffle(&mut rng::stream(seed, rng::tag::SPLIT, 0), &mut perm);
    let mut train = perm[..n_train].to_vec();
    let mut val = perm[n_train..n_train + n_val].to_vec();
    let mut test = perm[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, val, test, seed })
}

/// Per-feature z-scoring statistics (population standard deviation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    /// Fits on the given rows. `names` labels features in error messages.
    pub fn fit<'a, I>(rows: I, names: &[String]) -> Result<Self>
    where
        I: IntoIterator<Item = &'a MachineParameters>,
    {
        let rows: Vec<&MachineParameters> = rows.into_iter().collect();
        if rows.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "standardization needs at least 2 training samples, got {}",
                rows.len()
            )));
        }
        let d = rows[0].len();
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::shape("standardize_fit", d, bad.len()));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(r.values()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in &rows {
            for ((s, v), m) in var.iter_mut().zip(r.values()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std: Vec<f64> = var.iter().map(|s| (s / n).sqrt()).collect();
        for (i, (s, m)) in std.iter().zip(&mean).enumerate() {
            if s.is_nan() || *s <= 1e-12 * m.abs().max(f64::MIN_POSITIVE) {
                let name = names.get(i).cloned().unwrap_or_else(|| format!("param_{i}"));
                return Err(Error::ZeroVariance { index: i, name });
            }
        }
        Ok(Self { mean, std })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn apply(&self, params: &MachineParameters) -> Result<StandardizedParams> {
        let mut out = vec![0.0; params.len()];
        self.apply_into(params.values(), &mut out)?;
        Ok(StandardizedParams(out))
    }

    /// Allocation-free form of [`apply`](Self::apply).
    pub fn apply_into(&self, values: &[f64], out: &mut [f64]) -> Result<()> {
        if values.len() != self.len() || out.len() != self.len() {
            return Err(Error::shape("standardize_apply", self.len(), values.len()));
        }
        for (((o, v), m), s) in out.iter_mut().zip(values).zip(&self.mean).zip(&self.std) {
            *o = (v - m) / s;
        }
        Ok(())
    }

    pub fn invert(&self, params: &StandardizedParams) -> Result<MachineParameters> {
        if params.len() != self.len() {
            return Err(Error::shape("standardize_invert", self.len(), params.len()));
        }
        Ok(MachineParameters(
            params.0.iter().zip(&self.mean).zip(&self.std).map(|((z, m), s)| z * s + m).collect(),
        ))
    }
}
