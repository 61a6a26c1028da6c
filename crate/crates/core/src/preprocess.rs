//! Phase-space images to aligned, cropped electron power profiles.
//!
//! The chain is: energy-weighted projection of every image onto the time
//! axis, de-jittering (integer shift of each profile so its Gaussian-smoothed
//! peak lands on the median peak), then cropping all profiles to the union of
//! their Otsu foreground plus a fixed padding.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::PowerProfile;
use crate::error::{Error, Result};

pub const DEFAULT_SMOOTH_RADIUS: usize = 10;
pub const DEFAULT_PADDING: usize = 10;
pub const DEFAULT_OTSU_BINS: usize = 256;

/// Longitudinal phase-space image: rows follow energy, columns follow time.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseImage {
    charge: Array2<f64>,
    energy_axis: Vec<f64>,
    pub time_calibration_fs_per_px: f64,
    pub energy_calibration_kev_per_px: f64,
}

impl PhaseImage {
    pub fn new(
        charge: Array2<f64>,
        energy_axis: Vec<f64>,
        time_calibration_fs_per_px: f64,
        energy_calibration_kev_per_px: f64,
    ) -> Result<Self> {
        if energy_axis.len() != charge.nrows() {
            return Err(Error::shape("phase image energy axis", charge.nrows(), energy_axis.len()));
        }
        if charge.iter().any(|q| !q.is_finite() || *q < 0.0) {
            return Err(Error::InvalidArgument("phase image charge must be finite and non-negative".into()));
        }
        if energy_axis.iter().any(|e| !e.is_finite()) {
            return Err(Error::NonFinite("energy axis".into()));
        }
        Ok(Self {
            charge,
            energy_axis,
            time_calibration_fs_per_px,
            energy_calibration_kev_per_px,
        })
    }

    pub fn charge(&self) -> &Array2<f64> {
        &self.charge
    }

    pub fn energy_axis(&self) -> &[f64] {
        &self.energy_axis
    }
}

/// Per-batch record of what de-jittering and cropping did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub peak_index: Vec<usize>,
    pub median_peak: usize,
    pub shift: Vec<i64>,
    /// Inclusive `(start, end)` column window kept by [`crop_to_signal`].
    pub crop_window: Option<(usize, usize)>,
    pub padding: usize,
}

/// `power[c] = Σ_r charge[r][c] · energy_axis[r]`.
pub fn energy_weighted_projection(image: &PhaseImage) -> Result<PowerProfile> {
    if image.charge.is_empty() {
        return Err(Error::Empty("phase image"));
    }
    let power = image
        .charge
        .columns()
        .into_iter()
        .map(|col| col.iter().zip(&image.energy_axis).map(|(q, e)| q * e).sum())
        .collect();
    Ok(PowerProfile::new(power, image.time_calibration_fs_per_px))
}

/// Discrete Gaussian with σ = `radius_px`, truncated at ±3σ, normalized to 1.
pub fn gaussian_kernel(radius_px: usize) -> Vec<f64> {
    let sigma = radius_px as f64;
    let half = 3 * radius_px;
    let mut k: Vec<f64> = (0..=2 * half)
        .map(|i| {
            let x = i as f64 - half as f64;
            (-0.5 * x * x / (sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Half-sample reflection: `… c b a | a b c … x y z | z y x …`.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

/// Gaussian smoothing with reflected edges.
pub fn gaussian_smooth(profile: &[f64], radius_px: usize) -> Result<Vec<f64>> {
    if radius_px == 0 {
        return Err(Error::InvalidArgument("smoothing radius must be at least 1 px".into()));
    }
    let n = profile.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let kernel = gaussian_kernel(radius_px);
    let half = (kernel.len() / 2) as isize;
    Ok((0..n as isize)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * profile[reflect(i + k as isize - half, n)])
                .sum()
        })
        .collect())
}

/// Index of the maximum; the lowest index wins ties.
pub fn peak_location(profile: &[f64]) -> Result<usize> {
    if profile.is_empty() {
        return Err(Error::Empty("profile"));
    }
    let mut best = 0;
    for (i, v) in profile.iter().enumerate().skip(1) {
        if *v > profile[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Shift right by `shift` bins (left if negative), zero-filling vacated bins.
pub fn shift_zero_fill(values: &[f64], shift: i64) -> Vec<f64> {
    let n = values.len() as i64;
    (0..n)
        .map(|j| {
            let src = j - shift;
            if (0..n).contains(&src) {
                values[src as usize]
            } else {
                0.0
            }
        })
        .collect()
}

/// Lower median of a list of indices.
fn lower_median(values: &[usize]) -> usize {
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    sorted[(sorted.len() - 1) / 2]
}

/// Aligns every profile's smoothed peak to the (lower) median peak.
pub fn dejitter(profiles: &[PowerProfile], radius_px: usize) -> Result<(Vec<PowerProfile>, AlignmentReport)> {
    let first = profiles.first().ok_or(Error::Empty("profile list"))?;
    let len = first.len();
    if let Some(p) = profiles.iter().find(|p| p.len() != len) {
        return Err(Error::shape("dejitter", len, p.len()));
    }
    let peak_index = profiles
        .iter()
        .map(|p| peak_location(&gaussian_smooth(&p.power, radius_px)?))
        .collect::<Result<Vec<_>>>()?;
    let median_peak = lower_median(&peak_index);
    let shift: Vec<i64> = peak_index.iter().map(|&p| median_peak as i64 - p as i64).collect();
    let aligned = profiles
        .iter()
        .zip(&shift)
        .enumerate()
        .map(|(i, (p, &s))| {
            if s.unsigned_abs() as usize >= len {
                return Err(Error::ShiftTooLarge { profile: i, shift: s, len });
            }
            Ok(PowerProfile::new(shift_zero_fill(&p.power, s), p.time_bin_fs))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        aligned,
        AlignmentReport {
            peak_index,
            median_peak,
            shift,
            crop_window: None,
            padding: 0,
        },
    ))
}

/// Result of an Otsu split on a histogram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtsuSplit {
    /// First histogram bin of the upper class (`1..n_bins`).
    pub bin: usize,
    /// Lower edge of `bin`; values at or above it belong to the upper class.
    pub threshold: f64,
    pub min: f64,
    pub bin_width: f64,
}

impl OtsuSplit {
    pub fn bin_of(&self, value: f64, n_bins: usize) -> usize {
        histogram_bin(value, self.min, self.bin_width, n_bins)
    }

    pub fn is_foreground(&self, value: f64, n_bins: usize) -> bool {
        self.bin_of(value, n_bins) >= self.bin
    }
}

fn histogram_bin(value: f64, min: f64, width: f64, n_bins: usize) -> usize {
    (((value - min) / width).floor().max(0.0) as usize).min(n_bins - 1)
}

/// Otsu's method over an `n_bins` equal-width histogram spanning `[min, max]`.
///
/// Candidate thresholds are the interior bin edges. The between-class
/// variance is evaluated in bin-index units from exact integer counts and
/// index sums, `(s0·c1 − s1·c0)² / (c0·c1)`, which has the same argmax as the
/// variance in value units. Ties go to the lowest edge.
pub fn otsu_split(values: &[f64], n_bins: usize) -> Result<OtsuSplit> {
    if n_bins < 2 {
        return Err(Error::InvalidArgument("Otsu needs at least 2 histogram bins".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Otsu input".into()));
    }
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if values.len() < 2 || min >= max {
        return Err(Error::ConstantSignal);
    }
    let width = (max - min) / n_bins as f64;
    let mut counts = vec![0u64; n_bins];
    for &v in values {
        counts[histogram_bin(v, min, width, n_bins)] += 1;
    }
    let total_count: u64 = counts.iter().sum();
    let total_sum: u64 = counts.iter().enumerate().map(|(i, c)| i as u64 * c).sum();

    let (mut c0, mut s0) = (0u64, 0u64);
    let mut best: Option<(usize, f64)> = None;
    for k in 1..n_bins {
        c0 += counts[k - 1];
        s0 += (k as u64 - 1) * counts[k - 1];
        let c1 = total_count - c0;
        if c0 == 0 || c1 == 0 {
            continue;
        }
        let s1 = total_sum - s0;
        let d = s0 as f64 * c1 as f64 - s1 as f64 * c0 as f64;
        let score = d * d / (c0 as f64 * c1 as f64);
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((k, score));
        }
    }
    let (bin, _) = best.ok_or(Error::ConstantSignal)?;
    Ok(OtsuSplit {
        bin,
        threshold: min + bin as f64 * width,
        min,
        bin_width: width,
    })
}

/// Otsu threshold of `values` (see [`otsu_split`]).
pub fn otsu_threshold(values: &[f64], n_bins: usize) -> Result<f64> {
    otsu_split(values, n_bins).map(|s| s.threshold)
}

/// Crops every profile to the union of per-profile Otsu foreground bins,
/// widened by `padding_px` on each side and clamped to the profile.
///
/// Profiles that are constant have no foreground and contribute nothing.
/// Returns the cropped profiles and the inclusive window.
pub fn crop_to_signal(
    profiles: &[PowerProfile],
    padding_px: usize,
    n_bins: usize,
) -> Result<(Vec<PowerProfile>, (usize, usize))> {
    let first = profiles.first().ok_or(Error::Empty("profile list"))?;
    let len = first.len();
    if let Some(p) = profiles.iter().find(|p| p.len() != len) {
        return Err(Error::shape("crop_to_signal", len, p.len()));
    }
    let mut span: Option<(usize, usize)> = None;
    for p in profiles {
        let split = match otsu_split(&p.power, n_bins) {
            Ok(s) => s,
            Err(Error::ConstantSignal) => continue,
            Err(e) => return Err(e),
        };
        let mut fg = p
            .power
            .iter()
            .enumerate()
            .filter(|(_, v)| split.is_foreground(**v, n_bins))
            .map(|(i, _)| i);
        if let Some(lo) = fg.next() {
            let hi = fg.next_back().unwrap_or(lo);
            span = Some(match span {
                None => (lo, hi),
                Some((a, b)) => (a.min(lo), b.max(hi)),
            });
        }
    }
    let (lo, hi) = span.ok_or(Error::NoSignal)?;
    let window = (lo.saturating_sub(padding_px), (hi + padding_px).min(len - 1));
    let cropped = profiles
        .iter()
        .map(|p| PowerProfile::new(p.power[window.0..=window.1].to_vec(), p.time_bin_fs))
        .collect();
    Ok((cropped, window))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub smooth_radius: usize,
    pub padding: usize,
    pub otsu_bins: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            smooth_radius: DEFAULT_SMOOTH_RADIUS,
            padding: DEFAULT_PADDING,
            otsu_bins: DEFAULT_OTSU_BINS,
        }
    }
}

/// Projection, de-jittering and cropping for a batch of images.
pub fn preprocess_images(
    images: &[PhaseImage],
    cfg: &PreprocessConfig,
) -> Result<(Vec<PowerProfile>, AlignmentReport)> {
    let projected = images.iter().map(energy_weighted_projection).collect::<Result<Vec<_>>>()?;
    preprocess_profiles(&projected, cfg)
}

/// De-jittering and cropping for already-projected profiles.
pub fn preprocess_profiles(
    profiles: &[PowerProfile],
    cfg: &PreprocessConfig,
) -> Result<(Vec<PowerProfile>, AlignmentReport)> {
    let (aligned, mut report) = dejitter(profiles, cfg.smooth_radius)?;
    let (cropped, window) = crop_to_signal(&aligned, cfg.padding, cfg.otsu_bins)?;
    report.crop_window = Some(window);
    report.padding = cfg.padding;
    Ok((cropped, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn bump(len: usize, center: f64, width: f64) -> Vec<f64> {
        (0..len)
            .map(|i| {
                let x = (i as f64 - center) / width;
                (-0.5 * x * x).exp()
            })
            .collect()
    }

    fn prof(v: Vec<f64>) -> PowerProfile {
        PowerProfile::new(v, 1.0)
    }

    fn image(charge: Array2<f64>, energy: Vec<f64>) -> PhaseImage {
        PhaseImage::new(charge, energy, 1.13, 21.0).unwrap()
    }

    #[test]
    fn projection_hand_example() {
        let img = image(array![[1.0, 0.0, 2.0], [3.0, 1.0, 0.0]], vec![1.0, 2.0]);
        assert_eq!(energy_weighted_projection(&img).unwrap().power, vec![7.0, 2.0, 2.0]);
    }

    #[test]
    fn projection_degenerate_cases() {
        let zero = image(Array2::zeros((4, 5)), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(energy_weighted_projection(&zero).unwrap().power, vec![0.0; 5]);
        let ones = image(array![[1.0, 2.0], [3.0, 4.0]], vec![1.0, 1.0]);
        assert_eq!(energy_weighted_projection(&ones).unwrap().power, vec![4.0, 6.0]);
        let empty = image(Array2::zeros((0, 0)), vec![]);
        assert!(energy_weighted_projection(&empty).is_err());
    }

    #[test]
    fn image_validation() {
        assert!(PhaseImage::new(array![[1.0, -1.0]], vec![1.0], 1.0, 1.0).is_err());
        assert!(PhaseImage::new(array![[1.0, 1.0]], vec![1.0, 2.0], 1.0, 1.0).is_err());
    }

    #[test]
    fn kernel_width_and_mass() {
        let k = gaussian_kernel(10);
        assert_eq!(k.len(), 61);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(k[30], *k.iter().max_by(|a, b| a.total_cmp(b)).unwrap());
    }

    #[test]
    fn smoothing_constant_impulse_symmetry() {
        let c = gaussian_smooth(&[3.5; 40], 10).unwrap();
        assert!(c.iter().all(|v| (v - 3.5).abs() < 1e-12));

        let mut impulse = vec![0.0; 500];
        impulse[250] = 1.0;
        let s = gaussian_smooth(&impulse, 10).unwrap();
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let sym: Vec<f64> = (0..101).map(|i| ((i as f64 - 50.0) / 7.0).cos().abs()).collect();
        let s = gaussian_smooth(&sym, 10).unwrap();
        for i in 0..101 {
            assert!((s[i] - s[100 - i]).abs() < 1e-12);
        }
        assert!(gaussian_smooth(&sym, 0).is_err());
    }

    #[test]
    fn smoothing_short_signal_reflects_repeatedly() {
        let s = gaussian_smooth(&[1.0, 2.0, 3.0], 5).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.iter().all(|v| (1.0..=3.0).contains(v)));
    }

    #[test]
    fn peak_examples() {
        assert_eq!(peak_location(&[0.0, 1.0, 3.0, 1.0]).unwrap(), 2);
        assert_eq!(peak_location(&[0.0, 5.0, 5.0, 0.0]).unwrap(), 1);
        assert!(peak_location(&[]).is_err());
        let b = bump(200, 80.0, 6.0);
        let p0 = peak_location(&b).unwrap();
        for k in [1, 5, 17] {
            assert_eq!(peak_location(&shift_zero_fill(&b, k)).unwrap(), p0 + k as usize);
        }
    }

    #[test]
    fn dejitter_aligns_to_median() {
        let ps: Vec<_> = [20.0, 22.0, 25.0].iter().map(|&c| prof(bump(80, c, 4.0))).collect();
        let (aligned, rep) = dejitter(&ps, 10).unwrap();
        assert_eq!(rep.peak_index, vec![20, 22, 25]);
        assert_eq!(rep.median_peak, 22);
        assert_eq!(rep.shift, vec![2, 0, -3]);
        for a in &aligned {
            assert_eq!(peak_location(&gaussian_smooth(&a.power, 10).unwrap()).unwrap(), 22);
        }
    }

    #[test]
    fn dejitter_trivial_cases() {
        let one = vec![prof(bump(60, 30.0, 5.0))];
        let (out, rep) = dejitter(&one, 10).unwrap();
        assert_eq!(out, one);
        assert_eq!(rep.shift, vec![0]);

        let same: Vec<_> = (0..4).map(|_| prof(bump(60, 30.0, 5.0))).collect();
        assert!(dejitter(&same, 10).unwrap().1.shift.iter().all(|&s| s == 0));
    }

    #[test]
    fn even_count_takes_lower_median() {
        let ps: Vec<_> = [20.0, 30.0].iter().map(|&c| prof(bump(80, c, 3.0))).collect();
        assert_eq!(dejitter(&ps, 10).unwrap().1.median_peak, 20);
    }

    #[test]
    fn otsu_two_level() {
        let t = otsu_threshold(&[0.0, 0.0, 0.0, 10.0, 10.0, 10.0], 256).unwrap();
        assert!(t > 0.0 && t < 10.0);
        assert!(matches!(otsu_threshold(&[2.0; 5], 256), Err(Error::ConstantSignal)));
    }

    #[test]
    fn crop_window_examples() {
        let mut a = vec![0.0; 567];
        a[100..=120].iter_mut().for_each(|v| *v = 1.0);
        let (c, w) = crop_to_signal(&[prof(a.clone())], 10, 256).unwrap();
        assert_eq!(w, (90, 130));
        assert_eq!(c[0].len(), 41);

        let mut early = vec![0.0; 567];
        early[3..=10].iter_mut().for_each(|v| *v = 1.0);
        assert_eq!(crop_to_signal(&[prof(early)], 10, 256).unwrap().1, (0, 20));

        let mut b = vec![0.0; 567];
        b[140..=160].iter_mut().for_each(|v| *v = 2.0);
        assert_eq!(crop_to_signal(&[prof(a), prof(b)], 10, 256).unwrap().1, (90, 170));

        assert!(matches!(crop_to_signal(&[prof(vec![0.0; 50])], 10, 256), Err(Error::NoSignal)));
    }

    #[test]
    fn pipeline_records_window() {
        let ps: Vec<_> = [40.0, 45.0, 50.0].iter().map(|&c| prof(bump(200, c, 5.0))).collect();
        let (out, rep) = preprocess_profiles(&ps, &PreprocessConfig::default()).unwrap();
        let (lo, hi) = rep.crop_window.unwrap();
        assert_eq!(out[0].len(), hi - lo + 1);
        assert_eq!(rep.padding, 10);
    }
}
