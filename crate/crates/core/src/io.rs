//! File formats.
//!
//! Matrix blob (`*.bin`): `rows: u64 LE`, `cols: u64 LE`, then `rows·cols`
//! `f64 LE` values in row-major order.
//!
//! Dataset directory:
//! - `params.csv`: header `shot_index,<parameter names…>`, one row per shot.
//! - `profiles.bin`: matrix blob, one profile per row.
//! - `meta.json`: format version, widths, time binning, optional
//!   standardization statistics.
//!
//! Phase-image directory: `params.csv` as above, `meta.json`, and one
//! `images/<shot_index>.bin` matrix blob (rows follow energy) with an
//! `images/<shot_index>.json` sidecar holding the energy axis.
//!
//! Checkpoint: magic `VPRDCKPT`, `version: u32 LE`, `header_len: u64 LE`, a
//! JSON header, then matrix blobs `W1 (d_in×hidden)`, `b1 (1×hidden)`,
//! `W2 (hidden×d_out)`, `b2 (1×d_out)`, `label_mean (1×d_out)`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use ndarray::{Array1, Array2, ArrayView2};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Dataset, MachineParameters, PowerProfile, Sample, Standardization};
use crate::error::{Error, Result};
use crate::evaluation::ErrorTriple;
use crate::mlp::{Activation, MlpModel};
use crate::preprocess::PhaseImage;
use crate::training::{TrainReport, TrainedModel};

pub const FORMAT_VERSION: u32 = 1;
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VPRDCKPT";
const MATRIX_HEADER: usize = 16;

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn encode_matrix(out: &mut Vec<u8>, m: ArrayView2<f64>) {
    out.reserve(MATRIX_HEADER + 8 * m.len());
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for v in m.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Decodes one matrix blob starting at `bytes[0]`; returns it with the
/// number of bytes consumed.
pub fn decode_matrix(bytes: &[u8], path: &Path) -> Result<(Array2<f64>, usize)> {
    if bytes.len() < MATRIX_HEADER {
        return Err(Error::format(
            path,
            format!("expected at least {MATRIX_HEADER} header bytes, found {}", bytes.len()),
        ));
    }
    let rows = u64::from_le_bytes(bytes[0..8].try_into().expect("8 bytes"));
    let cols = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(MATRIX_HEADER as u64))
        .ok_or_else(|| Error::format(path, format!("matrix header {rows}×{cols} overflows")))?;
    if (bytes.len() as u64) < expected {
        return Err(Error::format(
            path,
            format!("{rows}×{cols} matrix needs {expected} bytes, found {}", bytes.len()),
        ));
    }
    let expected = expected as usize;
    let values = bytes[MATRIX_HEADER..expected]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let m = Array2::from_shape_vec((rows as usize, cols as usize), values)
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok((m, expected))
}

pub fn write_matrix(path: &Path, m: ArrayView2<f64>) -> Result<()> {
    let mut bytes = Vec::new();
    encode_matrix(&mut bytes, m);
    write_bytes(path, &bytes)
}

/// Reads a standalone matrix blob; trailing bytes are a format error.
pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let bytes = read_bytes(path)?;
    let (m, used) = decode_matrix(&bytes, path)?;
    if used != bytes.len() {
        return Err(Error::format(path, format!("expected {used} bytes, found {}", bytes.len())));
    }
    Ok(m)
}

/// Pretty JSON with a trailing newline. Struct fields keep declaration
/// order and maps are sorted, so output is stable.
pub fn to_json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_bytes(path, &to_json_bytes(value)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

fn write_params_csv(path: &Path, names: &[String], rows: impl Iterator<Item = (u64, Vec<f64>)>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = vec!["shot_index".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (shot, values) in rows {
        let mut record = vec![shot.to_string()];
        record.extend(values.iter().map(|v| v.to_string()));
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Parameter table: names plus `(shot_index, values)` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamsTable {
    pub names: Vec<String>,
    pub shot_index: Vec<u64>,
    pub params: Vec<MachineParameters>,
}

/// Reads `params.csv`. A leading `shot_index` column is optional; without
/// it rows are numbered from 0.
pub fn read_params_csv(path: &Path) -> Result<ParamsTable> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let header: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let has_index = header.first().is_some_and(|h| h == "shot_index");
    let names: Vec<String> = header.iter().skip(usize::from(has_index)).cloned().collect();
    if names.is_empty() {
        return Err(Error::format(path, "no parameter columns"));
    }
    let mut shot_index = Vec::new();
    let mut params = Vec::new();
    for (row, record) in r.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(Error::format(path, format!("row {row}: expected {} fields, found {}", header.len(), record.len())));
        }
        let mut fields = record.iter();
        let shot = if has_index {
            let f = fields.next().expect("checked length");
            f.trim()
                .parse::<u64>()
                .map_err(|e| Error::format(path, format!("row {row}: shot_index `{f}`: {e}")))?
        } else {
            row as u64
        };
        let values = fields
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::format(path, format!("row {row}: value `{f}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        shot_index.push(shot);
        params.push(MachineParameters::new(values).map_err(|e| Error::format(path, format!("row {row}: {e}")))?);
    }
    Ok(ParamsTable { names, shot_index, params })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub n_samples: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub time_bin_fs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardization: Option<Standardization>,
    #[serde(default)]
    pub notes: String,
}

pub fn write_dataset(dir: &Path, dataset: &Dataset, notes: &str) -> Result<()> {
    create_dir(dir)?;
    write_params_csv(
        &dir.join("params.csv"),
        dataset.param_names(),
        dataset.samples().iter().map(|s| (s.shot_index, s.params.0.clone())),
    )?;
    let d = dataset.d_out();
    let flat: Vec<f64> = dataset.samples().iter().flat_map(|s| s.profile.power.iter().copied()).collect();
    let profiles = Array2::from_shape_vec((dataset.len(), d), flat).expect("validated widths");
    write_matrix(&dir.join("profiles.bin"), profiles.view())?;
    let meta = DatasetMeta {
        format_version: FORMAT_VERSION,
        n_samples: dataset.len(),
        d_in: dataset.d_in(),
        d_out: d,
        time_bin_fs: dataset.time_bin_fs(),
        standardization: dataset.standardization.clone(),
        notes: notes.to_string(),
    };
    write_json(&dir.join("meta.json"), &meta)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join("meta.json");
    let meta: DatasetMeta = read_json(&meta_path)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::format(
            &meta_path,
            format!("format_version {} is not supported (expected {FORMAT_VERSION})", meta.format_version),
        ));
    }
    let params_path = dir.join("params.csv");
    let table = read_params_csv(&params_path)?;
    let profiles_path = dir.join("profiles.bin");
    let profiles = read_matrix(&profiles_path)?;
    if table.names.len() != meta.d_in || table.params.len() != meta.n_samples {
        return Err(Error::format(
            &params_path,
            format!(
                "expected {} rows of {} parameters, found {} rows of {}",
                meta.n_samples,
                meta.d_in,
                table.params.len(),
                table.names.len()
            ),
        ));
    }
    if profiles.dim() != (meta.n_samples, meta.d_out) {
        return Err(Error::format(
            &profiles_path,
            format!("expected {}×{} profiles, found {:?}", meta.n_samples, meta.d_out, profiles.dim()),
        ));
    }
    let samples = table
        .params
        .into_iter()
        .zip(table.shot_index)
        .zip(profiles.rows())
        .map(|((params, shot_index), row)| Sample {
            params,
            profile: PowerProfile::new(row.to_vec(), meta.time_bin_fs),
            shot_index,
        })
        .collect();
    let mut dataset = Dataset::new(table.names, samples, meta.time_bin_fs)?;
    dataset.standardization = meta.standardization;
    Ok(dataset)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseImagesMeta {
    pub format_version: u32,
    pub n_images: usize,
    pub time_calibration_fs_per_px: f64,
    pub energy_calibration_kev_per_px: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageSidecar {
    energy_axis_mev: Vec<f64>,
}

fn image_paths(dir: &Path, shot: u64) -> (PathBuf, PathBuf) {
    let images = dir.join("images");
    (images.join(format!("{shot}.bin")), images.join(format!("{shot}.json")))
}

/// Writer for a phase-image directory; images are added one at a time so a
/// batch never has to sit in memory.
pub struct PhaseImagesWriter {
    dir: PathBuf,
    names: Vec<String>,
    rows: Vec<(u64, Vec<f64>)>,
    calibration: Option<(f64, f64)>,
}

impl PhaseImagesWriter {
    pub fn create(dir: &Path, names: Vec<String>) -> Result<Self> {
        create_dir(&dir.join("images"))?;
        Ok(Self { dir: dir.to_path_buf(), names, rows: Vec::new(), calibration: None })
    }

    pub fn push(&mut self, shot: u64, params: &MachineParameters, image: &PhaseImage) -> Result<()> {
        let cal = (image.time_calibration_fs_per_px, image.energy_calibration_kev_per_px);
        match self.calibration {
            None => self.calibration = Some(cal),
            Some(c) if c != cal => {
                return Err(Error::InvalidArgument(format!("image {shot} has calibration {cal:?}, batch uses {c:?}")))
            }
            Some(_) => {}
        }
        if self.rows.last().is_some_and(|(s, _)| *s >= shot) {
            return Err(Error::InvalidArgument(format!("shot indices must increase, got {shot}")));
        }
        let (bin, json) = image_paths(&self.dir, shot);
        write_matrix(&bin, image.charge().view())?;
        write_json(&json, &ImageSidecar { energy_axis_mev: image.energy_axis().to_vec() })?;
        self.rows.push((shot, params.0.clone()));
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        let (time_cal, energy_cal) = self.calibration.unwrap_or((1.0, 1.0));
        let n = self.rows.len();
        write_params_csv(&self.dir.join("params.csv"), &self.names, self.rows.into_iter())?;
        write_json(
            &self.dir.join("meta.json"),
            &PhaseImagesMeta {
                format_version: FORMAT_VERSION,
                n_images: n,
                time_calibration_fs_per_px: time_cal,
                energy_calibration_kev_per_px: energy_cal,
            },
        )
    }
}

/// An opened phase-image directory; images are loaded on demand.
#[derive(Debug, Clone)]
pub struct PhaseImagesDir {
    dir: PathBuf,
    pub meta: PhaseImagesMeta,
    pub table: ParamsTable,
}

impl PhaseImagesDir {
    pub fn open(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        let meta: PhaseImagesMeta = read_json(&meta_path)?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::format(&meta_path, format!("format_version {} is not supported", meta.format_version)));
        }
        let table = read_params_csv(&dir.join("params.csv"))?;
        if table.params.len() != meta.n_images {
            return Err(Error::format(
                dir.join("params.csv"),
                format!("expected {} rows, found {}", meta.n_images, table.params.len()),
            ));
        }
        Ok(Self { dir: dir.to_path_buf(), meta, table })
    }

    pub fn len(&self) -> usize {
        self.table.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.params.is_empty()
    }

    /// Loads the `i`-th image in row order.
    pub fn load(&self, i: usize) -> Result<PhaseImage> {
        let (bin, json) = image_paths(&self.dir, self.table.shot_index[i]);
        let charge = read_matrix(&bin)?;
        let sidecar: ImageSidecar = read_json(&json)?;
        PhaseImage::new(
            charge,
            sidecar.energy_axis_mev,
            self.meta.time_calibration_fs_per_px,
            self.meta.energy_calibration_kev_per_px,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    d_in: usize,
    hidden: usize,
    d_out: usize,
    activation: Activation,
    standardization: Option<Standardization>,
    time_bin_fs: f64,
    dropout_p: f64,
    split_seed: u64,
    split_fractions: [f64; 3],
}

fn row(v: &Array1<f64>) -> ArrayView2<'_, f64> {
    v.view().insert_axis(ndarray::Axis(0))
}

pub fn encode_checkpoint(model: &TrainedModel) -> Result<Vec<u8>> {
    let d = model.dims();
    let header = CheckpointHeader {
        d_in: d.d_in,
        hidden: d.hidden,
        d_out: d.d_out,
        activation: model.mlp.activation,
        standardization: model.standardization.clone(),
        time_bin_fs: model.time_bin_fs,
        dropout_p: model.dropout_p,
        split_seed: model.split_seed,
        split_fractions: model.split_fractions,
    };
    let header = serde_json::to_vec(&header)?;
    let mut bytes = Vec::new();
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header);
    let mlp = &model.mlp;
    encode_matrix(&mut bytes, mlp.w1.view());
    encode_matrix(&mut bytes, row(&mlp.b1));
    encode_matrix(&mut bytes, mlp.w2.view());
    encode_matrix(&mut bytes, row(&mlp.b2));
    let mean = Array1::from(model.label_mean.clone());
    encode_matrix(&mut bytes, row(&mean));
    Ok(bytes)
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<TrainedModel> {
    if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::format(path, format!("checkpoint version {version} is not supported (expected {FORMAT_VERSION})")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = 20usize
        .checked_add(header_len)
        .filter(|end| *end <= bytes.len())
        .ok_or_else(|| Error::format(path, format!("header needs {header_len} bytes, found {}", bytes.len() - 20)))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[20..body]).map_err(|e| Error::format(path, e.to_string()))?;
    let mut pos = body;
    let mut next = |rows: usize, cols: usize, what: &str| -> Result<Array2<f64>> {
        let (m, used) = decode_matrix(&bytes[pos..], path)?;
        if m.dim() != (rows, cols) {
            return Err(Error::format(path, format!("{what}: expected {rows}×{cols}, found {:?}", m.dim())));
        }
        pos += used;
        Ok(m)
    };
    let (d_in, h, d_out) = (header.d_in, header.hidden, header.d_out);
    let w1 = next(d_in, h, "W1")?;
    let b1 = next(1, h, "b1")?.into_shape_with_order(h).expect("1×h");
    let w2 = next(h, d_out, "W2")?;
    let b2 = next(1, d_out, "b2")?.into_shape_with_order(d_out).expect("1×d_out");
    let mean = next(1, d_out, "label_mean")?.into_raw_vec_and_offset().0;
    if pos != bytes.len() {
        return Err(Error::format(path, format!("expected {pos} bytes, found {}", bytes.len())));
    }
    let mlp = MlpModel::from_parts(w1, b1, w2, b2, header.activation)?;
    Ok(TrainedModel {
        mlp,
        standardization: header.standardization,
        label_mean: mean,
        time_bin_fs: header.time_bin_fs,
        dropout_p: header.dropout_p,
        split_seed: header.split_seed,
        split_fractions: header.split_fractions,
    })
}

pub fn write_checkpoint(path: &Path, model: &TrainedModel) -> Result<()> {
    write_bytes(path, &encode_checkpoint(model)?)
}

pub fn read_checkpoint(path: &Path) -> Result<TrainedModel> {
    decode_checkpoint(&read_bytes(path)?, path)
}

/// Hex SHA-256 of the checkpoint encoding; identifies a model.
pub fn model_id(model: &TrainedModel) -> Result<String> {
    Ok(sha256_hex(&encode_checkpoint(model)?))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&read_bytes(path)?))
}

/// `step,train_loss,val_loss,lr`, steps counted from 1.
pub fn write_loss_history(path: &Path, report: &TrainReport) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["step", "train_loss", "val_loss", "lr"])?;
    for (i, ((t, v), lr)) in report.train_loss.iter().zip(&report.val_loss).zip(&report.lr).enumerate() {
        w.write_record([(i + 1).to_string(), t.to_string(), v.to_string(), lr.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// `shot_index,prediction_mse,mean_mse,neighbor_mse`. The neighbor error of
/// test sample `i` compares it with sample `i+1`; the last row leaves it
/// empty.
pub fn write_errors_csv(path: &Path, errors: &ErrorTriple) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["shot_index", "prediction_mse", "mean_mse", "neighbor_mse"])?;
    for i in 0..errors.prediction_mse.len() {
        let neighbor = errors.neighbor_mse.get(i).map(|v| v.to_string()).unwrap_or_default();
        w.write_record([
            errors.shot_index[i].to_string(),
            errors.prediction_mse[i].to_string(),
            errors.mean_mse[i].to_string(),
            neighbor,
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

impl FileRecord {
    /// Hashes a file, or every file below a directory in sorted order.
    pub fn of(path: &Path) -> Result<Vec<FileRecord>> {
        let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
        if meta.is_file() {
            return Ok(vec![FileRecord { path: path.display().to_string(), sha256: sha256_file(path)? }]);
        }
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(path, err)))
            .collect::<Result<_>>()?;
        entries.sort();
        let mut out = Vec::new();
        for e in entries {
            out.extend(FileRecord::of(&e)?);
        }
        Ok(out)
    }
}

/// Provenance record written once per artifact-producing command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub started_unix_s: u64,
    pub finished_unix_s: u64,
    pub duration_s: f64,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_unix_s: unix_now(),
            finished_unix_s: 0,
            duration_s: 0.0,
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.extend(FileRecord::of(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.extend(FileRecord::of(path)?);
        Ok(())
    }

    pub fn write(mut self, path: &Path, duration_s: f64) -> Result<()> {
        self.finished_unix_s = unix_now();
        self.duration_s = duration_s;
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&to_json_bytes(&self)?).map_err(|e| Error::io(path, e))
    }
}
