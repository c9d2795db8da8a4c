//! PGM and RAWJ readers and writers for images, label maps and per-voxel
//! fields.
//!
//! A RAWJ volume is a pair of files sharing a stem: `<stem>.json` holds
//! `{"dims", "spacing", "dtype", "order": "x-fastest", "channels"?}` and
//! `<stem>.raw` the little-endian samples, channels interleaved per voxel.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use fastwalk_core::aggregate::Aggregation;
use fastwalk_core::image::{Image, LabelMap, ProbabilityField};
use fastwalk_core::registration::DisplacementField;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    U8,
    U16,
    U32,
    F32,
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Self::U8 => 1,
            Self::U16 => 2,
            Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawjHeader {
    pub dims: Vec<usize>,
    #[serde(default)]
    pub spacing: Option<Vec<f64>>,
    pub dtype: Dtype,
    #[serde(default = "x_fastest")]
    pub order: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,
}

fn x_fastest() -> String {
    "x-fastest".into()
}

impl RawjHeader {
    pub fn new(dims: &[usize], spacing: Option<&[f64]>, dtype: Dtype, channels: Option<usize>) -> Self {
        Self { dims: dims.to_vec(), spacing: spacing.map(<[f64]>::to_vec), dtype, order: x_fastest(), channels }
    }

    pub fn voxels(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn values(&self) -> usize {
        self.voxels() * self.channels.unwrap_or(1)
    }
}

/// The `(header, payload)` paths for a RAWJ stem. Accepts the stem itself or
/// a path ending in `.json`, `.raw` or `.rawj`.
pub fn rawj_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("json" | "raw" | "rawj") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let add = |ext: &str| {
        let mut s = stem.clone().into_os_string();
        s.push(".");
        s.push(ext);
        PathBuf::from(s)
    };
    (add("json"), add("raw"))
}

/// Decoded RAWJ samples, widened to `f64` or kept integral.
#[derive(Debug, Clone, PartialEq)]
pub enum RawjData {
    Float(Vec<f64>),
    Int(Vec<u32>),
}

pub fn read_rawj(path: &Path) -> Result<(RawjHeader, RawjData)> {
    let (hp, rp) = rawj_paths(path);
    let text = fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
    let header: RawjHeader =
        serde_json::from_str(&text).map_err(|e| Error::format(&hp, format!("bad RAWJ header: {e}")))?;
    if header.order != "x-fastest" {
        return Err(Error::format(&hp, format!("unsupported order {:?}", header.order)));
    }
    if header.dims.is_empty() || header.dims.contains(&0) {
        return Err(Error::format(&hp, "dims must be positive"));
    }
    let bytes = fs::read(&rp).map_err(|e| Error::io(&rp, e))?;
    let want = header.values() * header.dtype.size();
    if bytes.len() != want {
        return Err(Error::format(
            &rp,
            format!("payload has {} bytes, header dims {:?} need {want}", bytes.len(), header.dims),
        ));
    }
    let data = match header.dtype {
        Dtype::U8 => RawjData::Int(bytes.iter().map(|&b| u32::from(b)).collect()),
        Dtype::U16 => RawjData::Int(
            bytes.chunks_exact(2).map(|c| u32::from(u16::from_le_bytes([c[0], c[1]]))).collect(),
        ),
        Dtype::U32 => {
            RawjData::Int(bytes.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect())
        }
        Dtype::F32 => RawjData::Float(
            bytes.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap()))).collect(),
        ),
        Dtype::F64 => {
            RawjData::Float(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
        }
    };
    Ok((header, data))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn write_rawj(path: &Path, header: &RawjHeader, payload: &[u8]) -> Result<()> {
    let (hp, rp) = rawj_paths(path);
    let json = serde_json::to_string(header).expect("header serializes");
    write_file(&hp, json.as_bytes())?;
    write_file(&rp, payload)
}

fn f32_bytes(values: impl Iterator<Item = f64>) -> Vec<u8> {
    values.flat_map(|v| (v as f32).to_le_bytes()).collect()
}

/// Loads a PGM (`.pgm`) or RAWJ image. Integer samples are scaled by their
/// type's maximum; float samples already in `[0, 1]` are kept, others are
/// min-max normalized.
pub fn load_image(path: &Path) -> Result<Image> {
    if path.extension().and_then(|e| e.to_str()) == Some("pgm") {
        return load_pgm(path);
    }
    let (header, data) = read_rawj(path)?;
    if header.channels.unwrap_or(1) != 1 {
        return Err(Error::format(path, "images must have one channel"));
    }
    let image = match data {
        RawjData::Float(v) => {
            if v.iter().all(|x| (0.0..=1.0).contains(x)) {
                Image::new(&header.dims, v)
            } else {
                Image::from_raw(&header.dims, &v)
            }
        }
        RawjData::Int(v) => {
            let max = match header.dtype {
                Dtype::U8 => 255,
                Dtype::U16 => u16::MAX,
                _ => return Err(Error::format(path, "u32 images are not supported")),
            };
            let samples: Vec<u16> = v.iter().map(|&s| s as u16).collect();
            Image::from_scaled(&header.dims, &samples, max)
        }
    }
    .map_err(|e| Error::format(path, e.to_string()))?;
    match header.spacing {
        Some(s) => image.with_spacing(&s).map_err(|e| Error::format(path, e.to_string())),
        None => Ok(image),
    }
}

/// Writes normalized intensities as RAWJ `f32`.
pub fn save_image_rawj(image: &Image, path: &Path) -> Result<()> {
    let header = RawjHeader::new(image.dims(), Some(image.spacing()), Dtype::F32, None);
    write_rawj(path, &header, &f32_bytes(image.data().iter().copied()))
}

fn pgm_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

/// Binary PGM (`P5`), 8 or 16 bit.
pub fn load_pgm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes).map_err(|m| Error::format(path, m))
}

pub fn parse_pgm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let mut pos = 0;
    if pgm_token(bytes, &mut pos) != Some(b"P5") {
        return Err("not a binary PGM (missing P5 magic)".into());
    }
    let mut num = |what: &str| -> std::result::Result<usize, String> {
        pgm_token(bytes, &mut pos)
            .and_then(|t| std::str::from_utf8(t).ok())
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| format!("bad PGM {what}"))
    };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(format!("bad PGM header {w}x{h} max {maxval}"));
    }
    // Exactly one whitespace byte separates the header from the samples.
    pos += 1;
    let data = bytes.get(pos..).unwrap_or(&[]);
    let n = w * h;
    let samples: Vec<u16> = if maxval < 256 {
        if data.len() != n {
            return Err(format!("PGM payload has {} bytes, expected {n}", data.len()));
        }
        data.iter().map(|&b| u16::from(b)).collect()
    } else {
        if data.len() != 2 * n {
            return Err(format!("PGM payload has {} bytes, expected {}", data.len(), 2 * n));
        }
        data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    };
    Image::from_scaled(&[w, h], &samples, maxval as u16).map_err(|e| e.to_string())
}

/// 8-bit PGM of a 2D image.
pub fn save_pgm(image: &Image, path: &Path) -> Result<()> {
    let dims = image.dims();
    if dims.len() != 2 {
        return Err(Error::Usage("PGM output needs a 2D image".into()));
    }
    let mut bytes = format!("P5\n{} {}\n255\n", dims[0], dims[1]).into_bytes();
    bytes.extend(image.data().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    write_file(path, &bytes)
}

/// Label maps are RAWJ `u16` with 65535 for unlabeled voxels.
pub fn save_labels(labels: &LabelMap, path: &Path) -> Result<()> {
    let header = RawjHeader::new(labels.dims(), None, Dtype::U16, None);
    let payload: Vec<u8> = labels.labels().iter().flat_map(|l| l.to_le_bytes()).collect();
    write_rawj(path, &header, &payload)
}

pub fn load_labels(path: &Path) -> Result<LabelMap> {
    let (header, data) = read_rawj(path)?;
    let values = match (header.dtype, data) {
        (Dtype::U16 | Dtype::U8, RawjData::Int(v)) => v.into_iter().map(|x| x as u16).collect(),
        _ => return Err(Error::format(path, "label maps must be u8 or u16")),
    };
    LabelMap::new(&header.dims, values).map_err(|e| Error::format(path, e.to_string()))
}

/// `K` channels of `f32`, entries clamped to `[0, 1]`.
pub fn save_probabilities(field: &ProbabilityField, path: &Path) -> Result<()> {
    let header = RawjHeader::new(field.dims(), None, Dtype::F32, Some(field.k()));
    write_rawj(path, &header, &f32_bytes(field.clamped_values().into_iter()))
}

pub fn load_probabilities(path: &Path) -> Result<ProbabilityField> {
    let (header, data) = read_rawj(path)?;
    let RawjData::Float(v) = data else {
        return Err(Error::format(path, "probability fields are float"));
    };
    let k = header.channels.unwrap_or(1);
    ProbabilityField::new(&header.dims, k, v).map_err(|e| Error::format(path, e.to_string()))
}

/// One `f32` channel per axis.
pub fn save_displacement(field: &DisplacementField, path: &Path) -> Result<()> {
    let header = RawjHeader::new(field.dims(), None, Dtype::F32, Some(field.ndim()));
    write_rawj(path, &header, &f32_bytes(field.data().iter().copied()))
}

pub fn load_displacement(path: &Path) -> Result<DisplacementField> {
    let (header, data) = read_rawj(path)?;
    let RawjData::Float(v) = data else {
        return Err(Error::format(path, "displacement fields are float"));
    };
    if header.channels != Some(header.dims.len()) {
        return Err(Error::format(path, "displacement fields need one channel per axis"));
    }
    DisplacementField::new(&header.dims, v).map_err(|e| Error::format(path, e.to_string()))
}

/// Cluster id per voxel as RAWJ `u32`.
pub fn save_cluster_map(agg: &Aggregation, path: &Path) -> Result<()> {
    let header = RawjHeader::new(agg.dims(), None, Dtype::U32, None);
    let payload: Vec<u8> = agg.cluster_map().iter().flat_map(|c| c.to_le_bytes()).collect();
    write_rawj(path, &header, &payload)
}
