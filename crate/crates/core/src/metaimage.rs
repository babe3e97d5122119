//! Reader and writer for the subset of MetaImage used by the engine.
//!
//! Supported: `.mhd` header + detached raw payload, or `.mha` with the
//! payload following `ElementDataFile = LOCAL`. Payloads are uncompressed and
//! little-endian. Volumes are written as `MET_FLOAT`, displacement fields as
//! `MET_DOUBLE` with `ElementNumberOfChannels = 3` interleaved per voxel in
//! `(ux, uy, uz)` order, label maps as `MET_UCHAR` or `MET_USHORT`.
//!
//! Fields are also accepted as `NDims = 4` with a trailing axis of length 3,
//! in which case the channel axis is the slowest-varying one.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::volume::{Dims, DisplacementField, LabelMap, Volume};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ElementType {
    UChar,
    Short,
    UShort,
    Float,
    Double,
}

impl ElementType {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "MET_UCHAR" => ElementType::UChar,
            "MET_SHORT" => ElementType::Short,
            "MET_USHORT" => ElementType::UShort,
            "MET_FLOAT" => ElementType::Float,
            "MET_DOUBLE" => ElementType::Double,
            other => return Err(Error::UnsupportedElementType(other.to_string())),
        })
    }

    fn name(self) -> &'static str {
        match self {
            ElementType::UChar => "MET_UCHAR",
            ElementType::Short => "MET_SHORT",
            ElementType::UShort => "MET_USHORT",
            ElementType::Float => "MET_FLOAT",
            ElementType::Double => "MET_DOUBLE",
        }
    }

    fn size(self) -> usize {
        match self {
            ElementType::UChar => 1,
            ElementType::Short | ElementType::UShort => 2,
            ElementType::Float => 4,
            ElementType::Double => 8,
        }
    }

    fn decode(self, bytes: &[u8]) -> Vec<f64> {
        match self {
            ElementType::UChar => bytes.iter().map(|&b| b as f64).collect(),
            ElementType::Short => bytes
                .chunks_exact(2)
                .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64)
                .collect(),
            ElementType::UShort => bytes
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]) as f64)
                .collect(),
            ElementType::Float => bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect(),
            ElementType::Double => bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        }
    }
}

#[derive(Debug)]
enum DataFile {
    Local,
    Detached(PathBuf),
}

#[derive(Debug)]
struct Header {
    ndims: usize,
    dim_size: Vec<usize>,
    spacing: Vec<f64>,
    element_type: ElementType,
    channels: usize,
    data_file: DataFile,
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::MalformedHeader(format!("{key}: bad boolean {value:?}"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split_whitespace()
        .map(|t| {
            t.parse::<T>()
                .map_err(|_| Error::MalformedHeader(format!("{key}: cannot parse {t:?}")))
        })
        .collect()
}

/// Parses header lines. Returns the header and, for `.mha`, the byte offset
/// at which the payload starts.
fn parse_header(bytes: &[u8], header_dir: &Path) -> Result<(Header, usize)> {
    let mut ndims = None;
    let mut dim_size = None;
    let mut spacing = None;
    let mut element_type = None;
    let mut channels = 1usize;
    let mut data_file = None;
    let mut offset = 0usize;

    while offset < bytes.len() {
        let end = bytes[offset..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|p| offset + p + 1)
            .unwrap_or(bytes.len());
        let line = std::str::from_utf8(&bytes[offset..end])
            .map_err(|_| Error::MalformedHeader("non-UTF-8 header line".into()))?
            .trim();
        offset = end;
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::MalformedHeader(format!("expected `key = value`, got {line:?}")))?;
        let key = key.trim();
        let value = value.trim();
        match key {
            "ObjectType" => {
                if value != "Image" {
                    return Err(Error::MalformedHeader(format!("ObjectType {value} is not Image")));
                }
            }
            "NDims" => {
                ndims = Some(value.parse::<usize>().map_err(|_| {
                    Error::MalformedHeader(format!("NDims: cannot parse {value:?}"))
                })?)
            }
            "DimSize" => dim_size = Some(parse_list::<usize>(key, value)?),
            "ElementSpacing" | "ElementSize" => {
                if key == "ElementSpacing" || spacing.is_none() {
                    spacing = Some(parse_list::<f64>(key, value)?)
                }
            }
            "ElementType" => element_type = Some(ElementType::parse(value)?),
            "ElementNumberOfChannels" => {
                channels = value.parse::<usize>().map_err(|_| {
                    Error::MalformedHeader(format!("ElementNumberOfChannels: cannot parse {value:?}"))
                })?
            }
            "BinaryDataByteOrderMSB" | "ElementByteOrderMSB" => {
                if parse_bool(key, value)? {
                    return Err(Error::UnsupportedByteOrder);
                }
            }
            "BinaryData" => {
                if !parse_bool(key, value)? {
                    return Err(Error::MalformedHeader("ASCII payloads are not supported".into()));
                }
            }
            "CompressedData" => {
                if parse_bool(key, value)? {
                    return Err(Error::MalformedHeader("compressed payloads are not supported".into()));
                }
            }
            "HeaderSize" => {
                if value != "0" {
                    return Err(Error::MalformedHeader("HeaderSize is not supported".into()));
                }
            }
            "ElementDataFile" => {
                data_file = Some(if value == "LOCAL" {
                    DataFile::Local
                } else if value.starts_with("LIST") || value.contains('%') {
                    return Err(Error::MalformedHeader(format!(
                        "multi-file payload {value:?} is not supported"
                    )));
                } else {
                    DataFile::Detached(header_dir.join(value))
                });
                // ElementDataFile terminates the header.
                break;
            }
            _ => {}
        }
    }

    let ndims = ndims.ok_or_else(|| Error::MalformedHeader("missing NDims".into()))?;
    if !(3..=4).contains(&ndims) {
        return Err(Error::UnsupportedDimensionality(ndims));
    }
    let dim_size = dim_size.ok_or_else(|| Error::MalformedHeader("missing DimSize".into()))?;
    if dim_size.len() != ndims {
        return Err(Error::MalformedHeader(format!(
            "DimSize has {} entries, NDims is {ndims}",
            dim_size.len()
        )));
    }
    let spacing = spacing.unwrap_or_else(|| vec![1.0; ndims]);
    if spacing.len() != ndims {
        return Err(Error::MalformedHeader(format!(
            "ElementSpacing has {} entries, NDims is {ndims}",
            spacing.len()
        )));
    }
    let element_type =
        element_type.ok_or_else(|| Error::MalformedHeader("missing ElementType".into()))?;
    let data_file =
        data_file.ok_or_else(|| Error::MalformedHeader("missing ElementDataFile".into()))?;
    Ok((
        Header {
            ndims,
            dim_size,
            spacing,
            element_type,
            channels,
            data_file,
        },
        offset,
    ))
}

struct RawImage {
    dims: Dims,
    spacing: [f64; 3],
    /// Fourth axis length for `NDims = 4`, otherwise 1.
    extra_axis: usize,
    channels: usize,
    samples: Vec<f64>,
}

fn read_raw(path: &Path) -> Result<RawImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let (header, payload_start) = parse_header(&bytes, dir)?;

    let dims = Dims::new(header.dim_size[0], header.dim_size[1], header.dim_size[2]);
    let extra_axis = if header.ndims == 4 { header.dim_size[3] } else { 1 };
    let spacing = [header.spacing[0], header.spacing[1], header.spacing[2]];
    let count = dims.len() * extra_axis * header.channels;
    let expected = count * header.element_type.size();

    let payload = match &header.data_file {
        DataFile::Local => bytes[payload_start..].to_vec(),
        DataFile::Detached(raw) => fs::read(raw).map_err(|e| Error::io(raw, e))?,
    };
    if payload.len() != expected {
        return Err(Error::PayloadSizeMismatch {
            expected,
            found: payload.len(),
        });
    }
    let samples = header.element_type.decode(&payload);
    if let Some(idx) = samples.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(idx));
    }
    Ok(RawImage {
        dims,
        spacing,
        extra_axis,
        channels: header.channels,
        samples,
    })
}

fn format_list<T: std::fmt::Display>(values: &[T]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn write_raw(
    path: &Path,
    dims: Dims,
    spacing: [f64; 3],
    channels: usize,
    element_type: ElementType,
    payload: &[u8],
) -> Result<()> {
    let single_file = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("mha"));
    let raw_path = path.with_extension("raw");
    let data_file = if single_file {
        "LOCAL".to_string()
    } else {
        raw_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .ok_or_else(|| Error::MalformedHeader(format!("bad output path {}", path.display())))?
    };

    let mut header = String::new();
    header.push_str("ObjectType = Image\n");
    header.push_str("NDims = 3\n");
    header.push_str("BinaryData = True\n");
    header.push_str("BinaryDataByteOrderMSB = False\n");
    header.push_str("CompressedData = False\n");
    header.push_str(&format!("ElementSpacing = {}\n", format_list(&spacing)));
    header.push_str(&format!("DimSize = {}\n", format_list(&dims.0)));
    if channels != 1 {
        header.push_str(&format!("ElementNumberOfChannels = {channels}\n"));
    }
    header.push_str(&format!("ElementType = {}\n", element_type.name()));
    header.push_str(&format!("ElementDataFile = {data_file}\n"));

    let mut out = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    out.write_all(header.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    if single_file {
        out.write_all(payload).map_err(|e| Error::io(path, e))?;
    } else {
        fs::write(&raw_path, payload).map_err(|e| Error::io(&raw_path, e))?;
    }
    Ok(())
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let raw = read_raw(path.as_ref())?;
    if raw.extra_axis != 1 {
        return Err(Error::UnsupportedDimensionality(4));
    }
    if raw.channels != 1 {
        return Err(Error::ChannelCount {
            expected: 1,
            found: raw.channels,
        });
    }
    let data = raw.samples.iter().map(|&v| v as f32).collect();
    Volume::new(raw.dims, raw.spacing, data)
}

pub fn write_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    if let Some(idx) = v.data().iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(idx));
    }
    let payload: Vec<u8> = v.data().iter().flat_map(|x| x.to_le_bytes()).collect();
    write_raw(
        path.as_ref(),
        v.dims(),
        v.spacing(),
        1,
        ElementType::Float,
        &payload,
    )
}

pub fn read_field(path: impl AsRef<Path>) -> Result<DisplacementField> {
    let raw = read_raw(path.as_ref())?;
    let n = raw.dims.len();
    let data = match (raw.extra_axis, raw.channels) {
        (1, 3) => raw
            .samples
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect(),
        (3, 1) => (0..n)
            .map(|i| [raw.samples[i], raw.samples[n + i], raw.samples[2 * n + i]])
            .collect(),
        (1, found) | (found, _) => return Err(Error::ChannelCount { expected: 3, found }),
    };
    DisplacementField::new(raw.dims, raw.spacing, data)
}

pub fn write_field(field: &DisplacementField, path: impl AsRef<Path>) -> Result<()> {
    if !field.is_finite() {
        return Err(Error::NonFinite(
            field
                .data()
                .iter()
                .position(|u| u.iter().any(|c| !c.is_finite()))
                .unwrap_or(0),
        ));
    }
    let payload: Vec<u8> = field
        .data()
        .iter()
        .flatten()
        .flat_map(|x| x.to_le_bytes())
        .collect();
    write_raw(
        path.as_ref(),
        field.dims(),
        field.spacing(),
        3,
        ElementType::Double,
        &payload,
    )
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    let raw = read_raw(path.as_ref())?;
    if raw.extra_axis != 1 {
        return Err(Error::UnsupportedDimensionality(4));
    }
    if raw.channels != 1 {
        return Err(Error::ChannelCount {
            expected: 1,
            found: raw.channels,
        });
    }
    let data = raw
        .samples
        .iter()
        .map(|&v| {
            if v >= 0.0 && v <= u16::MAX as f64 && v.fract() == 0.0 {
                Ok(v as u16)
            } else {
                Err(Error::InvalidLabel(v))
            }
        })
        .collect::<Result<Vec<u16>>>()?;
    LabelMap::new(raw.dims, raw.spacing, data)
}

pub fn write_labels(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let max = labels.data().iter().copied().max().unwrap_or(0);
    let (element_type, payload): (ElementType, Vec<u8>) = if max <= u8::MAX as u16 {
        (
            ElementType::UChar,
            labels.data().iter().map(|&l| l as u8).collect(),
        )
    } else {
        (
            ElementType::UShort,
            labels.data().iter().flat_map(|l| l.to_le_bytes()).collect(),
        )
    };
    write_raw(
        path.as_ref(),
        labels.dims(),
        labels.spacing(),
        1,
        element_type,
        &payload,
    )
}
