//! MetaImage (`.mhd` + raw) subset: 3D, single channel, uncompressed,
//! little-endian, X-fastest.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Grid, Volume};
use crate::error::{Error, Result};

/// Element types accepted by [`load_volume`]. The writer always emits `Float`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementType {
    UChar,
    Short,
    UShort,
    Float,
    Double,
}

impl ElementType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "MET_UCHAR" => ElementType::UChar,
            "MET_SHORT" => ElementType::Short,
            "MET_USHORT" => ElementType::UShort,
            "MET_FLOAT" => ElementType::Float,
            "MET_DOUBLE" => ElementType::Double,
            _ => return None,
        })
    }

    pub fn size(self) -> usize {
        match self {
            ElementType::UChar => 1,
            ElementType::Short | ElementType::UShort => 2,
            ElementType::Float => 4,
            ElementType::Double => 8,
        }
    }

    fn decode(self, bytes: &[u8]) -> Vec<f64> {
        let n = self.size();
        let chunks = bytes.chunks_exact(n);
        match self {
            ElementType::UChar => bytes.iter().map(|&b| b as f64).collect(),
            ElementType::Short => chunks
                .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64)
                .collect(),
            ElementType::UShort => chunks
                .map(|c| u16::from_le_bytes([c[0], c[1]]) as f64)
                .collect(),
            ElementType::Float => chunks
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect(),
            ElementType::Double => chunks
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect(),
        }
    }
}

struct Header {
    grid: Grid,
    element_type: ElementType,
    data_file: String,
    /// Byte offset of the payload when `ElementDataFile = LOCAL`.
    local_offset: usize,
}

fn header_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Header {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn parse_numbers<T: std::str::FromStr>(path: &Path, key: &str, value: &str) -> Result<[T; 3]> {
    let parts: Vec<T> = value
        .split_whitespace()
        .map(|p| p.parse::<T>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| header_err(path, format!("{key}: cannot parse '{value}'")))?;
    parts
        .try_into()
        .map_err(|_| header_err(path, format!("{key}: expected 3 values, got '{value}'")))
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<Header> {
    let mut fields: HashMap<String, String> = HashMap::new();
    let mut offset = 0usize;
    let mut data_file = None;
    for line in bytes.split_inclusive(|&b| b == b'\n') {
        offset += line.len();
        let text = std::str::from_utf8(line)
            .map_err(|_| header_err(path, "header is not valid UTF-8"))?
            .trim();
        if text.is_empty() {
            continue;
        }
        let (key, value) = text
            .split_once('=')
            .ok_or_else(|| header_err(path, format!("expected 'Key = Value', got '{text}'")))?;
        let (key, value) = (key.trim().to_string(), value.trim().to_string());
        // ElementDataFile is always the last header line.
        if key == "ElementDataFile" {
            data_file = Some(value);
            break;
        }
        fields.insert(key, value);
    }
    let data_file = data_file.ok_or_else(|| header_err(path, "missing ElementDataFile"))?;
    let get = |k: &str| fields.get(k).map(String::as_str);

    if let Some(t) = get("ObjectType") {
        if t != "Image" {
            return Err(header_err(path, format!("ObjectType must be Image, got {t}")));
        }
    }
    match get("NDims") {
        Some("3") => {}
        Some(n) => return Err(header_err(path, format!("NDims must be 3, got {n}"))),
        None => return Err(header_err(path, "missing NDims")),
    }
    for key in ["BinaryDataByteOrderMSB", "ElementByteOrderMSB", "CompressedData"] {
        if let Some(v) = get(key) {
            if !v.eq_ignore_ascii_case("false") {
                return Err(header_err(path, format!("{key} = {v} is not supported")));
            }
        }
    }
    if let Some(c) = get("ElementNumberOfChannels") {
        if c != "1" {
            return Err(header_err(path, format!("{c} channels not supported")));
        }
    }
    let dims: [usize; 3] = parse_numbers(
        path,
        "DimSize",
        get("DimSize").ok_or_else(|| header_err(path, "missing DimSize"))?,
    )?;
    let spacing = match get("ElementSpacing").or(get("ElementSize")) {
        Some(v) => parse_numbers(path, "ElementSpacing", v)?,
        None => [1.0; 3],
    };
    let origin = match get("Offset").or(get("Origin")).or(get("Position")) {
        Some(v) => parse_numbers(path, "Offset", v)?,
        None => [0.0; 3],
    };
    let et = get("ElementType").ok_or_else(|| header_err(path, "missing ElementType"))?;
    let element_type = ElementType::parse(et).ok_or_else(|| Error::UnsupportedElementType {
        path: path.to_path_buf(),
        element_type: et.to_string(),
    })?;
    let grid = Grid::new(dims, spacing, origin).map_err(|e| header_err(path, e.to_string()))?;
    Ok(Header {
        grid,
        element_type,
        data_file,
        local_offset: offset,
    })
}

/// Reads a MetaImage volume. Integer and single-precision data are widened to `f64`.
pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let header = parse_header(path, &bytes)?;

    let owned;
    let (payload, payload_path): (&[u8], PathBuf) = if header.data_file == "LOCAL" {
        (&bytes[header.local_offset..], path.to_path_buf())
    } else {
        let raw = path
            .parent()
            .unwrap_or_else(|| Path::new(""))
            .join(&header.data_file);
        owned = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
        (&owned[..], raw)
    };

    let size = header.element_type.size();
    let expected = header.grid.len();
    if payload.len() != expected * size {
        return Err(Error::ElementCountMismatch {
            path: payload_path,
            expected,
            found: payload.len() / size,
        });
    }
    let data = header.element_type.decode(payload);
    Volume::new(header.grid, data).map_err(|e| header_err(path, e.to_string()))
}

/// Writes `v` as `MET_FLOAT`: a text header at `path` and the raw samples
/// next to it (same stem, `.raw` extension).
pub fn save_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw_path = path.with_extension("raw");
    let raw_name = raw_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::invalid(format!("cannot derive raw file name from {path:?}")))?
        .to_string();
    let g = v.grid();
    let join = |a: [f64; 3]| format!("{} {} {}", a[0], a[1], a[2]);
    let header = format!(
        "ObjectType = Image\n\
         NDims = 3\n\
         BinaryData = True\n\
         BinaryDataByteOrderMSB = False\n\
         CompressedData = False\n\
         Offset = {}\n\
         ElementSpacing = {}\n\
         DimSize = {} {} {}\n\
         ElementType = MET_FLOAT\n\
         ElementDataFile = {}\n",
        join(g.origin),
        join(g.spacing),
        g.dims[0],
        g.dims[1],
        g.dims[2],
        raw_name
    );
    let mut raw = Vec::with_capacity(v.data().len() * 4);
    for &s in v.data() {
        raw.extend_from_slice(&(s as f32).to_le_bytes());
    }
    fs::write(&raw_path, raw).map_err(|e| Error::io(&raw_path, e))?;
    fs::write(path, header).map_err(|e| Error::io(path, e))?;
    Ok(())
}
