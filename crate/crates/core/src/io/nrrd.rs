//! A strict subset of NRRD: three-dimensional, raw encoding, little-endian,
//! `float` / `short` / `uchar` samples, diagonal spacing.
//!
//! ```text
//! NRRD0004
//! # comments are ignored
//! type: float
//! dimension: 3
//! sizes: 4 4 4
//! encoding: raw
//! endian: little
//! spacings: 1 1 1
//!
//! <raw payload>
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::{Dims, LabelMap, ProbMap, Spacing, Volume};

/// Sample type of the payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleType {
    Float32,
    Int16,
    Uint8,
}

impl SampleType {
    pub fn size(self) -> usize {
        match self {
            SampleType::Float32 => 4,
            SampleType::Int16 => 2,
            SampleType::Uint8 => 1,
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "float" | "float32" => Some(SampleType::Float32),
            "short" | "short int" | "signed short" | "signed short int" | "int16" | "int16_t" => {
                Some(SampleType::Int16)
            }
            "uchar" | "unsigned char" | "uint8" | "uint8_t" => Some(SampleType::Uint8),
            _ => None,
        }
    }

    fn nrrd_name(self) -> &'static str {
        match self {
            SampleType::Float32 => "float",
            SampleType::Int16 => "short",
            SampleType::Uint8 => "uchar",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NrrdHeader {
    pub sample_type: SampleType,
    pub dims: Dims,
    pub spacing: Spacing,
}

/// Decoded payload, kept in its on-disk type.
#[derive(Debug, Clone, PartialEq)]
pub enum Samples {
    Float32(Vec<f32>),
    Int16(Vec<i16>),
    Uint8(Vec<u8>),
}

impl Samples {
    pub fn to_f32(&self) -> Vec<f32> {
        match self {
            Samples::Float32(v) => v.clone(),
            Samples::Int16(v) => v.iter().map(|&x| x as f32).collect(),
            Samples::Uint8(v) => v.iter().map(|&x| x as f32).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NrrdImage {
    pub header: NrrdHeader,
    pub samples: Samples,
}

// Fields we understand but whose values do not affect decoding.
const IGNORED_FIELDS: &[&str] = &["space", "space dimension", "space origin", "content", "kinds"];

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_header(text: &str) -> Result<NrrdHeader> {
    let mut sample_type = None;
    let mut dimension = None;
    let mut sizes: Option<[usize; 3]> = None;
    let mut encoding = None;
    let mut endian = None;
    let mut spacing: Option<[f64; 3]> = None;

    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim_end_matches('\r');
        if line_no == 1 && line.starts_with("NRRD") {
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        // `key:=value` pairs are free-form metadata.
        if line.contains(":=") {
            continue;
        }
        let Some((key, value)) = line.split_once(':') else {
            return Err(perr(line_no, format!("expected `key: value`, got {line:?}")));
        };
        let key = key.trim();
        let value = value.trim();
        match key {
            "type" => {
                sample_type = Some(SampleType::parse(value).ok_or_else(|| {
                    perr(line_no, format!("unsupported type {value:?}"))
                })?)
            }
            "dimension" => {
                let d: usize = value
                    .parse()
                    .map_err(|_| perr(line_no, format!("bad dimension {value:?}")))?;
                if d != 3 {
                    return Err(perr(line_no, format!("dimension must be 3, got {d}")));
                }
                dimension = Some(d);
            }
            "sizes" => {
                let v = parse_list::<usize>(value, line_no)?;
                if v.len() != 3 || v.contains(&0) {
                    return Err(perr(line_no, format!("sizes must be three positive integers, got {value:?}")));
                }
                sizes = Some([v[0], v[1], v[2]]);
            }
            "encoding" => {
                if value != "raw" {
                    return Err(perr(line_no, format!("only raw encoding is supported, got {value:?}")));
                }
                encoding = Some(());
            }
            "endian" => match value {
                "little" => endian = Some(()),
                "big" => return Err(perr(line_no, "big-endian payloads are not supported")),
                other => return Err(perr(line_no, format!("bad endian {other:?}"))),
            },
            "spacings" => {
                let v = parse_list::<f64>(value, line_no)?;
                if v.len() != 3 {
                    return Err(perr(line_no, "spacings must have three entries"));
                }
                spacing = Some([v[0], v[1], v[2]]);
            }
            "space directions" => spacing = Some(parse_directions(value, line_no)?),
            k if IGNORED_FIELDS.contains(&k) => {}
            other => return Err(perr(line_no, format!("unsupported field {other:?}"))),
        }
    }

    let missing = |f: &str| perr(0, format!("missing required field {f:?}"));
    let sample_type = sample_type.ok_or_else(|| missing("type"))?;
    dimension.ok_or_else(|| missing("dimension"))?;
    let [nx, ny, nz] = sizes.ok_or_else(|| missing("sizes"))?;
    encoding.ok_or_else(|| missing("encoding"))?;
    if sample_type.size() > 1 {
        endian.ok_or_else(|| missing("endian"))?;
    }
    let [sx, sy, sz] = spacing.unwrap_or([1.0; 3]);
    Ok(NrrdHeader {
        sample_type,
        dims: Dims::new(nx, ny, nz)?,
        spacing: Spacing::new(sx, sy, sz)?,
    })
}

fn parse_list<T: std::str::FromStr>(value: &str, line: usize) -> Result<Vec<T>> {
    value
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| perr(line, format!("bad number {t:?}"))))
        .collect()
}

fn parse_directions(value: &str, line: usize) -> Result<[f64; 3]> {
    let vectors: Vec<&str> = value.split_whitespace().collect();
    if vectors.len() != 3 {
        return Err(perr(line, "space directions must list three vectors"));
    }
    let mut out = [0.0; 3];
    for (axis, v) in vectors.iter().enumerate() {
        let inner = v
            .strip_prefix('(')
            .and_then(|v| v.strip_suffix(')'))
            .ok_or_else(|| perr(line, format!("bad direction vector {v:?}")))?;
        let comps: Vec<f64> = inner
            .split(',')
            .map(|c| c.trim().parse().map_err(|_| perr(line, format!("bad number {c:?}"))))
            .collect::<Result<_>>()?;
        if comps.len() != 3 {
            return Err(perr(line, format!("direction {v:?} must have three components")));
        }
        for (j, &c) in comps.iter().enumerate() {
            if j != axis && c != 0.0 {
                return Err(perr(line, "only diagonal space directions are supported"));
            }
        }
        out[axis] = comps[axis].abs();
    }
    Ok(out)
}

/// Splits `bytes` at the blank line ending the header.
fn split_header(bytes: &[u8]) -> Result<(&str, &[u8])> {
    let mut pos = 0;
    let mut line = 1;
    while pos < bytes.len() {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|e| pos + e)
            .ok_or_else(|| perr(line, "header is not terminated by a blank line"))?;
        let content = &bytes[pos..end];
        if content.is_empty() || content == b"\r" {
            let header = std::str::from_utf8(&bytes[..pos])
                .map_err(|_| perr(line, "header is not valid UTF-8"))?;
            return Ok((header, &bytes[end + 1..]));
        }
        pos = end + 1;
        line += 1;
    }
    Err(perr(line, "header is not terminated by a blank line"))
}

/// Decodes an in-memory NRRD-subset file.
pub fn decode_nrrd(bytes: &[u8]) -> Result<NrrdImage> {
    let (text, payload) = split_header(bytes)?;
    let header = parse_header(text)?;
    let n = header.dims.len();
    let expected = n * header.sample_type.size();
    if payload.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::Validation(format!(
            "payload has {} trailing bytes beyond the declared {expected}",
            payload.len() - expected
        )));
    }
    let samples = match header.sample_type {
        SampleType::Float32 => Samples::Float32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        ),
        SampleType::Int16 => Samples::Int16(
            payload
                .chunks_exact(2)
                .map(|c| i16::from_le_bytes([c[0], c[1]]))
                .collect(),
        ),
        SampleType::Uint8 => Samples::Uint8(payload.to_vec()),
    };
    Ok(NrrdImage { header, samples })
}

pub fn encode_nrrd(header: &NrrdHeader, samples: &Samples) -> Vec<u8> {
    let Spacing { sx, sy, sz } = header.spacing;
    let d = header.dims;
    let mut out = format!(
        "NRRD0004\ntype: {}\ndimension: 3\nsizes: {} {} {}\nencoding: raw\nendian: little\nspacings: {sx} {sy} {sz}\n\n",
        header.sample_type.nrrd_name(),
        d.nx,
        d.ny,
        d.nz
    )
    .into_bytes();
    match samples {
        Samples::Float32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        Samples::Int16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        Samples::Uint8(v) => out.extend_from_slice(v),
    }
    out
}

pub fn read_nrrd(path: impl AsRef<Path>) -> Result<NrrdImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_nrrd(&bytes)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads any supported sample type as an intensity volume.
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let img = read_nrrd(path)?;
    Volume::new(img.header.dims, img.header.spacing, img.samples.to_f32())
}

/// Reads a binary label map; every value must be 0 or 1.
pub fn read_label_map(path: impl AsRef<Path>) -> Result<LabelMap> {
    let img = read_nrrd(path)?;
    let labels: Vec<u8> = match &img.samples {
        Samples::Uint8(v) => v.clone(),
        other => other
            .to_f32()
            .iter()
            .enumerate()
            .map(|(i, &v)| match v {
                0.0 => Ok(0),
                1.0 => Ok(1),
                _ => Err(Error::Validation(format!(
                    "label value {v} at voxel {i} is not 0 or 1"
                ))),
            })
            .collect::<Result<_>>()?,
    };
    LabelMap::with_spacing(img.header.dims, img.header.spacing, labels)
}

/// Reads a foreground probability map; every value must lie in `[0, 1]`.
pub fn read_prob_map(path: impl AsRef<Path>) -> Result<ProbMap> {
    let img = read_nrrd(path)?;
    ProbMap::with_spacing(img.header.dims, img.header.spacing, img.samples.to_f32())
}

pub fn encode_volume(v: &Volume) -> Vec<u8> {
    encode_f32(v.dims(), v.spacing(), v.data())
}

pub fn encode_label_map(m: &LabelMap) -> Vec<u8> {
    encode_nrrd(
        &NrrdHeader {
            sample_type: SampleType::Uint8,
            dims: m.dims(),
            spacing: m.spacing(),
        },
        &Samples::Uint8(m.labels().to_vec()),
    )
}

pub fn encode_prob_map(p: &ProbMap) -> Vec<u8> {
    encode_f32(p.dims(), p.spacing(), p.prob())
}

/// Encodes an arbitrary float32 field (distance maps may hold `inf`).
pub fn encode_f32(dims: Dims, spacing: Spacing, data: &[f32]) -> Vec<u8> {
    encode_nrrd(
        &NrrdHeader {
            sample_type: SampleType::Float32,
            dims,
            spacing,
        },
        &Samples::Float32(data.to_vec()),
    )
}

pub fn write_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_volume(v))
}

pub fn write_label_map(m: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_label_map(m))
}

pub fn write_prob_map(p: &ProbMap, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_prob_map(p))
}

pub fn write_f32(dims: Dims, spacing: Spacing, data: &[f32], path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_f32(dims, spacing, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(ty: &str, sizes: &str) -> String {
        format!("NRRD0004\n# produced by hand\ntype: {ty}\ndimension: 3\nsizes: {sizes}\nencoding: raw\nendian: little\nspacings: 1 1 1\n\n")
    }

    #[test]
    fn smallest_float_file() {
        let mut bytes = header("float", "2 2 2").into_bytes();
        for i in 0..8 {
            bytes.extend_from_slice(&(i as f32).to_le_bytes());
        }
        let img = decode_nrrd(&bytes).unwrap();
        assert_eq!(img.header.dims.len(), 8);
        assert_eq!(img.samples.to_f32()[7], 7.0);
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = header("float", "4 4 4").into_bytes();
        bytes.extend(std::iter::repeat_n(0u8, 63 * 4));
        assert!(matches!(
            decode_nrrd(&bytes),
            Err(Error::Truncated {
                expected: 256,
                found: 252
            })
        ));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = header("uchar", "1 1 2").into_bytes();
        bytes.extend_from_slice(&[0, 1, 1]);
        assert!(matches!(decode_nrrd(&bytes), Err(Error::Validation(_))));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "NRRD0004\ntype: float\nthis is not a field\n\n";
        match decode_nrrd(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_unsupported_header_values() {
        for (bad, want) in [
            ("dimension: 2", "dimension"),
            ("encoding: gzip", "raw"),
            ("endian: big", "big-endian"),
            ("type: double", "unsupported type"),
            ("centers: cell cell cell", "unsupported field"),
        ] {
            let text = format!("NRRD0004\n{bad}\n\n");
            let err = decode_nrrd(text.as_bytes()).unwrap_err().to_string();
            assert!(err.contains(want), "{bad}: {err}");
        }
    }

    #[test]
    fn diagonal_space_directions() {
        let text = "NRRD0004\ntype: uchar\ndimension: 3\nsizes: 1 1 1\nencoding: raw\nspace: left-posterior-superior\nspace directions: (0.5,0,0) (0,0.7,0) (0,0,2.5)\n\n";
        let mut bytes = text.as_bytes().to_vec();
        bytes.push(1);
        let img = decode_nrrd(&bytes).unwrap();
        assert_eq!(img.header.spacing, Spacing::new(0.5, 0.7, 2.5).unwrap());

        let skew = "NRRD0004\ntype: uchar\ndimension: 3\nsizes: 1 1 1\nencoding: raw\nspace directions: (1,0.1,0) (0,1,0) (0,0,1)\n\n";
        assert!(decode_nrrd(skew.as_bytes()).is_err());
    }

    #[test]
    fn int16_payload() {
        let mut bytes = header("short", "2 1 1").into_bytes();
        bytes.extend_from_slice(&(-1000i16).to_le_bytes());
        bytes.extend_from_slice(&(40i16).to_le_bytes());
        assert_eq!(decode_nrrd(&bytes).unwrap().samples, Samples::Int16(vec![-1000, 40]));
    }
}
