//! Binary volume files, parameter snapshots and atomic writes.
//!
//! Layout of a volume file (all integers little-endian):
//!
//! | offset | size | field                                                  |
//! |--------|------|--------------------------------------------------------|
//! | 0      | 4    | magic `JNV1`                                           |
//! | 4      | 1    | kind: 0 image, 1 label, 2 confidence, 3 supervision    |
//! | 5      | 12   | extents D, H, W as `u32`                               |
//! | 17     | 4    | class count as `u32` (labels only, 0 otherwise)        |
//! | 21     | ..   | payload, row-major (D, H, W): `f32` or `u8` per voxel  |

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{ConfidenceGrid, Dims, LabelGrid, SupervisionGrid, VolumeGrid};
use crate::model::SegmentorParams;

pub const MAGIC: [u8; 4] = *b"JNV1";
pub const HEADER_LEN: usize = 21;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridKind {
    Image = 0,
    Label = 1,
    Confidence = 2,
    Supervision = 3,
}

impl GridKind {
    pub fn from_byte(b: u8) -> Option<GridKind> {
        match b {
            0 => Some(GridKind::Image),
            1 => Some(GridKind::Label),
            2 => Some(GridKind::Confidence),
            3 => Some(GridKind::Supervision),
            _ => None,
        }
    }

    /// Bytes per voxel in the payload.
    pub fn element_size(self) -> usize {
        match self {
            GridKind::Image | GridKind::Confidence => 4,
            GridKind::Label | GridKind::Supervision => 1,
        }
    }
}

/// Any of the four grid kinds that can be stored in a volume file.
#[derive(Clone, Debug, PartialEq)]
pub enum VolumeFile {
    Image(VolumeGrid),
    Label(LabelGrid),
    Confidence(ConfidenceGrid),
    Supervision(SupervisionGrid),
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format { offset: offset as u64, message: message.into() }
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("four bytes"))
}

impl VolumeFile {
    pub fn kind(&self) -> GridKind {
        match self {
            VolumeFile::Image(_) => GridKind::Image,
            VolumeFile::Label(_) => GridKind::Label,
            VolumeFile::Confidence(_) => GridKind::Confidence,
            VolumeFile::Supervision(_) => GridKind::Supervision,
        }
    }

    pub fn dims(&self) -> Dims {
        match self {
            VolumeFile::Image(g) => g.dims(),
            VolumeFile::Label(g) => g.dims(),
            VolumeFile::Confidence(g) => g.dims(),
            VolumeFile::Supervision(g) => g.dims(),
        }
    }

    pub fn class_count(&self) -> usize {
        match self {
            VolumeFile::Label(g) => g.num_classes(),
            _ => 0,
        }
    }

    /// Payload bytes without the header.
    pub fn payload(&self) -> Vec<u8> {
        let floats = |d: &[f32]| d.iter().flat_map(|v| v.to_le_bytes()).collect();
        match self {
            VolumeFile::Image(g) => floats(g.data()),
            VolumeFile::Confidence(g) => floats(g.data()),
            VolumeFile::Label(g) => g.data().to_vec(),
            VolumeFile::Supervision(g) => g.data().to_vec(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let dims = self.dims();
        let mut out = Vec::with_capacity(HEADER_LEN + dims.len() * self.kind().element_size());
        out.extend_from_slice(&MAGIC);
        out.push(self.kind() as u8);
        for e in dims.as_array() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.class_count() as u32).to_le_bytes());
        out.extend(self.payload());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || bytes[..4] != MAGIC {
            return Err(format_err(0, "bad magic, expected JNV1"));
        }
        if bytes.len() < HEADER_LEN {
            return Err(format_err(bytes.len(), format!("truncated header ({} of {HEADER_LEN} bytes)", bytes.len())));
        }
        let kind =
            GridKind::from_byte(bytes[4]).ok_or_else(|| format_err(4, format!("unknown grid kind {}", bytes[4])))?;
        let mut extents = [0usize; 3];
        for (i, e) in extents.iter_mut().enumerate() {
            *e = read_u32(bytes, 5 + 4 * i) as usize;
            if *e == 0 {
                return Err(format_err(5 + 4 * i, "zero extent"));
            }
        }
        let classes = read_u32(bytes, 17) as usize;
        match kind {
            GridKind::Label if !(1..=256).contains(&classes) => {
                return Err(format_err(17, format!("label class count {classes} outside 1..=256")));
            }
            GridKind::Image | GridKind::Confidence | GridKind::Supervision if classes != 0 => {
                return Err(format_err(17, format!("class count must be 0 for this kind, got {classes}")));
            }
            _ => {}
        }
        let voxels = extents[0]
            .checked_mul(extents[1])
            .and_then(|n| n.checked_mul(extents[2]))
            .filter(|n| n.checked_mul(kind.element_size()).is_some())
            .ok_or_else(|| format_err(5, "extents overflow"))?;
        let expected = HEADER_LEN + voxels * kind.element_size();
        if bytes.len() < expected {
            return Err(format_err(bytes.len(), format!("truncated payload, expected {expected} bytes in total")));
        }
        if bytes.len() > expected {
            return Err(format_err(expected, format!("{} trailing bytes", bytes.len() - expected)));
        }
        let dims = Dims::from_array(extents)?;
        let payload = &bytes[HEADER_LEN..];
        let floats = |check: fn(f32) -> bool, what: &str| -> Result<Vec<f32>> {
            payload
                .chunks_exact(4)
                .enumerate()
                .map(|(i, c)| {
                    let v = f32::from_le_bytes(c.try_into().expect("four bytes"));
                    if check(v) {
                        Ok(v)
                    } else {
                        Err(format_err(HEADER_LEN + 4 * i, format!("{what} value {v}")))
                    }
                })
                .collect()
        };
        let bytes_below = |limit: usize, what: &str| -> Result<Vec<u8>> {
            if let Some(i) = payload.iter().position(|&b| usize::from(b) >= limit) {
                return Err(format_err(HEADER_LEN + i, format!("{what} value {} not below {limit}", payload[i])));
            }
            Ok(payload.to_vec())
        };
        Ok(match kind {
            GridKind::Image => VolumeFile::Image(VolumeGrid::new(dims, floats(f32::is_finite, "non-finite image")?)?),
            GridKind::Confidence => VolumeFile::Confidence(ConfidenceGrid::new(
                dims,
                floats(|v| (0.0..=1.0).contains(&v), "confidence outside [0, 1]")?,
            )?),
            GridKind::Label => VolumeFile::Label(LabelGrid::new(dims, classes, bytes_below(classes, "label")?)?),
            GridKind::Supervision => {
                VolumeFile::Supervision(SupervisionGrid::new(dims, bytes_below(2, "supervision")?)?)
            }
        })
    }

    /// Builds a file from a bare payload, e.g. a raw array exported elsewhere.
    pub fn from_raw(kind: GridKind, dims: Dims, class_count: usize, payload: &[u8]) -> Result<Self> {
        let mut bytes = Vec::with_capacity(HEADER_LEN + payload.len());
        bytes.extend_from_slice(&MAGIC);
        bytes.push(kind as u8);
        for e in dims.as_array() {
            let e = u32::try_from(e).map_err(|_| Error::value(format!("extent {e} does not fit in 32 bits")))?;
            bytes.extend_from_slice(&e.to_le_bytes());
        }
        let classes = u32::try_from(class_count).map_err(|_| Error::value("class count does not fit in 32 bits"))?;
        bytes.extend_from_slice(&classes.to_le_bytes());
        bytes.extend_from_slice(payload);
        VolumeFile::decode(&bytes)
    }

    fn wrong_kind(&self, wanted: GridKind) -> Error {
        Error::Config(format!("expected a {wanted:?} volume, found {:?}", self.kind()))
    }

    pub fn into_image(self) -> Result<VolumeGrid> {
        match self {
            VolumeFile::Image(g) => Ok(g),
            other => Err(other.wrong_kind(GridKind::Image)),
        }
    }

    pub fn into_label(self) -> Result<LabelGrid> {
        match self {
            VolumeFile::Label(g) => Ok(g),
            other => Err(other.wrong_kind(GridKind::Label)),
        }
    }

    pub fn into_confidence(self) -> Result<ConfidenceGrid> {
        match self {
            VolumeFile::Confidence(g) => Ok(g),
            other => Err(other.wrong_kind(GridKind::Confidence)),
        }
    }

    pub fn into_supervision(self) -> Result<SupervisionGrid> {
        match self {
            VolumeFile::Supervision(g) => Ok(g),
            other => Err(other.wrong_kind(GridKind::Supervision)),
        }
    }
}

impl From<VolumeGrid> for VolumeFile {
    fn from(g: VolumeGrid) -> Self {
        VolumeFile::Image(g)
    }
}

impl From<LabelGrid> for VolumeFile {
    fn from(g: LabelGrid) -> Self {
        VolumeFile::Label(g)
    }
}

impl From<ConfidenceGrid> for VolumeFile {
    fn from(g: ConfidenceGrid) -> Self {
        VolumeFile::Confidence(g)
    }
}

impl From<SupervisionGrid> for VolumeFile {
    fn from(g: SupervisionGrid) -> Self {
        VolumeFile::Supervision(g)
    }
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<VolumeFile> {
    VolumeFile::decode(&fs::read(path)?)
}

pub fn write_volume(path: impl AsRef<Path>, volume: &VolumeFile) -> Result<()> {
    write_atomic(path, &volume.encode())
}

/// Writes to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let name = path
        .file_name()
        .ok_or_else(|| Error::Io(std::io::Error::new(std::io::ErrorKind::InvalidInput, "path has no file name")))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// Text snapshot: a `classes K` line followed by one parameter per line.
/// Values use the shortest representation that parses back to the same bits.
pub fn encode_params(params: &SegmentorParams) -> String {
    let mut out = format!("classes {}\n", params.num_classes());
    for v in params.values() {
        out.push_str(&format!("{v:?}\n"));
    }
    out
}

pub fn decode_params(text: &str) -> Result<SegmentorParams> {
    let mut lines = text.lines();
    let classes = lines
        .next()
        .and_then(|l| l.strip_prefix("classes "))
        .and_then(|n| n.trim().parse::<usize>().ok())
        .ok_or_else(|| Error::Config("parameter snapshot must start with `classes K`".into()))?;
    let values = lines
        .enumerate()
        .map(|(i, l)| l.trim().parse::<f64>().map_err(|e| Error::Config(format!("parameter line {}: {e}", i + 2))))
        .collect::<Result<Vec<_>>>()?;
    SegmentorParams::from_values(classes, values).map_err(|e| Error::Config(e.to_string()))
}
