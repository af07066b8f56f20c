//! The `.nws` state archive and raw float32 dump ingestion.
//!
//! Archive layout, all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes  "NWPSTAT1"
//! version      u32      1
//! nlat, nlon   u32, u32
//! lat_start    f64
//! dlat         f64
//! lon_start    f64
//! dlon         f64
//! valid_time   i64      seconds since the Unix epoch, UTC
//! label_len    u16      followed by label_len bytes of UTF-8
//! n_channels   u32      followed by n_channels × (var_code u16, level_hpa u16)
//! payload      n_channels planes of nlat×nlon f32, row-major, north row first
//! ```
//!
//! The channel list must be the canonical 69-channel order.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grid::{Channel, GridError, GridSpec, PressureLevel, Variable, N_CHANNELS};
use crate::state::{Field, StateSet};

pub const MAGIC: &[u8; 8] = b"NWPSTAT1";
pub const VERSION: u32 = 1;
pub const EXTENSION: &str = "nws";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("{path}: {source}")]
    Path { path: PathBuf, source: Box<ArchiveError> },
    #[error("not a state archive: {0}")]
    Format(String),
    #[error("archive truncated in the header")]
    TruncatedHeader,
    #[error("archive truncated in channel {channel} (plane {index}): {got} of {expected} bytes")]
    Truncated { channel: String, index: usize, expected: usize, got: usize },
    #[error("unsupported channel layout: {0}")]
    UnsupportedLayout(String),
    #[error("invalid grid or state: {0}")]
    Grid(#[from] GridError),
    #[error("raw dump layout mismatch: {0}")]
    Layout(String),
    #[error("bad data: {0}")]
    Data(String),
}

impl ArchiveError {
    fn at(self, path: &Path) -> ArchiveError {
        ArchiveError::Path { path: path.to_path_buf(), source: Box::new(self) }
    }
}

/// Decoded archive header.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveHeader {
    pub version: u32,
    pub grid: GridSpec,
    /// Seconds since the Unix epoch.
    pub valid_time: i64,
    pub source_label: String,
    /// Raw (var_code, level) pairs as stored.
    pub channels: Vec<(u16, u16)>,
}

impl ArchiveHeader {
    pub fn for_state(state: &StateSet) -> ArchiveHeader {
        ArchiveHeader {
            version: VERSION,
            grid: *state.grid(),
            valid_time: state.valid_time().timestamp(),
            source_label: state.source_label().to_string(),
            channels: state
                .fields()
                .iter()
                .map(|f| (f.variable().code(), f.level().hpa()))
                .collect(),
        }
    }

    /// Encoded size in bytes.
    pub fn encoded_len(&self) -> usize {
        8 + 4 + 4 + 4 + 4 * 8 + 8 + 2 + self.source_label.len() + 4 + 4 * self.channels.len()
    }

    pub fn payload_len(&self) -> usize {
        self.channels.len() * self.grid.len() * 4
    }

    pub fn valid_time_utc(&self) -> Option<DateTime<Utc>> {
        DateTime::from_timestamp(self.valid_time, 0)
    }

    fn write_to<W: Write>(&self, w: &mut W) -> Result<(), ArchiveError> {
        let label = self.source_label.as_bytes();
        let label_len = u16::try_from(label.len())
            .map_err(|_| ArchiveError::Format(format!("label of {} bytes too long", label.len())))?;
        let dim = |n: usize| {
            u32::try_from(n).map_err(|_| ArchiveError::Format(format!("dimension {n} too large")))
        };
        w.write_all(MAGIC)?;
        w.write_all(&self.version.to_le_bytes())?;
        w.write_all(&dim(self.grid.nlat)?.to_le_bytes())?;
        w.write_all(&dim(self.grid.nlon)?.to_le_bytes())?;
        for v in [self.grid.lat_start, self.grid.dlat, self.grid.lon_start, self.grid.dlon] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.valid_time.to_le_bytes())?;
        w.write_all(&label_len.to_le_bytes())?;
        w.write_all(label)?;
        w.write_all(&dim(self.channels.len())?.to_le_bytes())?;
        for &(code, level) in &self.channels {
            w.write_all(&code.to_le_bytes())?;
            w.write_all(&level.to_le_bytes())?;
        }
        Ok(())
    }

    fn canonical_channels(&self) -> Result<Vec<Channel>, ArchiveError> {
        if self.channels.len() != N_CHANNELS {
            return Err(ArchiveError::UnsupportedLayout(format!(
                "{} channels, expected {N_CHANNELS}",
                self.channels.len()
            )));
        }
        self.channels
            .iter()
            .zip(Channel::canonical())
            .enumerate()
            .map(|(k, (&(code, level), expected))| {
                let found = Variable::from_code(code)
                    .and_then(|v| Channel::new(v, PressureLevel(level)).ok());
                if found == Some(expected) {
                    Ok(expected)
                } else {
                    Err(ArchiveError::UnsupportedLayout(format!(
                        "channel {k} is (code {code}, level {level}), expected {expected}"
                    )))
                }
            })
            .collect()
    }
}

struct HeaderReader<'a, R> {
    inner: &'a mut R,
}

impl<R: Read> HeaderReader<'_, R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], ArchiveError> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(eof_as(ArchiveError::TruncatedHeader))?;
        Ok(buf)
    }

    fn u16(&mut self) -> Result<u16, ArchiveError> {
        Ok(u16::from_le_bytes(self.bytes()?))
    }

    fn u32(&mut self) -> Result<u32, ArchiveError> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn i64(&mut self) -> Result<i64, ArchiveError> {
        Ok(i64::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64, ArchiveError> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
}

fn eof_as(err: ArchiveError) -> impl FnOnce(io::Error) -> ArchiveError {
    move |e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            err
        } else {
            ArchiveError::Io(e)
        }
    }
}

/// Reads and checks the header; the reader is left at the first plane.
pub fn read_header<R: Read>(reader: &mut R) -> Result<ArchiveHeader, ArchiveError> {
    let mut r = HeaderReader { inner: reader };
    let magic: [u8; 8] = r.bytes()?;
    if &magic != MAGIC {
        return Err(ArchiveError::Format(format!("bad magic {magic:02x?}")));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(ArchiveError::Format(format!("unsupported version {version}")));
    }
    let nlat = r.u32()? as usize;
    let nlon = r.u32()? as usize;
    let (lat_start, dlat, lon_start, dlon) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
    let grid = GridSpec::new(nlat, nlon, lat_start, dlat, lon_start, dlon)?;
    let valid_time = r.i64()?;
    let label_len = r.u16()? as usize;
    let mut label = vec![0u8; label_len];
    r.inner.read_exact(&mut label).map_err(eof_as(ArchiveError::TruncatedHeader))?;
    let source_label = String::from_utf8(label)
        .map_err(|_| ArchiveError::Format("source label is not UTF-8".into()))?;
    let n_channels = r.u32()? as usize;
    if n_channels > 4 * N_CHANNELS {
        return Err(ArchiveError::UnsupportedLayout(format!("{n_channels} channels")));
    }
    let channels = (0..n_channels)
        .map(|_| Ok((r.u16()?, r.u16()?)))
        .collect::<Result<Vec<_>, ArchiveError>>()?;
    Ok(ArchiveHeader { version, grid, valid_time, source_label, channels })
}

/// Serializes `state`. Output depends only on the state.
pub fn write_archive<W: Write>(state: &StateSet, sink: &mut W) -> Result<(), ArchiveError> {
    let header = ArchiveHeader::for_state(state);
    header.canonical_channels()?;
    header.write_to(sink)?;
    let mut buf = Vec::with_capacity(state.grid().nlon * 4);
    for field in state.fields() {
        if field.grid() != state.grid() {
            return Err(GridError::GridMismatch { channel: field.channel() }.into());
        }
        for row in field.values().chunks(state.grid().nlon) {
            buf.clear();
            buf.extend(row.iter().flat_map(|v| v.to_le_bytes()));
            sink.write_all(&buf)?;
        }
    }
    Ok(())
}

/// Reads as many bytes as are available up to `buf.len()`.
fn read_up_to<R: Read>(reader: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match reader.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(got)
}

fn decode_plane(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect()
}

/// Exact inverse of [`write_archive`].
pub fn read_archive<R: Read>(source: &mut R) -> Result<StateSet, ArchiveError> {
    let header = read_header(source)?;
    let channels = header.canonical_channels()?;
    let valid_time = header.valid_time_utc().ok_or_else(|| {
        ArchiveError::Format(format!("valid time {} out of range", header.valid_time))
    })?;
    let grid = header.grid;
    let plane_bytes = grid.len() * 4;
    let mut buf = vec![0u8; plane_bytes];
    let mut fields = Vec::with_capacity(channels.len());
    for (index, channel) in channels.into_iter().enumerate() {
        let got = read_up_to(source, &mut buf)?;
        if got < plane_bytes {
            return Err(ArchiveError::Truncated {
                channel: channel.name(),
                index,
                expected: plane_bytes,
                got,
            });
        }
        fields.push(Field::new(channel, grid, decode_plane(&buf))?);
    }
    let mut probe = [0u8; 1];
    if read_up_to(source, &mut probe)? != 0 {
        return Err(ArchiveError::Format("trailing bytes after the last plane".into()));
    }
    Ok(StateSet::new(valid_time, header.source_label, grid, fields)?)
}

pub fn save_archive(path: impl AsRef<Path>, state: &StateSet) -> Result<(), ArchiveError> {
    let path = path.as_ref();
    let run = || -> Result<(), ArchiveError> {
        let mut w = BufWriter::new(File::create(path)?);
        write_archive(state, &mut w)?;
        w.flush()?;
        Ok(())
    };
    run().map_err(|e| e.at(path))
}

pub fn load_archive(path: impl AsRef<Path>) -> Result<StateSet, ArchiveError> {
    let path = path.as_ref();
    let run = || read_archive(&mut BufReader::new(File::open(path)?));
    run().map_err(|e| e.at(path))
}

pub fn load_header(path: impl AsRef<Path>) -> Result<ArchiveHeader, ArchiveError> {
    let path = path.as_ref();
    let run = || read_header(&mut BufReader::new(File::open(path)?));
    run().map_err(|e| e.at(path))
}

struct DigestWriter(Sha256);

impl Write for DigestWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// SHA-256 of the archive encoding, hex.
pub fn state_digest(state: &StateSet) -> Result<String, ArchiveError> {
    let mut w = DigestWriter(Sha256::new());
    write_archive(state, &mut w)?;
    Ok(hex::encode(w.0.finalize()))
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanOrder {
    #[default]
    NorthFirst,
    SouthFirst,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueType {
    #[default]
    F32Le,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelOrder {
    #[default]
    Canonical,
    /// Planes appear in this order.
    Explicit(Vec<Channel>),
}

impl ChannelOrder {
    pub fn channels(&self) -> Vec<Channel> {
        match self {
            ChannelOrder::Canonical => Channel::canonical().collect(),
            ChannelOrder::Explicit(list) => list.clone(),
        }
    }
}

/// How a headerless dump is laid out.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RawDumpLayout {
    pub channels: ChannelOrder,
    pub scan: ScanOrder,
    pub value_type: ValueType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NanPolicy {
    #[default]
    Error,
    Warn,
}

/// Decodes `payload_len` bytes of raw planes into north-first fields in the
/// order the layout declares.
pub fn read_raw_planes<R: Read>(
    reader: &mut R,
    payload_len: u64,
    grid: GridSpec,
    layout: &RawDumpLayout,
    nan_policy: NanPolicy,
) -> Result<Vec<Field>, ArchiveError> {
    grid.validate()?;
    let channels = layout.channels.channels();
    let plane_bytes = grid.len() * 4;
    let expected = (channels.len() * plane_bytes) as u64;
    if payload_len != expected {
        return Err(ArchiveError::Layout(format!(
            "payload is {payload_len} bytes, layout needs {} channels × {}×{} × 4 = {expected}",
            channels.len(),
            grid.nlat,
            grid.nlon
        )));
    }
    let mut buf = vec![0u8; plane_bytes];
    let mut fields = Vec::with_capacity(channels.len());
    for (index, channel) in channels.into_iter().enumerate() {
        let got = read_up_to(reader, &mut buf)?;
        if got < plane_bytes {
            return Err(ArchiveError::Layout(format!(
                "plane {index} ({channel}) has {got} of {plane_bytes} bytes"
            )));
        }
        let mut values = decode_plane(&buf);
        if layout.scan == ScanOrder::SouthFirst {
            let nlon = grid.nlon;
            let mut flipped = Vec::with_capacity(values.len());
            for row in values.chunks(nlon).rev() {
                flipped.extend_from_slice(row);
            }
            values = flipped;
        }
        let bad = values.iter().filter(|v| v.is_nan()).count();
        if bad > 0 {
            let msg = format!("{bad} NaN values in plane {index} ({channel})");
            match nan_policy {
                NanPolicy::Error => return Err(ArchiveError::Data(msg)),
                NanPolicy::Warn => log::warn!("{msg}"),
            }
        }
        fields.push(Field::new(channel, grid, values)?);
    }
    Ok(fields)
}

/// Loads a raw dump into a canonical state. The layout must name each of
/// the 69 channels exactly once.
pub fn ingest_raw(
    path: impl AsRef<Path>,
    grid: GridSpec,
    layout: &RawDumpLayout,
    valid_time: DateTime<Utc>,
    source_label: &str,
    nan_policy: NanPolicy,
) -> Result<StateSet, ArchiveError> {
    let path = path.as_ref();
    let run = || -> Result<StateSet, ArchiveError> {
        let file = File::open(path)?;
        let len = file.metadata()?.len();
        let fields = read_raw_planes(&mut BufReader::new(file), len, grid, layout, nan_policy)?;
        assemble_canonical(fields, grid, valid_time, source_label)
    };
    run().map_err(|e| e.at(path))
}

fn assemble_canonical(
    fields: Vec<Field>,
    grid: GridSpec,
    valid_time: DateTime<Utc>,
    source_label: &str,
) -> Result<StateSet, ArchiveError> {
    let mut slots: Vec<Option<Field>> = vec![None; N_CHANNELS];
    for field in fields {
        let slot = &mut slots[field.channel().flat_index()];
        if slot.is_some() {
            return Err(ArchiveError::Layout(format!("channel {} listed twice", field.channel())));
        }
        *slot = Some(field);
    }
    let missing: Vec<String> = slots
        .iter()
        .zip(Channel::canonical())
        .filter(|(s, _)| s.is_none())
        .map(|(_, c)| c.name())
        .collect();
    if !missing.is_empty() {
        return Err(ArchiveError::Layout(format!("missing channels: {}", missing.join(","))));
    }
    let fields = slots.into_iter().map(|s| s.expect("checked above")).collect();
    Ok(StateSet::new(valid_time, source_label, grid, fields)?)
}
