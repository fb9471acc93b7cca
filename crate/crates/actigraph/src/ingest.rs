//! Raw recording I/O: the ACT1 binary container and a plain CSV format.
//!
//! ACT1 layout (little-endian):
//! magic `ACT1` (4 bytes), version `u16` = 1, device-id length `u8` followed
//! by that many UTF-8 bytes, `nominal_rate: f32` Hz, `dynamic_range: f32` g,
//! `record_count: u64`, then `record_count` records of
//! `{t: u64 ns, x, y, z: i16}` where the axes are fixed point scaled by
//! `dynamic_range / 32768`.

use std::io::{self, Read, Write};

use thiserror::Error;

pub const ACT1_MAGIC: &[u8; 4] = b"ACT1";
pub const ACT1_VERSION: u16 = 1;

const FIXED_POINT_SCALE: f64 = 32768.0;

/// One raw accelerometer recording: timestamped, possibly jittered samples
/// plus the device metadata needed for fixed-point decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub device_id: String,
    /// Nominal sample rate in Hz as reported by the device.
    pub nominal_rate: f64,
    /// Dynamic range in g (samples live in [-dynamic_range, dynamic_range]).
    pub dynamic_range: f64,
    /// Ordered samples `(t_ns, ax, ay, az)`; timestamps strictly increasing.
    pub samples: Vec<(i64, f64, f64, f64)>,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("bad magic at byte offset {offset}")]
    BadMagic { offset: usize },
    #[error("unsupported ACT1 version {version}")]
    UnsupportedVersion { version: u16 },
    #[error("truncated record at byte offset {offset}")]
    TruncatedRecord { offset: usize },
    #[error("non-monotonic timestamp at record {record} (byte offset {offset})")]
    NonMonotonicTimestamps { record: usize, offset: usize },
    #[error("sample out of dynamic range at record {record} (byte offset {offset})")]
    RangeExceeded { record: usize, offset: usize },
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("missing column `{0}` in CSV header")]
    MissingColumn(String),
    #[error("unparsable field in CSV row {row}: {detail}")]
    UnparsableField { row: usize, detail: String },
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

impl RawRecording {
    /// Checks the type invariants: non-empty, strictly increasing timestamps,
    /// axes within the dynamic range.
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.nominal_rate <= 0.0 {
            return Err(IngestError::InvalidField("nominal_rate must be positive".into()));
        }
        if self.dynamic_range <= 0.0 {
            return Err(IngestError::InvalidField("dynamic_range must be positive".into()));
        }
        if self.samples.is_empty() {
            return Err(IngestError::InvalidField("samples must be non-empty".into()));
        }
        let mut prev = None;
        for (i, &(t, x, y, z)) in self.samples.iter().enumerate() {
            if let Some(p) = prev {
                if t <= p {
                    return Err(IngestError::NonMonotonicTimestamps { record: i + 1, offset: 0 });
                }
            }
            prev = Some(t);
            let r = self.dynamic_range;
            if x.abs() > r || y.abs() > r || z.abs() > r {
                return Err(IngestError::RangeExceeded { record: i + 1, offset: 0 });
            }
        }
        Ok(())
    }

    pub fn duration_ns(&self) -> i64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(f), Some(l)) => l.0 - f.0,
            _ => 0,
        }
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IngestError> {
        if self.pos + n > self.buf.len() {
            return Err(IngestError::TruncatedRecord { offset: self.pos });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, IngestError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, IngestError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, IngestError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn i16(&mut self) -> Result<i16, IngestError> {
        Ok(i16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, IngestError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn decode_axis(raw: i16, dynamic_range: f64) -> f64 {
    raw as f64 * dynamic_range / FIXED_POINT_SCALE
}

fn encode_axis(v: f64, dynamic_range: f64) -> i16 {
    let q = (v * FIXED_POINT_SCALE / dynamic_range).round();
    q.clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// Parses an ACT1 byte stream. Never reads past the declared record count;
/// malformed tails yield typed errors carrying the byte offset.
pub fn parse_act1(bytes: &[u8]) -> Result<RawRecording, IngestError> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    let magic = c.take(4)?;
    if magic != ACT1_MAGIC {
        return Err(IngestError::BadMagic { offset: 0 });
    }
    let version = c.u16()?;
    if version != ACT1_VERSION {
        return Err(IngestError::UnsupportedVersion { version });
    }
    let id_len = c.u8()? as usize;
    let id_bytes = c.take(id_len)?;
    let device_id = std::str::from_utf8(id_bytes)
        .map_err(|_| IngestError::InvalidField("device_id is not UTF-8".into()))?
        .to_string();
    let nominal_rate = c.f32()? as f64;
    let dynamic_range = c.f32()? as f64;
    if nominal_rate <= 0.0 || !nominal_rate.is_finite() {
        return Err(IngestError::InvalidField("nominal_rate must be positive".into()));
    }
    if dynamic_range <= 0.0 || !dynamic_range.is_finite() {
        return Err(IngestError::InvalidField("dynamic_range must be positive".into()));
    }
    let record_count = c.u64()? as usize;
    if record_count == 0 {
        return Err(IngestError::TruncatedRecord { offset: c.pos });
    }
    let mut samples = Vec::with_capacity(record_count);
    let mut prev_t: Option<i64> = None;
    for i in 0..record_count {
        let rec_offset = c.pos;
        let t = c.u64()? as i64;
        let x = decode_axis(c.i16()?, dynamic_range);
        let y = decode_axis(c.i16()?, dynamic_range);
        let z = decode_axis(c.i16()?, dynamic_range);
        if let Some(p) = prev_t {
            if t <= p {
                return Err(IngestError::NonMonotonicTimestamps { record: i + 1, offset: rec_offset });
            }
        }
        prev_t = Some(t);
        samples.push((t, x, y, z));
    }
    Ok(RawRecording { device_id, nominal_rate, dynamic_range, samples })
}

/// Serializes a recording to ACT1 bytes. `parse_act1(write_act1(r)) == r`
/// whenever `r` itself round-trips the fixed-point quantization (anything
/// produced by `parse_act1` does).
pub fn write_act1(rec: &RawRecording) -> Result<Vec<u8>, IngestError> {
    rec.validate()?;
    if rec.device_id.len() > u8::MAX as usize {
        return Err(IngestError::InvalidField("device_id longer than 255 bytes".into()));
    }
    let mut out = Vec::with_capacity(32 + rec.samples.len() * 14);
    out.write_all(ACT1_MAGIC)?;
    out.write_all(&ACT1_VERSION.to_le_bytes())?;
    out.push(rec.device_id.len() as u8);
    out.write_all(rec.device_id.as_bytes())?;
    out.write_all(&(rec.nominal_rate as f32).to_le_bytes())?;
    out.write_all(&(rec.dynamic_range as f32).to_le_bytes())?;
    out.write_all(&(rec.samples.len() as u64).to_le_bytes())?;
    for &(t, x, y, z) in &rec.samples {
        out.write_all(&(t as u64).to_le_bytes())?;
        out.write_all(&encode_axis(x, rec.dynamic_range).to_le_bytes())?;
        out.write_all(&encode_axis(y, rec.dynamic_range).to_le_bytes())?;
        out.write_all(&encode_axis(z, rec.dynamic_range).to_le_bytes())?;
    }
    Ok(out)
}

pub fn read_act1_file(path: &std::path::Path) -> Result<RawRecording, IngestError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    parse_act1(&buf)
}

pub fn write_act1_file(path: &std::path::Path, rec: &RawRecording) -> Result<(), IngestError> {
    let bytes = write_act1(rec)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

const CSV_HEADER: [&str; 4] = ["t_ns", "ax_g", "ay_g", "az_g"];

/// Parses the CSV form (`t_ns,ax_g,ay_g,az_g`). Device metadata is not part
/// of the CSV; callers get a generic id, a rate estimated from the median
/// timestamp delta and an 8 g range.
pub fn parse_csv(text: &str) -> Result<RawRecording, IngestError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| IngestError::MissingColumn("t_ns".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    for want in CSV_HEADER {
        if !cols.contains(&want) {
            return Err(IngestError::MissingColumn(want.into()));
        }
    }
    let idx = |name: &str| cols.iter().position(|c| *c == name).unwrap();
    let (it, ix, iy, iz) = (idx("t_ns"), idx("ax_g"), idx("ay_g"), idx("az_g"));

    let mut samples = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let row = lineno + 1; // 1-based, counting the header as row 1
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < cols.len() {
            return Err(IngestError::UnparsableField { row, detail: "too few fields".into() });
        }
        let parse_f = |s: &str| -> Result<f64, IngestError> {
            let v: f64 = s
                .parse()
                .map_err(|_| IngestError::UnparsableField { row, detail: format!("`{s}`") })?;
            if !v.is_finite() {
                return Err(IngestError::UnparsableField { row, detail: format!("`{s}`") });
            }
            Ok(v)
        };
        let t: i64 = fields[it]
            .parse()
            .map_err(|_| IngestError::UnparsableField { row, detail: format!("`{}`", fields[it]) })?;
        samples.push((t, parse_f(fields[ix])?, parse_f(fields[iy])?, parse_f(fields[iz])?));
    }

    let nominal_rate = estimate_rate(&samples);
    let rec = RawRecording {
        device_id: "csv".into(),
        nominal_rate,
        dynamic_range: 8.0,
        samples,
    };
    rec.validate()?;
    Ok(rec)
}

pub fn write_csv(rec: &RawRecording) -> String {
    let mut out = String::with_capacity(rec.samples.len() * 40 + 32);
    out.push_str("t_ns,ax_g,ay_g,az_g\n");
    for &(t, x, y, z) in &rec.samples {
        out.push_str(&format!("{t},{x},{y},{z}\n"));
    }
    out
}

fn estimate_rate(samples: &[(i64, f64, f64, f64)]) -> f64 {
    if samples.len() < 2 {
        return 1.0;
    }
    let mut deltas: Vec<i64> = samples.windows(2).map(|w| w[1].0 - w[0].0).collect();
    deltas.sort_unstable();
    let med = deltas[deltas.len() / 2].max(1);
    1e9 / med as f64
}
