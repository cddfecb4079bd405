use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{check_finite, Recording};
use crate::error::{Error, Result};

const MAGIC: [u8; 4] = *b"FEEG";
const VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 4 + 8 + 8;

/// On-disk layouts understood by [`read_recording`] and [`write_recording`].
///
/// `Binary` ("FEEG v1") is the authoritative format:
///
/// ```text
/// offset  size  field
/// 0       4     magic  b"FEEG"
/// 4       1     version = 1
/// 5       4     u32 LE channel count C
/// 9       8     u64 LE sample count T
/// 17      8     f64 LE sample rate (Hz)
/// 25      4·C·T f32 LE samples, channel-major
/// ```
///
/// `Csv` has a `# rate_hz=<float>` line, a line of channel labels, then one
/// row of `C` values per sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordingFormat {
    Binary,
    Csv,
}

impl RecordingFormat {
    /// `.csv` selects CSV, anything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => RecordingFormat::Csv,
            _ => RecordingFormat::Binary,
        }
    }
}

pub fn read_recording(path: impl AsRef<Path>, format: RecordingFormat) -> Result<Recording> {
    let path = path.as_ref();
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("recording")
        .to_string();
    read_recording_from(BufReader::new(File::open(path)?), format, id)
}

pub fn write_recording(r: &Recording, path: impl AsRef<Path>, format: RecordingFormat) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_recording_to(r, &mut out, format)?;
    out.flush()?;
    Ok(())
}

/// Decodes a recording from any byte stream, e.g. stdin.
pub fn read_recording_from(input: impl Read, format: RecordingFormat, id: impl Into<String>) -> Result<Recording> {
    match format {
        RecordingFormat::Binary => decode_binary(input, id.into()),
        RecordingFormat::Csv => decode_csv(BufReader::new(input), id.into()),
    }
}

pub fn write_recording_to(r: &Recording, out: &mut impl Write, format: RecordingFormat) -> Result<()> {
    check_finite(r.data())?;
    match format {
        RecordingFormat::Binary => encode_binary(r, out),
        RecordingFormat::Csv => encode_csv(r, out),
    }
}

pub(crate) fn encode_binary(r: &Recording, out: &mut impl Write) -> Result<()> {
    check_finite(r.data())?;
    let c = u32::try_from(r.channels()).map_err(|_| Error::Format("too many channels".into()))?;
    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(&MAGIC);
    header.push(VERSION);
    header.extend_from_slice(&c.to_le_bytes());
    header.extend_from_slice(&(r.samples() as u64).to_le_bytes());
    header.extend_from_slice(&r.sample_rate_hz().to_le_bytes());
    out.write_all(&header)?;
    let mut buf = Vec::with_capacity(r.samples() * 4);
    for row in r.data() {
        buf.clear();
        for &v in row {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

pub(crate) fn decode_binary(mut input: impl Read, id: String) -> Result<Recording> {
    let mut header = [0u8; HEADER_LEN];
    input
        .read_exact(&mut header)
        .map_err(|_| Error::Format("truncated FEEG header".into()))?;
    if header[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:02x?}", &header[..4])));
    }
    if header[4] != VERSION {
        return Err(Error::Format(format!("unsupported FEEG version {}", header[4])));
    }
    let c = u32::from_le_bytes(header[5..9].try_into().unwrap()) as usize;
    let t = u64::from_le_bytes(header[9..17].try_into().unwrap());
    let rate = f64::from_le_bytes(header[17..25].try_into().unwrap());
    if c == 0 || t == 0 {
        return Err(Error::Format(format!("empty recording C={c} T={t}")));
    }
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::Format(format!("invalid sample rate {rate}")));
    }
    let t = usize::try_from(t).map_err(|_| Error::Format("sample count overflows".into()))?;
    let mut data = Vec::with_capacity(c);
    let mut raw = vec![0u8; t * 4];
    for channel in 0..c {
        input
            .read_exact(&mut raw)
            .map_err(|_| Error::Format(format!("truncated sample data in channel {channel}")))?;
        let row: Vec<f64> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        data.push(row);
    }
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after sample data".into()));
    }
    check_finite(&data)?;
    Recording::new(id, rate, data)
}

fn encode_csv(r: &Recording, out: &mut impl Write) -> Result<()> {
    writeln!(out, "# rate_hz={}", r.sample_rate_hz())?;
    let labels: Vec<String> = match r.channel_labels() {
        Some(l) => l.to_vec(),
        None => (0..r.channels()).map(|c| format!("ch{c}")).collect(),
    };
    writeln!(out, "{}", labels.join(","))?;
    let mut line = String::new();
    for t in 0..r.samples() {
        line.clear();
        for c in 0..r.channels() {
            if c > 0 {
                line.push(',');
            }
            line.push_str(&(r.channel(c)[t] as f32).to_string());
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

fn decode_csv(input: impl BufRead, id: String) -> Result<Recording> {
    let mut lines = input.lines();
    let rate_line = lines.next().ok_or_else(|| Error::Format("missing rate line".into()))??;
    let rate: f64 = rate_line
        .trim()
        .strip_prefix("# rate_hz=")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| Error::Format(format!("bad rate line `{rate_line}`")))?;
    let label_line = lines.next().ok_or_else(|| Error::Format("missing label line".into()))??;
    let labels: Vec<String> = label_line.split(',').map(|s| s.trim().to_string()).collect();
    let c = labels.len();
    let mut data = vec![Vec::new(); c];
    for (row, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != c {
            return Err(Error::Format(format!(
                "row {row} has {} values, header declares {c} channels",
                fields.len()
            )));
        }
        for (channel, field) in fields.iter().enumerate() {
            let v: f32 = field
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("row {row}: cannot parse `{field}`")))?;
            if !v.is_finite() {
                return Err(Error::Data { channel, index: row });
            }
            data[channel].push(v as f64);
        }
    }
    if data[0].is_empty() {
        return Err(Error::Format("no sample rows".into()));
    }
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::Format(format!("invalid sample rate {rate}")));
    }
    Recording::new(id, rate, data)?.with_labels(labels)
}
