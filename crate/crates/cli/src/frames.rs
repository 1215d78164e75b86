//! Probe frame file formats.
//!
//! CSV frames: two columns `time,voltage` (header optional); the sample
//! interval comes from the first two timestamps.
//!
//! Binary frames: little-endian, header `u32 sample_count, f32 dt, f32 t0`
//! followed by `sample_count` f32 voltage samples.

use std::fs;
use std::io;
use std::path::Path;

use mdiqkd_core::ProbeFrame;

use crate::config::FrameFormat;

#[derive(Debug)]
pub enum FrameError {
    Io(io::Error),
    Malformed(String),
}

impl std::fmt::Display for FrameError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Io(e) => write!(f, "{e}"),
            Self::Malformed(m) => write!(f, "{m}"),
        }
    }
}

impl From<io::Error> for FrameError {
    fn from(e: io::Error) -> Self {
        Self::Io(e)
    }
}

pub fn read_frame(path: &Path, format: FrameFormat) -> Result<ProbeFrame, FrameError> {
    match format {
        FrameFormat::Csv => read_csv_frame(path),
        FrameFormat::Bin => read_bin_frame(path),
    }
}

fn read_csv_frame(path: &Path) -> Result<ProbeFrame, FrameError> {
    let text = fs::read_to_string(path)?;
    let mut times = Vec::new();
    let mut samples = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split(',');
        let (t, v) = (cols.next(), cols.next());
        let parse = |s: Option<&str>| s.and_then(|x| x.trim().parse::<f64>().ok());
        match (parse(t), parse(v)) {
            (Some(t), Some(v)) => {
                times.push(t);
                samples.push(v);
            }
            _ if idx == 0 => continue, // header row
            _ => {
                return Err(FrameError::Malformed(format!(
                    "{}: line {} is not `time,voltage`",
                    path.display(),
                    idx + 1
                )))
            }
        }
    }
    if samples.len() < 2 {
        return Err(FrameError::Malformed(format!(
            "{}: needs at least two samples",
            path.display()
        )));
    }
    let dt = times[1] - times[0];
    if !(dt > 0.0) {
        return Err(FrameError::Malformed(format!(
            "{}: non-increasing timestamps",
            path.display()
        )));
    }
    Ok(ProbeFrame {
        samples,
        dt,
        t0: times[0],
    })
}

#[cfg_attr(not(test), allow(dead_code))]
pub fn write_csv_frame(path: &Path, frame: &ProbeFrame) -> Result<(), FrameError> {
    let mut out = String::from("time,voltage\n");
    for (i, v) in frame.samples.iter().enumerate() {
        out.push_str(&format!("{:e},{:e}\n", frame.time_at(i), v));
    }
    fs::write(path, out)?;
    Ok(())
}

fn read_bin_frame(path: &Path) -> Result<ProbeFrame, FrameError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 12 {
        return Err(FrameError::Malformed(format!(
            "{}: truncated header",
            path.display()
        )));
    }
    let count = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let dt = f32::from_le_bytes(bytes[4..8].try_into().unwrap()) as f64;
    let t0 = f32::from_le_bytes(bytes[8..12].try_into().unwrap()) as f64;
    let expected = 12 + 4 * count;
    if bytes.len() != expected {
        return Err(FrameError::Malformed(format!(
            "{}: expected {} bytes for {} samples, found {}",
            path.display(),
            expected,
            count,
            bytes.len()
        )));
    }
    if !(dt > 0.0) {
        return Err(FrameError::Malformed(format!(
            "{}: non-positive dt",
            path.display()
        )));
    }
    let samples = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(ProbeFrame { samples, dt, t0 })
}

#[cfg_attr(not(test), allow(dead_code))]
pub fn write_bin_frame(path: &Path, frame: &ProbeFrame) -> Result<(), FrameError> {
    let mut bytes = Vec::with_capacity(12 + 4 * frame.samples.len());
    bytes.extend_from_slice(&(frame.samples.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&(frame.dt as f32).to_le_bytes());
    bytes.extend_from_slice(&(frame.t0 as f32).to_le_bytes());
    for &v in &frame.samples {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}
