//! WAV and binary tensor files.
//!
//! Tensor dump layout (little endian): magic `TBT1`, `u32` rank, one `u64`
//! per dimension, then the values as contiguous row-major `f32`.
//! Spectrograms are dumped as `[channels, bins, frames, 2]` (re, im) and
//! masks as `[bins, frames]`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dsp::ComplexSpectrogram;
use crate::error::{Error, Result};
use crate::mask::MagnitudeMask;

const TENSOR_MAGIC: &[u8; 4] = b"TBT1";

fn wav_err(path: &Path) -> impl FnOnce(hound::Error) -> Error + '_ {
    move |err| Error::Wav {
        path: path.to_path_buf(),
        err,
    }
}

/// Writes channels as 32-bit float PCM.
pub fn write_wav<S: AsRef<[f64]>>(path: &Path, channels: &[S], sample_rate: u32) -> Result<()> {
    let len = channels.first().map(|c| c.as_ref().len()).unwrap_or(0);
    if channels.is_empty() || channels.iter().any(|c| c.as_ref().len() != len) {
        return Err(Error::Alignment(
            "wav channels must be non-empty and equally long".into(),
        ));
    }
    let spec = hound::WavSpec {
        channels: channels.len() as u16,
        sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_err(path))?;
    for n in 0..len {
        for c in channels {
            w.write_sample(c.as_ref()[n] as f32).map_err(wav_err(path))?;
        }
    }
    w.finalize().map_err(wav_err(path))
}

/// Reads any PCM or float WAV into per-channel samples scaled to [-1, 1].
pub fn read_wav(path: &Path) -> Result<(Vec<Vec<f64>>, u32)> {
    let mut r = hound::WavReader::open(path).map_err(wav_err(path))?;
    let spec = r.spec();
    let nch = spec.channels as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => r
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err(path))?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            r.samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(wav_err(path))?
        }
    };
    let mut channels = vec![Vec::with_capacity(interleaved.len() / nch.max(1)); nch];
    for frame in interleaved.chunks(nch) {
        for (c, v) in frame.iter().enumerate() {
            channels[c].push(*v);
        }
    }
    Ok((channels, spec.sample_rate))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

pub fn write_tensor(path: &Path, shape: &[usize], values: &[f32]) -> Result<()> {
    let count: usize = shape.iter().product();
    if count != values.len() {
        return Err(Error::Alignment(format!(
            "shape {shape:?} holds {count} values, got {}",
            values.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&(shape.len() as u32).to_le_bytes())?;
    for d in shape {
        w.write_all(&(*d as u64).to_le_bytes())?;
    }
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::Corpus(format!("{} is not a tensor dump", path.display())));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let rank = u32::from_le_bytes(b4) as usize;
    let mut shape = Vec::with_capacity(rank);
    let mut b8 = [0u8; 8];
    for _ in 0..rank {
        r.read_exact(&mut b8)?;
        shape.push(u64::from_le_bytes(b8) as usize);
    }
    let count: usize = shape.iter().product();
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)?;
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Tensor { shape, values })
}

pub fn write_spectrogram(path: &Path, s: &ComplexSpectrogram) -> Result<()> {
    let (c, b, t) = (s.channels(), s.bins(), s.frames());
    let mut values = Vec::with_capacity(c * b * t * 2);
    for ch in 0..c {
        for k in 0..b {
            for frame in 0..t {
                let v = s.get(ch, k, frame);
                values.push(v.re as f32);
                values.push(v.im as f32);
            }
        }
    }
    write_tensor(path, &[c, b, t, 2], &values)
}

pub fn write_mask(path: &Path, m: &MagnitudeMask) -> Result<()> {
    let mut values = Vec::with_capacity(m.bins() * m.frames());
    for k in 0..m.bins() {
        for t in 0..m.frames() {
            values.push(m.get(k, t) as f32);
        }
    }
    write_tensor(path, &[m.bins(), m.frames()], &values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wav_round_trip_is_float32() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.wav");
        let chans = vec![vec![0.5, -0.25, 0.125], vec![0.1, 0.2, 0.3]];
        write_wav(&p, &chans, 16_000).unwrap();
        let (back, fs) = read_wav(&p).unwrap();
        assert_eq!(fs, 16_000);
        assert_eq!(back.len(), 2);
        for (a, b) in back.iter().zip(&chans) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(*x, *y as f32 as f64);
            }
        }
        let spec = hound::WavReader::open(&p).unwrap().spec();
        assert_eq!(
            (spec.bits_per_sample, spec.sample_format),
            (32, hound::SampleFormat::Float)
        );
    }

    #[test]
    fn tensor_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.tbt");
        let values: Vec<f32> = (0..24).map(|v| v as f32 * 0.5).collect();
        write_tensor(&p, &[2, 3, 4], &values).unwrap();
        let t = read_tensor(&p).unwrap();
        assert_eq!(t.shape, vec![2, 3, 4]);
        assert_eq!(t.values, values);
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 4 + 4 + 3 * 8 + 24 * 4);
        assert!(write_tensor(&p, &[5], &values).is_err());
    }

    #[test]
    fn missing_wav_reports_path() {
        let err = read_wav(Path::new("/nonexistent/x.wav")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.wav"));
    }
}
