use std::path::Path;

use nalgebra::DMatrix;

use super::{AudioClip, FeatureKind, FeatureSequence};
use crate::binio::{read_file, ByteReader, ByteWriter};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"BNF1";

/// Feature file: `BNF1`, u32 T, u32 D, then T·D little-endian f32, row-major.
pub fn write_features(path: &Path, seq: &FeatureSequence) -> Result<()> {
    let mut w = ByteWriter::new(MAGIC);
    w.usize(seq.len());
    w.usize(seq.dim());
    for t in 0..seq.len() {
        for d in 0..seq.dim() {
            w.f32(seq.frames[(t, d)] as f32);
        }
    }
    w.save(path)
}

pub fn decode_features(
    bytes: &[u8],
    kind: FeatureKind,
    utterance_id: &str,
) -> Result<FeatureSequence> {
    let mut r = ByteReader::new(bytes, MAGIC)?;
    let t_len = r.usize()?;
    let dim = r.usize()?;
    r.ensure(t_len.saturating_mul(dim).saturating_mul(4))?;
    let mut data = Vec::with_capacity(t_len * dim);
    for _ in 0..t_len * dim {
        data.push(r.f32()? as f64);
    }
    r.finish()?;
    Ok(FeatureSequence::new(
        DMatrix::from_row_slice(t_len, dim, &data),
        kind,
        utterance_id,
    ))
}

pub fn read_features(
    path: &Path,
    kind: FeatureKind,
    utterance_id: &str,
) -> Result<FeatureSequence> {
    decode_features(&read_file(path)?, kind, utterance_id)
}

/// Reads 16-bit PCM mono WAV into samples scaled to [-1, 1].
pub fn read_wav(path: &Path, utterance_id: &str) -> Result<AudioClip> {
    let mut reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1
        || spec.bits_per_sample != 16
        || spec.sample_format != hound::SampleFormat::Int
    {
        return Err(Error::Config(format!(
            "{}: expected 16-bit PCM mono, got {} channel(s), {} bits",
            path.display(),
            spec.channels,
            spec.bits_per_sample
        )));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_error(path, e))?;
    AudioClip::new(samples, spec.sample_rate, utterance_id)
}

pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for &s in &clip.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(|e| wav_error(path, e))?;
    }
    w.finalize().map_err(|e| wav_error(path, e))
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Config(format!("{}: {other}", path.display())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_fixed() {
        let seq = FeatureSequence::new(
            DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.5]),
            FeatureKind::Mfcc,
            "u",
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.bnf");
        write_features(&p, &seq).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"BNF1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), 12 + 6 * 4);
        // Row-major: the second value is frame 0, dimension 1.
        assert_eq!(f32::from_le_bytes(bytes[16..20].try_into().unwrap()), 2.0);
        let back = read_features(&p, FeatureKind::Mfcc, "u").unwrap();
        assert_eq!(back.frames, seq.frames);
    }

    #[test]
    fn truncated_feature_file_reports_offset() {
        let mut bytes = b"BNF1".to_vec();
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 10]);
        match decode_features(&bytes, FeatureKind::Mfcc, "u") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 12),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn wav_round_trip() {
        let clip = AudioClip::new(
            (0..800).map(|i| (i as f64 * 0.02).sin() * 0.5).collect(),
            16_000,
            "w",
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_wav(&p, &clip).unwrap();
        let back = read_wav(&p, "w").unwrap();
        assert_eq!(back.sample_rate_hz, 16_000);
        assert_eq!(back.samples.len(), 800);
        for (a, b) in clip.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1e-4);
        }
    }
}
