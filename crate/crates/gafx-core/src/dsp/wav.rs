//! RIFF/WAVE reading and writing, 16-bit PCM only.

use std::fs;
use std::path::Path;

use super::{AudioClip, DspError, Result};

fn format_err(offset: usize, message: impl Into<String>) -> DspError {
    DspError::WavFormat {
        offset,
        message: message.into(),
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(offset, "truncated while reading u32"))
}

fn read_u16(bytes: &[u8], offset: usize) -> Result<u16> {
    bytes
        .get(offset..offset + 2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .ok_or_else(|| format_err(offset, "truncated while reading u16"))
}

/// Loads a 16-bit PCM RIFF/WAVE file with 1 or 2 channels. Samples are
/// scaled by `1/32768` into `[-1, 1)`.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let bytes = fs::read(path.as_ref())?;
    if bytes.len() < 12 {
        return Err(format_err(0, "file shorter than a RIFF header"));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(format_err(0, "missing RIFF tag"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(format_err(8, "missing WAVE tag"));
    }

    let mut fmt: Option<(u16, u32, u16)> = None; // (channels, rate, bits)
    let mut data: Option<(usize, usize)> = None; // (offset, len)
    let mut cursor = 12usize;
    while cursor + 8 <= bytes.len() {
        let id = &bytes[cursor..cursor + 4];
        let size = read_u32(&bytes, cursor + 4)? as usize;
        let body = cursor + 8;
        if body + size > bytes.len() {
            return Err(format_err(cursor, format!("chunk overruns file by {} bytes", body + size - bytes.len())));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(format_err(cursor, "fmt chunk too small"));
                }
                let audio_format = read_u16(&bytes, body)?;
                if audio_format != 1 {
                    return Err(format_err(body, format!("unsupported codec {audio_format} (want PCM=1)")));
                }
                let channels = read_u16(&bytes, body + 2)?;
                let rate = read_u32(&bytes, body + 4)?;
                let bits = read_u16(&bytes, body + 14)?;
                if bits != 16 {
                    return Err(format_err(body + 14, format!("unsupported bit depth {bits} (want 16)")));
                }
                if channels == 0 || channels > 2 {
                    return Err(format_err(body + 2, format!("unsupported channel count {channels}")));
                }
                fmt = Some((channels, rate, bits));
            }
            b"data" => data = Some((body, size)),
            _ => {} // skip LIST/INFO and friends
        }
        // chunks are word-aligned
        cursor = body + size + (size & 1);
    }
    let (channels, rate, _) = fmt.ok_or_else(|| format_err(12, "no fmt chunk"))?;
    let (data_off, data_len) = data.ok_or_else(|| format_err(12, "no data chunk"))?;
    let frame_bytes = channels as usize * 2;
    if data_len % frame_bytes != 0 {
        return Err(format_err(
            data_off,
            format!("data length {data_len} not a multiple of the {frame_bytes}-byte frame"),
        ));
    }
    let frames = data_len / frame_bytes;
    let mut samples = vec![Vec::with_capacity(frames); channels as usize];
    for f in 0..frames {
        for (c, channel) in samples.iter_mut().enumerate() {
            let o = data_off + f * frame_bytes + c * 2;
            let raw = i16::from_le_bytes([bytes[o], bytes[o + 1]]);
            channel.push(raw as f32 / 32768.0);
        }
    }
    AudioClip::new(samples, rate)
}

/// Header facts gathered without decoding samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WavInfo {
    pub channels: usize,
    pub sample_rate: u32,
    /// Samples per channel.
    pub frames: usize,
}

/// Reads only the chunk headers, seeking over bodies; used for indexing.
pub fn wav_info(path: impl AsRef<Path>) -> Result<WavInfo> {
    use std::io::{Read, Seek, SeekFrom};
    let mut file = fs::File::open(path.as_ref())?;
    let mut head = [0u8; 12];
    file.read_exact(&mut head)
        .map_err(|_| format_err(0, "file shorter than a RIFF header"))?;
    if &head[0..4] != b"RIFF" {
        return Err(format_err(0, "missing RIFF tag"));
    }
    if &head[8..12] != b"WAVE" {
        return Err(format_err(8, "missing WAVE tag"));
    }
    let mut fmt: Option<(u16, u32)> = None;
    let mut data_len: Option<usize> = None;
    let mut cursor = 12usize;
    loop {
        let mut chunk = [0u8; 8];
        match file.read_exact(&mut chunk) {
            Ok(()) => {}
            Err(_) => break,
        }
        let size = u32::from_le_bytes([chunk[4], chunk[5], chunk[6], chunk[7]]) as usize;
        match &chunk[0..4] {
            b"fmt " => {
                let mut body = vec![0u8; size.min(16)];
                file.read_exact(&mut body)
                    .map_err(|_| format_err(cursor + 8, "truncated fmt chunk"))?;
                if body.len() < 16 {
                    return Err(format_err(cursor, "fmt chunk too small"));
                }
                let codec = u16::from_le_bytes([body[0], body[1]]);
                let channels = u16::from_le_bytes([body[2], body[3]]);
                let rate = u32::from_le_bytes([body[4], body[5], body[6], body[7]]);
                let bits = u16::from_le_bytes([body[14], body[15]]);
                if codec != 1 || bits != 16 || channels == 0 || channels > 2 {
                    return Err(format_err(
                        cursor + 8,
                        format!("unsupported format: codec {codec}, {bits}-bit, {channels} ch"),
                    ));
                }
                fmt = Some((channels, rate));
                if size > 16 {
                    file.seek(SeekFrom::Current((size - 16 + (size & 1)) as i64))?;
                } else if size & 1 == 1 {
                    file.seek(SeekFrom::Current(1))?;
                }
            }
            b"data" => {
                data_len = Some(size);
                file.seek(SeekFrom::Current((size + (size & 1)) as i64))?;
            }
            _ => {
                file.seek(SeekFrom::Current((size + (size & 1)) as i64))?;
            }
        }
        cursor += 8 + size + (size & 1);
    }
    let (channels, rate) = fmt.ok_or_else(|| format_err(12, "no fmt chunk"))?;
    let data_len = data_len.ok_or_else(|| format_err(12, "no data chunk"))?;
    let frame_bytes = channels as usize * 2;
    if data_len % frame_bytes != 0 {
        return Err(format_err(12, "data length not frame-aligned"));
    }
    Ok(WavInfo {
        channels: channels as usize,
        sample_rate: rate,
        frames: data_len / frame_bytes,
    })
}

/// Writes a 16-bit PCM RIFF/WAVE file. Values are quantized by
/// `round(x * 32768)` and clamped to the i16 range, so anything read by
/// [`load_wav`] round-trips bit-exactly.
pub fn save_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let channels = clip.channels();
    let frames = clip.len();
    let data_len = frames * channels * 2;
    let mut bytes = Vec::with_capacity(44 + data_len);
    bytes.extend_from_slice(b"RIFF");
    bytes.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    bytes.extend_from_slice(b"WAVE");
    bytes.extend_from_slice(b"fmt ");
    bytes.extend_from_slice(&16u32.to_le_bytes());
    bytes.extend_from_slice(&1u16.to_le_bytes()); // PCM
    bytes.extend_from_slice(&(channels as u16).to_le_bytes());
    bytes.extend_from_slice(&clip.sample_rate().to_le_bytes());
    let byte_rate = clip.sample_rate() * channels as u32 * 2;
    bytes.extend_from_slice(&byte_rate.to_le_bytes());
    bytes.extend_from_slice(&((channels * 2) as u16).to_le_bytes());
    bytes.extend_from_slice(&16u16.to_le_bytes());
    bytes.extend_from_slice(b"data");
    bytes.extend_from_slice(&(data_len as u32).to_le_bytes());
    for f in 0..frames {
        for c in 0..channels {
            let v = (clip.channel(c)[f] * 32768.0).round();
            let q = v.clamp(i16::MIN as f32, i16::MAX as f32) as i16;
            bytes.extend_from_slice(&q.to_le_bytes());
        }
    }
    fs::write(path.as_ref(), bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("gafx-wav-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn thirty_seconds_of_zeros_round_trips() {
        let clip = AudioClip::new(vec![vec![0.0; 661500]], 22050).unwrap();
        let path = tmp("zeros.wav");
        save_wav(&path, &clip).unwrap();
        let back = load_wav(&path).unwrap();
        assert_eq!(back.len(), 661500);
        assert_eq!(back.sample_rate(), 22050);
        assert!((back.duration_secs() - 30.0).abs() < 1e-9);
        assert!(back.channel(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn max_positive_sample_scales_to_just_below_one() {
        let clip = AudioClip::new(vec![vec![32767.0 / 32768.0]], 22050).unwrap();
        let path = tmp("max.wav");
        save_wav(&path, &clip).unwrap();
        let back = load_wav(&path).unwrap();
        let v = back.channel(0)[0];
        assert_eq!(v, 32767.0 / 32768.0);
        assert!((v - 0.99997).abs() < 1e-5);
    }

    #[test]
    fn arbitrary_16_bit_content_round_trips_bit_exactly() {
        // every representable sample value appears somewhere in this sweep
        let vals: Vec<f32> = (-32768i32..32768)
            .step_by(17)
            .map(|s| s as f32 / 32768.0)
            .collect();
        let clip = AudioClip::new(vec![vals.clone(), vals.iter().rev().copied().collect()], 8000)
            .unwrap();
        let path = tmp("sweep.wav");
        save_wav(&path, &clip).unwrap();
        let back = load_wav(&path).unwrap();
        assert_eq!(back.channels(), 2);
        for c in 0..2 {
            let a: Vec<u32> = clip.channel(c).iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.channel(c).iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn malformed_header_reports_offset() {
        let path = tmp("bad.wav");
        std::fs::write(&path, b"RIFFxxxxNOPE0000").unwrap();
        match load_wav(&path) {
            Err(DspError::WavFormat { offset, .. }) => assert_eq!(offset, 8),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn non_pcm_codec_is_rejected() {
        let clip = AudioClip::new(vec![vec![0.0; 4]], 8000).unwrap();
        let path = tmp("codec.wav");
        save_wav(&path, &clip).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[20] = 3; // IEEE float codec id
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_wav(&path), Err(DspError::WavFormat { .. })));
    }

    #[test]
    fn wav_info_matches_full_load() {
        let clip = AudioClip::new(vec![vec![0.25; 1234], vec![-0.25; 1234]], 16000).unwrap();
        let path = tmp("info.wav");
        save_wav(&path, &clip).unwrap();
        let info = wav_info(&path).unwrap();
        assert_eq!(
            info,
            WavInfo {
                channels: 2,
                sample_rate: 16000,
                frames: 1234
            }
        );
    }

    #[test]
    fn skips_unknown_chunks() {
        let clip = AudioClip::new(vec![vec![0.5, -0.5]], 8000).unwrap();
        let path = tmp("chunks.wav");
        save_wav(&path, &clip).unwrap();
        // splice a LIST chunk between fmt and data
        let bytes = std::fs::read(&path).unwrap();
        let mut spliced = bytes[..36].to_vec();
        spliced.extend_from_slice(b"LIST");
        spliced.extend_from_slice(&4u32.to_le_bytes());
        spliced.extend_from_slice(b"INFO");
        spliced.extend_from_slice(&bytes[36..]);
        std::fs::write(&path, spliced).unwrap();
        let back = load_wav(&path).unwrap();
        assert_eq!(back.channel(0), clip.channel(0));
    }
}
