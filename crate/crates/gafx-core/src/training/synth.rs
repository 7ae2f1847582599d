//! Synthetic corpora for desk-scale runs: pure-tone classes are linearly
//! separable in the spectrum, so any functional pipeline can overfit them.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::{save_wav, AudioClip};

use super::Result;

/// Writes `clips_per_genre` mono tone clips per `(name, frequency_hz)`
/// class into `root/<name>/<name>.NNNNN.wav`, with per-clip amplitude and
/// phase jitter plus a little noise.
pub fn write_tone_corpus(
    root: impl AsRef<Path>,
    genres: &[(&str, f64)],
    clips_per_genre: usize,
    seconds: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<()> {
    let root = root.as_ref();
    let samples = (seconds * sample_rate as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (name, freq) in genres {
        let dir = root.join(name);
        fs::create_dir_all(&dir)?;
        for i in 0..clips_per_genre {
            let amplitude = rng.gen_range(0.35..0.7);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let noise_level = 0.01;
            let wave: Vec<f32> = (0..samples)
                .map(|n| {
                    let t = n as f64 / sample_rate as f64;
                    let tone = amplitude * (std::f64::consts::TAU * freq * t + phase).sin();
                    let noise = noise_level * (rng.gen_range(-1.0..1.0f64));
                    (tone + noise) as f32
                })
                .collect();
            let clip = AudioClip::new(vec![wave], sample_rate)?;
            save_wav(dir.join(format!("{name}.{i:05}.wav")), &clip)?;
        }
    }
    Ok(())
}

/// The three-class tone corpus used by the learnability checks.
pub fn default_tone_genres() -> Vec<(&'static str, f64)> {
    vec![("low", 220.0), ("mid", 880.0), ("high", 3520.0)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::wav_info;

    #[test]
    fn corpus_layout_and_length() {
        let dir = tempfile::tempdir().unwrap();
        write_tone_corpus(dir.path(), &[("a", 440.0), ("b", 880.0)], 3, 0.5, 22050, 1).unwrap();
        for g in ["a", "b"] {
            for i in 0..3 {
                let info = wav_info(dir.path().join(format!("{g}/{g}.{i:05}.wav"))).unwrap();
                assert_eq!(info.frames, 11025);
                assert_eq!(info.sample_rate, 22050);
            }
        }
    }
}
