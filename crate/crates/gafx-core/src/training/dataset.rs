//! Dataset ingestion, stratified splitting, and the 30s-to-3x10s
//! augmentation, all deterministic under a seed.
//!
//! The expected layout is GTZAN-style: `root/<genre>/<genre>.NNNNN.wav`.
//! Genres are discovered from the sorted subdirectory names, so toy corpora
//! with other class counts work the same way.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::{load_wav, wav_info, AudioClip};

use super::{Result, TrainError};

/// Augmentation slices 30 s tracks at 22050 Hz into exact thirds.
pub const AUGMENT_RATE: u32 = 22050;
pub const AUGMENT_PARENT_SAMPLES: usize = 661500;
pub const AUGMENT_CHILD_SAMPLES: usize = 220500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

/// One playable item: a whole track, or an augmented slice of one.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClipEntry {
    pub path: PathBuf,
    pub genre: String,
    pub label: usize,
    pub split: Split,
    /// Identity of the source track; augmented children keep their parent's.
    pub parent: String,
    /// `(start_sample, samples)` for augmented children.
    pub offset: Option<(usize, usize)>,
    pub duration_samples: usize,
    pub sample_rate: u32,
}

impl ClipEntry {
    pub fn duration_secs(&self) -> f64 {
        self.duration_samples as f64 / self.sample_rate as f64
    }
}

/// The materialized dataset manifest.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DatasetIndex {
    pub genres: Vec<String>,
    pub seed: u64,
    pub augmented: bool,
    pub entries: Vec<ClipEntry>,
}

impl DatasetIndex {
    pub fn num_classes(&self) -> usize {
        self.genres.len()
    }

    pub fn split_entries(&self, split: Split) -> impl Iterator<Item = &ClipEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn train_count(&self) -> usize {
        self.split_entries(Split::Train).count()
    }

    pub fn eval_count(&self) -> usize {
        self.split_entries(Split::Eval).count()
    }

    /// Decodes an entry, applying the child offset when present.
    pub fn load_clip(&self, entry: &ClipEntry) -> Result<AudioClip> {
        let clip = load_wav(&entry.path)?;
        match entry.offset {
            Some((start, len)) => Ok(clip.slice(start, len)?),
            None => Ok(clip),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path.as_ref())?;
        f.write_all(self.to_json()?.as_bytes())?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<DatasetIndex> {
        let text = fs::read_to_string(path.as_ref())?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Scans `root/<genre>/*.wav` and assigns a deterministic stratified 80/20
/// split under `seed`. Same seed, same split; different seeds move files
/// between splits but never change the per-genre counts.
pub fn build_index(root: impl AsRef<Path>, seed: u64) -> Result<DatasetIndex> {
    let root = root.as_ref();
    let mut genres: Vec<String> = fs::read_dir(root)
        .map_err(|e| TrainError::Ingestion(format!("cannot read {}: {e}", root.display())))?
        .filter_map(|r| r.ok())
        .filter(|d| d.path().is_dir())
        .map(|d| d.file_name().to_string_lossy().into_owned())
        .collect();
    genres.sort();
    if genres.is_empty() {
        return Err(TrainError::Ingestion(format!(
            "no genre directories under {}",
            root.display()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    let mut offenders = Vec::new();
    for (label, genre) in genres.iter().enumerate() {
        let dir = root.join(genre);
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| TrainError::Ingestion(format!("cannot read {}: {e}", dir.display())))?
            .filter_map(|r| r.ok())
            .map(|d| d.path())
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
            .collect();
        files.sort();
        if files.is_empty() {
            offenders.push(format!("{}: no wav files", dir.display()));
            continue;
        }
        let mut probed = Vec::with_capacity(files.len());
        for path in files {
            match wav_info(&path) {
                Ok(info) => probed.push((path, info)),
                Err(e) => offenders.push(format!("{}: {e}", path.display())),
            }
        }
        // deterministic shuffle, then the tail becomes the eval split
        for i in (1..probed.len()).rev() {
            let j = rng.gen_range(0..=i);
            probed.swap(i, j);
        }
        let n = probed.len();
        let eval_n = if n < 2 {
            0
        } else {
            (((n as f64) * 0.2).round() as usize).clamp(1, n - 1)
        };
        for (i, (path, info)) in probed.into_iter().enumerate() {
            let split = if i < n - eval_n { Split::Train } else { Split::Eval };
            let parent = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            entries.push(ClipEntry {
                path,
                genre: genre.clone(),
                label,
                split,
                parent,
                offset: None,
                duration_samples: info.frames,
                sample_rate: info.sample_rate,
            });
        }
    }
    if !offenders.is_empty() {
        return Err(TrainError::Ingestion(format!(
            "{} problem file(s):\n  {}",
            offenders.len(),
            offenders.join("\n  ")
        )));
    }
    // stable presentation order: genre, then path
    entries.sort_by(|a, b| (a.label, &a.path).cmp(&(b.label, &b.path)));
    Ok(DatasetIndex {
        genres,
        seed,
        augmented: false,
        entries,
    })
}

/// Replaces every 30 s train track with three exact 10 s children; eval
/// entries are untouched. Children inherit their parent's split and id, so
/// no track can leak across splits.
pub fn augment_split(index: &DatasetIndex) -> Result<DatasetIndex> {
    if index.augmented {
        return Err(TrainError::Config("index is already augmented".into()));
    }
    let mut entries = Vec::with_capacity(index.entries.len() * 3);
    for entry in &index.entries {
        if entry.split == Split::Eval {
            entries.push(entry.clone());
            continue;
        }
        if entry.sample_rate != AUGMENT_RATE || entry.duration_samples < AUGMENT_PARENT_SAMPLES {
            return Err(TrainError::Ingestion(format!(
                "{}: augmentation requires a full 30 s track at {AUGMENT_RATE} Hz \
                 ({} samples), found {} at {} Hz",
                entry.path.display(),
                AUGMENT_PARENT_SAMPLES,
                entry.duration_samples,
                entry.sample_rate
            )));
        }
        for third in 0..3 {
            let start = third * AUGMENT_CHILD_SAMPLES;
            entries.push(ClipEntry {
                offset: Some((start, AUGMENT_CHILD_SAMPLES)),
                duration_samples: AUGMENT_CHILD_SAMPLES,
                ..entry.clone()
            });
        }
    }
    Ok(DatasetIndex {
        genres: index.genres.clone(),
        seed: index.seed,
        augmented: true,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::save_wav;

    fn corpus(genres: &[&str], per_genre: usize, samples: usize) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for g in genres {
            let gd = dir.path().join(g);
            fs::create_dir(&gd).unwrap();
            for i in 0..per_genre {
                let clip = AudioClip::new(vec![vec![0.0; samples]], 22050).unwrap();
                save_wav(gd.join(format!("{g}.{i:05}.wav")), &clip).unwrap();
            }
        }
        dir
    }

    #[test]
    fn stratified_counts_and_determinism() {
        let dir = corpus(&["blues", "jazz", "rock"], 10, 64);
        let a = build_index(dir.path(), 7).unwrap();
        assert_eq!(a.genres, vec!["blues", "jazz", "rock"]);
        assert_eq!(a.train_count(), 24);
        assert_eq!(a.eval_count(), 6);
        for g in &a.genres {
            let evals = a
                .split_entries(Split::Eval)
                .filter(|e| &e.genre == g)
                .count();
            assert_eq!(evals, 2, "genre {g}");
        }
        let b = build_index(dir.path(), 7).unwrap();
        assert_eq!(a, b);
        let c = build_index(dir.path(), 8).unwrap();
        assert_ne!(a, c);
        assert_eq!(c.train_count(), 24);
    }

    #[test]
    fn empty_root_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            build_index(dir.path(), 0),
            Err(TrainError::Ingestion(_))
        ));
    }

    #[test]
    fn genre_without_wavs_is_reported() {
        let dir = corpus(&["blues"], 2, 64);
        fs::create_dir(dir.path().join("empty_genre")).unwrap();
        let err = build_index(dir.path(), 0).unwrap_err();
        assert!(err.to_string().contains("empty_genre"));
    }

    #[test]
    fn unreadable_file_is_listed() {
        let dir = corpus(&["blues"], 2, 64);
        fs::write(dir.path().join("blues/broken.wav"), b"not a wav").unwrap();
        let err = build_index(dir.path(), 0).unwrap_err();
        assert!(err.to_string().contains("broken.wav"));
    }

    #[test]
    fn augmentation_triples_train_and_slices_exactly() {
        let dir = corpus(&["a", "b"], 5, AUGMENT_PARENT_SAMPLES);
        let index = build_index(dir.path(), 3).unwrap();
        let augmented = augment_split(&index).unwrap();
        assert_eq!(augmented.train_count(), index.train_count() * 3);
        assert_eq!(augmented.eval_count(), index.eval_count());
        for child in augmented.split_entries(Split::Train) {
            assert_eq!(child.duration_samples, AUGMENT_CHILD_SAMPLES);
            assert!((child.duration_secs() - 10.0).abs() < 1e-12);
        }
        // children partition the parent exactly
        let offsets: Vec<_> = augmented
            .split_entries(Split::Train)
            .take(3)
            .map(|e| e.offset.unwrap())
            .collect();
        assert_eq!(offsets, vec![(0, 220500), (220500, 220500), (441000, 220500)]);
    }

    #[test]
    fn augmenting_short_tracks_fails() {
        let dir = corpus(&["a"], 3, 1000);
        let index = build_index(dir.path(), 0).unwrap();
        assert!(matches!(
            augment_split(&index),
            Err(TrainError::Ingestion(_))
        ));
    }

    #[test]
    fn child_concatenation_reproduces_parent() {
        let dir = tempfile::tempdir().unwrap();
        let gd = dir.path().join("tone");
        fs::create_dir(&gd).unwrap();
        // distinctive content so the slice equality is meaningful; two
        // tracks so one lands in train for any seed
        for i in 0..2 {
            let samples: Vec<f32> = (0..AUGMENT_PARENT_SAMPLES)
                .map(|n| (((n * (i + 3)) % 4096) as f32 / 4096.0 - 0.5) * 0.9)
                .collect();
            let clip = AudioClip::new(vec![samples], 22050).unwrap();
            save_wav(gd.join(format!("tone.{i:05}.wav")), &clip).unwrap();
        }
        let index = build_index(dir.path(), 1).unwrap();
        let augmented = augment_split(&index).unwrap();
        let parent_entry = index.split_entries(Split::Train).next().unwrap();
        let parent = index.load_clip(parent_entry).unwrap();
        let children: Vec<_> = augmented
            .split_entries(Split::Train)
            .filter(|e| e.path == parent_entry.path)
            .collect();
        assert_eq!(children.len(), 3);
        let mut rebuilt = Vec::new();
        for c in &children {
            rebuilt.extend_from_slice(index.load_clip(c).unwrap().channel(0));
        }
        let parent_bits: Vec<u32> = parent.channel(0)[..AUGMENT_PARENT_SAMPLES]
            .iter()
            .map(|v| v.to_bits())
            .collect();
        let rebuilt_bits: Vec<u32> = rebuilt.iter().map(|v| v.to_bits()).collect();
        assert_eq!(parent_bits, rebuilt_bits);
    }

    #[test]
    fn manifest_round_trips_and_is_stable() {
        let dir = corpus(&["x", "y"], 3, 64);
        let index = build_index(dir.path(), 5).unwrap();
        let path = dir.path().join("manifest.json");
        index.save(&path).unwrap();
        let loaded = DatasetIndex::load(&path).unwrap();
        assert_eq!(index, loaded);
        let first = fs::read(&path).unwrap();
        build_index(dir.path(), 5).unwrap().save(&path).unwrap();
        assert_eq!(first, fs::read(&path).unwrap());
    }
}
