//! Feature maps: the extractor/classifier contract, plus the binary dump
//! format used by the `extract` command.

use std::fs;
use std::path::Path;

use crate::tensor::{ops, Element, Tape, Tensor, TensorError};

use super::{DspError, Result};

pub const FEATURE_BINS: usize = 128;
const FEATURE_MAGIC: &[u8; 8] = b"GAFXFEAT";
const FEATURE_VERSION: u32 = 1;

/// Where a feature map came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSource {
    MelBaseline,
    GafxU,
    GafxR,
    GafxA,
}

/// A 2-d time/frequency feature with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub values: Vec<f32>,
    pub time_steps: usize,
    pub freq_bins: usize,
    pub source: FeatureSource,
}

impl FeatureMap {
    pub fn new(
        values: Vec<f32>,
        time_steps: usize,
        freq_bins: usize,
        source: FeatureSource,
    ) -> std::result::Result<Self, TensorError> {
        if values.len() != time_steps * freq_bins {
            return Err(TensorError::Dim(format!(
                "{} values for a {time_steps}x{freq_bins} feature",
                values.len()
            )));
        }
        Ok(FeatureMap {
            values,
            time_steps,
            freq_bins,
            source,
        })
    }

    pub fn to_tensor<E: Element>(&self) -> Tensor<E> {
        let data = self.values.iter().map(|&v| E::lit(v as f64)).collect();
        Tensor::new(data, &[self.time_steps, self.freq_bins]).expect("feature shape")
    }

    pub fn from_tensor<E: Element>(t: &Tensor<E>, source: FeatureSource) -> Self {
        assert_eq!(t.shape().len(), 2, "feature tensors are 2-d");
        FeatureMap {
            values: t.values().iter().map(|v| v.as_f64() as f32).collect(),
            time_steps: t.shape()[0],
            freq_bins: t.shape()[1],
            source,
        }
    }
}

/// Pools a `[T, F]` map to `[T, 128]` by contiguous group means (F must be a
/// multiple of 128; the dual U-Net path pools 2048 bins in groups of 16).
pub fn freq_group_pool<E: Element>(
    tape: &Tape<E>,
    x: &Tensor<E>,
) -> std::result::Result<Tensor<E>, TensorError> {
    let shape = x.shape();
    if shape.len() != 2 || shape[1] % FEATURE_BINS != 0 {
        return Err(TensorError::Dim(format!(
            "freq_group_pool needs [T, k*{FEATURE_BINS}], got {shape:?}"
        )));
    }
    let group = shape[1] / FEATURE_BINS;
    let grouped = ops::reshape(tape, x, &[shape[0], FEATURE_BINS, group])?;
    ops::mean_axis(tape, &grouped, 2)
}

/// Global mean/std standardization of a feature map (std clamped at 1e-5).
pub fn normalize_feature(fm: &FeatureMap) -> FeatureMap {
    let tape = Tape::inference();
    let t: Tensor<f32> = fm.to_tensor();
    let normalized = ops::standardize(&tape, &t);
    FeatureMap {
        values: normalized.to_vec(),
        time_steps: fm.time_steps,
        freq_bins: fm.freq_bins,
        source: fm.source,
    }
}

/// Writes the binary dump: magic `GAFXFEAT`, u32 version, u32 T, u32 F, then
/// `T*F` little-endian f32 values row-major.
pub fn write_feature(path: impl AsRef<Path>, fm: &FeatureMap) -> Result<()> {
    let mut bytes = Vec::with_capacity(20 + fm.values.len() * 4);
    bytes.extend_from_slice(FEATURE_MAGIC);
    bytes.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(fm.time_steps as u32).to_le_bytes());
    bytes.extend_from_slice(&(fm.freq_bins as u32).to_le_bytes());
    for v in &fm.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path.as_ref(), bytes)?;
    Ok(())
}

pub fn read_feature(path: impl AsRef<Path>) -> Result<FeatureMap> {
    let bytes = fs::read(path.as_ref())?;
    let err = |offset: usize, message: &str| DspError::WavFormat {
        offset,
        message: format!("feature dump: {message}"),
    };
    if bytes.len() < 20 {
        return Err(err(0, "truncated header"));
    }
    if &bytes[0..8] != FEATURE_MAGIC {
        return Err(err(0, "bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
    let version = u32_at(8);
    if version != FEATURE_VERSION {
        return Err(err(8, &format!("unknown version {version}")));
    }
    let t = u32_at(12) as usize;
    let f = u32_at(16) as usize;
    if bytes.len() != 20 + t * f * 4 {
        return Err(err(20, "payload length mismatch"));
    }
    let values = bytes[20..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    FeatureMap::new(values, t, f, FeatureSource::MelBaseline)
        .map_err(|e| err(12, &e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_pools_to_same_constant() {
        let tape = Tape::inference();
        let x = Tensor::new(vec![0.75f32; 3 * 2048], &[3, 2048]).unwrap();
        let y = freq_group_pool(&tape, &x).unwrap();
        assert_eq!(y.shape(), &[3, 128]);
        assert!(y.to_vec().iter().all(|&v| (v - 0.75).abs() < 1e-6));
    }

    #[test]
    fn bin_index_input_pools_to_group_centers() {
        let tape = Tape::inference();
        let data: Vec<f64> = (0..2048).map(|k| k as f64).collect();
        let x = Tensor::new(data, &[1, 2048]).unwrap();
        let y = freq_group_pool(&tape, &x).unwrap();
        for (g, &v) in y.to_vec().iter().enumerate() {
            assert!((v - (16.0 * g as f64 + 7.5)).abs() < 1e-9);
        }
    }

    #[test]
    fn pool_shape_contract() {
        let tape = Tape::inference();
        let x = Tensor::new(vec![0.0f32; 1876 * 2048], &[1876, 2048]).unwrap();
        let y = freq_group_pool(&tape, &x).unwrap();
        assert_eq!(y.shape(), &[1876, 128]);
    }

    #[test]
    fn normalize_standardizes_and_clamps() {
        let raw: Vec<f32> = (0..256).map(|i| (i as f32 * 0.37).sin() * 3.0 + 5.0).collect();
        let fm = FeatureMap::new(raw, 2, 128, FeatureSource::MelBaseline).unwrap();
        let out = normalize_feature(&fm);
        let n = out.values.len() as f64;
        let mean: f64 = out.values.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var: f64 = out.values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-4);
        assert!((var.sqrt() - 1.0).abs() < 1e-4);

        let constant = FeatureMap::new(vec![4.0; 256], 2, 128, FeatureSource::MelBaseline).unwrap();
        assert!(normalize_feature(&constant).values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dump_round_trip_and_corruption() {
        let dir = std::env::temp_dir().join("gafx-feat-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("a.feat");
        let fm = FeatureMap::new(
            (0..6 * 128).map(|i| i as f32 * 0.5).collect(),
            6,
            128,
            FeatureSource::GafxU,
        )
        .unwrap();
        write_feature(&path, &fm).unwrap();
        let back = read_feature(&path).unwrap();
        assert_eq!(back.values, fm.values);
        assert_eq!((back.time_steps, back.freq_bins), (6, 128));

        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_feature(&path).is_err());
    }
}
