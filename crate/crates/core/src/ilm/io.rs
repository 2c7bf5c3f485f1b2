//! Model file format (magic "VRSN", little-endian).
//!
//! 52-byte header: magic, version u32, trunk_depth u32, trunk_width u32,
//! color_hidden_width u32, position_freqs u32, direction_freqs u32,
//! flags u32 (bit 0: include_identity), cluster_id u32, position_scale
//! f64, param_count u64. Then exactly param_count f32 values: every
//! coarse tensor, then every fine tensor, in canonical order (per layer:
//! weight then bias, row-major). File length is 52 + 4 * param_count,
//! nothing else.

use std::path::Path;

use super::{ArchConfig, EncodingConfig, IlmError, ModelConfig, NerfModel};

const MAGIC: &[u8; 4] = b"VRSN";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 52;

pub fn save_model(model: &NerfModel<f32>, path: &Path) -> Result<(), IlmError> {
    let param_count = model.param_count();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * param_count);
    out.extend_from_slice(MAGIC);
    for v in [
        VERSION,
        model.arch.trunk_depth,
        model.arch.trunk_width,
        model.arch.color_hidden_width,
        model.encoding.position_freqs,
        model.encoding.direction_freqs,
        u32::from(model.encoding.include_identity),
        model.cluster_id,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&model.position_scale.to_le_bytes());
    out.extend_from_slice(&(param_count as u64).to_le_bytes());
    for tensor in model.coarse.tensors().into_iter().chain(model.fine.tensors()) {
        for &v in tensor.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    debug_assert_eq!(out.len(), HEADER_LEN + 4 * param_count);
    Ok(std::fs::write(path, out)?)
}

pub fn load_model(path: &Path) -> Result<NerfModel<f32>, IlmError> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < HEADER_LEN {
        return Err(IlmError::Truncated {
            expected: (HEADER_LEN - bytes.len()) as u64,
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(IlmError::BadMagic);
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(IlmError::UnsupportedVersion(version));
    }
    let config = ModelConfig {
        arch: ArchConfig {
            trunk_depth: u32_at(8),
            trunk_width: u32_at(12),
            color_hidden_width: u32_at(16),
        },
        encoding: EncodingConfig {
            position_freqs: u32_at(20),
            direction_freqs: u32_at(24),
            include_identity: u32_at(28) & 1 == 1,
        },
        position_scale: f64::from_le_bytes(bytes[36..44].try_into().unwrap()),
    };
    let cluster_id = u32_at(32);
    let param_count = u64::from_le_bytes(bytes[44..52].try_into().unwrap());

    // Any seed works: every parameter is overwritten below.
    let mut model = NerfModel::<f32>::init(cluster_id, &config, 0)?;
    if model.param_count() as u64 != param_count {
        return Err(IlmError::HeaderMismatch(format!(
            "header claims {param_count} parameters, architecture implies {}",
            model.param_count()
        )));
    }
    let expected_len = HEADER_LEN as u64 + 4 * param_count;
    if (bytes.len() as u64) < expected_len {
        return Err(IlmError::Truncated {
            expected: expected_len - bytes.len() as u64,
        });
    }
    if bytes.len() as u64 != expected_len {
        return Err(IlmError::HeaderMismatch(format!(
            "file has {} trailing bytes",
            bytes.len() as u64 - expected_len
        )));
    }
    let mut cursor = HEADER_LEN;
    for tensor in model
        .coarse
        .tensors_mut()
        .into_iter()
        .chain(model.fine.tensors_mut())
    {
        for v in tensor.iter_mut() {
            *v = f32::from_le_bytes(bytes[cursor..cursor + 4].try_into().unwrap());
            cursor += 4;
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_model() -> NerfModel<f32> {
        let config = ModelConfig {
            encoding: EncodingConfig {
                position_freqs: 4,
                direction_freqs: 2,
                include_identity: true,
            },
            arch: ArchConfig {
                trunk_depth: 3,
                trunk_width: 24,
                color_hidden_width: 12,
            },
            position_scale: 0.287,
        };
        NerfModel::init(5, &config, 12345).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let model = test_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.vrsn");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(model, loaded);
    }

    #[test]
    fn file_length_is_header_plus_params() {
        let model = test_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.vrsn");
        save_model(&model, &path).unwrap();
        let len = std::fs::metadata(&path).unwrap().len();
        assert_eq!(len, 52 + 4 * model.param_count() as u64);
    }

    #[test]
    fn corrupt_files_give_structured_errors() {
        let model = test_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.vrsn");
        save_model(&model, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let bad_magic = dir.path().join("magic.vrsn");
        let mut b = bytes.clone();
        b[1] = b'Q';
        std::fs::write(&bad_magic, &b).unwrap();
        assert!(matches!(load_model(&bad_magic), Err(IlmError::BadMagic)));

        let bad_version = dir.path().join("version.vrsn");
        let mut b = bytes.clone();
        b[4..8].copy_from_slice(&3u32.to_le_bytes());
        std::fs::write(&bad_version, &b).unwrap();
        assert!(matches!(
            load_model(&bad_version),
            Err(IlmError::UnsupportedVersion(3))
        ));

        let short = dir.path().join("short.vrsn");
        std::fs::write(&short, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(load_model(&short), Err(IlmError::Truncated { .. })));

        let long = dir.path().join("long.vrsn");
        let mut b = bytes.clone();
        b.extend_from_slice(&[0, 1, 2]);
        std::fs::write(&long, &b).unwrap();
        assert!(matches!(load_model(&long), Err(IlmError::HeaderMismatch(_))));
    }
}
