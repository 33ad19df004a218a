//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic          4 bytes  "RRWL"
//! version        u32      currently 1
//! manifest_len   u64
//! manifest       JSON     config, vocabulary, layout metadata
//! tensor_count   u32
//! per tensor:
//!   name_len u32, name bytes,
//!   rank u32, dims u64 x rank,
//!   values f64 x prod(dims)
//! ```
//!
//! Tensors cover the embedding matrix, the filter bank, the scorer weights,
//! and the Adagrad accumulators for each.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::encoder::{ConvEncoder, EmbeddingTable};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::train::AdaGrad;

pub const MAGIC: &[u8; 4] = b"RRWL";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: Config,
    vocab: Vec<String>,
    embedding_dim: usize,
    filters: usize,
    filter_window: usize,
    oov_row: usize,
    pad_row: usize,
}

struct Tensor {
    name: String,
    dims: Vec<u64>,
    values: Vec<f64>,
}

fn write_tensor(w: &mut impl Write, name: &str, dims: &[u64], values: &[f64]) -> Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for d in dims {
        w.write_all(&d.to_le_bytes())?;
    }
    debug_assert_eq!(dims.iter().product::<u64>() as usize, values.len());
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_exact_vec(r: &mut impl Read, len: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_tensor(r: &mut impl Read) -> Result<Tensor> {
    let name_len = read_u32(r)? as usize;
    let name = String::from_utf8(read_exact_vec(r, name_len)?)
        .map_err(|e| Error::Input(format!("bad tensor name: {e}")))?;
    let rank = read_u32(r)? as usize;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(read_u64(r)?);
    }
    let count = dims.iter().product::<u64>() as usize;
    let mut values = Vec::with_capacity(count);
    let mut b = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut b)?;
        values.push(f64::from_le_bytes(b));
    }
    Ok(Tensor { name, dims, values })
}

pub fn save(
    path: impl AsRef<Path>,
    params: &ModelParams,
    optimizer: &AdaGrad,
    config: &Config,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;

    let manifest = Manifest {
        config: config.clone(),
        vocab: params.embeddings.vocab().to_vec(),
        embedding_dim: params.embeddings.dim,
        filters: params.encoder.out_dim,
        filter_window: params.encoder.window,
        oov_row: params.embeddings.oov_row(),
        pad_row: params.embeddings.pad_row(),
    };
    let manifest_json = serde_json::to_vec(&manifest)
        .map_err(|e| Error::Input(format!("manifest serialization failed: {e}")))?;
    w.write_all(&(manifest_json.len() as u64).to_le_bytes())?;
    w.write_all(&manifest_json)?;

    let emb_rows = params.embeddings.rows() as u64;
    let h = params.embeddings.dim as u64;
    let v = params.encoder.out_dim as u64;
    let l = params.encoder.window as u64;
    let tensors: [(&str, Vec<u64>, &[f64]); 6] = [
        ("embeddings", vec![emb_rows, h], &params.embeddings.data),
        ("filters", vec![v, l, h], &params.encoder.filters),
        ("w_local", vec![params.w_local.len() as u64], &params.w_local),
        (
            "adagrad_embeddings",
            vec![emb_rows, h],
            &optimizer.accum_embeddings,
        ),
        ("adagrad_filters", vec![v, l, h], &optimizer.accum_filters),
        (
            "adagrad_w_local",
            vec![optimizer.accum_w_local.len() as u64],
            &optimizer.accum_w_local,
        ),
    ];
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, dims, values) in tensors {
        write_tensor(&mut w, name, &dims, values)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<(ModelParams, AdaGrad, Config)> {
    let mut r = BufReader::new(File::open(path.as_ref())?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Input(format!(
            "not a checkpoint file (magic {magic:?})"
        )));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Input(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let manifest_len = read_u64(&mut r)? as usize;
    let manifest: Manifest = serde_json::from_slice(&read_exact_vec(&mut r, manifest_len)?)
        .map_err(|e| Error::Input(format!("bad checkpoint manifest: {e}")))?;

    let count = read_u32(&mut r)? as usize;
    let mut tensors = std::collections::HashMap::new();
    for _ in 0..count {
        let t = read_tensor(&mut r)?;
        tensors.insert(t.name.clone(), t);
    }
    let mut take = |name: &str| -> Result<Tensor> {
        tensors
            .remove(name)
            .ok_or_else(|| Error::Input(format!("checkpoint missing tensor {name:?}")))
    };

    let emb = take("embeddings")?;
    let embeddings =
        EmbeddingTable::from_parts(manifest.vocab.clone(), emb.values, manifest.embedding_dim)?;
    if embeddings.oov_row() != manifest.oov_row || embeddings.pad_row() != manifest.pad_row {
        return Err(Error::Input("checkpoint row layout mismatch".into()));
    }
    let filt = take("filters")?;
    if filt.dims.len() != 3 {
        return Err(Error::Input("filters tensor must have rank 3".into()));
    }
    let encoder = ConvEncoder {
        filters: filt.values,
        out_dim: manifest.filters,
        window: manifest.filter_window,
        in_dim: manifest.embedding_dim,
    };
    let w_local = take("w_local")?.values;
    let params = ModelParams {
        embeddings,
        encoder,
        w_local,
    };
    let optimizer = AdaGrad {
        eta: manifest.config.eta,
        epsilon: manifest.config.epsilon,
        accum_embeddings: take("adagrad_embeddings")?.values,
        accum_filters: take("adagrad_filters")?.values,
        accum_w_local: take("adagrad_w_local")?.values,
    };
    Ok((params, optimizer, manifest.config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_params(seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vocab: Vec<(String, Vec<f64>)> = ["alpha", "beta", "gamma"]
            .iter()
            .map(|w| {
                let row: Vec<f64> = (0..5).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
                (w.to_string(), row)
            })
            .collect();
        let emb = EmbeddingTable::new(vocab, 5, &mut rng).unwrap();
        ModelParams::init(emb, 4, 3, &mut rng)
    }

    #[test]
    fn roundtrip_is_bitwise_identical() {
        let params = sample_params(42);
        let mut opt = AdaGrad::new(&params, 0.01, 1e-8);
        opt.accum_w_local[3] = 0.5;
        let config = Config::default();
        let f = tempfile::NamedTempFile::new().unwrap();
        save(f.path(), &params, &opt, &config).unwrap();
        let (p2, o2, c2) = load(f.path()).unwrap();
        assert_eq!(p2.embeddings.data, params.embeddings.data);
        assert_eq!(p2.encoder.filters, params.encoder.filters);
        assert_eq!(p2.w_local, params.w_local);
        assert_eq!(o2.accum_w_local, opt.accum_w_local);
        assert_eq!(c2.k, config.k);
        assert_eq!(p2.embeddings.vocab(), params.embeddings.vocab());
    }

    #[test]
    fn wrong_magic_rejected() {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), b"NOPE....").unwrap();
        assert!(matches!(load(f.path()), Err(Error::Input(_))));
    }
}
