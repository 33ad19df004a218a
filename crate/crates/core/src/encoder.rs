//! Shared convolution-ReLU-average text encoder and sinusoidal position
//! encodings.
//!
//! One filter bank encodes every text granularity (mention surface, context
//! window, document prefix, entity title, entity body), so identical token
//! sequences always map to identical vectors. Inputs shorter than the filter
//! window are right-padded with a reserved pad token whose embedding is
//! frozen at zero; trailing pad tokens beyond that never change the output.
//!
//! Backward passes are hand-rolled: [`encode_backward`] accumulates exact
//! gradients of the encoder output with respect to both the filter bank and
//! the touched embedding rows.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

/// Reserved token string mapped to the frozen zero pad row.
pub const PAD_TOKEN: &str = "<pad>";

/// Word embedding table with a shared trainable OOV row and a frozen pad row.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    /// Row-major `[rows x dim]`, including the OOV and pad rows at the end.
    pub data: Vec<f64>,
    pub dim: usize,
    oov_row: usize,
    pad_row: usize,
}

impl EmbeddingTable {
    /// Build a table from explicit vocabulary rows. The OOV row is seeded
    /// uniformly in `(-0.01, 0.01)`; the pad row is zero and stays zero.
    pub fn new(vocab: Vec<(String, Vec<f64>)>, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut tokens = Vec::with_capacity(vocab.len());
        let mut index = HashMap::with_capacity(vocab.len());
        let mut data = Vec::with_capacity((vocab.len() + 2) * dim);
        for (i, (token, row)) in vocab.into_iter().enumerate() {
            if row.len() != dim {
                return Err(Error::Config(format!(
                    "embedding row for {token:?} has {} components, expected {dim}",
                    row.len()
                )));
            }
            if index.insert(token.clone(), i).is_some() {
                return Err(Error::DuplicateId(token));
            }
            tokens.push(token);
            data.extend_from_slice(&row);
        }
        let oov_row = tokens.len();
        let pad_row = tokens.len() + 1;
        for _ in 0..dim {
            data.push(rng.gen_range(-0.01..0.01));
        }
        data.extend(std::iter::repeat(0.0).take(dim));
        Ok(Self {
            tokens,
            index,
            data,
            dim,
            oov_row,
            pad_row,
        })
    }

    /// Read a whitespace-separated embedding file: an optional `<count> <dim>`
    /// header followed by `token v1 .. vh` lines.
    pub fn from_file(path: impl AsRef<Path>, rng: &mut impl Rng) -> Result<Self> {
        let file = File::open(path.as_ref())?;
        let reader = BufReader::new(file);
        let mut vocab: Vec<(String, Vec<f64>)> = Vec::new();
        let mut dim: Option<usize> = None;
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if lineno == 1 && fields.len() == 2 {
                if let (Ok(_count), Ok(d)) =
                    (fields[0].parse::<usize>(), fields[1].parse::<usize>())
                {
                    dim = Some(d);
                    continue;
                }
            }
            let token = fields[0].to_string();
            let row: Vec<f64> = fields[1..]
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|e| Error::parse(lineno, format!("bad float {f:?}: {e}")))
                })
                .collect::<Result<_>>()?;
            match dim {
                Some(d) if row.len() != d => {
                    return Err(Error::parse(
                        lineno,
                        format!("expected {d} components, found {}", row.len()),
                    ))
                }
                None => dim = Some(row.len()),
                _ => {}
            }
            vocab.push((token, row));
        }
        let dim = dim.ok_or_else(|| Error::Config("empty embedding file".into()))?;
        Self::new(vocab, dim, rng)
    }

    /// [`Self::from_file`] with a seeded generator for the OOV row.
    pub fn from_file_seeded(path: impl AsRef<Path>, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Self::from_file(path, &mut rng)
    }

    /// Rebuild a table from a serialized vocabulary and weight matrix. The
    /// matrix must carry `tokens.len() + 2` rows (vocabulary, OOV, pad).
    pub fn from_parts(tokens: Vec<String>, data: Vec<f64>, dim: usize) -> Result<Self> {
        let rows = tokens.len() + 2;
        if data.len() != rows * dim {
            return Err(Error::Config(format!(
                "embedding matrix has {} values, expected {} rows x {dim}",
                data.len(),
                rows
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, token) in tokens.iter().enumerate() {
            if index.insert(token.clone(), i).is_some() {
                return Err(Error::DuplicateId(token.clone()));
            }
        }
        Ok(Self {
            oov_row: tokens.len(),
            pad_row: tokens.len() + 1,
            tokens,
            index,
            data,
            dim,
        })
    }

    pub fn rows(&self) -> usize {
        self.tokens.len() + 2
    }

    pub fn vocab(&self) -> &[String] {
        &self.tokens
    }

    pub fn oov_row(&self) -> usize {
        self.oov_row
    }

    pub fn pad_row(&self) -> usize {
        self.pad_row
    }

    /// Row index for a token; unknown tokens fall back to the OOV row.
    pub fn row_of(&self, token: &str) -> usize {
        if token == PAD_TOKEN {
            return self.pad_row;
        }
        *self.index.get(token).unwrap_or(&self.oov_row)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }
}

/// Convolution filter bank: `out_dim` channels over windows of `window`
/// consecutive `in_dim`-dimensional embeddings, ReLU, average pooling.
#[derive(Debug, Clone)]
pub struct ConvEncoder {
    /// Flattened `[out_dim x window x in_dim]`.
    pub filters: Vec<f64>,
    pub out_dim: usize,
    pub window: usize,
    pub in_dim: usize,
}

impl ConvEncoder {
    pub fn seeded(out_dim: usize, window: usize, in_dim: usize, rng: &mut impl Rng) -> Self {
        let filters = (0..out_dim * window * in_dim)
            .map(|_| rng.gen_range(-0.01..0.01))
            .collect();
        Self {
            filters,
            out_dim,
            window,
            in_dim,
        }
    }

    pub fn zeros(out_dim: usize, window: usize, in_dim: usize) -> Self {
        Self {
            filters: vec![0.0; out_dim * window * in_dim],
            out_dim,
            window,
            in_dim,
        }
    }

    #[inline]
    fn filter(&self, channel: usize) -> &[f64] {
        let len = self.window * self.in_dim;
        &self.filters[channel * len..(channel + 1) * len]
    }
}

/// Everything needed to run the backward pass of one [`encode`] call.
#[derive(Debug, Clone)]
pub struct EncodeCache {
    /// Embedding rows actually consumed, after pad normalization.
    pub rows: Vec<usize>,
    /// Pre-activation values, `[windows x out_dim]`.
    pub preact: Vec<f64>,
    pub windows: usize,
}

/// Map tokens to embedding rows, trimming trailing pads and right-padding up
/// to the filter window; this is what makes the output invariant to extra
/// trailing pad tokens.
fn normalized_rows(enc: &ConvEncoder, emb: &EmbeddingTable, tokens: &[String]) -> Vec<usize> {
    let mut rows: Vec<usize> = tokens.iter().map(|t| emb.row_of(t)).collect();
    while rows.last() == Some(&emb.pad_row()) {
        rows.pop();
    }
    while rows.len() < enc.window {
        rows.push(emb.pad_row());
    }
    rows
}

/// Encode a token sequence into an `out_dim` vector.
pub fn encode(enc: &ConvEncoder, emb: &EmbeddingTable, tokens: &[String]) -> Vec<f64> {
    encode_with_cache(enc, emb, tokens).0
}

pub fn encode_with_cache(
    enc: &ConvEncoder,
    emb: &EmbeddingTable,
    tokens: &[String],
) -> (Vec<f64>, EncodeCache) {
    let rows = normalized_rows(enc, emb, tokens);
    let windows = rows.len() - enc.window + 1;
    let mut preact = vec![0.0; windows * enc.out_dim];
    let mut out = vec![0.0; enc.out_dim];
    for t in 0..windows {
        for c in 0..enc.out_dim {
            let filter = enc.filter(c);
            let mut z = 0.0;
            for k in 0..enc.window {
                let row = emb.row(rows[t + k]);
                let base = k * enc.in_dim;
                for d in 0..enc.in_dim {
                    z += filter[base + d] * row[d];
                }
            }
            preact[t * enc.out_dim + c] = z;
            if z > 0.0 {
                out[c] += z;
            }
        }
    }
    let scale = 1.0 / windows as f64;
    for v in &mut out {
        *v *= scale;
    }
    (
        out,
        EncodeCache {
            rows,
            preact,
            windows,
        },
    )
}

/// Accumulate `d(encode)/d(filters)` into `filter_grads` and
/// `d(encode)/d(embeddings)` into `emb_grads`, given the gradient of the loss
/// with respect to the encoder output. The pad row accumulates nothing.
pub fn encode_backward(
    enc: &ConvEncoder,
    emb: &EmbeddingTable,
    cache: &EncodeCache,
    grad_out: &[f64],
    filter_grads: &mut [f64],
    emb_grads: &mut [f64],
) {
    debug_assert_eq!(grad_out.len(), enc.out_dim);
    let scale = 1.0 / cache.windows as f64;
    let flen = enc.window * enc.in_dim;
    for t in 0..cache.windows {
        for c in 0..enc.out_dim {
            if cache.preact[t * enc.out_dim + c] <= 0.0 {
                continue;
            }
            let dz = grad_out[c] * scale;
            if dz == 0.0 {
                continue;
            }
            let filter = enc.filter(c);
            let fg = &mut filter_grads[c * flen..(c + 1) * flen];
            for k in 0..enc.window {
                let r = cache.rows[t + k];
                let base = k * enc.in_dim;
                let row = emb.row(r);
                if r == emb.pad_row() {
                    // frozen row: filters still learn from it (it is zero, so
                    // contributions vanish), but the row itself gets no grad
                    for d in 0..enc.in_dim {
                        fg[base + d] += dz * row[d];
                    }
                    continue;
                }
                let eg = &mut emb_grads[r * enc.in_dim..(r + 1) * enc.in_dim];
                for d in 0..enc.in_dim {
                    fg[base + d] += dz * row[d];
                    eg[d] += dz * filter[base + d];
                }
            }
        }
    }
}

/// Sinusoidal position encoding of a mention ordinal.
#[derive(Debug, Clone, Copy)]
pub struct PositionalEncoding {
    pub dim: usize,
}

impl PositionalEncoding {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    /// Component `2k` is `sin(ordinal / 10000^(2k/dim))`, component `2k+1`
    /// the cosine of the same argument.
    pub fn vector(&self, ordinal: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for k in 0..self.dim / 2 {
            let arg = ordinal as f64 / 10000f64.powf(2.0 * k as f64 / self.dim as f64);
            out[2 * k] = arg.sin();
            out[2 * k + 1] = arg.cos();
        }
        if self.dim % 2 == 1 {
            let k = self.dim / 2;
            let arg = ordinal as f64 / 10000f64.powf(2.0 * k as f64 / self.dim as f64);
            out[self.dim - 1] = arg.sin();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn table(words: &[&str], dim: usize, seed: u64) -> EmbeddingTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vocab: Vec<(String, Vec<f64>)> = words
            .iter()
            .map(|w| {
                let row: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                (w.to_string(), row)
            })
            .collect();
        let mut rng2 = ChaCha8Rng::seed_from_u64(seed + 1);
        EmbeddingTable::new(vocab, dim, &mut rng2).unwrap()
    }

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn zero_filters_give_zero_vector() {
        let emb = table(&["a", "b", "c"], 4, 7);
        let enc = ConvEncoder::zeros(5, 3, 4);
        let out = encode(&enc, &emb, &toks(&["a", "b", "c"]));
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn window_sized_input_is_single_window() {
        let emb = table(&["a", "b", "c"], 4, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = ConvEncoder::seeded(5, 3, 4, &mut rng);
        let (out, cache) = encode_with_cache(&enc, &emb, &toks(&["a", "b", "c"]));
        assert_eq!(cache.windows, 1);
        // single window: output = relu(preact)
        for c in 0..5 {
            assert_eq!(out[c], cache.preact[c].max(0.0));
        }
    }

    #[test]
    fn matches_direct_convolution_oracle() {
        // Straight-line reimplementation of the formula, no caching tricks.
        let emb = table(&["a", "b", "c", "d", "e"], 6, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let enc = ConvEncoder::seeded(4, 3, 6, &mut rng);
        let input = toks(&["c", "a", "e", "b", "d"]);
        let got = encode(&enc, &emb, &input);

        let n = input.len();
        let l = enc.window;
        let windows = n - l + 1;
        let mut expect = vec![0.0f64; enc.out_dim];
        for c in 0..enc.out_dim {
            let mut acc = 0.0;
            for t in 0..windows {
                let mut z = 0.0;
                for k in 0..l {
                    let row = emb.row(emb.row_of(&input[t + k]));
                    for d in 0..enc.in_dim {
                        z += enc.filters[c * l * enc.in_dim + k * enc.in_dim + d] * row[d];
                    }
                }
                if z > 0.0 {
                    acc += z;
                }
            }
            expect[c] = acc / windows as f64;
        }
        for c in 0..enc.out_dim {
            assert!((got[c] - expect[c]).abs() < 1e-10, "channel {c}");
        }
    }

    #[test]
    fn empty_input_is_finite() {
        let emb = table(&["a"], 4, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let enc = ConvEncoder::seeded(3, 3, 4, &mut rng);
        let out = encode(&enc, &emb, &[]);
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|v| v.is_finite()));
        // all pad rows -> zero pre-activations -> zero output
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn trailing_pads_do_not_change_output() {
        let emb = table(&["a", "b"], 4, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let enc = ConvEncoder::seeded(3, 3, 4, &mut rng);
        let short = encode(&enc, &emb, &toks(&["a"]));
        let padded = encode(&enc, &emb, &toks(&["a", PAD_TOKEN, PAD_TOKEN, PAD_TOKEN]));
        assert_eq!(short, padded);
        let long = encode(&enc, &emb, &toks(&["a", "b", "a", "b"]));
        let long_padded = encode(&enc, &emb, &toks(&["a", "b", "a", "b", PAD_TOKEN]));
        assert_eq!(long, long_padded);
    }

    #[test]
    fn oov_tokens_share_a_row() {
        let emb = table(&["a"], 4, 7);
        assert_eq!(emb.row_of("zzz"), emb.row_of("qqq"));
        assert_ne!(emb.row_of("a"), emb.row_of("zzz"));
    }

    #[test]
    fn encode_gradients_match_finite_differences() {
        let emb = table(&["a", "b", "c", "d", "e", "f"], 5, 23);
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let enc = ConvEncoder::seeded(3, 3, 5, &mut rng);
        let input = toks(&["a", "c", "f", "b", "e", "d", "a", "c", "b", "f"]);
        // scalar objective: weighted sum of outputs
        let weights = [0.7, -1.3, 0.4];
        let value = |enc: &ConvEncoder, emb: &EmbeddingTable| -> f64 {
            encode(enc, emb, &input)
                .iter()
                .zip(weights.iter())
                .map(|(o, w)| o * w)
                .sum()
        };

        let (_, cache) = encode_with_cache(&enc, &emb, &input);
        let mut fg = vec![0.0; enc.filters.len()];
        let mut eg = vec![0.0; emb.data.len()];
        encode_backward(&enc, &emb, &cache, &weights, &mut fg, &mut eg);

        let step = 1e-4;
        let mut max_rel = 0.0f64;
        for i in 0..enc.filters.len() {
            let mut plus = enc.clone();
            plus.filters[i] += step;
            let mut minus = enc.clone();
            minus.filters[i] -= step;
            let fd = (value(&plus, &emb) - value(&minus, &emb)) / (2.0 * step);
            let denom = fd.abs().max(fg[i].abs()).max(1e-6);
            max_rel = max_rel.max((fd - fg[i]).abs() / denom);
        }
        for i in 0..emb.data.len() {
            let mut plus = emb.clone();
            plus.data[i] += step;
            let mut minus = emb.clone();
            minus.data[i] -= step;
            let fd = (value(&enc, &plus) - value(&enc, &minus)) / (2.0 * step);
            if (i / emb.dim) == emb.pad_row() {
                // pad row frozen: analytic grad must be zero
                assert_eq!(eg[i], 0.0);
                continue;
            }
            let denom = fd.abs().max(eg[i].abs()).max(1e-6);
            max_rel = max_rel.max((fd - eg[i]).abs() / denom);
        }
        assert!(max_rel < 1e-4, "max rel error {max_rel}");
    }

    #[test]
    fn positional_ordinal_zero_alternates() {
        let pe = PositionalEncoding::new(6);
        assert_eq!(pe.vector(0), vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn positional_component_values() {
        let pe = PositionalEncoding::new(4);
        let v = pe.vector(1);
        assert!((v[0] - 0.8414709848078965).abs() < 1e-15);
        assert!((v[1] - 0.5403023058681398).abs() < 1e-15);
        assert!((v[2] - 0.009999833334166664).abs() < 1e-15);
        assert!((v[3] - 0.9999500004166653).abs() < 1e-15);
    }

    #[test]
    fn positional_bounded() {
        let pe = PositionalEncoding::new(128);
        for ord in [0usize, 1, 5, 999] {
            assert!(pe.vector(ord).iter().all(|v| v.abs() <= 1.0));
        }
    }
}
