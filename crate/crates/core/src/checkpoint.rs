//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "PIIG" | u32 version | u32 len, config text | u64 iteration | u32 record count
//! record: u32 name len, name | u32 rank | rank x u32 dims | 4-byte words
//! ```
//!
//! Parameters and Adam moments are `f32` words. Counters and RNG state are
//! stored as `u32` bit patterns in the same record scheme.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::tensor::{AdamState, NetworkParams};
use crate::trainer::TrainState;

pub const MAGIC: &[u8; 4] = b"PIIG";
pub const VERSION: u32 = 1;

struct Record {
    name: String,
    dims: Vec<u32>,
    words: Vec<u32>,
}

fn f32_words(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn u64_words(v: u64) -> Vec<u32> {
    vec![v as u32, (v >> 32) as u32]
}

fn words_u64(w: &[u32]) -> u64 {
    w[0] as u64 | (w[1] as u64) << 32
}

fn networks(state: &TrainState) -> [(&'static str, &NetworkParams, &AdamState); 4] {
    [
        ("extractor", &state.extractor.params, &state.opt_extractor),
        ("generator", &state.generator.params, &state.opt_generator),
        ("critic_global", &state.critics.global.params, &state.opt_global),
        ("critic_local", &state.critics.local.params, &state.opt_local),
    ]
}

fn records(state: &TrainState) -> Vec<Record> {
    let mut out = Vec::new();
    for (net, params, adam) in networks(state) {
        for (i, (name, p)) in params.iter().enumerate() {
            let dims: Vec<u32> = p.shape().dims().iter().map(|&d| d as u32).collect();
            out.push(Record {
                name: format!("{net}/{name}"),
                dims: dims.clone(),
                words: f32_words(&p.data()),
            });
            out.push(Record {
                name: format!("adam/{net}/m/{name}"),
                dims: dims.clone(),
                words: f32_words(&adam.m[i]),
            });
            out.push(Record {
                name: format!("adam/{net}/v/{name}"),
                dims,
                words: f32_words(&adam.v[i]),
            });
        }
        out.push(Record {
            name: format!("adam/{net}/t"),
            dims: vec![2],
            words: u64_words(adam.t),
        });
    }
    let seed = state.rng.get_seed();
    out.push(Record {
        name: "rng/seed".into(),
        dims: vec![8],
        words: seed.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect(),
    });
    out.push(Record {
        name: "rng/stream".into(),
        dims: vec![2],
        words: u64_words(state.rng.get_stream()),
    });
    let pos = state.rng.get_word_pos();
    out.push(Record {
        name: "rng/word_pos".into(),
        dims: vec![4],
        words: (0..4).map(|i| (pos >> (32 * i)) as u32).collect(),
    });
    out
}

pub fn encode_checkpoint(state: &TrainState) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(MAGIC);
    b.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = state.config.to_text();
    b.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    b.extend_from_slice(cfg.as_bytes());
    b.extend_from_slice(&state.iteration.to_le_bytes());
    let recs = records(state);
    b.extend_from_slice(&(recs.len() as u32).to_le_bytes());
    for r in recs {
        b.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        b.extend_from_slice(r.name.as_bytes());
        b.extend_from_slice(&(r.dims.len() as u32).to_le_bytes());
        for d in &r.dims {
            b.extend_from_slice(&d.to_le_bytes());
        }
        for w in &r.words {
            b.extend_from_slice(&w.to_le_bytes());
        }
    }
    b
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let s = self.take(4)?;
        Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut a = [0u8; 8];
        a.copy_from_slice(self.take(8)?);
        Ok(u64::from_le_bytes(a))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}

/// Rebuild a training state. The architecture comes from the echoed config;
/// every record must be present with matching dimensions.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<TrainState> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: VERSION,
        });
    }
    let config = TrainConfig::parse(&r.string()?, "checkpoint config")?;
    let iteration = r.u64()?;
    let count = r.u32()? as usize;
    let mut read = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("record `{name}` has rank {rank}")));
        }
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let len = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d as usize))
            .ok_or_else(|| Error::Checkpoint(format!("record `{name}` is too large")))?;
        let raw = r.take(len.checked_mul(4).ok_or_else(|| Error::Checkpoint("record too large".into()))?)?;
        let words = raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        read.push(Record { name, dims, words });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }

    let mut state = TrainState::new(&config)?;
    state.iteration = iteration;
    let expected = records(&state);
    if expected.len() != read.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} records, found {}",
            expected.len(),
            read.len()
        )));
    }
    for (e, got) in expected.iter().zip(&read) {
        if e.name != got.name || e.dims != got.dims {
            return Err(Error::Checkpoint(format!(
                "record `{}` {:?} does not match expected `{}` {:?}",
                got.name, got.dims, e.name, e.dims
            )));
        }
    }

    let mut it = read.into_iter();
    let floats = |w: Vec<u32>| -> Vec<f32> { w.into_iter().map(f32::from_bits).collect() };
    let nets = [
        (&state.extractor.params, &mut state.opt_extractor),
        (&state.generator.params, &mut state.opt_generator),
        (&state.critics.global.params, &mut state.opt_global),
        (&state.critics.local.params, &mut state.opt_local),
    ];
    for (params, adam) in nets {
        let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
        for (i, name) in names.iter().enumerate() {
            let values = floats(it.next().expect("counted").words);
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Checkpoint(format!("non-finite values in `{name}`")));
            }
            params.load(name, values)?;
            adam.m[i] = floats(it.next().expect("counted").words);
            adam.v[i] = floats(it.next().expect("counted").words);
        }
        adam.t = words_u64(&it.next().expect("counted").words);
    }
    let seed_words = it.next().expect("counted").words;
    let mut seed = [0u8; 32];
    for (chunk, w) in seed.chunks_exact_mut(4).zip(&seed_words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    let stream = words_u64(&it.next().expect("counted").words);
    let pos_words = it.next().expect("counted").words;
    let pos = pos_words.iter().enumerate().fold(0u128, |a, (i, &w)| a | (w as u128) << (32 * i));
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(pos);
    state.rng = rng;
    Ok(state)
}

pub fn save_checkpoint(path: &Path, state: &TrainState) -> Result<()> {
    fs::write(path, encode_checkpoint(state)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny() -> TrainConfig {
        TrainConfig {
            batch_size: 2,
            resolution: 16,
            hole: 8,
            latent_dim: 4,
            generator_width: 4,
            critic_width: 4,
            dataset_size: 4,
            ..Default::default()
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let mut s = TrainState::new(&tiny()).unwrap();
        s.iteration = 17;
        s.opt_generator.t = 5;
        s.opt_generator.m[0][0] = 0.25;
        let _: u64 = s.rng.random();
        let bytes = encode_checkpoint(&s);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(encode_checkpoint(&back), bytes);
        assert_eq!(back.iteration, 17);
        assert_eq!(back.rng, s.rng);
    }

    #[test]
    fn rejects_version_and_corruption() {
        let s = TrainState::new(&tiny()).unwrap();
        let mut bytes = encode_checkpoint(&s);
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(
            decode_checkpoint(&v2),
            Err(Error::CheckpointVersion { found: 2, expected: 1 })
        ));
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        bytes.push(0);
        assert!(decode_checkpoint(&bytes).is_err());
        assert!(decode_checkpoint(b"NOPE").is_err());
    }
}
