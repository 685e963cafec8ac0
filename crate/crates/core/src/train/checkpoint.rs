//! Versioned checkpoint container.
//!
//! Layout (little endian): magic `PTCK`, `u16` version, the model config
//! hash and the full run config (each as `u32` length + UTF-8), `u64` step,
//! the RNG position (32-byte seed, `u64` stream, `u128` word position), the
//! two optimizer step counters, then a tensor directory (`u32` count; per
//! entry name, `u8` dtype code, `u8` rank, extents, `u64` offset into the
//! data block) followed by the data block.

use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::{Model, ParamStore};
use crate::numerics::{DType, RngState, SeededRng, Tensor};

use super::optim::AdamW;

pub const MAGIC: &[u8; 4] = b"PTCK";
pub const VERSION: u16 = 1;

/// Everything needed to continue a run bit-for-bit.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub run: RunConfig,
    pub step: u64,
    pub model: Model,
    pub opt_g: AdamW,
    pub opt_d: AdamW,
    pub rng: SeededRng,
}

impl TrainState {
    pub fn new(run: RunConfig) -> Result<Self> {
        let seed = run.train.seed;
        let model = Model::init(run.model.clone(), seed)?;
        let t = &run.train;
        let opt = AdamW::new(t.beta1, t.beta2, t.adam_eps, t.weight_decay);
        Ok(TrainState {
            step: 0,
            model,
            opt_g: opt.clone(),
            opt_d: opt,
            rng: SeededRng::derived(seed, "train"),
            run,
        })
    }

    pub fn config_hash(&self) -> String {
        self.run.model.hash()
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self.b.get(self.pos..self.pos + n).ok_or_else(|| Error::Format {
            path: self.path.to_path_buf(),
            msg: format!("truncated at byte {}", self.pos),
        })?;
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let path = self.path.to_path_buf();
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format { path, msg: "invalid UTF-8".into() })
    }
}

fn tensors(state: &TrainState) -> Vec<(String, &Tensor<f32>)> {
    let mut out: Vec<(String, &Tensor<f32>)> = Vec::new();
    out.extend(state.model.params.iter().map(|(k, t)| (format!("param/{k}"), t)));
    for (tag, opt) in [("opt_g", &state.opt_g), ("opt_d", &state.opt_d)] {
        out.extend(opt.m.iter().map(|(k, t)| (format!("{tag}.m/{k}"), t)));
        out.extend(opt.v.iter().map(|(k, t)| (format!("{tag}.v/{k}"), t)));
    }
    out
}

pub fn encode(state: &TrainState) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u16(VERSION);
    w.str(&state.config_hash());
    w.str(&state.run.to_toml());
    w.u64(state.step);
    let rs = state.rng.state();
    w.0.extend_from_slice(&rs.seed);
    w.u64(rs.stream);
    w.0.extend_from_slice(&rs.word_pos.to_le_bytes());
    w.u64(state.opt_g.t);
    w.u64(state.opt_d.t);
    let list = tensors(state);
    w.u32(list.len() as u32);
    let mut offset = 0u64;
    for (name, t) in &list {
        w.str(name);
        w.u8(DType::F32.code());
        w.u8(t.rank() as u8);
        for &e in t.shape() {
            w.u64(e as u64);
        }
        w.u64(offset);
        offset += 4 * t.numel() as u64;
    }
    for (_, t) in &list {
        for &v in t.data() {
            w.0.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.0
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode(state)).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint. With `expect_hash`, a different model config hash is
/// an error unless `force` is set.
pub fn load_checkpoint(path: &Path, expect_hash: Option<&str>, force: bool) -> Result<TrainState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path, expect_hash, force)
}

pub fn decode(bytes: &[u8], path: &Path, expect_hash: Option<&str>, force: bool) -> Result<TrainState> {
    let fmt = |msg: String| Error::Format { path: path.to_path_buf(), msg };
    let mut r = Reader { b: bytes, pos: 0, path };
    if r.take(4)? != MAGIC {
        return Err(fmt("not a checkpoint (bad magic)".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(fmt(format!("unsupported checkpoint version {version}")));
    }
    let hash = r.str()?;
    if let Some(h) = expect_hash {
        if h != hash && !force {
            return Err(Error::Config(format!(
                "{}: checkpoint config hash {hash} differs from {h}",
                path.display()
            )));
        }
    }
    let run = RunConfig::parse(&r.str()?)?;
    if run.model.hash() != hash {
        return Err(fmt("stored config does not match its hash".into()));
    }
    let step = r.u64()?;
    let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
    let stream = r.u64()?;
    let word_pos = r.u128()?;
    let (tg, td) = (r.u64()?, r.u64()?);
    let n = r.u32()? as usize;
    let mut dir = Vec::with_capacity(n);
    for _ in 0..n {
        let name = r.str()?;
        let code = r.u8()?;
        if DType::from_code(code) != Some(DType::F32) {
            return Err(fmt(format!("tensor {name}: unsupported dtype code {code}")));
        }
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let off = r.u64()? as usize;
        dir.push((name, shape, off));
    }
    let data = &bytes[r.pos..];
    let t = &run.train;
    let mut params = ParamStore::new();
    let mut opt_g = AdamW::new(t.beta1, t.beta2, t.adam_eps, t.weight_decay);
    let mut opt_d = opt_g.clone();
    opt_g.t = tg;
    opt_d.t = td;
    for (name, shape, off) in dir {
        let count: usize = shape.iter().product();
        let raw = data.get(off..off + 4 * count).ok_or_else(|| fmt(format!("tensor {name}: data out of range")))?;
        let vals = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let tensor = Tensor::new(&shape, vals)?;
        let (kind, key) = name.split_once('/').ok_or_else(|| fmt(format!("bad tensor name {name}")))?;
        match kind {
            "param" => params.insert(key.to_string(), tensor),
            "opt_g.m" => drop(opt_g.m.insert(key.to_string(), tensor)),
            "opt_g.v" => drop(opt_g.v.insert(key.to_string(), tensor)),
            "opt_d.m" => drop(opt_d.m.insert(key.to_string(), tensor)),
            "opt_d.v" => drop(opt_d.v.insert(key.to_string(), tensor)),
            other => return Err(fmt(format!("unknown tensor group {other}"))),
        }
    }
    Ok(TrainState {
        model: Model { cfg: run.model.clone(), params },
        run,
        step,
        opt_g,
        opt_d,
        rng: SeededRng::from_state(RngState { seed, stream, word_pos }),
    })
}
