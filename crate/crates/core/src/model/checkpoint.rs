//! Binary checkpoint: `"DSEI"`, format version (u32 LE), CRC-32 of the
//! payload (u32 LE), then the payload as a run of sections
//! `name_len u32 | name | body_len u64 | body`. All integers and floats
//! are little-endian.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use super::{Branches, CellVocab, DeepSei, ModelConfig, Params, TENSOR_NAMES};
use crate::activity::ActivityCategory;
use crate::geo::{CellId, GeoPoint, GridSpec};
use crate::indicators::{RangeTokenizer, Tokenizers};
use crate::nn::Tensor;

pub const MAGIC: &[u8; 4] = b"DSEI";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 12;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("checkpoint version {found}, this build reads {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint checksum mismatch")]
    ChecksumMismatch,
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

/// Everything needed to featurize new data and run the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: DeepSei,
    pub cells: CellVocab,
    pub tokenizers: Tokenizers,
    pub grid: GridSpec,
    /// Free-form `key=value` lines of the run that produced the model.
    pub run_config: String,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn section(&mut self, name: &str, body: &[u8]) {
        self.buf.extend((name.len() as u32).to_le_bytes());
        self.buf.extend(name.as_bytes());
        self.buf.extend((body.len() as u64).to_le_bytes());
        self.buf.extend(body);
    }
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend(x.to_le_bytes());
    }
}

fn model_config_text(c: &ModelConfig) -> String {
    format!(
        "embed_dim={}\nhidden_dim={}\nrecurrent_out={}\nnum_classes={}\ndeep_vocabs={},{},{}\ncell_vocab={}\nbranches={}\n",
        c.embed_dim,
        c.hidden_dim,
        c.recurrent_out,
        c.num_classes,
        c.deep_vocabs[0],
        c.deep_vocabs[1],
        c.deep_vocabs[2],
        c.cell_vocab,
        c.branches.name()
    )
}

fn category_text() -> String {
    ActivityCategory::all()
        .map(|c| format!("{},{}\n", c.code(), c.name()))
        .collect()
}

pub fn to_bytes(ck: &Checkpoint) -> Vec<u8> {
    let mut w = Writer { buf: Vec::new() };
    w.section("model", model_config_text(&ck.model.config).as_bytes());
    w.section("run_config", ck.run_config.as_bytes());

    let mut tok = Vec::new();
    for t in [ck.tokenizers.rg, ck.tokenizers.td, ck.tokenizers.ad] {
        put_f64s(&mut tok, &[t.min, t.max, t.granularity]);
    }
    w.section("tokenizers", &tok);
    w.section("categories", category_text().as_bytes());

    let mut grid = Vec::new();
    put_f64s(&mut grid, &[ck.grid.origin.lat, ck.grid.origin.lon, ck.grid.cell_size_m]);
    grid.extend(ck.grid.rows.to_le_bytes());
    grid.extend(ck.grid.cols.to_le_bytes());
    w.section("grid", &grid);

    let mut cells = (ck.cells.cells().len() as u32).to_le_bytes().to_vec();
    for c in ck.cells.cells() {
        cells.extend(c.row.to_le_bytes());
        cells.extend(c.col.to_le_bytes());
    }
    w.section("cells", &cells);

    let mut tensors = (TENSOR_NAMES.len() as u32).to_le_bytes().to_vec();
    for (name, t) in TENSOR_NAMES.iter().zip(ck.model.params.tensors()) {
        tensors.extend((name.len() as u32).to_le_bytes());
        tensors.extend(name.as_bytes());
        tensors.extend((t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            tensors.extend((d as u64).to_le_bytes());
        }
        put_f64s(&mut tensors, t.data());
    }
    w.section("tensors", &tensors);

    let payload = w.buf;
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend(MAGIC);
    out.extend(FORMAT_VERSION.to_le_bytes());
    out.extend(crc32fast::hash(&payload).to_le_bytes());
    out.extend(payload);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() - self.pos < n {
            return Err(CheckpointError::Format("unexpected end of data".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self, n: usize) -> Result<&'a str, CheckpointError> {
        std::str::from_utf8(self.take(n)?).map_err(|_| CheckpointError::Format("invalid utf-8".into()))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }

    fn section(&mut self, expect: &str) -> Result<Reader<'a>, CheckpointError> {
        let n = self.u32()? as usize;
        let name = self.str(n)?;
        if name != expect {
            return Err(CheckpointError::Format(format!("expected section {expect}, found {name}")));
        }
        let len = self.u64()? as usize;
        Ok(Reader {
            buf: self.take(len)?,
            pos: 0,
        })
    }

    fn rest_str(&mut self) -> Result<&'a str, CheckpointError> {
        let n = self.buf.len() - self.pos;
        self.str(n)
    }
}

fn format_err(e: impl std::fmt::Display) -> CheckpointError {
    CheckpointError::Format(e.to_string())
}

fn parse_model_config(text: &str) -> Result<ModelConfig, CheckpointError> {
    let mut c = ModelConfig::new(2, [1, 1, 1], 1);
    for line in text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format_err(format!("bad model line {line:?}")))?;
        let num = |v: &str| v.parse::<usize>().map_err(format_err);
        match k {
            "embed_dim" => c.embed_dim = num(v)?,
            "hidden_dim" => c.hidden_dim = num(v)?,
            "recurrent_out" => c.recurrent_out = num(v)?,
            "num_classes" => c.num_classes = num(v)?,
            "cell_vocab" => c.cell_vocab = num(v)?,
            "deep_vocabs" => {
                let parts: Vec<usize> = v.split(',').map(num).collect::<Result<_, _>>()?;
                c.deep_vocabs = parts
                    .try_into()
                    .map_err(|_| format_err("deep_vocabs needs three values"))?;
            }
            "branches" => c.branches = Branches::parse(v).ok_or_else(|| format_err(format!("branches {v:?}")))?,
            _ => return Err(format_err(format!("unknown model key {k:?}"))),
        }
    }
    Ok(c)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(CheckpointError::Format("missing DSEI header".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let crc = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let payload = &bytes[HEADER_LEN..];
    if crc32fast::hash(payload) != crc {
        return Err(CheckpointError::ChecksumMismatch);
    }
    let mut r = Reader { buf: payload, pos: 0 };

    let config = parse_model_config(r.section("model")?.rest_str()?)?;
    let run_config = r.section("run_config")?.rest_str()?.to_string();

    let mut t = r.section("tokenizers")?;
    let mut tk = Vec::with_capacity(3);
    for _ in 0..3 {
        tk.push(RangeTokenizer::new(t.f64()?, t.f64()?, t.f64()?).map_err(format_err)?);
    }
    let tokenizers = Tokenizers {
        rg: tk[0],
        td: tk[1],
        ad: tk[2],
    };

    if r.section("categories")?.rest_str()? != category_text() {
        return Err(format_err("activity category table differs from this build"));
    }

    let mut g = r.section("grid")?;
    let origin = GeoPoint {
        lat: g.f64()?,
        lon: g.f64()?,
    };
    let grid = GridSpec::new(origin, g.f64()?, g.u32()?, g.u32()?).map_err(format_err)?;

    let mut c = r.section("cells")?;
    let n = c.u32()? as usize;
    let mut cells = Vec::with_capacity(n);
    for _ in 0..n {
        cells.push(CellId::new(c.u32()?, c.u32()?));
    }
    let cells = CellVocab::new(cells);

    let mut t = r.section("tensors")?;
    let count = t.u32()? as usize;
    if count != TENSOR_NAMES.len() {
        return Err(format_err(format!("expected {} tensors, found {count}", TENSOR_NAMES.len())));
    }
    let mut params = Params::zeros(&config);
    for (expect, slot) in TENSOR_NAMES.iter().zip(params.tensors_mut()) {
        let n = t.u32()? as usize;
        let name = t.str(n)?;
        if name != *expect {
            return Err(format_err(format!("expected tensor {expect}, found {name}")));
        }
        let ndim = t.u32()? as usize;
        let shape: Vec<usize> = (0..ndim).map(|_| t.u64().map(|d| d as usize)).collect::<Result<_, _>>()?;
        if shape != slot.shape() {
            return Err(format_err(format!("{name} has shape {shape:?}, expected {:?}", slot.shape())));
        }
        let data: Vec<f64> = (0..slot.len()).map(|_| t.f64()).collect::<Result<_, _>>()?;
        *slot = Tensor::from_vec(&shape, data).map_err(format_err)?;
    }
    if !(t.done() && r.done()) {
        return Err(format_err("trailing bytes"));
    }
    let model = DeepSei::with_params(config, params).map_err(format_err)?;
    Ok(Checkpoint {
        model,
        cells,
        tokenizers,
        grid,
        run_config,
    })
}

pub fn save(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    fs::write(path, to_bytes(ck))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    from_bytes(&fs::read(path)?)
}
