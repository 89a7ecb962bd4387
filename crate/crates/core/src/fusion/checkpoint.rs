//! `GIMO-CKPT v1` parameter files.
//!
//! ```text
//! GIMO-CKPT v1\n
//! variant <tag>\n
//! config <json>\n
//! params <count>\n
//! then per block: <name> <d0>x<d1>…\n followed by 8·len little-endian f64 bytes
//! ```

use super::{ModelConfig, ModelParams, Variant};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use sha2::{Digest, Sha256};
use std::path::Path;

const HEADER: &str = "GIMO-CKPT v1";

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    line: usize,
    source: &'a str,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.source, self.line, msg)
    }

    fn line(&mut self) -> Result<&'a str> {
        self.line += 1;
        let rest = &self.bytes[self.pos..];
        let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| self.err("unexpected end of file"))?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| self.err("header line is not UTF-8"))
    }

    fn keyed(&mut self, key: &str) -> Result<&'a str> {
        let line = self.line()?;
        line.strip_prefix(key)
            .and_then(|s| s.strip_prefix(' '))
            .ok_or_else(|| self.err(format!("expected '{key} …'")))
    }

    fn reals(&mut self, n: usize) -> Result<Vec<f64>> {
        let need = n * 8;
        if self.bytes.len() - self.pos < need {
            return Err(self.err(format!("block truncated: need {need} bytes")));
        }
        let out = self.bytes[self.pos..self.pos + need]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        self.pos += need;
        Ok(out)
    }
}

impl ModelParams {
    pub fn to_bytes(&self) -> Vec<u8> {
        let config = serde_json::to_string(&self.config).expect("config serializes");
        let mut out = format!("{HEADER}\nvariant {}\nconfig {config}\nparams {}\n", self.variant, self.store.len()).into_bytes();
        for (name, t) in self.store.iter() {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            out.extend_from_slice(format!("{name} {}\n", dims.join("x")).as_bytes());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], source_name: &str) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            line: 0,
            source: source_name,
        };
        if r.line()? != HEADER {
            return Err(r.err(format!("expected header '{HEADER}'")));
        }
        let variant: Variant = r.keyed("variant")?.parse().map_err(|e: Error| r.err(e.to_string()))?;
        let config: ModelConfig = serde_json::from_str(r.keyed("config")?).map_err(|e| r.err(format!("bad config: {e}")))?;
        config.validate().map_err(|e| r.err(e.to_string()))?;
        let count: usize = r.keyed("params")?.parse().map_err(|_| r.err("bad parameter count"))?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let line = r.line()?;
            let (name, dims) = line.split_once(' ').ok_or_else(|| r.err("expected '<name> <shape>'"))?;
            let shape = dims
                .split('x')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| r.err(format!("bad shape '{dims}'")))?;
            let len = shape.iter().product();
            let data = r.reals(len)?;
            let t = Tensor::new(shape, data).map_err(|e| r.err(e.to_string()))?;
            store.insert(name, t).map_err(|e| r.err(e.to_string()))?;
        }
        if r.pos != bytes.len() {
            return Err(r.err("trailing bytes after the last block"));
        }
        let expected = ModelParams::init(&config, variant, 0)?;
        let layout_ok = expected.store.len() == store.len()
            && expected.store.iter().zip(store.iter()).all(|((a, ta), (b, tb))| a == b && ta.shape() == tb.shape());
        if !layout_ok {
            return Err(r.err(format!("parameter layout does not match variant {variant}")));
        }
        Ok(ModelParams { variant, config, store })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }

    /// SHA-256 of the serialized checkpoint, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}
