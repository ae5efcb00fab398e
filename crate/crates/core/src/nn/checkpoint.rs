//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CNDY" | version u16
//! metadata: count u32, then per entry key (u32 len + UTF-8) and value (u32 len + UTF-8)
//! tensors:  count u32, then per entry name (u32 len + UTF-8), rank u8,
//!           extents u64 × rank, values f32 × product(extents)
//! ```
//!
//! Tensor names are `section/name`, e.g. `generator/conv1.weight`. Trailing
//! bytes after the last tensor make the file corrupt.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, Module, StateDict};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CNDY";
pub const VERSION: u16 = 1;

pub const GENERATOR: &str = "generator";
pub const DISCRIMINATOR: &str = "discriminator";
pub const FEATURES: &str = "features";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub metadata: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Tensor<f32>>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        self.metadata.insert(key.into(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    pub fn has_section(&self, section: &str) -> bool {
        let prefix = format!("{section}/");
        self.tensors.keys().any(|k| k.starts_with(&prefix))
    }

    /// Stores `state` under `section`, replacing any previous content of it.
    pub fn insert_state(&mut self, section: &str, state: StateDict) {
        let prefix = format!("{section}/");
        self.tensors.retain(|k, _| !k.starts_with(&prefix));
        for (name, t) in state {
            self.tensors.insert(format!("{prefix}{name}"), t);
        }
    }

    pub fn insert_module<T: Scalar, M: Module<T>>(&mut self, section: &str, module: &M) {
        self.insert_state(section, module.state_dict());
    }

    /// Tensors of `section` with the prefix stripped.
    pub fn section(&self, section: &str) -> StateDict {
        let prefix = format!("{section}/");
        self.tensors
            .iter()
            .filter_map(|(k, t)| k.strip_prefix(&prefix).map(|n| (n.to_string(), t.clone())))
            .collect()
    }

    /// Loads `section` into `module`; the module is untouched on error.
    pub fn load_module<T: Scalar, M: Module<T>>(
        &self,
        section: &str,
        module: &mut M,
    ) -> Result<()> {
        if !self.has_section(section) {
            return Err(Error::MissingTensor(format!("{section}/*")));
        }
        module.load_state(&self.section(section))
    }

    /// Stores the generator's tensors and its configuration.
    pub fn insert_generator<T: Scalar>(&mut self, g: &Generator<T>) {
        self.insert_module(GENERATOR, g);
        self.set_meta(
            "generator.config",
            serde_json::to_string(g.config()).expect("serializable"),
        );
    }

    pub fn insert_discriminator<T: Scalar>(&mut self, d: &Discriminator<T>) {
        self.insert_module(DISCRIMINATOR, d);
        self.set_meta(
            "discriminator.config",
            serde_json::to_string(d.config()).expect("serializable"),
        );
    }

    fn config<C: serde::de::DeserializeOwned + Default>(&self, key: &str) -> Result<C> {
        match self.meta(key) {
            Some(json) => serde_json::from_str(json)
                .map_err(|e| Error::CorruptCheckpoint(format!("{key}: {e}"))),
            None => Ok(C::default()),
        }
    }

    /// Rebuilds the stored generator; a missing configuration means the default one.
    pub fn generator<T: Scalar>(&self) -> Result<Generator<T>> {
        let mut g = Generator::new(self.config::<GeneratorConfig>("generator.config")?, 0)?;
        self.load_module(GENERATOR, &mut g)?;
        Ok(g)
    }

    pub fn discriminator<T: Scalar>(&self) -> Result<Discriminator<T>> {
        let mut d = Discriminator::new(
            self.config::<DiscriminatorConfig>("discriminator.config")?,
            0,
        )?;
        self.load_module(DISCRIMINATOR, &mut d)?;
        Ok(d)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let put_str = |out: &mut Vec<u8>, s: &str| {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        };
        out.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        for (k, v) in &self.metadata {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::CorruptCheckpoint("bad magic bytes".into()));
        }
        let version = u16::from_le_bytes(r.array("version")?);
        if version != VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: VERSION,
            });
        }
        let mut ck = Checkpoint::new();
        let n_meta = r.u32("metadata count")?;
        for _ in 0..n_meta {
            let k = r.string("metadata key")?;
            let v = r.string("metadata value")?;
            ck.metadata.insert(k, v);
        }
        let n_tensors = r.u32("tensor count")?;
        for _ in 0..n_tensors {
            let name = r.string("tensor name")?;
            let rank = r.take(1, "rank")?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let d = u64::from_le_bytes(r.array("extent")?);
                shape.push(
                    usize::try_from(d)
                        .map_err(|_| Error::CorruptCheckpoint(format!("`{name}`: extent {d}")))?,
                );
            }
            let len = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| {
                    Error::CorruptCheckpoint(format!("`{name}`: extents {shape:?} overflow"))
                })?;
            let raw = r.take(len, "tensor values")?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::from_vec(&shape, data)
                .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
            if ck.tensors.insert(name.clone(), t).is_some() {
                return Err(Error::CorruptCheckpoint(format!(
                    "duplicate tensor `{name}`"
                )));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "{} trailing byte(s)",
                bytes.len() - r.pos
            )));
        }
        Ok(ck)
    }

    /// Writes to a sibling temporary file and renames it over `path`, so a
    /// reader never observes a partial file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file_name = path
            .file_name()
            .ok_or_else(|| Error::format(path, "not a file path"))?;
        let mut tmp_name = file_name.to_os_string();
        tmp_name.push(format!(".tmp{}", std::process::id()));
        let tmp = path.with_file_name(tmp_name);
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
            fs::rename(&tmp, path)
        };
        write().map_err(|e| {
            let _ = fs::remove_file(&tmp);
            Error::io(path, e)
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::CorruptCheckpoint(format!(
                    "truncated while reading {what} at byte {}",
                    self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().unwrap())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| Error::CorruptCheckpoint(format!("{what} is not UTF-8")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.set_meta("variant", "GEN");
        ck.set_meta("epoch", 3);
        ck.tensors.insert(
            "generator/a".into(),
            Tensor::from_vec(&[2, 2], vec![1.0, -0.0, f32::MIN_POSITIVE, 7.5]).unwrap(),
        );
        ck.tensors
            .insert("generator/s".into(), Tensor::scalar(0.25));
        ck
    }

    #[test]
    fn bytes_round_trip_bit_exact() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back.metadata, ck.metadata);
        for (k, t) in &ck.tensors {
            let u = &back.tensors[k];
            assert_eq!(u.shape(), t.shape());
            assert!(u
                .data()
                .iter()
                .zip(t.data())
                .all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = sample().to_bytes();
        for cut in 0..bytes.len() {
            let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(
                matches!(err, Error::CorruptCheckpoint(_)),
                "cut {cut}: {err}"
            );
        }
    }

    #[test]
    fn trailing_bytes_and_versions_are_rejected() {
        let mut bytes = sample().to_bytes();
        bytes.push(0);
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::CorruptCheckpoint(_))
        ));
        let mut bytes = sample().to_bytes();
        bytes[4] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::CheckpointVersion {
                found: 9,
                expected: 1
            })
        ));
    }

    #[test]
    fn sections_strip_their_prefix() {
        let ck = sample();
        let s = ck.section("generator");
        assert_eq!(s.keys().cloned().collect::<Vec<_>>(), vec!["a", "s"]);
        assert!(ck.section("discriminator").is_empty());
    }
}
