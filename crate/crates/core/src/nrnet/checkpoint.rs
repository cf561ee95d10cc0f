//! Binary checkpoint container: magic, format version, named little-endian
//! `f32` tensors (parameters then batchnorm running statistics), and the
//! network configuration as TOML.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::NRNetConfig;
use super::model::{BnStats, NRNet};
use crate::error::{Error, Result};
use crate::tensor::{Parameter, Tensor};

pub const MAGIC: &[u8; 8] = b"MRIQANET";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: NRNet<f32>,
    /// Free-form training settings recorded alongside the weights.
    pub settings: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct Footer {
    network: NRNetConfig,
    #[serde(default)]
    settings: BTreeMap<String, String>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| {
            Error::format(0, format!("checkpoint truncated at byte {}", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::format(0, "length overflows"))
    }
}

fn put_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f32]) {
    out.extend((name.len() as u32).to_le_bytes());
    out.extend(name.as_bytes());
    out.extend((shape.len() as u32).to_le_bytes());
    for &e in shape {
        out.extend((e as u64).to_le_bytes());
    }
    for v in data {
        out.extend(v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn new(network: NRNet<f32>) -> Self {
        Checkpoint {
            network,
            settings: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(FORMAT_VERSION.to_le_bytes());
        let params = self.network.params();
        let stats = self.network.running_stats();
        out.extend(((params.len() + 2 * stats.len()) as u32).to_le_bytes());
        for p in params {
            put_tensor(&mut out, &p.name, p.tensor.shape(), p.tensor.data());
        }
        for (i, s) in stats.iter().enumerate() {
            put_tensor(
                &mut out,
                &format!("bn.{i}.running_mean"),
                &[s.mean.len()],
                &s.mean,
            );
            put_tensor(
                &mut out,
                &format!("bn.{i}.running_var"),
                &[s.var.len()],
                &s.var,
            );
        }
        let footer = Footer {
            network: self.network.config().clone(),
            settings: self.settings.clone(),
        };
        let text = toml::to_string(&footer).expect("checkpoint footer serializes");
        out.extend((text.len() as u64).to_le_bytes());
        out.extend(text.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::format(0, "not a network checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::format(
                0,
                format!("unsupported checkpoint version {version}"),
            ));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::format(0, "tensor name is not UTF-8"))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let raw = r.take(
                len.checked_mul(4)
                    .ok_or_else(|| Error::format(0, "tensor too large"))?,
            )?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect::<Vec<_>>();
            tensors.push((name, shape, data));
        }
        let text_len = r.len()?;
        let text = std::str::from_utf8(r.take(text_len)?)
            .map_err(|_| Error::format(0, "footer is not UTF-8"))?;
        if r.pos != bytes.len() {
            return Err(Error::format(0, "trailing bytes after checkpoint footer"));
        }
        let footer: Footer = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;

        let mut params = Vec::new();
        let mut stats = Vec::new();
        let mut iter = tensors.into_iter().peekable();
        while let Some((name, shape, data)) = iter.next_if(|(n, _, _)| !n.starts_with("bn.")) {
            params.push(Parameter::new(name, Tensor::new(shape, data)?));
        }
        while let Some((mean_name, _, mean)) = iter.next() {
            let (var_name, _, var) = iter
                .next()
                .ok_or_else(|| Error::format(0, "running mean without running variance"))?;
            let i = stats.len();
            if mean_name != format!("bn.{i}.running_mean")
                || var_name != format!("bn.{i}.running_var")
            {
                return Err(Error::format(
                    0,
                    format!("unexpected statistics {mean_name}, {var_name}"),
                ));
            }
            stats.push(BnStats { mean, var });
        }
        let network = NRNet::from_parts(footer.network, params, stats)?;
        Ok(Checkpoint {
            network,
            settings: footer.settings,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_round_trip() {
        let mut ckpt = Checkpoint::new(NRNet::new(NRNetConfig::tiny(16), 11).unwrap());
        ckpt.settings.insert("rmsprop_rho".into(), "0.9".into());
        let back = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap();
        assert_eq!(back, ckpt);
    }

    #[test]
    fn bad_magic_and_truncation_are_format_errors() {
        let ckpt = Checkpoint::new(NRNet::new(NRNetConfig::tiny(16), 11).unwrap());
        let mut bytes = ckpt.to_bytes();
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Format { .. })
        ));
        bytes[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::Format { .. })
        ));
    }
}
