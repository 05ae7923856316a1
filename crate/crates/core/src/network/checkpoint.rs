//! `EMTN` checkpoint files.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "EMTN" | u32 version (=1)
//! u32 input_dim | u32 hidden_count | hidden_count × u32 width
//! u8 activation (0 relu, 1 leakyrelu, 2 elu, 3 swish) | f64 dropout_rate | u8 batch_norm
//! u32 head_count | head_count × (u8 role (0 classification, 1 projection) | u32 output_dim)
//! parameters as f64, row-major, in declaration order:
//!   per hidden layer: weight, bias, [bn gamma, bn beta, running mean, running var]
//!   per head: weight, bias
//! ```

use std::path::Path;

use super::{Activation, HeadConfig, HeadRole, Network, NetworkConfig};
use crate::tensor::Matrix;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EMTN";
pub const CHECKPOINT_VERSION: u32 = 1;

impl Network {
    /// Every stored matrix, including running statistics, in file order.
    fn stored_matrices(&self) -> Vec<&Matrix> {
        let mut out = Vec::new();
        for layer in &self.hidden {
            out.push(&layer.linear.weight);
            out.push(&layer.linear.bias);
            if let Some(bn) = &layer.norm {
                out.extend([&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var]);
            }
        }
        for head in &self.heads {
            out.push(&head.weight);
            out.push(&head.bias);
        }
        out
    }

    fn stored_matrices_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for layer in &mut self.hidden {
            out.push(&mut layer.linear.weight);
            out.push(&mut layer.linear.bias);
            if let Some(bn) = &mut layer.norm {
                out.extend([&mut bn.gamma, &mut bn.beta, &mut bn.running_mean, &mut bn.running_var]);
            }
        }
        for head in &mut self.heads {
            out.push(&mut head.weight);
            out.push(&mut head.bias);
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let cfg = &self.config;
        let mut out = Vec::with_capacity(64 + 8 * self.param_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(cfg.input_dim as u32).to_le_bytes());
        out.extend_from_slice(&(cfg.hidden_sizes.len() as u32).to_le_bytes());
        for &w in &cfg.hidden_sizes {
            out.extend_from_slice(&(w as u32).to_le_bytes());
        }
        out.push(cfg.activation.code());
        out.extend_from_slice(&cfg.dropout_rate.to_le_bytes());
        out.push(u8::from(cfg.batch_norm));
        out.extend_from_slice(&(cfg.heads.len() as u32).to_le_bytes());
        for h in &cfg.heads {
            out.push(match h.role {
                HeadRole::Classification => 0,
                HeadRole::Projection => 1,
            });
            out.extend_from_slice(&(h.output_dim as u32).to_le_bytes());
        }
        for m in self.stored_matrices() {
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses a checkpoint; `origin` only labels error messages.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, origin };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::format(origin, 0, "bad magic, expected \"EMTN\""));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.error_at(4, format!("unsupported checkpoint version {version}")));
        }
        let input_dim = r.u32()? as usize;
        let hidden_count = r.u32()? as usize;
        if hidden_count > super::MAX_HIDDEN_LAYERS {
            return Err(r.error_at(12, format!("{hidden_count} hidden layers")));
        }
        let hidden_sizes = (0..hidden_count)
            .map(|_| r.u32().map(|w| w as usize))
            .collect::<Result<Vec<_>>>()?;
        let act_at = r.pos as u64;
        let activation = Activation::from_code(r.u8()?).ok_or_else(|| r.error_at(act_at, "unknown activation code"))?;
        let dropout_rate = r.f64()?;
        let batch_norm = match r.u8()? {
            0 => false,
            1 => true,
            other => return Err(r.error_at(r.pos as u64 - 1, format!("batch-norm flag {other}"))),
        };
        let head_count = r.u32()? as usize;
        if head_count > 64 {
            return Err(r.error_at(r.pos as u64 - 4, format!("{head_count} heads")));
        }
        let mut heads = Vec::with_capacity(head_count);
        for _ in 0..head_count {
            let role_at = r.pos as u64;
            let role = match r.u8()? {
                0 => HeadRole::Classification,
                1 => HeadRole::Projection,
                other => return Err(r.error_at(role_at, format!("unknown head role {other}"))),
            };
            heads.push(HeadConfig {
                role,
                output_dim: r.u32()? as usize,
            });
        }
        let config = NetworkConfig {
            input_dim,
            hidden_sizes,
            activation,
            dropout_rate,
            batch_norm,
            heads,
        };
        let config_end = r.pos as u64;
        config
            .validate()
            .map_err(|e| r.error_at(config_end, format!("stored configuration invalid: {e}")))?;

        // Shapes come from a freshly built network; values are overwritten.
        let mut net = Network::init(config, &mut crate::tensor::Rng::new(0))?;
        for m in net.stored_matrices_mut() {
            let (rows, cols) = m.shape();
            let at = r.pos as u64;
            let data = (0..rows * cols).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            *m = Matrix::from_vec(rows, cols, data).map_err(|e| r.error_at(at, format!("parameter block: {e}")))?;
        }
        if r.pos != bytes.len() {
            return Err(r.error_at(r.pos as u64, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        for layer in &net.hidden {
            if let Some(bn) = &layer.norm {
                if bn.running_var.as_slice().iter().any(|&v| v <= 0.0) {
                    return Err(Error::format(origin, config_end, "non-positive running variance"));
                }
            }
        }
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn error_at(&self, offset: u64, message: impl Into<String>) -> Error {
        Error::format(self.origin, offset, message)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error_at(
                self.pos as u64,
                format!("truncated: needed {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
