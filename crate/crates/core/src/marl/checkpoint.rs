//! Binary policy checkpoints.
//!
//! Layout: magic `STINPOL1`, version `u16`, head kind `u8`, layer count
//! `u32`, then per layer `rows u32, cols u32` and `rows * cols` little-endian
//! `f64` in row-major order, where each row is one output's weights followed
//! by its bias (`cols = inputs + 1`). A `2 x inputs` matrix of input means
//! and standard deviations follows. The ratio head appends its log standard
//! deviations as one extra `1 x outputs` matrix. A CRC32 of everything before
//! it closes the file.

use super::nn::{Layer, Mlp};
use super::policy::{InputNorm, Policy, PolicyKind};
use super::MarlError;

pub const MAGIC: &[u8; 8] = b"STINPOL1";
pub const VERSION: u16 = 2;

pub fn encode(policy: &Policy) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(match policy.kind {
        PolicyKind::Selection => 0,
        PolicyKind::Ratio => 1,
    });
    out.extend_from_slice(&(policy.net.layers.len() as u32).to_le_bytes());
    for layer in &policy.net.layers {
        out.extend_from_slice(&(layer.outputs as u32).to_le_bytes());
        out.extend_from_slice(&(layer.inputs as u32 + 1).to_le_bytes());
        for o in 0..layer.outputs {
            for w in &layer.weights[o * layer.inputs..(o + 1) * layer.inputs] {
                out.extend_from_slice(&w.to_le_bytes());
            }
            out.extend_from_slice(&layer.bias[o].to_le_bytes());
        }
    }
    out.extend_from_slice(&2u32.to_le_bytes());
    out.extend_from_slice(&(policy.input.mean.len() as u32).to_le_bytes());
    for v in policy.input.mean.iter().chain(&policy.input.std) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if policy.kind == PolicyKind::Ratio {
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&(policy.log_std.len() as u32).to_le_bytes());
        for v in &policy.log_std {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], MarlError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| MarlError::Checkpoint("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, MarlError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64, MarlError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Policy, MarlError> {
    if bytes.len() < MAGIC.len() + 2 + 1 + 4 + 4 {
        return Err(MarlError::Checkpoint("truncated".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(MarlError::Checkpoint("checksum mismatch".into()));
    }
    if &body[..8] != MAGIC {
        return Err(MarlError::Checkpoint("bad magic".into()));
    }
    let mut r = Reader { bytes: body, pos: 8 };
    let version = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes"));
    if version != VERSION {
        return Err(MarlError::Checkpoint(format!("unsupported version {version}")));
    }
    let kind = match r.take(1)?[0] {
        0 => PolicyKind::Selection,
        1 => PolicyKind::Ratio,
        k => return Err(MarlError::Checkpoint(format!("unknown head kind {k}"))),
    };
    let count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        if cols == 0 {
            return Err(MarlError::Checkpoint("layer without bias column".into()));
        }
        let mut layer = Layer::zeros(cols - 1, rows);
        for o in 0..rows {
            for i in 0..cols - 1 {
                layer.weights[o * (cols - 1) + i] = r.f64()?;
            }
            layer.bias[o] = r.f64()?;
        }
        layers.push(layer);
    }
    if layers.is_empty() || layers.windows(2).any(|w| w[0].outputs != w[1].inputs) {
        return Err(MarlError::Checkpoint("inconsistent layer shapes".into()));
    }
    let net = Mlp { layers };
    let rows = r.u32()?;
    let cols = r.u32()? as usize;
    if rows != 2 || cols != net.input_dim() {
        return Err(MarlError::Checkpoint("bad input normalisation block".into()));
    }
    let mut input = InputNorm::identity(cols);
    for v in input.mean.iter_mut().chain(input.std.iter_mut()) {
        *v = r.f64()?;
    }
    if input.std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(MarlError::Checkpoint("non-positive input scale".into()));
    }
    let mut log_std = Vec::new();
    if kind == PolicyKind::Ratio {
        let rows = r.u32()?;
        let cols = r.u32()? as usize;
        if rows != 1 || cols != net.output_dim() {
            return Err(MarlError::Checkpoint("bad log-std block".into()));
        }
        for _ in 0..cols {
            log_std.push(r.f64()?);
        }
    }
    if r.pos != body.len() {
        return Err(MarlError::Checkpoint("trailing bytes".into()));
    }
    Ok(Policy {
        kind,
        net,
        log_std,
        input,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_both_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for kind in [PolicyKind::Selection, PolicyKind::Ratio] {
            let p = Policy::new(kind, Mlp::new(&[5, 4, 6], 0.5, &mut rng), -0.7);
            let bytes = encode(&p);
            assert_eq!(&bytes[..8], MAGIC);
            assert_eq!(decode(&bytes).unwrap(), p);
        }
    }

    #[test]
    fn corruption_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = Policy::new(PolicyKind::Selection, Mlp::new(&[3, 2], 1.0, &mut rng), 0.0);
        let mut bytes = encode(&p);
        bytes[20] ^= 1;
        assert!(matches!(decode(&bytes), Err(MarlError::Checkpoint(_))));
        assert!(decode(&bytes[..10]).is_err());
    }
}
