//! Binary parameter checkpoints.
//!
//! Layout (little-endian): magic `METACLCK`, `u32` format version, `u8` role
//! (0 = RLN, 1 = PLN), `u32` tensor count, then per tensor: `u32` name
//! length, UTF-8 name, `u32` rank, `u64` per dimension, and the values as
//! `f64`.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};

use metacl::{ParamSet, Role, Tensor};

pub const MAGIC: &[u8; 8] = b"METACLCK";
pub const VERSION: u32 = 1;

pub fn to_bytes(params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + params.numel() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(match params.role() {
        Role::Rln => 0,
        Role::Pln => 1,
    });
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn read_u32(r: &mut Cursor<&[u8]>) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).context("truncated checkpoint")?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut Cursor<&[u8]>) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).context("truncated checkpoint")?;
    Ok(u64::from_le_bytes(b))
}

pub fn from_bytes(bytes: &[u8]) -> Result<ParamSet> {
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).context("truncated checkpoint")?;
    ensure!(&magic == MAGIC, "not a checkpoint file (bad magic)");
    let version = read_u32(&mut r)?;
    ensure!(version == VERSION, "unsupported checkpoint version {version}");
    let mut role = [0u8; 1];
    r.read_exact(&mut role).context("truncated checkpoint")?;
    let role = match role[0] {
        0 => Role::Rln,
        1 => Role::Pln,
        other => bail!("unknown parameter role {other}"),
    };
    let count = read_u32(&mut r)?;
    let mut params = ParamSet::new(role);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).context("truncated checkpoint")?;
        let name = String::from_utf8(name).context("tensor name is not UTF-8")?;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let remaining = bytes.len() - r.position() as usize;
        ensure!(numel * 8 <= remaining, "truncated checkpoint");
        let data = (0..numel)
            .map(|_| read_u64(&mut r).map(f64::from_bits))
            .collect::<Result<Vec<_>>>()?;
        params.insert(name, Tensor::new(shape, data)?)?;
    }
    ensure!(r.position() as usize == bytes.len(), "trailing bytes after checkpoint");
    Ok(params)
}

pub fn save(path: &Path, params: &ParamSet) -> Result<()> {
    fs::write(path, to_bytes(params)).with_context(|| format!("writing checkpoint {}", path.display()))
}

pub fn load(path: &Path) -> Result<ParamSet> {
    let bytes = fs::read(path).with_context(|| format!("cannot read checkpoint {}", path.display()))?;
    from_bytes(&bytes).with_context(|| format!("invalid checkpoint {}", path.display()))
}

/// Fails unless `params` has exactly the names and shapes of `expected`.
pub fn check_compatible(params: &ParamSet, expected: &ParamSet) -> Result<()> {
    ensure!(
        params.role() == expected.role(),
        "checkpoint holds {} parameters, expected {}",
        params.role(),
        expected.role()
    );
    let got: Vec<(&str, &[usize])> = params.iter().map(|(n, t)| (n, t.shape())).collect();
    let want: Vec<(&str, &[usize])> = expected.iter().map(|(n, t)| (n, t.shape())).collect();
    if got != want {
        bail!("checkpoint does not match the configured model: expected {want:?}, found {got:?}");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamSet {
        let mut p = ParamSet::new(Role::Rln);
        p.insert("a", Tensor::new(vec![2, 2], vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5]).unwrap())
            .unwrap();
        p.insert("b", Tensor::scalar(7.25)).unwrap();
        p
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = sample();
        let back = from_bytes(&to_bytes(&p)).unwrap();
        assert_eq!(back.checksum(), p.checksum());
        assert_eq!(to_bytes(&back), to_bytes(&p));
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let bytes = to_bytes(&sample());
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
    }

    #[test]
    fn shape_mismatch_detected() {
        let mut other = ParamSet::new(Role::Rln);
        other.insert("a", Tensor::zeros(&[2, 3])).unwrap();
        other.insert("b", Tensor::scalar(0.0)).unwrap();
        assert!(check_compatible(&sample(), &other).is_err());
        assert!(check_compatible(&sample(), &sample()).is_ok());
    }
}
