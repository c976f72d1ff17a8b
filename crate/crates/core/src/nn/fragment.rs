//! Binary checkpoint fragments.
//!
//! Network fragment: magic `HEDC`, format version (u32), the spec
//! (input dim, hidden layer count, hidden dims, output dim as u32, then the
//! hidden and output activation codes as u8), the parameter count (u64) and
//! the parameters as little-endian f64.
//!
//! Adam fragment: magic `HEDA`, format version (u32), length (u64), step
//! counter (u64), lr / beta1 / beta2 / eps (f64), then the first and second
//! moment vectors.

use std::io::{Read, Write};

use super::{Activation, AdamState, Mlp, MlpSpec, ParamVector};
use crate::error::{HedError, Result};

pub const MLP_MAGIC: &[u8; 4] = b"HEDC";
pub const ADAM_MAGIC: &[u8; 4] = b"HEDA";
pub const FORMAT_VERSION: u32 = 1;

// Guards against allocating absurd buffers from a corrupt header.
const MAX_LEN: u64 = 1 << 32;

pub(crate) fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_f64s(w: &mut impl Write, vs: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(vs.len() * 8);
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => HedError::Checkpoint("truncated fragment".into()),
        _ => HedError::Io(e),
    })?;
    Ok(buf)
}

pub(crate) fn read_u8(r: &mut impl Read) -> Result<u8> {
    Ok(read_exact::<1>(r)?[0])
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact(r)?))
}

pub(crate) fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_exact(r)?))
}

pub(crate) fn read_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_le_bytes(read_exact(r)?))
}

pub(crate) fn read_f64s(r: &mut impl Read, len: u64) -> Result<Vec<f64>> {
    if len > MAX_LEN {
        return Err(HedError::Checkpoint(format!(
            "implausible vector length {len}"
        )));
    }
    (0..len).map(|_| read_f64(r)).collect()
}

pub(crate) fn expect_header(r: &mut impl Read, magic: &[u8; 4]) -> Result<()> {
    let got: [u8; 4] = read_exact(r)?;
    if &got != magic {
        return Err(HedError::Checkpoint(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(HedError::Checkpoint(format!(
            "unsupported format version {version}"
        )));
    }
    Ok(())
}

fn dim_u32(d: usize) -> Result<u32> {
    u32::try_from(d).map_err(|_| HedError::Checkpoint(format!("dimension {d} too large")))
}

pub fn write_mlp(w: &mut impl Write, net: &Mlp) -> Result<()> {
    let spec = net.spec();
    w.write_all(MLP_MAGIC)?;
    write_u32(w, FORMAT_VERSION)?;
    write_u32(w, dim_u32(spec.input_dim)?)?;
    write_u32(w, dim_u32(spec.hidden_dims.len())?)?;
    for &h in &spec.hidden_dims {
        write_u32(w, dim_u32(h)?)?;
    }
    write_u32(w, dim_u32(spec.output_dim)?)?;
    w.write_all(&[spec.hidden_activation.code(), spec.output_activation.code()])?;
    write_u64(w, net.num_params() as u64)?;
    write_f64s(w, net.params())
}

pub fn read_mlp(r: &mut impl Read) -> Result<Mlp> {
    expect_header(r, MLP_MAGIC)?;
    let input_dim = read_u32(r)? as usize;
    let depth = read_u32(r)?;
    if depth as u64 > 1024 {
        return Err(HedError::Checkpoint(format!("implausible depth {depth}")));
    }
    let hidden_dims = (0..depth)
        .map(|_| read_u32(r).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let output_dim = read_u32(r)? as usize;
    let act = |code: u8| {
        Activation::from_code(code)
            .ok_or_else(|| HedError::Checkpoint(format!("unknown activation code {code}")))
    };
    let hidden_activation = act(read_u8(r)?)?;
    let output_activation = act(read_u8(r)?)?;
    let spec = MlpSpec {
        input_dim,
        hidden_dims,
        output_dim,
        hidden_activation,
        output_activation,
    };
    spec.validate()
        .map_err(|e| HedError::Checkpoint(format!("invalid spec in fragment: {e}")))?;
    let count = read_u64(r)?;
    if count != spec.num_params() as u64 {
        return Err(HedError::Checkpoint(format!(
            "parameter count {count} does not match spec ({})",
            spec.num_params()
        )));
    }
    let params = read_f64s(r, count)?;
    Mlp::from_params(spec, ParamVector::from(params))
}

pub fn write_adam(w: &mut impl Write, st: &AdamState) -> Result<()> {
    w.write_all(ADAM_MAGIC)?;
    write_u32(w, FORMAT_VERSION)?;
    write_u64(w, st.m.len() as u64)?;
    write_u64(w, st.t)?;
    write_f64s(w, &[st.lr, st.beta1, st.beta2, st.eps])?;
    write_f64s(w, &st.m)?;
    write_f64s(w, &st.v)
}

pub fn read_adam(r: &mut impl Read) -> Result<AdamState> {
    expect_header(r, ADAM_MAGIC)?;
    let len = read_u64(r)?;
    let t = read_u64(r)?;
    let lr = read_f64(r)?;
    let beta1 = read_f64(r)?;
    let beta2 = read_f64(r)?;
    let eps = read_f64(r)?;
    let m = read_f64s(r, len)?;
    let v = read_f64s(r, len)?;
    Ok(AdamState {
        m,
        v,
        t,
        lr,
        beta1,
        beta2,
        eps,
    })
}
