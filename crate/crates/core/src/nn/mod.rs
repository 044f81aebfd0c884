//! Small dense networks with hand-written backpropagation, a diagonal
//! Gaussian policy head and Adam. Just enough for PPO on a 2-D task.

mod adam;
mod mlp;
mod policy;

use std::io::{Read, Write};

use thiserror::Error;

pub use adam::AdamState;
pub use mlp::{param_count, ForwardCache, Mlp};
pub use policy::{log_prob_given_mean, log_prob_grads, GaussianPolicy, LOG_STD_MAX, LOG_STD_MIN};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CSPOLv01";

/// Writes a policy checkpoint.
///
/// Layout, all little-endian: 8-byte magic, `u32` layer count, one `u32` per
/// layer size, `u32` log-std length, then every mean-net parameter followed
/// by the log-std vector as `f64`.
pub fn write_checkpoint<W: Write>(policy: &GaussianPolicy, mut out: W) -> Result<(), NnError> {
    let sizes = policy.mean_net.layer_sizes();
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&(sizes.len() as u32).to_le_bytes())?;
    for &s in sizes {
        out.write_all(&(s as u32).to_le_bytes())?;
    }
    out.write_all(&(policy.log_std().len() as u32).to_le_bytes())?;
    for v in policy.mean_net.params().iter().chain(policy.log_std()) {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<GaussianPolicy, NnError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let read_u32 = |input: &mut R| -> Result<usize, NnError> {
        let mut b = [0u8; 4];
        input.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b) as usize)
    };
    let n_layers = read_u32(&mut input)?;
    if !(2..=64).contains(&n_layers) {
        return Err(NnError::Checkpoint(format!("implausible layer count {n_layers}")));
    }
    let sizes = (0..n_layers)
        .map(|_| read_u32(&mut input))
        .collect::<Result<Vec<_>, _>>()?;
    let log_std_len = read_u32(&mut input)?;
    let n = param_count(&sizes);
    let mut values = Vec::with_capacity(n + log_std_len);
    let mut b = [0u8; 8];
    for _ in 0..n + log_std_len {
        input.read_exact(&mut b)?;
        values.push(f64::from_le_bytes(b));
    }
    let log_std = values.split_off(n);
    GaussianPolicy::new(Mlp::from_params(&sizes, values)?, log_std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let net = Mlp::random(&[11, 16, 2], 1.0, 0.1, &mut rng).unwrap();
        let policy = GaussianPolicy::new(net, vec![-0.5, -0.25]).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&policy, &mut buf).unwrap();
        assert_eq!(&buf[..8], CHECKPOINT_MAGIC);
        assert_eq!(buf.len(), 8 + 4 + 3 * 4 + 4 + 8 * (param_count(&[11, 16, 2]) + 2));
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, policy);
    }

    #[test]
    fn corrupt_checkpoint_is_rejected() {
        assert!(read_checkpoint(&b"NOTMAGIC...."[..]).is_err());
        let mut buf = Vec::new();
        let policy = GaussianPolicy::new(Mlp::zeros(&[2, 2]).unwrap(), vec![0.0, 0.0]).unwrap();
        write_checkpoint(&policy, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_checkpoint(buf.as_slice()).is_err());
    }
}
