//! Flat binary weight dump: magic `SUBRANK1`, the seven config fields as
//! little-endian `u64`, then every parameter as a little-endian `f64` in fill
//! order.

use std::io::{Read, Write};

use super::{EncoderConfig, ReferenceEncoder};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const WEIGHT_FILE_MAGIC: &[u8; 8] = b"SUBRANK1";

fn read_u64(reader: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    reader.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_usize(reader: &mut impl Read, field: &str) -> Result<usize> {
    usize::try_from(read_u64(reader)?)
        .map_err(|_| Error::Input(format!("weight file field {field} does not fit usize")))
}

impl<T: Scalar> ReferenceEncoder<T> {
    pub fn write_weights(&self, mut writer: impl Write) -> Result<()> {
        let c = &self.config;
        writer.write_all(WEIGHT_FILE_MAGIC)?;
        for field in [
            c.vocab_size as u64,
            c.d_model as u64,
            c.n_heads as u64,
            c.n_layers as u64,
            c.ffn_dim as u64,
            c.max_positions as u64,
            c.seed,
        ] {
            writer.write_all(&field.to_le_bytes())?;
        }
        for w in self.parameters() {
            writer.write_all(&w.as_f64().to_le_bytes())?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn read_weights(mut reader: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        reader.read_exact(&mut magic)?;
        if &magic != WEIGHT_FILE_MAGIC {
            return Err(Error::Input("not a SUBRANK1 weight file".into()));
        }
        let config = EncoderConfig {
            vocab_size: read_usize(&mut reader, "vocab_size")?,
            d_model: read_usize(&mut reader, "d_model")?,
            n_heads: read_usize(&mut reader, "n_heads")?,
            n_layers: read_usize(&mut reader, "n_layers")?,
            ffn_dim: read_usize(&mut reader, "ffn_dim")?,
            max_positions: read_usize(&mut reader, "max_positions")?,
            seed: read_u64(&mut reader)?,
        };
        config.validate()?;

        let d = config.d_model;
        let per_layer = 4 * d * d + 2 * d * config.ffn_dim;
        let count = config.vocab_size * d + config.n_layers * per_layer;
        let mut bytes = vec![0u8; count * 8];
        reader.read_exact(&mut bytes).map_err(|_| {
            Error::Input(format!("weight file truncated: expected {count} weights"))
        })?;
        let mut rest = [0u8; 1];
        if reader.read(&mut rest)? != 0 {
            return Err(Error::Input("trailing bytes after weights".into()));
        }
        let mut chunks = bytes.chunks_exact(8);
        Ok(Self::from_parameters(config, || {
            let chunk = chunks.next().expect("length checked above");
            T::of(f64::from_le_bytes(chunk.try_into().expect("8-byte chunk")))
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> EncoderConfig {
        EncoderConfig {
            vocab_size: 11,
            d_model: 4,
            n_heads: 2,
            n_layers: 4,
            ffn_dim: 6,
            max_positions: 8,
            seed: 9,
        }
    }

    #[test]
    fn write_then_read_is_identity() {
        let enc = ReferenceEncoder::<f64>::new(config()).unwrap();
        let mut buf = Vec::new();
        enc.write_weights(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"SUBRANK1");
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 11);
        let back = ReferenceEncoder::<f64>::read_weights(buf.as_slice()).unwrap();
        assert_eq!(enc, back);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let enc = ReferenceEncoder::<f64>::new(config()).unwrap();
        let mut buf = Vec::new();
        enc.write_weights(&mut buf).unwrap();
        let truncated = &buf[..buf.len() - 3];
        assert!(ReferenceEncoder::<f64>::read_weights(truncated).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(ReferenceEncoder::<f64>::read_weights(bad.as_slice()).is_err());
        buf.push(0);
        assert!(ReferenceEncoder::<f64>::read_weights(buf.as_slice()).is_err());
    }
}
