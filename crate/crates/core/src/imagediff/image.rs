use std::path::Path;

use crate::error::{Error, Result};
use crate::fsx::atomic_write;
use crate::labelmap::MAX_CELLS;

/// Dense H x W x CH image with f64 storage in row-major, channel-innermost
/// order. Serialized values are f32 (see [`ToyImage::to_sim1`]).
#[derive(Debug, Clone, PartialEq)]
pub struct ToyImage {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl ToyImage {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::from_values(height, width, channels, vec![0.0; height * width * channels])
    }

    pub fn from_values(
        height: usize,
        width: usize,
        channels: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::argument("image dimensions must be positive"));
        }
        if height
            .checked_mul(width)
            .and_then(|hw| hw.checked_mul(channels))
            .map(|n| n > MAX_CELLS)
            .unwrap_or(true)
        {
            return Err(Error::argument(format!(
                "{height}x{width}x{channels} exceeds the {MAX_CELLS}-value limit"
            )));
        }
        if values.len() != height * width * channels {
            return Err(Error::argument(format!(
                "expected {} values, got {}",
                height * width * channels,
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, ch: usize) -> usize {
        (i * self.width + j) * self.channels + ch
    }

    pub fn get(&self, i: usize, j: usize, ch: usize) -> f64 {
        self.values[self.index(i, j, ch)]
    }

    pub fn set(&mut self, i: usize, j: usize, ch: usize, v: f64) {
        let k = self.index(i, j, ch);
        self.values[k] = v;
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.channels == other.channels
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Parse the `SIM1` byte format. Strict: exactly one header line, an
    /// exact-length little-endian f32 payload, and finite values.
    pub fn from_sim1(bytes: &[u8]) -> Result<Self> {
        const MAGIC: &[u8] = b"SIM1\n";
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::format("missing SIM1 magic"));
        }
        let rest = &bytes[MAGIC.len()..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::truncation("SIM1 header line unterminated"))?;
        let header = std::str::from_utf8(&rest[..nl])
            .map_err(|_| Error::format("SIM1 header is not UTF-8"))?;
        let fields: Vec<&str> = header.split(' ').collect();
        if fields.len() != 3 {
            return Err(Error::format(format!(
                "SIM1 header must be '<H> <W> <CH>', got {header:?}"
            )));
        }
        let parse = |s: &str, what: &str| -> Result<usize> {
            s.parse::<usize>()
                .map_err(|_| Error::format(format!("bad SIM1 {what}: {s:?}")))
        };
        let height = parse(fields[0], "height")?;
        let width = parse(fields[1], "width")?;
        let channels = parse(fields[2], "channels")?;
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::format("SIM1 dimensions must be positive"));
        }
        let count = height
            .checked_mul(width)
            .and_then(|hw| hw.checked_mul(channels))
            .filter(|&n| n <= MAX_CELLS)
            .ok_or_else(|| Error::format("SIM1 dimensions exceed the value limit"))?;
        let payload = &rest[nl + 1..];
        let expected = count * 4;
        if payload.len() < expected {
            return Err(Error::truncation(format!(
                "SIM1 payload has {} bytes, expected {expected}",
                payload.len()
            )));
        }
        if payload.len() > expected {
            return Err(Error::corruption(format!(
                "SIM1 payload has {} trailing bytes",
                payload.len() - expected
            )));
        }
        let mut values = Vec::with_capacity(count);
        for (k, chunk) in payload.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            if !v.is_finite() {
                return Err(Error::corruption(format!(
                    "non-finite value at index {k}"
                )));
            }
            values.push(v as f64);
        }
        Self::from_values(height, width, channels, values)
    }

    /// Serialize to `SIM1` bytes; every value must round to a finite f32.
    pub fn to_sim1(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(32 + self.values.len() * 4);
        out.extend_from_slice(
            format!("SIM1\n{} {} {}\n", self.height, self.width, self.channels).as_bytes(),
        );
        for (k, &v) in self.values.iter().enumerate() {
            let f = v as f32;
            if !f.is_finite() {
                return Err(Error::argument(format!(
                    "value {v} at index {k} does not fit a finite f32"
                )));
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_sim1(&std::fs::read(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_sim1()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_byte_identical() {
        let img =
            ToyImage::from_values(2, 3, 2, (0..12).map(|k| k as f64 * 0.37 - 1.5).collect())
                .unwrap();
        let bytes = img.to_sim1().unwrap();
        let back = ToyImage::from_sim1(&bytes).unwrap();
        assert_eq!(back.to_sim1().unwrap(), bytes);
        assert_eq!(back.height(), 2);
        assert_eq!(back.width(), 3);
        assert_eq!(back.channels(), 2);
    }

    #[test]
    fn strict_parsing() {
        let img = ToyImage::from_values(1, 2, 1, vec![0.5, -0.5]).unwrap();
        let good = img.to_sim1().unwrap();

        let mut truncated = good.clone();
        truncated.pop();
        assert!(matches!(
            ToyImage::from_sim1(&truncated),
            Err(Error::Truncation(_))
        ));

        let mut trailing = good.clone();
        trailing.push(0);
        assert!(matches!(
            ToyImage::from_sim1(&trailing),
            Err(Error::Corruption(_))
        ));

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            ToyImage::from_sim1(&bad_magic),
            Err(Error::Format(_))
        ));

        // NaN payload
        let mut nan = good;
        let nan_bytes = f32::NAN.to_le_bytes();
        let off = nan.len() - 4;
        nan[off..].copy_from_slice(&nan_bytes);
        assert!(matches!(ToyImage::from_sim1(&nan), Err(Error::Corruption(_))));
    }

    #[test]
    fn header_must_be_single_spaced() {
        assert!(ToyImage::from_sim1(b"SIM1\n1  1 1\n\x00\x00\x00\x00").is_err());
        assert!(ToyImage::from_sim1(b"SIM1\n1 1\n\x00\x00\x00\x00").is_err());
        assert!(ToyImage::from_sim1(b"SIM1\n0 1 1\n").is_err());
    }

    #[test]
    fn constructor_validates() {
        assert!(ToyImage::from_values(0, 1, 1, vec![]).is_err());
        assert!(ToyImage::from_values(1, 1, 1, vec![0.0, 1.0]).is_err());
        assert!(ToyImage::zeros(1, 4, 3).is_ok());
    }

    #[test]
    fn save_rejects_overflowing_values() {
        let img = ToyImage::from_values(1, 1, 1, vec![1e300]).unwrap();
        assert!(matches!(img.to_sim1(), Err(Error::Argument(_))));
    }
}
