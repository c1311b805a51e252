//! Little-endian binary snapshot of a bank.
//!
//! ```text
//! "CAMB" | version u32 | dim u32 | capacity u64 | similarity u8 | ablation u8 | R f64
//! capacity x { occupied u8 | count u64 | age u64 | key dim x f64 | value dim x f64 }
//! rng: seed [u8; 32] | stream u64 | word position u128
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::bank::{MemoryBank, Slot};
use super::config::{Ablation, BankConfig};
use crate::error::{Error, Result};
use crate::vector::{DenseVector, SimilarityKind};

pub const SNAPSHOT_MAGIC: [u8; 4] = *b"CAMB";
pub const SNAPSHOT_VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 4 + 4 + 8 + 1 + 1 + 8;
const RNG_LEN: usize = 32 + 8 + 16;

fn slot_len(dim: usize) -> Option<usize> {
    dim.checked_mul(16)?.checked_add(17)
}

impl MemoryBank {
    pub fn snapshot(&self) -> Vec<u8> {
        let dim = self.config.dim;
        let mut out = Vec::with_capacity(HEADER_LEN + self.config.capacity * (17 + 16 * dim) + RNG_LEN);
        out.extend_from_slice(&SNAPSHOT_MAGIC);
        out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        out.extend_from_slice(&(dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.config.capacity as u64).to_le_bytes());
        out.push(self.config.similarity.tag());
        out.push(self.config.ablation.tag());
        out.extend_from_slice(&self.config.threshold.to_le_bytes());
        for s in &self.slots {
            out.push(s.occupied as u8);
            out.extend_from_slice(&s.count.to_le_bytes());
            out.extend_from_slice(&s.age.to_le_bytes());
            for x in s.key.iter().chain(s.value.iter()) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.rng.get_seed());
        out.extend_from_slice(&self.rng.get_stream().to_le_bytes());
        out.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());
        out
    }

    /// Restores a snapshot, requiring its header to match `expected`.
    /// The seed of `expected` is kept on the restored config; the generator
    /// state itself comes from the stream.
    pub fn restore(bytes: &[u8], expected: &BankConfig) -> Result<Self> {
        let mut bank = Self::from_snapshot(bytes)?;
        let got = &bank.config;
        let mut mismatches = Vec::new();
        if got.dim != expected.dim {
            mismatches.push(format!("dim {} != {}", got.dim, expected.dim));
        }
        if got.capacity != expected.capacity {
            mismatches.push(format!("capacity {} != {}", got.capacity, expected.capacity));
        }
        if got.similarity != expected.similarity {
            mismatches.push(format!("similarity {} != {}", got.similarity, expected.similarity));
        }
        if got.ablation != expected.ablation {
            mismatches.push(format!("ablation {} != {}", got.ablation, expected.ablation));
        }
        if got.threshold.to_bits() != expected.threshold.to_bits() {
            mismatches.push(format!("threshold {} != {}", got.threshold, expected.threshold));
        }
        if !mismatches.is_empty() {
            return Err(Error::SnapshotConfigMismatch(mismatches.join(", ")));
        }
        bank.config.seed = expected.seed;
        Ok(bank)
    }

    /// Decodes a snapshot without a reference configuration (seed reads as 0).
    pub fn from_snapshot(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != SNAPSHOT_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = r.u32()?;
        if version != SNAPSHOT_VERSION {
            return Err(Error::SnapshotVersion { found: version, expected: SNAPSHOT_VERSION });
        }
        let dim = r.u32()? as usize;
        let capacity = usize::try_from(r.u64()?).map_err(|_| corrupt("capacity overflows"))?;
        let similarity = SimilarityKind::from_tag(r.u8()?).ok_or_else(|| corrupt("unknown similarity tag"))?;
        let ablation = Ablation::from_tag(r.u8()?).ok_or_else(|| corrupt("unknown ablation tag"))?;
        let threshold = r.f64()?;
        let config = BankConfig { capacity, dim, threshold, similarity, ablation, seed: 0 };
        config.validate().map_err(|e| corrupt(&e.to_string()))?;

        let expected_len =
            slot_len(dim).and_then(|l| l.checked_mul(capacity)).and_then(|l| l.checked_add(HEADER_LEN + RNG_LEN));
        if expected_len != Some(bytes.len()) {
            return Err(corrupt(&format!(
                "length {} does not match header (expected {:?})",
                bytes.len(),
                expected_len
            )));
        }

        let mut slots = Vec::with_capacity(capacity);
        for i in 0..capacity {
            let occupied = match r.u8()? {
                0 => false,
                1 => true,
                _ => return Err(corrupt(&format!("slot {i}: bad occupancy flag"))),
            };
            let count = r.u64()?;
            let age = r.u64()?;
            let key = r.vector(dim)?;
            let value = r.vector(dim)?;
            if occupied && count == 0 {
                return Err(corrupt(&format!("slot {i}: occupied with zero count")));
            }
            if !occupied && (count != 0 || age != 0) {
                return Err(corrupt(&format!("slot {i}: unoccupied with nonzero count or age")));
            }
            slots.push(Slot { key, value, count, age, occupied });
        }

        let mut seed = [0u8; 32];
        seed.copy_from_slice(r.take(32)?);
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);

        Ok(MemoryBank { config, slots, rng, log: None })
    }
}

fn corrupt(msg: &str) -> Error {
    Error::SnapshotCorrupt(msg.to_string())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| corrupt("unexpected end of stream"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn vector(&mut self, dim: usize) -> Result<DenseVector> {
        let elements = (0..dim).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        DenseVector::new(elements).map_err(|_| corrupt("non-finite vector element"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_bank(writes: usize, ablation: Ablation) -> MemoryBank {
        let cfg = BankConfig::new(16, 4).with_threshold(0.8).with_ablation(ablation).with_seed(11);
        let mut b = MemoryBank::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..writes {
            let k: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            b.write(&[DenseVector::new(k).unwrap()], &[DenseVector::new(v).unwrap()]).unwrap();
        }
        b
    }

    #[test]
    fn empty_round_trip() {
        let b = MemoryBank::new(BankConfig::new(3, 2)).unwrap();
        let bytes = b.snapshot();
        assert_eq!(&bytes[..4], b"CAMB");
        let r = MemoryBank::restore(&bytes, b.config()).unwrap();
        assert!(r.state_eq(&b));
        assert_eq!(r.snapshot(), bytes);
    }

    #[test]
    fn rng_state_survives() {
        let mut b = random_bank(100, Ablation::NoRecency);
        let mut r = MemoryBank::restore(&b.snapshot(), b.config()).unwrap();
        assert!(r.state_eq(&b));
        let k = DenseVector::new(vec![0.3, -0.2, 0.9, 0.1]).unwrap();
        for _ in 0..50 {
            let k = DenseVector::new(k.iter().map(|x| -x + 0.01).collect()).unwrap();
            let one = std::slice::from_ref(&k);
            assert_eq!(b.write(one, one).unwrap(), r.write(one, one).unwrap());
        }
        assert!(r.state_eq(&b));
    }

    #[test]
    fn error_paths() {
        let b = random_bank(10, Ablation::Full);
        let bytes = b.snapshot();

        let mut wrong_dim = b.config().clone();
        wrong_dim.dim = 5;
        assert!(matches!(MemoryBank::restore(&bytes, &wrong_dim), Err(Error::SnapshotConfigMismatch(_))));
        let mut wrong_cap = b.config().clone();
        wrong_cap.capacity = 17;
        assert!(matches!(MemoryBank::restore(&bytes, &wrong_cap), Err(Error::SnapshotConfigMismatch(_))));

        let mut bad_version = bytes.clone();
        bad_version[4] = 9;
        assert_eq!(
            MemoryBank::restore(&bad_version, b.config()).unwrap_err(),
            Error::SnapshotVersion { found: 9, expected: 1 }
        );

        let corrupt_cases: Vec<Vec<u8>> = vec![
            bytes[..bytes.len() - 1].to_vec(),
            [bytes.as_slice(), &[0]].concat(),
            {
                let mut x = bytes.clone();
                x[0] = b'X';
                x
            },
            {
                let mut x = bytes.clone();
                x[HEADER_LEN] = 7;
                x
            },
            {
                let mut x = bytes.clone();
                x[20] = 9;
                x
            },
            {
                let mut x = bytes.clone();
                x[HEADER_LEN + 17..HEADER_LEN + 25].copy_from_slice(&f64::NAN.to_le_bytes());
                x
            },
            Vec::new(),
        ];
        for (i, c) in corrupt_cases.iter().enumerate() {
            assert!(matches!(MemoryBank::restore(c, b.config()), Err(Error::SnapshotCorrupt(_))), "case {i}");
        }
    }
}
