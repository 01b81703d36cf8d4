//! Read-only random tape addressed by bit offset.
//!
//! The bit at absolute offset `p` is a pure function of `(seed, p)`: it is
//! bit `p % 32` of ChaCha20 output word `p / 32` for a generator keyed by the
//! seed. Reading only moves the cursor, so a tape can be rewound or split into
//! disjoint segments without changing what any offset holds.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use thiserror::Error;

/// Bits available on a tape built with [`RandomTape::new`].
pub const DEFAULT_TAPE_BITS: u64 = 3 << 56;

const BLOCK_WORDS: u64 = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TapeError {
    #[error("random tape underflow: requested {requested} bits, {remaining} remaining")]
    Underflow { requested: u64, remaining: u64 },
    #[error("seek to bit {position} outside tape of {len} bits")]
    SeekOutOfRange { position: u64, len: u64 },
}

#[derive(Clone)]
pub struct RandomTape {
    seed: u64,
    origin: u64,
    len: u64,
    cursor: u64,
    rng: ChaCha20Rng,
    block: Option<(u64, [u32; BLOCK_WORDS as usize])>,
}

impl std::fmt::Debug for RandomTape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RandomTape")
            .field("seed", &self.seed)
            .field("origin", &self.origin)
            .field("len", &self.len)
            .field("cursor", &self.cursor)
            .finish()
    }
}

impl PartialEq for RandomTape {
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed
            && self.origin == other.origin
            && self.len == other.len
            && self.cursor == other.cursor
    }
}

impl RandomTape {
    pub fn new(seed: u64) -> Self {
        Self::with_len(seed, DEFAULT_TAPE_BITS)
    }

    pub fn with_len(seed: u64, len: u64) -> Self {
        Self {
            seed,
            origin: 0,
            len,
            cursor: 0,
            rng: ChaCha20Rng::seed_from_u64(seed),
            block: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Absolute offset of this tape's first bit on the underlying stream.
    pub fn origin(&self) -> u64 {
        self.origin
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    pub fn remaining(&self) -> u64 {
        self.len - self.cursor
    }

    pub fn seek(&mut self, position: u64) -> Result<(), TapeError> {
        if position > self.len {
            return Err(TapeError::SeekOutOfRange {
                position,
                len: self.len,
            });
        }
        self.cursor = position;
        Ok(())
    }

    /// A copy of this tape rewound to its first bit.
    pub fn rewound(&self) -> Self {
        let mut t = self.clone();
        t.cursor = 0;
        t
    }

    /// Sub-tape covering `[start, start + len)` of this tape, cursor at 0.
    pub fn segment(&self, start: u64, len: u64) -> Result<Self, TapeError> {
        let end = start.saturating_add(len);
        if end > self.len {
            return Err(TapeError::SeekOutOfRange {
                position: end,
                len: self.len,
            });
        }
        Ok(Self {
            seed: self.seed,
            origin: self.origin + start,
            len,
            cursor: 0,
            rng: self.rng.clone(),
            block: None,
        })
    }

    /// Splits the tape into `parts` disjoint equal-length segments.
    pub fn split(&self, parts: usize) -> Vec<Self> {
        assert!(parts > 0, "cannot split a tape into zero parts");
        let each = self.len / parts as u64;
        (0..parts as u64)
            .map(|i| self.segment(i * each, each).expect("segment within tape"))
            .collect()
    }

    /// The three-way split used by the game player (R1, R2, R3).
    pub fn split3(&self) -> [Self; 3] {
        let mut parts = self.split(3);
        let r3 = parts.pop().unwrap();
        let r2 = parts.pop().unwrap();
        let r1 = parts.pop().unwrap();
        [r1, r2, r3]
    }

    fn word(&mut self, index: u64) -> u32 {
        let block = index / BLOCK_WORDS;
        let within = (index % BLOCK_WORDS) as usize;
        if let Some((b, words)) = &self.block {
            if *b == block {
                return words[within];
            }
        }
        self.rng.set_word_pos(u128::from(block) * u128::from(BLOCK_WORDS));
        let mut words = [0u32; BLOCK_WORDS as usize];
        for w in words.iter_mut() {
            *w = self.rng.next_u32();
        }
        self.block = Some((block, words));
        words[within]
    }

    /// Bit at relative position `p` without moving the cursor.
    pub fn bit_at(&mut self, p: u64) -> Result<bool, TapeError> {
        if p >= self.len {
            return Err(TapeError::Underflow {
                requested: 1,
                remaining: 0,
            });
        }
        let abs = self.origin + p;
        let w = self.word(abs / 32);
        Ok((w >> (abs % 32)) & 1 == 1)
    }

    pub fn read_bit(&mut self) -> Result<bool, TapeError> {
        self.ensure(1)?;
        let b = self.bit_at(self.cursor)?;
        self.cursor += 1;
        Ok(b)
    }

    /// Reads `count <= 64` bits, first bit read becomes the least significant.
    pub fn read_bits(&mut self, count: u32) -> Result<u64, TapeError> {
        assert!(count <= 64);
        self.ensure(u64::from(count))?;
        let mut out = 0u64;
        for i in 0..count {
            if self.bit_at(self.cursor)? {
                out |= 1 << i;
            }
            self.cursor += 1;
        }
        Ok(out)
    }

    pub fn read_u32(&mut self) -> Result<u32, TapeError> {
        Ok(self.read_bits(32)? as u32)
    }

    /// Uniform value in `[0, 1)` from 32 tape bits (fixed-point, 2^-32 grid).
    pub fn read_unit(&mut self) -> Result<f64, TapeError> {
        Ok(f64::from(self.read_u32()?) / 4_294_967_296.0)
    }

    /// Uniform value in `[-1, 1)` from 32 tape bits.
    pub fn read_symmetric(&mut self) -> Result<f64, TapeError> {
        Ok(2.0 * self.read_unit()? - 1.0)
    }

    fn ensure(&self, count: u64) -> Result<(), TapeError> {
        if self.remaining() < count {
            return Err(TapeError::Underflow {
                requested: count,
                remaining: self.remaining(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bits_are_pure_functions_of_offset() {
        let mut a = RandomTape::new(7);
        let first: Vec<bool> = (0..200).map(|_| a.read_bit().unwrap()).collect();
        let mut b = RandomTape::new(7);
        b.seek(100).unwrap();
        let tail: Vec<bool> = (0..100).map(|_| b.read_bit().unwrap()).collect();
        assert_eq!(&first[100..], &tail[..]);
        let mut c = RandomTape::new(7);
        for (p, bit) in first.iter().enumerate() {
            assert_eq!(c.bit_at(p as u64).unwrap(), *bit);
        }
        assert_eq!(c.cursor(), 0);
    }

    #[test]
    fn segments_are_disjoint_views() {
        let tape = RandomTape::with_len(3, 3 * 1024);
        let [r1, r2, r3] = tape.split3();
        assert_eq!(r2.origin(), 1024);
        let mut whole = tape.clone();
        let mut r3 = r3;
        whole.seek(2048).unwrap();
        for _ in 0..64 {
            assert_eq!(whole.read_bit().unwrap(), r3.read_bit().unwrap());
        }
        assert_eq!(r1.len(), 1024);
    }

    #[test]
    fn underflow_is_reported() {
        let mut t = RandomTape::with_len(1, 10);
        assert_eq!(t.read_bits(8).unwrap() >> 8, 0);
        assert_eq!(
            t.read_bits(3),
            Err(TapeError::Underflow {
                requested: 3,
                remaining: 2
            })
        );
    }

    #[test]
    fn different_seeds_differ() {
        let mut a = RandomTape::new(1);
        let mut b = RandomTape::new(2);
        assert_ne!(a.read_bits(64).unwrap(), b.read_bits(64).unwrap());
    }
}
