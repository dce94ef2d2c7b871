//! Little-endian cursor shared by the binary file formats.

use crate::error::FormatError;

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        match self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()) {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(FormatError::Truncated { offset: self.pos, needed: n - (self.bytes.len() - self.pos) }),
        }
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<(), FormatError> {
        let found: [u8; 4] = self.take(4)?.try_into().expect("4 bytes");
        if &found != expected {
            return Err(FormatError::BadMagic { found, expected: *expected });
        }
        Ok(())
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn finish(&self) -> Result<(), FormatError> {
        if self.remaining() != 0 {
            return Err(FormatError::Corrupt(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

macro_rules! read_le {
    ($($name:ident: $t:ty),*) => {
        impl ByteReader<'_> {
            $(pub fn $name(&mut self) -> Result<$t, FormatError> {
                Ok(<$t>::from_le_bytes(self.take(std::mem::size_of::<$t>())?.try_into().expect("sized")))
            })*
        }
    };
}

read_le!(u8: u8, u16: u16, i16: i16, u32: u32, u64: u64, f32: f32, f64: f64);
