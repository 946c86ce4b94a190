//! MSB-first bit cursor with exp-Golomb support.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        BitReader { data, pos: 0 }
    }

    /// Bits consumed so far.
    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.data.len() * 8 - self.pos
    }

    pub fn read_bit(&mut self) -> Result<bool> {
        if self.pos >= self.data.len() * 8 {
            return Err(Error::BitstreamExhausted("bit"));
        }
        let byte = self.data[self.pos / 8];
        let bit = (byte >> (7 - (self.pos % 8))) & 1;
        self.pos += 1;
        Ok(bit == 1)
    }

    pub fn read_flag(&mut self) -> Result<bool> {
        self.read_bit()
    }

    pub fn read_bits(&mut self, n: u32) -> Result<u32> {
        debug_assert!(n <= 32);
        if (n as usize) > self.remaining() {
            return Err(Error::BitstreamExhausted("fixed-length field"));
        }
        let mut v: u64 = 0;
        for _ in 0..n {
            v = (v << 1) | self.read_bit()? as u64;
        }
        Ok(v as u32)
    }

    /// Unsigned exp-Golomb, `ue(v)`.
    pub fn read_ue(&mut self) -> Result<u32> {
        let start = self.pos;
        let mut zeros = 0u32;
        loop {
            match self.read_bit() {
                Ok(true) => break,
                Ok(false) => zeros += 1,
                Err(_) => {
                    self.pos = start;
                    return Err(Error::BitstreamExhausted("ue(v) prefix"));
                }
            }
            if zeros > 31 {
                self.pos = start;
                return Err(Error::MalformedStream("exp-Golomb prefix longer than 31 bits".into()));
            }
        }
        if zeros as usize > self.remaining() {
            self.pos = start;
            return Err(Error::BitstreamExhausted("ue(v) suffix"));
        }
        let suffix = self.read_bits(zeros)? as u64;
        Ok(((1u64 << zeros) - 1 + suffix) as u32)
    }

    /// Signed exp-Golomb, `se(v)`: codeNum k maps to (-1)^(k+1) * ceil(k / 2).
    pub fn read_se(&mut self) -> Result<i32> {
        let k = self.read_ue()? as i64;
        let magnitude = (k + 1) / 2;
        Ok(if k % 2 == 1 { magnitude } else { -magnitude } as i32)
    }

    /// True when the remaining bits hold only the RBSP stop bit and zero padding.
    pub fn at_rbsp_trailing(&self) -> bool {
        let mut probe = self.clone();
        match probe.read_bit() {
            Ok(true) => {}
            _ => return false,
        }
        while let Ok(bit) = probe.read_bit() {
            if bit {
                return false;
            }
        }
        true
    }
}

/// MSB-first bit writer, the inverse of [`BitReader`].
#[derive(Debug, Default, Clone)]
pub struct BitWriter {
    bytes: Vec<u8>,
    bit_len: usize,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bit_len(&self) -> usize {
        self.bit_len
    }

    pub fn write_bit(&mut self, bit: bool) {
        if self.bit_len % 8 == 0 {
            self.bytes.push(0);
        }
        if bit {
            let last = self.bytes.last_mut().unwrap();
            *last |= 1 << (7 - (self.bit_len % 8));
        }
        self.bit_len += 1;
    }

    pub fn write_bits(&mut self, value: u32, n: u32) {
        for i in (0..n).rev() {
            self.write_bit((value >> i) & 1 == 1);
        }
    }

    pub fn write_ue(&mut self, value: u32) {
        let code = value as u64 + 1;
        let len = 64 - code.leading_zeros();
        for _ in 0..len - 1 {
            self.write_bit(false);
        }
        for i in (0..len).rev() {
            self.write_bit((code >> i) & 1 == 1);
        }
    }

    pub fn write_se(&mut self, value: i32) {
        let k = if value > 0 {
            2 * value as i64 - 1
        } else {
            -2 * value as i64
        };
        self.write_ue(k as u32);
    }

    /// Appends the RBSP stop bit and pads to a byte boundary.
    pub fn write_trailing_bits(&mut self) {
        self.write_bit(true);
        while self.bit_len % 8 != 0 {
            self.write_bit(false);
        }
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}
