//! Canonical byte encoding.
//!
//! Every field is written as a 4-byte big-endian length followed by the
//! field's content, in declared field order. Integers are 8-byte big-endian,
//! floats are their IEEE-754 bit pattern as an 8-byte big-endian integer,
//! and nested records are encoded recursively and written as one field.
//! The same bytes feed every digest and signature in the crate, so the
//! layout must never change without bumping the affected record version.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("truncated input: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("field at offset {offset} has length {found}, expected {expected}")]
    BadLength {
        offset: usize,
        expected: usize,
        found: usize,
    },
    #[error("{0} trailing bytes after record")]
    Trailing(usize),
    #[error("invalid utf-8 in text field")]
    Utf8,
}

#[derive(Debug, Default, Clone)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    fn field(&mut self, content: &[u8]) -> &mut Self {
        let len = u32::try_from(content.len()).expect("field longer than u32::MAX");
        self.buf.extend_from_slice(&len.to_be_bytes());
        self.buf.extend_from_slice(content);
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.field(&v.to_be_bytes())
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.u64(v.to_bits())
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.field(b)
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.field(s.as_bytes())
    }

    /// A float vector as a single field of `8 * len` bytes.
    pub fn f64s(&mut self, values: &[f64]) -> &mut Self {
        let mut content = Vec::with_capacity(values.len() * 8);
        for v in values {
            content.extend_from_slice(&v.to_bits().to_be_bytes());
        }
        self.field(&content)
    }

    /// Encodes a nested record and writes it as one field.
    pub fn nested(&mut self, f: impl FnOnce(&mut Encoder)) -> &mut Self {
        let mut inner = Encoder::new();
        f(&mut inner);
        self.field(&inner.buf)
    }

    pub fn finish(&mut self) -> Vec<u8> {
        std::mem::take(&mut self.buf)
    }
}

#[derive(Debug, Clone)]
pub struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let out = &self.buf[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(CodecError::Truncated {
                offset: self.pos,
                needed: n,
            }),
        }
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], CodecError> {
        let len = self.take(4)?;
        let len = u32::from_be_bytes(len.try_into().unwrap()) as usize;
        self.take(len)
    }

    fn fixed<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        let offset = self.pos;
        let b = self.bytes()?;
        b.try_into().map_err(|_| CodecError::BadLength {
            offset,
            expected: N,
            found: b.len(),
        })
    }

    pub fn array32(&mut self) -> Result<[u8; 32], CodecError> {
        self.fixed::<32>()
    }

    pub fn array64(&mut self) -> Result<[u8; 64], CodecError> {
        self.fixed::<64>()
    }

    pub fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_be_bytes(self.fixed::<8>()?))
    }

    pub fn f64(&mut self) -> Result<f64, CodecError> {
        Ok(f64::from_bits(self.u64()?))
    }

    pub fn str(&mut self) -> Result<&'a str, CodecError> {
        std::str::from_utf8(self.bytes()?).map_err(|_| CodecError::Utf8)
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>, CodecError> {
        let offset = self.pos;
        let b = self.bytes()?;
        if b.len() % 8 != 0 {
            return Err(CodecError::BadLength {
                offset,
                expected: b.len() / 8 * 8,
                found: b.len(),
            });
        }
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_be_bytes(c.try_into().unwrap())))
            .collect())
    }

    /// Decoder over the next field's content.
    pub fn nested(&mut self) -> Result<Decoder<'a>, CodecError> {
        Ok(Decoder::new(self.bytes()?))
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }

    /// Fails if any bytes remain unread.
    pub fn finish(self) -> Result<(), CodecError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(CodecError::Trailing(n)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_length_prefixed_big_endian() {
        let bytes = Encoder::new().u64(0x0102).str("ab").finish();
        assert_eq!(
            bytes,
            vec![0, 0, 0, 8, 0, 0, 0, 0, 0, 0, 1, 2, 0, 0, 0, 2, b'a', b'b']
        );
    }

    #[test]
    fn truncated_and_trailing_are_errors() {
        let bytes = Encoder::new().u64(7).finish();
        let mut d = Decoder::new(&bytes[..5]);
        assert!(matches!(d.u64(), Err(CodecError::Truncated { .. })));

        let mut padded = bytes.clone();
        padded.push(0);
        let mut d = Decoder::new(&padded);
        d.u64().unwrap();
        assert_eq!(d.finish(), Err(CodecError::Trailing(1)));
    }

    #[test]
    fn wrong_width_integer_is_rejected() {
        let bytes = Encoder::new().bytes(&[1, 2, 3]).finish();
        assert!(matches!(
            Decoder::new(&bytes).u64(),
            Err(CodecError::BadLength { expected: 8, found: 3, .. })
        ));
    }

    proptest! {
        #[test]
        fn round_trip(a in any::<u64>(), s in ".{0,40}", fs in prop::collection::vec(any::<f64>(), 0..20)) {
            let bytes = Encoder::new()
                .u64(a)
                .str(&s)
                .nested(|e| { e.f64s(&fs); })
                .finish();
            let mut d = Decoder::new(&bytes);
            prop_assert_eq!(d.u64().unwrap(), a);
            prop_assert_eq!(d.str().unwrap(), s.as_str());
            let mut inner = d.nested().unwrap();
            let back = inner.f64s().unwrap();
            inner.finish().unwrap();
            d.finish().unwrap();
            prop_assert_eq!(back.len(), fs.len());
            for (x, y) in back.iter().zip(&fs) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}
