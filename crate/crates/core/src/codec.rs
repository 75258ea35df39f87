//! Little-endian framing shared by the binary file formats:
//! `magic ‖ payload ‖ crc32(payload)`.

use crate::error::{Error, Result};

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8]) -> Self {
        Self {
            buf: magic.to_vec(),
        }
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32s(&mut self, vs: &[f32]) {
        for &v in vs {
            self.f32(v);
        }
    }

    /// Stores `vs` narrowed to f32.
    pub fn f64s_as_f32(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f32(v as f32);
        }
    }

    pub fn finish(mut self, magic_len: usize) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf[magic_len..]);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        self.buf
    }
}

/// Cursor over a verified payload. Offsets in errors are absolute file
/// offsets.
pub(crate) struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic and checksum, returning a reader over the payload.
    pub fn open(bytes: &'a [u8], magic: &[u8]) -> Result<Self> {
        if bytes.len() < magic.len() || &bytes[..magic.len()] != magic {
            return Err(Error::format(0, "bad magic"));
        }
        if bytes.len() < magic.len() + 4 {
            return Err(Error::format(bytes.len(), "truncated before checksum"));
        }
        let crc_at = bytes.len() - 4;
        let payload = &bytes[magic.len()..crc_at];
        let stored = u32::from_le_bytes(bytes[crc_at..].try_into().expect("4 bytes"));
        let actual = crc32fast::hash(payload);
        if stored != actual {
            return Err(Error::format(
                crc_at,
                format!("checksum mismatch (stored {stored:#010x}, computed {actual:#010x})"),
            ));
        }
        Ok(Self {
            data: payload,
            pos: 0,
            base: magic.len(),
        })
    }

    pub fn offset(&self) -> usize {
        self.base + self.pos
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                self.offset(),
                format!("truncated: need {n} bytes, {} left", self.remaining()),
            ));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    pub fn f32(&mut self) -> Result<f32> {
        let at = self.offset();
        let v = f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(Error::format(at, "non-finite value"));
        }
        Ok(v)
    }

    pub fn f64(&mut self) -> Result<f64> {
        let at = self.offset();
        let v = f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        if !v.is_finite() {
            return Err(Error::format(at, "non-finite value"));
        }
        Ok(v)
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        self.ensure(n, 4)?;
        (0..n).map(|_| self.f32()).collect()
    }

    pub fn f32s_as_f64(&mut self, n: usize) -> Result<Vec<f64>> {
        self.ensure(n, 4)?;
        (0..n).map(|_| self.f32().map(f64::from)).collect()
    }

    /// Fails early when `count` items of `size` bytes cannot fit, so corrupt
    /// length fields never trigger huge allocations.
    pub fn ensure(&self, count: usize, size: usize) -> Result<()> {
        match count.checked_mul(size) {
            Some(n) if n <= self.remaining() => Ok(()),
            _ => Err(Error::format(
                self.offset(),
                format!(
                    "length field claims {count} items of {size} bytes, {} left",
                    self.remaining()
                ),
            )),
        }
    }

    pub fn finish(self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::format(
                self.offset(),
                format!("{} trailing bytes", self.remaining()),
            ));
        }
        Ok(())
    }
}

pub(crate) fn to_usize(v: u64, at: usize, what: &str) -> Result<usize> {
    usize::try_from(v).map_err(|_| Error::format(at, format!("{what} {v} too large")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<u8> {
        let mut w = Writer::new(b"TEST1");
        w.u32(7);
        w.f32(1.5);
        w.u16(3);
        w.finish(5)
    }

    #[test]
    fn frame_roundtrip() {
        let bytes = sample();
        let mut r = Reader::open(&bytes, b"TEST1").unwrap();
        assert_eq!(r.u32().unwrap(), 7);
        assert_eq!(r.f32().unwrap(), 1.5);
        assert_eq!(r.u16().unwrap(), 3);
        r.finish().unwrap();
    }

    #[test]
    fn detects_corruption() {
        let bytes = sample();
        assert!(matches!(
            Reader::open(&bytes, b"OTHER"),
            Err(Error::Format { offset: 0, .. })
        ));
        let mut flipped = bytes.clone();
        flipped[6] ^= 1;
        assert!(matches!(
            Reader::open(&flipped, b"TEST1"),
            Err(Error::Format { .. })
        ));
        assert!(Reader::open(&bytes[..bytes.len() - 1], b"TEST1").is_err());
        assert!(Reader::open(&bytes[..6], b"TEST1").is_err());
    }

    #[test]
    fn read_past_end_reports_offset() {
        let bytes = sample();
        let mut r = Reader::open(&bytes, b"TEST1").unwrap();
        r.u64().unwrap();
        match r.u64() {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 13),
            other => panic!("{other:?}"),
        }
    }
}
