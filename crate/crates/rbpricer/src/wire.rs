//! Little-endian encoding helpers shared by the on-disk binary formats
//! (the trajectory cache and the basis container). Integers and floats are
//! 64-bit little-endian everywhere, so files are byte-identical across
//! platforms.

use nalgebra::DVector;

pub(crate) fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_vector(buf: &mut Vec<u8>, v: &DVector<f64>) {
    for &x in v.iter() {
        put_f64(buf, x);
    }
}

/// Bounds-checked cursor over a byte buffer; every accessor returns `None`
/// past the end, so truncated files surface as a decode failure rather
/// than a panic.
pub(crate) struct ByteReader<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> ByteReader<'b> {
    pub(crate) fn new(bytes: &'b [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Option<&'b [u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    pub(crate) fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn vector(&mut self, n: usize) -> Option<DVector<f64>> {
        let raw = self.take(8usize.checked_mul(n)?)?;
        Some(DVector::from_fn(n, |i, _| {
            f64::from_le_bytes(raw[8 * i..8 * i + 8].try_into().unwrap())
        }))
    }

    pub(crate) fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}
