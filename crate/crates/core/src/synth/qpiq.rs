//! `QPIQ` binary stream format.
//!
//! Little-endian header `{ magic "QPIQ", version u16, start_time_ns u64,
//! bin_width_ns u32, count u64 }` followed by `count` pairs of f32 (I, Q).
//! A file may hold several such records back to back, one per saved buffer.

use std::io::{self, Read, Write};

use num_complex::Complex32;

use super::IqStream;
use crate::error::{Error, Result};

pub const QPIQ_MAGIC: [u8; 4] = *b"QPIQ";
pub const QPIQ_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 8 + 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QpiqHeader {
    pub version: u16,
    pub start_time_ns: u64,
    pub bin_width_ns: u32,
    pub count: u64,
}

impl QpiqHeader {
    fn encode(&self) -> [u8; HEADER_LEN] {
        let mut buf = [0u8; HEADER_LEN];
        buf[..4].copy_from_slice(&QPIQ_MAGIC);
        buf[4..6].copy_from_slice(&self.version.to_le_bytes());
        buf[6..14].copy_from_slice(&self.start_time_ns.to_le_bytes());
        buf[14..18].copy_from_slice(&self.bin_width_ns.to_le_bytes());
        buf[18..26].copy_from_slice(&self.count.to_le_bytes());
        buf
    }

    fn decode(buf: &[u8; HEADER_LEN]) -> Result<Self> {
        if buf[..4] != QPIQ_MAGIC {
            return Err(Error::Format("bad QPIQ magic".into()));
        }
        let version = u16::from_le_bytes([buf[4], buf[5]]);
        if version != QPIQ_VERSION {
            return Err(Error::Format(format!("unsupported QPIQ version {version}")));
        }
        let header = Self {
            version,
            start_time_ns: u64::from_le_bytes(buf[6..14].try_into().unwrap()),
            bin_width_ns: u32::from_le_bytes(buf[14..18].try_into().unwrap()),
            count: u64::from_le_bytes(buf[18..26].try_into().unwrap()),
        };
        if header.bin_width_ns == 0 {
            return Err(Error::Format("QPIQ bin width is zero".into()));
        }
        Ok(header)
    }
}

pub fn write_qpiq<W: Write>(mut w: W, stream: &IqStream) -> Result<()> {
    let header = QpiqHeader {
        version: QPIQ_VERSION,
        start_time_ns: stream.start_time_ns,
        bin_width_ns: stream.bin_width_ns,
        count: stream.samples.len() as u64,
    };
    w.write_all(&header.encode())?;
    let mut buf = Vec::with_capacity(8 * stream.samples.len().min(1 << 16));
    for chunk in stream.samples.chunks(1 << 16) {
        buf.clear();
        for s in chunk {
            buf.extend_from_slice(&s.re.to_le_bytes());
            buf.extend_from_slice(&s.im.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

/// Incremental reader over one or more QPIQ records.
pub struct QpiqReader<R> {
    inner: R,
    current: Option<QpiqHeader>,
    remaining: u64,
}

impl<R: Read> QpiqReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, current: None, remaining: 0 }
    }

    /// Advances to the next record. Returns `None` at a clean end of input;
    /// any samples left in the current record are skipped.
    pub fn next_header(&mut self) -> Result<Option<QpiqHeader>> {
        while self.remaining > 0 {
            let n = self.remaining.min(1 << 16) as usize;
            let mut skip = vec![0u8; 8 * n];
            self.inner.read_exact(&mut skip)?;
            self.remaining -= n as u64;
        }
        let mut buf = [0u8; HEADER_LEN];
        let mut filled = 0;
        while filled < HEADER_LEN {
            match self.inner.read(&mut buf[filled..]) {
                Ok(0) if filled == 0 => {
                    self.current = None;
                    return Ok(None);
                }
                Ok(0) => return Err(Error::Format("truncated QPIQ header".into())),
                Ok(n) => filled += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        let header = QpiqHeader::decode(&buf)?;
        self.current = Some(header);
        self.remaining = header.count;
        Ok(Some(header))
    }

    pub fn header(&self) -> Option<QpiqHeader> {
        self.current
    }

    /// Reads up to `max` samples of the current record; empty when exhausted.
    pub fn read_chunk(&mut self, max: usize) -> Result<Vec<Complex32>> {
        let n = self.remaining.min(max as u64) as usize;
        let mut raw = vec![0u8; 8 * n];
        self.inner.read_exact(&mut raw).map_err(|e| {
            if e.kind() == io::ErrorKind::UnexpectedEof {
                Error::Format("truncated QPIQ payload".into())
            } else {
                e.into()
            }
        })?;
        self.remaining -= n as u64;
        Ok(raw
            .chunks_exact(8)
            .map(|c| {
                Complex32::new(
                    f32::from_le_bytes(c[..4].try_into().unwrap()),
                    f32::from_le_bytes(c[4..].try_into().unwrap()),
                )
            })
            .collect())
    }

    /// Reads the rest of the current record.
    pub fn read_stream(&mut self) -> Result<IqStream> {
        let header = self.current.ok_or_else(|| Error::Format("no current QPIQ record".into()))?;
        let samples = self.read_chunk(self.remaining as usize)?;
        IqStream::new(header.start_time_ns, header.bin_width_ns, samples)
    }
}

/// Reads a single-record QPIQ input.
pub fn read_qpiq<R: Read>(r: R) -> Result<IqStream> {
    let mut reader = QpiqReader::new(r);
    reader
        .next_header()?
        .ok_or_else(|| Error::Format("empty QPIQ input".into()))?;
    reader.read_stream()
}

/// Reads every record of a multi-segment QPIQ input.
pub fn read_qpiq_segments<R: Read>(r: R) -> Result<Vec<IqStream>> {
    let mut reader = QpiqReader::new(r);
    let mut out = Vec::new();
    while reader.next_header()?.is_some() {
        out.push(reader.read_stream()?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stream(n: usize) -> IqStream {
        let samples = (0..n).map(|i| Complex32::new(i as f32 * 0.5, -(i as f32))).collect();
        IqStream::new(123_456, 1000, samples).unwrap()
    }

    #[test]
    fn header_layout_is_fixed() {
        let mut buf = Vec::new();
        write_qpiq(&mut buf, &stream(2)).unwrap();
        assert_eq!(buf.len(), 26 + 16);
        assert_eq!(&buf[..4], b"QPIQ");
        assert_eq!(&buf[4..6], &[1, 0]);
        assert_eq!(&buf[6..14], &123_456u64.to_le_bytes());
        assert_eq!(&buf[14..18], &1000u32.to_le_bytes());
        assert_eq!(&buf[18..26], &2u64.to_le_bytes());
        assert_eq!(&buf[34..38], &0.5f32.to_le_bytes());
    }

    #[test]
    fn rejects_corrupt_input() {
        let mut buf = Vec::new();
        write_qpiq(&mut buf, &stream(4)).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_qpiq(&bad[..]).is_err());
        assert!(read_qpiq(&buf[..buf.len() - 3]).is_err());
        assert!(read_qpiq(&buf[..10]).is_err());
        assert!(read_qpiq(&[][..]).is_err());
    }

    #[test]
    fn multi_segment_and_incremental() {
        let mut buf = Vec::new();
        write_qpiq(&mut buf, &stream(5)).unwrap();
        write_qpiq(&mut buf, &stream(3)).unwrap();
        let segs = read_qpiq_segments(&buf[..]).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[1], stream(3));

        let mut r = QpiqReader::new(&buf[..]);
        r.next_header().unwrap().unwrap();
        assert_eq!(r.read_chunk(2).unwrap().len(), 2);
        // Skips the rest of the first record.
        let h = r.next_header().unwrap().unwrap();
        assert_eq!(h.count, 3);
        assert_eq!(r.read_chunk(10).unwrap().len(), 3);
        assert!(r.read_chunk(10).unwrap().is_empty());
        assert!(r.next_header().unwrap().is_none());
    }

    proptest! {
        #[test]
        fn round_trip(start in any::<u64>(), bw in 1u32.., data in proptest::collection::vec((-1e3f32..1e3, -1e3f32..1e3), 0..200)) {
            let s = IqStream::new(start, bw, data.iter().map(|&(i, q)| Complex32::new(i, q)).collect()).unwrap();
            let mut buf = Vec::new();
            write_qpiq(&mut buf, &s).unwrap();
            prop_assert_eq!(read_qpiq(&buf[..]).unwrap(), s);
        }
    }
}
