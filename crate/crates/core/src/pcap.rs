//! Classic libpcap container reader and writer (Ethernet link type only).

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::packet::frame_header_len;

pub const MAGIC_USEC: u32 = 0xa1b2_c3d4;
pub const MAGIC_NSEC: u32 = 0xa1b2_3c4d;
pub const LINKTYPE_ETHERNET: u32 = 1;
pub const DEFAULT_SNAPLEN: u32 = 65535;
pub const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum PcapError {
    #[error("unsupported capture format (magic {0:#010x}); convert pcapng to classic pcap first")]
    UnsupportedFormat(u32),
    #[error("unsupported link type {0}; only Ethernet (1) is accepted")]
    UnsupportedLinktype(u32),
    #[error("file truncated in record starting at byte offset {offset}")]
    Truncated { offset: u64 },
    #[error("record {index} has timestamp {ts_us} us, earlier than its predecessor")]
    OutOfOrder { index: usize, ts_us: u64 },
    #[error("record {index} claims incl_len {incl_len} above snaplen {snaplen}")]
    RecordTooLarge {
        index: usize,
        incl_len: u32,
        snaplen: u32,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One record as stored in the file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PcapRecord {
    pub ts_sec: u32,
    /// Microseconds or nanoseconds depending on the file magic.
    pub ts_frac: u32,
    pub incl_len: u32,
    pub orig_len: u32,
    pub data: Vec<u8>,
}

/// A decoded frame with its timestamp normalized to microseconds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub ts_us: u64,
    pub data: Vec<u8>,
    pub orig_len: u32,
}

#[derive(Debug, Clone, Copy)]
struct Header {
    swapped: bool,
    nanos: bool,
    snaplen: u32,
}

/// Streaming reader over a classic pcap source.
pub struct PcapReader<R> {
    inner: R,
    header: Header,
    offset: u64,
    index: usize,
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

impl<R: Read> PcapReader<R> {
    pub fn new(mut inner: R) -> Result<Self, PcapError> {
        let mut gh = [0u8; GLOBAL_HEADER_LEN];
        let n = read_full(&mut inner, &mut gh)?;
        if n < 4 {
            return Err(PcapError::UnsupportedFormat(0));
        }
        let magic = u32::from_le_bytes([gh[0], gh[1], gh[2], gh[3]]);
        let (swapped, nanos) = match magic {
            MAGIC_USEC => (false, false),
            MAGIC_NSEC => (false, true),
            m if m == MAGIC_USEC.swap_bytes() => (true, false),
            m if m == MAGIC_NSEC.swap_bytes() => (true, true),
            m => return Err(PcapError::UnsupportedFormat(m)),
        };
        if n < GLOBAL_HEADER_LEN {
            return Err(PcapError::Truncated { offset: 0 });
        }
        let rd = |at: usize| {
            let v = u32::from_le_bytes([gh[at], gh[at + 1], gh[at + 2], gh[at + 3]]);
            if swapped {
                v.swap_bytes()
            } else {
                v
            }
        };
        let snaplen = rd(16);
        let linktype = rd(20);
        if linktype != LINKTYPE_ETHERNET {
            return Err(PcapError::UnsupportedLinktype(linktype));
        }
        Ok(Self {
            inner,
            header: Header {
                swapped,
                nanos,
                snaplen,
            },
            offset: GLOBAL_HEADER_LEN as u64,
            index: 0,
        })
    }

    pub fn snaplen(&self) -> u32 {
        self.header.snaplen
    }

    fn u32_at(&self, b: &[u8], at: usize) -> u32 {
        let v = u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]]);
        if self.header.swapped {
            v.swap_bytes()
        } else {
            v
        }
    }

    /// Next raw record, `None` at a clean end of file.
    pub fn next_record(&mut self) -> Result<Option<PcapRecord>, PcapError> {
        let start = self.offset;
        let mut rh = [0u8; RECORD_HEADER_LEN];
        match read_full(&mut self.inner, &mut rh)? {
            0 => return Ok(None),
            RECORD_HEADER_LEN => {}
            _ => return Err(PcapError::Truncated { offset: start }),
        }
        let incl_len = self.u32_at(&rh, 8);
        // Some writers store snaplen 0; only reject absurd lengths.
        let limit = self.header.snaplen.max(DEFAULT_SNAPLEN).max(262_144);
        if incl_len > limit {
            return Err(PcapError::RecordTooLarge {
                index: self.index,
                incl_len,
                snaplen: self.header.snaplen,
            });
        }
        let mut data = vec![0u8; incl_len as usize];
        if read_full(&mut self.inner, &mut data)? < data.len() {
            return Err(PcapError::Truncated { offset: start });
        }
        self.offset += (RECORD_HEADER_LEN + data.len()) as u64;
        self.index += 1;
        Ok(Some(PcapRecord {
            ts_sec: self.u32_at(&rh, 0),
            ts_frac: self.u32_at(&rh, 4),
            incl_len,
            orig_len: self.u32_at(&rh, 12),
            data,
        }))
    }

    pub fn next_frame(&mut self) -> Result<Option<Frame>, PcapError> {
        let nanos = self.header.nanos;
        Ok(self.next_record()?.map(|r| {
            let frac_us = if nanos { r.ts_frac / 1000 } else { r.ts_frac };
            Frame {
                ts_us: u64::from(r.ts_sec) * 1_000_000 + u64::from(frac_us),
                orig_len: r.orig_len,
                data: r.data,
            }
        }))
    }
}

impl<R: Read> Iterator for PcapReader<R> {
    type Item = Result<Frame, PcapError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_frame().transpose()
    }
}

/// Reads every frame of a classic pcap stream, timestamps in microseconds.
pub fn read_pcap<R: Read>(source: R) -> Result<Vec<Frame>, PcapError> {
    PcapReader::new(source)?.collect()
}

/// Streaming writer: microsecond magic, little-endian, version 2.4, Ethernet.
pub struct PcapWriter<W> {
    inner: W,
    snaplen: u32,
    truncate_payload: bool,
    last_ts: Option<u64>,
    index: usize,
}

impl<W: Write> PcapWriter<W> {
    pub fn new(mut inner: W, snaplen: u32, truncate_payload: bool) -> Result<Self, PcapError> {
        let mut gh = Vec::with_capacity(GLOBAL_HEADER_LEN);
        gh.extend_from_slice(&MAGIC_USEC.to_le_bytes());
        gh.extend_from_slice(&2u16.to_le_bytes());
        gh.extend_from_slice(&4u16.to_le_bytes());
        gh.extend_from_slice(&0i32.to_le_bytes());
        gh.extend_from_slice(&0u32.to_le_bytes());
        gh.extend_from_slice(&snaplen.to_le_bytes());
        gh.extend_from_slice(&LINKTYPE_ETHERNET.to_le_bytes());
        inner.write_all(&gh)?;
        Ok(Self {
            inner,
            snaplen,
            truncate_payload,
            last_ts: None,
            index: 0,
        })
    }

    pub fn write_frame(&mut self, ts_us: u64, frame: &[u8]) -> Result<(), PcapError> {
        if self.last_ts.is_some_and(|t| ts_us < t) {
            return Err(PcapError::OutOfOrder {
                index: self.index,
                ts_us,
            });
        }
        let mut incl = frame.len().min(self.snaplen as usize);
        if self.truncate_payload {
            if let Some(h) = frame_header_len(frame) {
                incl = incl.min(h);
            }
        }
        let mut rh = Vec::with_capacity(RECORD_HEADER_LEN);
        rh.extend_from_slice(&((ts_us / 1_000_000) as u32).to_le_bytes());
        rh.extend_from_slice(&((ts_us % 1_000_000) as u32).to_le_bytes());
        rh.extend_from_slice(&(incl as u32).to_le_bytes());
        rh.extend_from_slice(&(frame.len() as u32).to_le_bytes());
        self.inner.write_all(&rh)?;
        self.inner.write_all(&frame[..incl])?;
        self.last_ts = Some(ts_us);
        self.index += 1;
        Ok(())
    }

    pub fn into_inner(mut self) -> Result<W, PcapError> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Serializes `(ts_us, frame)` records as a complete pcap byte stream.
pub fn write_pcap<'a, I>(
    records: I,
    snaplen: u32,
    truncate_payload: bool,
) -> Result<Vec<u8>, PcapError>
where
    I: IntoIterator<Item = (u64, &'a [u8])>,
{
    let mut w = PcapWriter::new(Vec::new(), snaplen, truncate_payload)?;
    for (ts, f) in records {
        w.write_frame(ts, f)?;
    }
    w.into_inner()
}
