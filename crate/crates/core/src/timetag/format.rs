//! Binary stream format (all little-endian):
//!
//! ```text
//! magic "QTT1" | version u16 | flags u16 (bit 0: implicit sync)
//! rep_rate u64 (mHz) | t0 u64 (ps) | pulse_count u64 | sync_divider u32
//! role_count u8 | role_count × (role u8, channel u8)
//! tag_count u64
//! tag_count × (channel u8, time u64 ps)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use super::{Role, StreamHeader, TimeTag, TimeTagStream, FORMAT_VERSION, MAGIC};
use crate::error::{Error, Result};

const RECORD_BYTES: usize = 9;
const FLAG_IMPLICIT_SYNC: u16 = 1;
const READ_BLOCK_RECORDS: usize = 1 << 14;

fn encode_header(header: &StreamHeader) -> Vec<u8> {
    let mut out = Vec::with_capacity(48);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&header.version.to_le_bytes());
    let flags = if header.implicit_sync {
        FLAG_IMPLICIT_SYNC
    } else {
        0
    };
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&header.rep_rate_mhz.to_le_bytes());
    out.extend_from_slice(&header.t0_ps.to_le_bytes());
    out.extend_from_slice(&header.pulse_count.to_le_bytes());
    out.extend_from_slice(&header.sync_divider.to_le_bytes());
    out.push(header.channels.len() as u8);
    for (role, ch) in &header.channels {
        out.push(role.code());
        out.push(*ch);
    }
    out.extend_from_slice(&header.tag_count.to_le_bytes());
    out
}

fn read_array<const N: usize, R: Read>(reader: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    reader.read_exact(&mut buf)?;
    Ok(buf)
}

fn decode_header<R: Read>(reader: &mut R) -> Result<StreamHeader> {
    let magic: [u8; 4] = read_array(reader)?;
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = u16::from_le_bytes(read_array(reader)?);
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let flags = u16::from_le_bytes(read_array(reader)?);
    let rep_rate_mhz = u64::from_le_bytes(read_array(reader)?);
    let t0_ps = u64::from_le_bytes(read_array(reader)?);
    let pulse_count = u64::from_le_bytes(read_array(reader)?);
    let sync_divider = u32::from_le_bytes(read_array(reader)?);
    let [role_count] = read_array::<1, _>(reader)?;
    let mut channels = Vec::with_capacity(role_count as usize);
    for _ in 0..role_count {
        let [role, ch] = read_array::<2, _>(reader)?;
        channels.push((Role::from_code(role)?, ch));
    }
    let tag_count = u64::from_le_bytes(read_array(reader)?);
    let header = StreamHeader {
        version,
        rep_rate_mhz,
        t0_ps,
        pulse_count,
        sync_divider,
        implicit_sync: flags & FLAG_IMPLICIT_SYNC != 0,
        channels,
        tag_count,
    };
    header.validate()?;
    Ok(header)
}

/// Streaming writer; the tag count is patched into the header on `finish`.
pub struct StreamWriter<W: Write + Seek> {
    inner: W,
    header: StreamHeader,
    roles: [Option<Role>; 256],
    count_offset: u64,
    written: u64,
    prev_ps: u64,
}

impl<W: Write + Seek> StreamWriter<W> {
    pub fn new(mut inner: W, header: &StreamHeader) -> Result<Self> {
        header.validate()?;
        let mut header = header.clone();
        header.tag_count = 0;
        let start = inner.stream_position()?;
        let bytes = encode_header(&header);
        inner.write_all(&bytes)?;
        Ok(Self {
            roles: header.role_table(),
            count_offset: start + bytes.len() as u64 - 8,
            inner,
            header,
            written: 0,
            prev_ps: 0,
        })
    }

    pub fn push(&mut self, tag: TimeTag) -> Result<()> {
        if self.roles[tag.channel as usize].is_none() {
            return Err(Error::UnknownChannel(tag.channel));
        }
        if tag.time_ps < self.prev_ps {
            return Err(Error::NonMonotoneTime {
                index: self.written,
                prev_ps: self.prev_ps,
                time_ps: tag.time_ps,
            });
        }
        let mut rec = [0u8; RECORD_BYTES];
        rec[0] = tag.channel;
        rec[1..].copy_from_slice(&tag.time_ps.to_le_bytes());
        self.inner.write_all(&rec)?;
        self.prev_ps = tag.time_ps;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(StreamHeader, W)> {
        let end = self.inner.stream_position()?;
        self.inner.seek(SeekFrom::Start(self.count_offset))?;
        self.inner.write_all(&self.written.to_le_bytes())?;
        self.inner.seek(SeekFrom::Start(end))?;
        self.inner.flush()?;
        self.header.tag_count = self.written;
        Ok((self.header, self.inner))
    }
}

pub fn write_stream<P: AsRef<Path>, I: IntoIterator<Item = TimeTag>>(
    path: P,
    header: &StreamHeader,
    tags: I,
) -> Result<StreamHeader> {
    let file = BufWriter::with_capacity(1 << 20, File::create(path)?);
    let mut writer = StreamWriter::new(file, header)?;
    for tag in tags {
        writer.push(tag)?;
    }
    let (header, inner) = writer.finish()?;
    inner.into_inner().map_err(|e| e.into_error())?;
    Ok(header)
}

/// Validating record iterator over a binary stream.
pub struct StreamReader<R: Read> {
    inner: R,
    header: StreamHeader,
    roles: [Option<Role>; 256],
    buf: Vec<u8>,
    pos: usize,
    read: u64,
    prev_ps: u64,
    failed: bool,
}

impl<R: Read> StreamReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let header = decode_header(&mut inner)?;
        Ok(Self {
            roles: header.role_table(),
            inner,
            header,
            buf: Vec::new(),
            pos: 0,
            read: 0,
            prev_ps: 0,
            failed: false,
        })
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }

    fn refill(&mut self) -> Result<()> {
        let remaining = (self.header.tag_count - self.read) as usize;
        let want = remaining.min(READ_BLOCK_RECORDS) * RECORD_BYTES;
        self.buf.resize(want, 0);
        let mut filled = 0;
        while filled < want {
            let n = self.inner.read(&mut self.buf[filled..])?;
            if n == 0 {
                break;
            }
            filled += n;
        }
        if filled < want {
            return Err(Error::TagCountMismatch {
                declared: self.header.tag_count,
                found: self.read + (filled / RECORD_BYTES) as u64,
            });
        }
        self.pos = 0;
        Ok(())
    }

    fn next_tag(&mut self) -> Result<Option<TimeTag>> {
        if self.read == self.header.tag_count {
            let mut probe = [0u8; 1];
            if self.inner.read(&mut probe)? != 0 {
                return Err(Error::TagCountMismatch {
                    declared: self.header.tag_count,
                    found: self.read + 1,
                });
            }
            return Ok(None);
        }
        if self.pos >= self.buf.len() {
            self.refill()?;
        }
        let rec = &self.buf[self.pos..self.pos + RECORD_BYTES];
        let channel = rec[0];
        let time_ps = u64::from_le_bytes(rec[1..].try_into().expect("record width"));
        self.pos += RECORD_BYTES;
        if self.roles[channel as usize].is_none() {
            return Err(Error::UnknownChannel(channel));
        }
        if time_ps < self.prev_ps {
            return Err(Error::NonMonotoneTime {
                index: self.read,
                prev_ps: self.prev_ps,
                time_ps,
            });
        }
        self.prev_ps = time_ps;
        self.read += 1;
        Ok(Some(TimeTag { channel, time_ps }))
    }
}

impl<R: Read> Iterator for StreamReader<R> {
    type Item = Result<TimeTag>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        match self.next_tag() {
            Ok(Some(tag)) => Some(Ok(tag)),
            Ok(None) => {
                self.failed = true;
                None
            }
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}

pub fn read_stream<P: AsRef<Path>>(path: P) -> Result<StreamReader<BufReader<File>>> {
    StreamReader::new(BufReader::with_capacity(1 << 20, File::open(path)?))
}

pub fn read_stream_all<P: AsRef<Path>>(path: P) -> Result<TimeTagStream> {
    let reader = read_stream(path)?;
    let header = reader.header().clone();
    let tags = reader.collect::<Result<Vec<_>>>()?;
    Ok(TimeTagStream { header, tags })
}

/// CSV export with columns `channel,time_ps`.
pub fn write_csv<W: Write, I: IntoIterator<Item = TimeTag>>(writer: W, tags: I) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for tag in tags {
        w.serialize(tag).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(reader: R) -> Result<Vec<TimeTag>> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut tags = Vec::new();
    let mut prev = 0;
    for (i, rec) in r.deserialize::<TimeTag>().enumerate() {
        let tag = rec.map_err(csv_error)?;
        if tag.time_ps < prev {
            return Err(Error::NonMonotoneTime {
                index: i as u64,
                prev_ps: prev,
                time_ps: tag.time_ps,
            });
        }
        prev = tag.time_ps;
        tags.push(tag);
    }
    Ok(tags)
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidParameter(format!("CSV: {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::io::Cursor;

    fn header() -> StreamHeader {
        let mut h = StreamHeader::new(75.84e6).unwrap();
        h.t0_ps = 100_000;
        h.pulse_count = 1234;
        h
    }

    fn random_tags(n: usize, seed: u64) -> Vec<TimeTag> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = 0u64;
        (0..n)
            .map(|_| {
                t += rng.random_range(0..5000u64);
                TimeTag::new(rng.random_range(0..5u8), t)
            })
            .collect()
    }

    fn encode(h: &StreamHeader, tags: &[TimeTag]) -> Vec<u8> {
        let mut w = StreamWriter::new(Cursor::new(Vec::new()), h).unwrap();
        for t in tags {
            w.push(*t).unwrap();
        }
        w.finish().unwrap().1.into_inner()
    }

    #[test]
    fn header_layout_is_fixed() {
        let bytes = encode(&header(), &[TimeTag::new(1, 0x0102)]);
        assert_eq!(&bytes[..4], b"QTT1");
        assert_eq!(bytes[4..6], [1, 0]);
        assert_eq!(
            u64::from_le_bytes(bytes[8..16].try_into().unwrap()),
            75_840_000_000
        );
        let count_at = 4 + 2 + 2 + 8 + 8 + 8 + 4 + 1 + 10;
        assert_eq!(
            u64::from_le_bytes(bytes[count_at..count_at + 8].try_into().unwrap()),
            1
        );
        assert_eq!(bytes.len(), count_at + 8 + 9);
        assert_eq!(bytes[count_at + 8..], [1, 2, 1, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn round_trip_million_tags() {
        let tags = random_tags(1_000_000, 1);
        let bytes = encode(&header(), &tags);
        let reader = StreamReader::new(Cursor::new(&bytes)).unwrap();
        assert_eq!(reader.header().tag_count, tags.len() as u64);
        assert_eq!(reader.header().pulse_count, 1234);
        let back: Vec<_> = reader.collect::<Result<_>>().unwrap();
        assert_eq!(back, tags);
        assert_eq!(encode(&header(), &back), bytes);
    }

    #[test]
    fn empty_stream() {
        let bytes = encode(&header(), &[]);
        let reader = StreamReader::new(Cursor::new(&bytes)).unwrap();
        assert_eq!(reader.header().tag_count, 0);
        assert_eq!(reader.count(), 0);
    }

    #[test]
    fn corrupted_inputs() {
        let mut bytes = encode(&header(), &random_tags(10, 2));
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            StreamReader::new(Cursor::new(&bad_magic)),
            Err(Error::BadMagic(_))
        ));

        let mut bad_version = bytes.clone();
        bad_version[4] = 7;
        assert!(matches!(
            StreamReader::new(Cursor::new(&bad_version)),
            Err(Error::UnsupportedVersion(7))
        ));

        let truncated = &bytes[..bytes.len() - 4];
        let res: Result<Vec<_>> = StreamReader::new(Cursor::new(truncated)).unwrap().collect();
        assert!(matches!(
            res,
            Err(Error::TagCountMismatch {
                declared: 10,
                found: 9
            })
        ));

        let last = bytes.len() - 9;
        bytes[last] = 42;
        let res: Result<Vec<_>> = StreamReader::new(Cursor::new(&bytes)).unwrap().collect();
        assert!(matches!(res, Err(Error::UnknownChannel(42))));
    }

    #[test]
    fn non_monotone_rejected() {
        let mut w = StreamWriter::new(Cursor::new(Vec::new()), &header()).unwrap();
        w.push(TimeTag::new(1, 10)).unwrap();
        assert!(matches!(
            w.push(TimeTag::new(1, 9)),
            Err(Error::NonMonotoneTime { .. })
        ));

        let mut bytes = encode(&header(), &[TimeTag::new(1, 10), TimeTag::new(1, 20)]);
        let n = bytes.len();
        bytes[n - 8] = 5;
        let res: Result<Vec<_>> = StreamReader::new(Cursor::new(&bytes)).unwrap().collect();
        assert!(matches!(res, Err(Error::NonMonotoneTime { index: 1, .. })));
    }

    #[test]
    fn csv_round_trip() {
        let tags = random_tags(1000, 3);
        let mut out = Vec::new();
        write_csv(&mut out, tags.iter().copied()).unwrap();
        assert!(out.starts_with(b"channel,time_ps\n"));
        assert_eq!(read_csv(Cursor::new(out)).unwrap(), tags);
        assert!(read_csv(Cursor::new("channel,time_ps\n1,5\n1,4\n")).is_err());
    }
}
