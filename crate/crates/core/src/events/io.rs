//! Event file formats.
//!
//! CSV: header-free `t_us,x,y,p` lines, `p` in {-1, 1}; sensor geometry is
//! supplied by the caller.
//!
//! Binary (`EVT0`, little-endian): magic, u16 width, u16 height, u64 count,
//! then `count` records of {u64 t, u16 x, u16 y, u8 p} with p = 1 for
//! positive and 0 for negative polarity.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{validate, Event, EventStream};
use crate::error::{Error, Result};

pub const EVT_MAGIC: &[u8; 4] = b"EVT0";
const HEADER_LEN: usize = 4 + 2 + 2 + 8;
const RECORD_LEN: usize = 8 + 2 + 2 + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    Csv,
    Bin,
}

impl EventFormat {
    /// Guess from the file extension: `.csv` or `.bin`/`.evt`.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(Self::Csv),
            "bin" | "evt" => Some(Self::Bin),
            _ => None,
        }
    }
}

/// Read a stream. CSV needs `geometry = Some((width, height))`; for binary
/// files a supplied geometry must match the header.
pub fn read_events(path: impl AsRef<Path>, format: EventFormat, geometry: Option<(u16, u16)>) -> Result<EventStream> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        EventFormat::Csv => {
            let (w, h) = geometry.ok_or_else(|| {
                Error::domain(format!(
                    "{}: CSV events need an explicit sensor geometry",
                    path.display()
                ))
            })?;
            let text = std::str::from_utf8(&bytes)
                .map_err(|e| Error::format(path, e.valid_up_to() as u64, "invalid UTF-8"))?;
            parse_csv(text, w, h, path)
        }
        EventFormat::Bin => {
            let s = decode_bin(&bytes, path)?;
            if let Some((w, h)) = geometry {
                if (w, h) != (s.width(), s.height()) {
                    return Err(Error::domain(format!(
                        "{}: header geometry {}x{} differs from requested {w}x{h}",
                        path.display(),
                        s.width(),
                        s.height()
                    )));
                }
            }
            Ok(s)
        }
    }
}

pub fn write_events(stream: &EventStream, path: impl AsRef<Path>, format: EventFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        EventFormat::Csv => write_csv_string(stream).into_bytes(),
        EventFormat::Bin => encode_bin(stream)?,
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn parse_csv(text: &str, width: u16, height: u16, origin: &Path) -> Result<EventStream> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidDimension(format!("{width}x{height} sensor")));
    }
    let mut events = Vec::new();
    let mut prev = 0u64;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let perr = |msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line: lineno + 1,
            msg,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(perr(format!("expected 4 fields t,x,y,p, found {}", fields.len())));
        }
        let t: u64 = fields[0]
            .parse()
            .map_err(|_| perr(format!("bad timestamp {:?}", fields[0])))?;
        let x: u16 = fields[1].parse().map_err(|_| perr(format!("bad x {:?}", fields[1])))?;
        let y: u16 = fields[2].parse().map_err(|_| perr(format!("bad y {:?}", fields[2])))?;
        let p: i8 = match fields[3] {
            "1" | "+1" => 1,
            "-1" => -1,
            other => return Err(perr(format!("polarity {other:?} not in {{-1, 1}}"))),
        };
        let e = Event::new(t, x, y, p);
        validate(&e, events.len() + 1, prev, width, height)?;
        prev = t;
        events.push(e);
    }
    Ok(EventStream { width, height, events })
}

pub fn write_csv_string(stream: &EventStream) -> String {
    let mut out = String::with_capacity(stream.len() * 16);
    for e in stream.events() {
        writeln!(out, "{},{},{},{}", e.t, e.x, e.y, e.p).unwrap();
    }
    out
}

pub fn encode_bin(stream: &EventStream) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * stream.len());
    out.extend_from_slice(EVT_MAGIC);
    out.extend_from_slice(&stream.width().to_le_bytes());
    out.extend_from_slice(&stream.height().to_le_bytes());
    out.extend_from_slice(&(stream.len() as u64).to_le_bytes());
    for e in stream.events() {
        out.extend_from_slice(&e.t.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(u8::from(e.p > 0));
    }
    Ok(out)
}

pub fn decode_bin(bytes: &[u8], origin: &Path) -> Result<EventStream> {
    let err = |offset: usize, msg: String| Error::format(origin, offset as u64, msg);
    if bytes.len() < 4 {
        return Err(err(bytes.len(), "truncated magic".into()));
    }
    if &bytes[..4] != EVT_MAGIC {
        return Err(err(0, "bad magic, expected \"EVT0\"".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(err(bytes.len(), "truncated header".into()));
    }
    let width = u16::from_le_bytes([bytes[4], bytes[5]]);
    let height = u16::from_le_bytes([bytes[6], bytes[7]]);
    if width == 0 || height == 0 {
        return Err(err(4, format!("zero sensor extent {width}x{height}")));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let need = (count as u128) * RECORD_LEN as u128 + HEADER_LEN as u128;
    if (bytes.len() as u128) < need {
        return Err(err(
            bytes.len(),
            format!("truncated payload: header declares {count} records"),
        ));
    }
    if (bytes.len() as u128) > need {
        return Err(err(need as usize, "trailing bytes after last record".into()));
    }
    let mut events = Vec::with_capacity(count as usize);
    let mut prev = 0u64;
    for (i, rec) in bytes[HEADER_LEN..].chunks_exact(RECORD_LEN).enumerate() {
        let offset = HEADER_LEN + i * RECORD_LEN;
        let p = match rec[12] {
            1 => 1,
            0 => -1,
            other => return Err(err(offset + 12, format!("polarity byte {other} not in {{0, 1}}"))),
        };
        let e = Event {
            t: u64::from_le_bytes(rec[0..8].try_into().unwrap()),
            x: u16::from_le_bytes([rec[8], rec[9]]),
            y: u16::from_le_bytes([rec[10], rec[11]]),
            p,
        };
        validate(&e, i + 1, prev, width, height)?;
        prev = e.t;
        events.push(e);
    }
    Ok(EventStream { width, height, events })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn origin() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn csv_two_events() {
        let s = parse_csv("100,3,4,1\n200,3,4,-1", 8, 8, origin()).unwrap();
        assert_eq!(s.events(), &[Event::new(100, 3, 4, 1), Event::new(200, 3, 4, -1)]);
    }

    #[test]
    fn csv_out_of_order_is_record_two() {
        let e = parse_csv("200,3,4,1\n100,3,4,1", 8, 8, origin()).unwrap_err();
        assert!(matches!(e, Error::Record { record: 2, .. }), "{e}");
    }

    #[test]
    fn csv_out_of_bounds_is_record_one() {
        let e = parse_csv("100,9,4,1", 8, 8, origin()).unwrap_err();
        assert!(matches!(e, Error::Record { record: 1, .. }), "{e}");
    }

    #[test]
    fn csv_garbage_names_line() {
        let e = parse_csv("100,1,1,1\n\nabc,1,1,1", 8, 8, origin()).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
    }

    #[test]
    fn bin_round_trip_keeps_negative_polarity() {
        let s = parse_csv("100,3,4,1\n200,3,4,-1", 8, 8, origin()).unwrap();
        let back = decode_bin(&encode_bin(&s).unwrap(), origin()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.events()[1].p, -1);
    }

    #[test]
    fn empty_stream_keeps_geometry() {
        let s = EventStream::empty(5, 7).unwrap();
        let back = decode_bin(&encode_bin(&s).unwrap(), origin()).unwrap();
        assert_eq!((back.width(), back.height(), back.len()), (5, 7, 0));
    }

    #[test]
    fn bin_truncation_and_magic() {
        let s = parse_csv("100,3,4,1", 8, 8, origin()).unwrap();
        let bytes = encode_bin(&s).unwrap();
        assert!(matches!(
            decode_bin(&bytes[..bytes.len() - 1], origin()),
            Err(Error::Format { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            decode_bin(&bad, origin()),
            Err(Error::Format { offset: 0, .. })
        ));
        let mut badp = bytes;
        *badp.last_mut().unwrap() = 7;
        assert!(matches!(
            decode_bin(&badp, origin()),
            Err(Error::Format { offset: 28, .. })
        ));
    }

    #[test]
    fn extension_guess() {
        assert_eq!(EventFormat::from_path(Path::new("a.CSV")), Some(EventFormat::Csv));
        assert_eq!(EventFormat::from_path(Path::new("a.bin")), Some(EventFormat::Bin));
        assert_eq!(EventFormat::from_path(Path::new("a.txt")), None);
    }
}
