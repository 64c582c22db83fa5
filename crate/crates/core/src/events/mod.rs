//! Event data model and time windowing.

mod io;

pub use io::{decode_bin, encode_bin, parse_csv, read_events, write_csv_string, write_events, EventFormat};

use crate::error::{Error, Result};

/// One brightness-change record. `t` is in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    /// +1 brighter, -1 darker.
    pub p: i8,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, p: i8) -> Self {
        Self { t, x, y, p }
    }
}

/// A validated event sequence: timestamps non-decreasing, coordinates in
/// bounds, polarity in {-1, +1}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    width: u16,
    height: u16,
    events: Vec<Event>,
}

impl EventStream {
    pub fn new(width: u16, height: u16, events: Vec<Event>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimension(format!("{width}x{height} sensor")));
        }
        let mut prev = 0u64;
        for (i, e) in events.iter().enumerate() {
            validate(e, i + 1, prev, width, height)?;
            prev = e.t;
        }
        Ok(Self { width, height, events })
    }

    pub fn empty(width: u16, height: u16) -> Result<Self> {
        Self::new(width, height, Vec::new())
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// First and last timestamps, if any.
    pub fn time_span(&self) -> Option<(u64, u64)> {
        Some((self.events.first()?.t, self.events.last()?.t))
    }

    /// Events with `t0 <= t < t1`, order preserved.
    pub fn slice_window(&self, t0: u64, t1: u64) -> Result<EventStream> {
        if t0 > t1 {
            return Err(Error::InvalidWindow { t0, t1 });
        }
        let lo = self.events.partition_point(|e| e.t < t0);
        let hi = self.events.partition_point(|e| e.t < t1);
        Ok(EventStream {
            width: self.width,
            height: self.height,
            events: self.events[lo..hi.max(lo)].to_vec(),
        })
    }
}

pub(crate) fn validate(e: &Event, record: usize, prev_t: u64, width: u16, height: u16) -> Result<()> {
    if e.t < prev_t {
        return Err(Error::Record {
            record,
            msg: format!("timestamp {} precedes previous {}", e.t, prev_t),
        });
    }
    if e.x >= width || e.y >= height {
        return Err(Error::Record {
            record,
            msg: format!("coordinate ({}, {}) outside {}x{} sensor", e.x, e.y, width, height),
        });
    }
    if e.p != 1 && e.p != -1 {
        return Err(Error::Record {
            record,
            msg: format!("polarity {} not in {{-1, 1}}", e.p),
        });
    }
    Ok(())
}
