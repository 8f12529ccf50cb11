//! Emulated RS-232 capture module for a segment-multiplexed panel.
//!
//! Each panel snapshot is a 14-byte frame. Byte `k` (1-based) carries `k` in
//! its high nibble and data in its low nibble:
//!
//! ```text
//! byte 1      DC | minus | auto(0) | connected(1)
//! bytes 2..9  four digits, two bytes each: [dp a b c] [d e f g]
//! byte 10     V | Ω | diode | milli
//! byte 11     kilo | mega | reserved(0) | overload
//! bytes 12-13 range ordinal, high nibble then low nibble
//! byte 14     sum of low nibbles of bytes 1..13, mod 16
//! ```
//!
//! A set dp bit places the decimal point immediately left of that digit.
//! Overload shows as `[blank, 0, L, blank]`; a powered-off panel is all blank.

use std::time::Duration;

use thiserror::Error;

use crate::instrument::{
    CircuitStimulus, DialPosition, InstrumentError, MeterMode, MeterModel, MultimeterState,
    PanelReading, Prefix, MAX_COUNTS,
};

pub const FRAME_LEN: usize = 14;
const DIGITS: usize = 4;

/// Segment patterns a..g, bit 6 = a ... bit 0 = g.
const SEGMENTS: [(Glyph, u8); 12] = [
    (Glyph::Digit(0), 0b111_1110),
    (Glyph::Digit(1), 0b011_0000),
    (Glyph::Digit(2), 0b110_1101),
    (Glyph::Digit(3), 0b111_1001),
    (Glyph::Digit(4), 0b011_0011),
    (Glyph::Digit(5), 0b101_1011),
    (Glyph::Digit(6), 0b101_1111),
    (Glyph::Digit(7), 0b111_0000),
    (Glyph::Digit(8), 0b111_1111),
    (Glyph::Digit(9), 0b111_1011),
    (Glyph::Blank, 0b000_0000),
    (Glyph::L, 0b000_1110),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Glyph {
    Digit(u8),
    Blank,
    L,
}

/// One 7-segment digit plus its decimal point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentDigit {
    pub segments: u8,
    pub dp: bool,
}

impl SegmentDigit {
    pub fn new(glyph: Glyph, dp: bool) -> Self {
        let segments = SEGMENTS
            .iter()
            .find(|(g, _)| *g == glyph)
            .map(|(_, s)| *s)
            .expect("every glyph has a pattern");
        SegmentDigit { segments, dp }
    }

    pub fn glyph(&self) -> Option<Glyph> {
        SEGMENTS
            .iter()
            .find(|(_, s)| *s == self.segments)
            .map(|(g, _)| *g)
    }

    /// The two low nibbles `[dp a b c]`, `[d e f g]`.
    fn nibbles(&self) -> (u8, u8) {
        (
            (self.dp as u8) << 3 | (self.segments >> 4),
            self.segments & 0x0F,
        )
    }

    fn from_nibbles(first: u8, second: u8) -> Self {
        SegmentDigit {
            dp: first & 0x8 != 0,
            segments: (first & 0x7) << 4 | (second & 0xF),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("byte {position} carries index {found}")]
    BadIndex { position: usize, found: u8 },
    #[error("checksum {found:#x}, expected {expected:#x}")]
    BadChecksum { expected: u8, found: u8 },
    #[error("unreadable segment pattern {pattern:#09b} in digit {digit}")]
    BadSegment { digit: usize, pattern: u8 },
    #[error("inconsistent flags: {0}")]
    BadFlags(String),
}

impl FrameError {
    pub fn class(&self) -> &'static str {
        match self {
            FrameError::BadIndex { .. } => "BAD_INDEX",
            FrameError::BadChecksum { .. } => "BAD_CHECKSUM",
            FrameError::BadSegment { .. } => "BAD_SEGMENT",
            FrameError::BadFlags(_) => "BAD_FLAGS",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PanelFrame(pub [u8; FRAME_LEN]);

impl PanelFrame {
    pub fn as_bytes(&self) -> &[u8; FRAME_LEN] {
        &self.0
    }
}

fn checksum(low_nibbles: impl Iterator<Item = u8>) -> u8 {
    low_nibbles.fold(0u8, |acc, n| acc.wrapping_add(n & 0xF)) & 0xF
}

/// Where the decimal point sits (0-based digit index), if any.
fn dp_digit(range: DialPosition) -> Option<usize> {
    match range.spec().decimals {
        0 => None,
        d => Some(DIGITS - d as usize),
    }
}

/// (byte 10, byte 11 without overload) low nibbles for a range.
fn unit_flags(range: DialPosition) -> (u8, u8) {
    let spec = range.spec();
    let mode = match spec.mode {
        MeterMode::Dcv => 0b1000,
        MeterMode::Ohm => 0b0100,
        MeterMode::Diode => 0b1010,
    };
    let milli = (spec.prefix == Prefix::Milli) as u8;
    let prefix = match spec.prefix {
        Prefix::Kilo => 0b1000,
        Prefix::Mega => 0b0100,
        _ => 0,
    };
    (mode | milli, prefix)
}

pub fn encode_frame(r: &PanelReading) -> PanelFrame {
    let range = r.range();
    let mut glyphs = [Glyph::Blank; DIGITS];
    let mut dp = None;
    if r.is_overload() {
        glyphs = [Glyph::Blank, Glyph::Digit(0), Glyph::L, Glyph::Blank];
    } else if !r.is_blank() {
        let mut m = r.counts().unsigned_abs();
        for g in glyphs.iter_mut().rev() {
            *g = Glyph::Digit((m % 10) as u8);
            m /= 10;
        }
        dp = dp_digit(range);
    }

    let dc = range.mode() == MeterMode::Dcv && !r.is_blank();
    let minus = r.counts() < 0;
    let mut low = [0u8; FRAME_LEN];
    low[0] = (dc as u8) << 3 | (minus as u8) << 2 | 0b0001;
    for (i, g) in glyphs.iter().enumerate() {
        let (a, b) = SegmentDigit::new(*g, dp == Some(i)).nibbles();
        low[1 + 2 * i] = a;
        low[2 + 2 * i] = b;
    }
    let (b10, b11) = unit_flags(range);
    low[9] = b10;
    low[10] = b11 | r.is_overload() as u8;
    low[11] = range.ordinal() >> 4;
    low[12] = range.ordinal() & 0xF;
    low[13] = checksum(low[..13].iter().copied());

    let mut raw = [0u8; FRAME_LEN];
    for (k, (out, l)) in raw.iter_mut().zip(low).enumerate() {
        *out = ((k as u8 + 1) << 4) | l;
    }
    PanelFrame(raw)
}

pub fn decode_frame(raw: &[u8; FRAME_LEN]) -> Result<PanelReading, FrameError> {
    for (k, b) in raw.iter().enumerate() {
        if b >> 4 != k as u8 + 1 {
            return Err(FrameError::BadIndex {
                position: k + 1,
                found: b >> 4,
            });
        }
    }
    let low: Vec<u8> = raw.iter().map(|b| b & 0xF).collect();
    let expected = checksum(low[..13].iter().copied());
    if low[13] != expected {
        return Err(FrameError::BadChecksum {
            expected,
            found: low[13],
        });
    }

    let flags = |msg: &str| Err(FrameError::BadFlags(msg.to_string()));
    let dc = low[0] & 0b1000 != 0;
    let minus = low[0] & 0b0100 != 0;
    if low[0] & 0b0011 != 0b0001 {
        return flags("auto/connected bits");
    }
    if low[10] & 0b0010 != 0 {
        return flags("reserved bit set");
    }
    let overload = low[10] & 0b0001 != 0;
    let ordinal = low[11] << 4 | low[12];
    let Some(range) = DialPosition::from_ordinal(ordinal) else {
        return flags("range ordinal out of table");
    };
    if (low[9], low[10] & 0b1100) != unit_flags(range) {
        return flags("unit flags do not match range");
    }

    let mut digits = [SegmentDigit::from_nibbles(0, 0); DIGITS];
    let mut glyphs = [Glyph::Blank; DIGITS];
    for i in 0..DIGITS {
        digits[i] = SegmentDigit::from_nibbles(low[1 + 2 * i], low[2 + 2 * i]);
        glyphs[i] = digits[i].glyph().ok_or(FrameError::BadSegment {
            digit: i + 1,
            pattern: digits[i].segments,
        })?;
    }
    let dp_at: Vec<usize> = (0..DIGITS).filter(|i| digits[*i].dp).collect();
    let dcv = range.mode() == MeterMode::Dcv;

    if glyphs == [Glyph::Blank; DIGITS] {
        if dc || minus || overload || !dp_at.is_empty() {
            return flags("blank panel with flags set");
        }
        return Ok(PanelReading::blank(range));
    }
    if glyphs == [Glyph::Blank, Glyph::Digit(0), Glyph::L, Glyph::Blank] {
        if !overload || minus || dc != dcv || !dp_at.is_empty() {
            return flags("overload display with inconsistent flags");
        }
        return Ok(PanelReading::overload(range));
    }
    let mut counts: i32 = 0;
    for (i, g) in glyphs.iter().enumerate() {
        match g {
            Glyph::Digit(d) => counts = counts * 10 + *d as i32,
            _ => {
                return Err(FrameError::BadSegment {
                    digit: i + 1,
                    pattern: digits[i].segments,
                })
            }
        }
    }
    if overload {
        return flags("overload flag on a numeric display");
    }
    if dc != dcv {
        return flags("DC flag does not match mode");
    }
    if dp_at.as_slice() != dp_digit(range).as_slice() {
        return flags("decimal point does not match range");
    }
    if counts > MAX_COUNTS {
        return flags("count exceeds 1999");
    }
    if minus && counts == 0 {
        return flags("negative zero");
    }
    let counts = if minus { -counts } else { counts };
    Ok(PanelReading::numeric(range, counts).expect("count bounded above"))
}

/// Why the scanner discarded bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DiagnosticKind {
    /// A complete frame that failed to decode.
    Frame(FrameError),
    /// A frame broken off by an out-of-sequence byte.
    Interrupted { position: usize, found: u8 },
    /// Bytes before any frame start.
    Unsynchronized,
    /// Stream ended inside a frame.
    TruncatedTail,
}

impl DiagnosticKind {
    pub fn class(&self) -> &'static str {
        match self {
            DiagnosticKind::Frame(e) => e.class(),
            DiagnosticKind::Interrupted { .. } => "BAD_INDEX",
            DiagnosticKind::Unsynchronized => "RESYNC",
            DiagnosticKind::TruncatedTail => "TRUNCATED",
        }
    }
}

/// One damaged region of the stream: the first error seen and how many
/// bytes were discarded before the scanner resynchronized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub offset: u64,
    pub skipped: usize,
    pub kind: DiagnosticKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScanEvent {
    Reading { offset: u64, reading: PanelReading },
    Diagnostic(Diagnostic),
}

/// Incremental frame scanner for one byte stream.
///
/// Discards bytes until the next byte whose high nibble is 1 after any
/// error, so one damaged frame never costs the next intact one.
#[derive(Debug, Default)]
pub struct Scanner {
    frame: Vec<u8>,
    frame_start: u64,
    offset: u64,
    pending: Option<Diagnostic>,
}

impl Scanner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) -> Vec<ScanEvent> {
        let mut out = Vec::new();
        for &b in bytes {
            self.push_byte(b, &mut out);
            self.offset += 1;
        }
        out
    }

    /// Flush diagnostics at end of stream.
    pub fn finish(&mut self) -> Vec<ScanEvent> {
        let mut out = Vec::new();
        if !self.frame.is_empty() {
            let len = self.frame.len();
            self.frame.clear();
            self.discard(self.frame_start, len, DiagnosticKind::TruncatedTail);
        }
        if let Some(d) = self.pending.take() {
            out.push(ScanEvent::Diagnostic(d));
        }
        out
    }

    fn discard(&mut self, offset: u64, n: usize, kind: DiagnosticKind) {
        match &mut self.pending {
            Some(d) => d.skipped += n,
            None => {
                self.pending = Some(Diagnostic {
                    offset,
                    skipped: n,
                    kind,
                })
            }
        }
    }

    fn start_frame(&mut self, b: u8, out: &mut Vec<ScanEvent>) {
        if let Some(d) = self.pending.take() {
            out.push(ScanEvent::Diagnostic(d));
        }
        self.frame.push(b);
        self.frame_start = self.offset;
    }

    fn push_byte(&mut self, b: u8, out: &mut Vec<ScanEvent>) {
        let index = b >> 4;
        if self.frame.is_empty() {
            if index == 1 {
                self.start_frame(b, out);
            } else {
                self.discard(self.offset, 1, DiagnosticKind::Unsynchronized);
            }
            return;
        }
        let expected = self.frame.len() as u8 + 1;
        if index != expected {
            let len = self.frame.len();
            self.frame.clear();
            self.discard(
                self.frame_start,
                len,
                DiagnosticKind::Interrupted {
                    position: expected as usize,
                    found: index,
                },
            );
            if index == 1 {
                self.start_frame(b, out);
            } else {
                self.discard(self.offset, 1, DiagnosticKind::Unsynchronized);
            }
            return;
        }
        self.frame.push(b);
        if self.frame.len() == FRAME_LEN {
            let raw: [u8; FRAME_LEN] = self.frame.as_slice().try_into().unwrap();
            self.frame.clear();
            match decode_frame(&raw) {
                Ok(reading) => out.push(ScanEvent::Reading {
                    offset: self.frame_start,
                    reading,
                }),
                Err(e) => self.discard(self.frame_start, FRAME_LEN, DiagnosticKind::Frame(e)),
            }
        }
    }
}

/// Scan a complete byte sequence.
pub fn scan_stream(bytes: &[u8]) -> Vec<ScanEvent> {
    let mut scanner = Scanner::new();
    let mut events = scanner.push(bytes);
    events.extend(scanner.finish());
    events
}

/// Injected damage for one frame (1-based frame number).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Remove the first `count` bytes of the frame.
    DropBytes { frame: usize, count: usize },
    /// Invert the lowest data bit of byte 5, breaking the checksum.
    FlipNibble { frame: usize },
}

impl Fault {
    fn frame(&self) -> usize {
        match *self {
            Fault::DropBytes { frame, .. } | Fault::FlipNibble { frame } => frame,
        }
    }

    /// Parse `drop@N`, `dropK@N` or `flip@N`.
    pub fn parse(s: &str) -> Option<Fault> {
        let (kind, frame) = s.split_once('@')?;
        let frame: usize = frame.parse().ok().filter(|f| *f >= 1)?;
        if kind == "flip" {
            return Some(Fault::FlipNibble { frame });
        }
        let count = kind.strip_prefix("drop")?;
        let count = if count.is_empty() {
            3
        } else {
            count.parse().ok()?
        };
        Some(Fault::DropBytes { frame, count })
    }
}

/// Stands in for a physical meter wired through the capture module.
#[derive(Debug, Clone)]
pub struct SourceSimulator {
    pub stimulus: CircuitStimulus,
    pub dial: DialPosition,
    pub rate_hz: f64,
    pub faults: Vec<Fault>,
    pub model: MeterModel,
}

impl SourceSimulator {
    pub fn new(stimulus: CircuitStimulus, dial: DialPosition, rate_hz: f64) -> Self {
        SourceSimulator {
            stimulus,
            dial,
            rate_hz,
            faults: Vec::new(),
            model: MeterModel::default(),
        }
    }

    pub fn with_fault(mut self, fault: Fault) -> Self {
        self.faults.push(fault);
        self
    }

    pub fn interval(&self) -> Duration {
        Duration::from_secs_f64(1.0 / self.rate_hz)
    }

    pub fn reading(&self) -> Result<PanelReading, InstrumentError> {
        let state = MultimeterState {
            dial: self.dial,
            ..MultimeterState::default()
        };
        self.model.measure(&self.stimulus, &state)
    }

    /// The bytes of frame `n` (1-based) after fault injection.
    pub fn frame_bytes(&self, n: usize) -> Result<Vec<u8>, InstrumentError> {
        let mut bytes = encode_frame(&self.reading()?).0.to_vec();
        for f in self.faults.iter().filter(|f| f.frame() == n) {
            match *f {
                Fault::DropBytes { count, .. } => {
                    bytes.drain(..count.min(bytes.len()));
                }
                Fault::FlipNibble { .. } => {
                    if let Some(b) = bytes.get_mut(4) {
                        *b ^= 0x01;
                    }
                }
            }
        }
        Ok(bytes)
    }

    pub fn generate(&self, count: usize) -> Result<Vec<u8>, InstrumentError> {
        let mut out = Vec::with_capacity(count * FRAME_LEN);
        for n in 1..=count {
            out.extend(self.frame_bytes(n)?);
        }
        Ok(out)
    }
}

/// `count` frames of the reading `stimulus` produces at `dial`, back to back.
pub fn simulate_source(
    stimulus: CircuitStimulus,
    dial: DialPosition,
    rate_hz: f64,
    count: usize,
    faults: &[Fault],
) -> Result<Vec<u8>, InstrumentError> {
    let mut sim = SourceSimulator::new(stimulus, dial, rate_hz);
    sim.faults = faults.to_vec();
    sim.generate(count)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::instrument::render_display;

    // "5.00 V" on DCV/20 V, assembled by hand:
    // flags DC|connected = 9; digits 0,5,0.,0 ->
    //   0 = 1111110 -> [0111][1110]; 5 = 1011011 -> [0101][1011];
    //   0 with dp -> [1111][1110]; 0 -> [0111][1110]
    // byte 10 V = 8; byte 11 = 0; ordinal 2 -> 0, 2
    // checksum 9+7+E+5+B+F+E+7+E+8+0+0+2 = 106 = 0x6A -> A
    const GOLDEN_5V: [u8; 14] = [
        0x19, 0x27, 0x3E, 0x45, 0x5B, 0x6F, 0x7E, 0x87, 0x9E, 0xA8, 0xB0, 0xC0, 0xD2, 0xEA,
    ];

    fn five_volts() -> PanelReading {
        PanelReading::numeric(DialPosition::DCV_20V, 500).unwrap()
    }

    fn events_split(events: &[ScanEvent]) -> (Vec<PanelReading>, Vec<Diagnostic>) {
        let mut readings = Vec::new();
        let mut diags = Vec::new();
        for e in events {
            match e {
                ScanEvent::Reading { reading, .. } => readings.push(*reading),
                ScanEvent::Diagnostic(d) => diags.push(d.clone()),
            }
        }
        (readings, diags)
    }

    #[test]
    fn golden_frame() {
        assert_eq!(encode_frame(&five_volts()).0, GOLDEN_5V);
        let r = decode_frame(&GOLDEN_5V).unwrap();
        assert_eq!(r, five_volts());
        assert_eq!(render_display(&r), "5.00 V");
    }

    #[test]
    fn swapped_bytes_bad_index() {
        let mut f = GOLDEN_5V;
        f.swap(2, 3);
        assert_eq!(decode_frame(&f).unwrap_err().class(), "BAD_INDEX");
    }

    #[test]
    fn checksum_off_by_one() {
        let mut f = GOLDEN_5V;
        f[13] = (f[13] & 0xF0) | ((f[13] + 1) & 0x0F);
        assert_eq!(decode_frame(&f).unwrap_err().class(), "BAD_CHECKSUM");
    }

    fn fix_checksum(f: &mut [u8; 14]) {
        let c = checksum(f[..13].iter().copied());
        f[13] = 0xE0 | c;
    }

    #[test]
    fn unmappable_segment() {
        let mut f = GOLDEN_5V;
        // digit 1 -> segments c and g only, not in the table
        f[1] = 0x21;
        f[2] = 0x31;
        fix_checksum(&mut f);
        assert_eq!(decode_frame(&f).unwrap_err().class(), "BAD_SEGMENT");
    }

    #[test]
    fn conflicting_unit_flags() {
        let mut f = GOLDEN_5V;
        f[9] = 0xAC; // V and Ω
        fix_checksum(&mut f);
        assert_eq!(decode_frame(&f).unwrap_err().class(), "BAD_FLAGS");
    }

    #[test]
    fn misplaced_decimal_point() {
        let mut f = GOLDEN_5V;
        f[5] = 0x67; // drop dp from digit 3
        f[3] = 0x4D; // put it on digit 2
        fix_checksum(&mut f);
        assert_eq!(decode_frame(&f).unwrap_err().class(), "BAD_FLAGS");
    }

    #[test]
    fn blank_and_overload_frames() {
        let blank = encode_frame(&PanelReading::blank(DialPosition::DCV_20V));
        assert_eq!(blank.0[0] & 0x8, 0, "DC flag clear");
        for k in 0..DIGITS {
            let d = SegmentDigit::from_nibbles(blank.0[1 + 2 * k], blank.0[2 + 2 * k]);
            assert_eq!(d.glyph(), Some(Glyph::Blank));
        }
        assert!(decode_frame(&blank.0).unwrap().is_blank());

        let ol = PanelReading::overload(DialPosition::OHM_200);
        assert_eq!(decode_frame(&encode_frame(&ol).0).unwrap(), ol);
    }

    #[test]
    fn round_trip_domain() {
        for d in DialPosition::all() {
            for counts in (-1999..=1999).step_by(117) {
                let r = PanelReading::numeric(d, counts).unwrap();
                let f = encode_frame(&r);
                assert_eq!(decode_frame(&f.0).unwrap(), r, "{d} {counts}");
            }
            let r = PanelReading::overload(d);
            assert_eq!(decode_frame(&encode_frame(&r).0).unwrap(), r);
            let r = PanelReading::blank(d);
            assert_eq!(decode_frame(&encode_frame(&r).0).unwrap(), r);
        }
    }

    #[test]
    fn every_single_byte_substitution_is_handled() {
        for pos in 0..FRAME_LEN {
            for b in 0..=255u8 {
                let mut f = GOLDEN_5V;
                f[pos] = b;
                if let Ok(r) = decode_frame(&f) {
                    assert_eq!(encode_frame(&r).0, f);
                }
            }
        }
    }

    #[test]
    fn two_frames_two_readings() {
        let mut s = GOLDEN_5V.to_vec();
        s.extend(GOLDEN_5V);
        let (r, d) = events_split(&scan_stream(&s));
        assert_eq!(r.len(), 2);
        assert!(d.is_empty());
    }

    #[test]
    fn resync_after_lost_prefix() {
        let mut s = GOLDEN_5V[3..].to_vec();
        s.extend(GOLDEN_5V);
        let (r, d) = events_split(&scan_stream(&s));
        assert_eq!(r, vec![five_volts()]);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].offset, 0);
        assert_eq!(d[0].skipped, 11);
    }

    #[test]
    fn empty_stream() {
        assert!(scan_stream(&[]).is_empty());
    }

    #[test]
    fn truncated_tail_is_reported() {
        let (r, d) = events_split(&scan_stream(&GOLDEN_5V[..9]));
        assert!(r.is_empty());
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].kind, DiagnosticKind::TruncatedTail);
        assert_eq!(d[0].skipped, 9);
    }

    #[test]
    fn chunked_push_matches_one_shot() {
        let sim = SourceSimulator::new(
            CircuitStimulus::Resistor { ohms: 47.0 },
            DialPosition::OHM_200,
            10.0,
        )
        .with_fault(Fault::DropBytes { frame: 3, count: 5 });
        let bytes = sim.generate(6).unwrap();
        let whole = scan_stream(&bytes);
        let mut sc = Scanner::new();
        let mut chunked = Vec::new();
        for chunk in bytes.chunks(5) {
            chunked.extend(sc.push(chunk));
        }
        chunked.extend(sc.finish());
        assert_eq!(whole, chunked);
        let (r, d) = events_split(&whole);
        assert_eq!(r.len(), 5);
        assert_eq!(d.len(), 1);
    }

    #[test]
    fn simulator_output() {
        let bytes = simulate_source(
            CircuitStimulus::Resistor { ohms: 1000.0 },
            DialPosition::OHM_2K,
            5.0,
            5,
            &[],
        )
        .unwrap();
        assert_eq!(bytes.len(), 70);
        let (r, d) = events_split(&scan_stream(&bytes));
        assert!(d.is_empty());
        assert_eq!(r.len(), 5);
        assert!(r.iter().all(|r| render_display(r) == "1.000 kΩ"));

        let none = simulate_source(
            CircuitStimulus::Resistor { ohms: 1000.0 },
            DialPosition::OHM_2K,
            5.0,
            0,
            &[],
        )
        .unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn flipped_nibble_costs_one_frame() {
        let bytes = simulate_source(
            CircuitStimulus::Diode { forward_volts: 0.6 },
            DialPosition::DIODE,
            5.0,
            3,
            &[Fault::FlipNibble { frame: 2 }],
        )
        .unwrap();
        let events = scan_stream(&bytes);
        let (r, d) = events_split(&events);
        assert_eq!(r.len(), 2);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].kind.class(), "BAD_CHECKSUM");
        assert_eq!(d[0].offset, 14);
        assert!(matches!(events[0], ScanEvent::Reading { offset: 0, .. }));
        assert!(matches!(events[2], ScanEvent::Reading { offset: 28, .. }));
    }

    #[test]
    fn fault_parsing() {
        assert_eq!(Fault::parse("flip@2"), Some(Fault::FlipNibble { frame: 2 }));
        assert_eq!(
            Fault::parse("drop@4"),
            Some(Fault::DropBytes { frame: 4, count: 3 })
        );
        assert_eq!(
            Fault::parse("drop7@1"),
            Some(Fault::DropBytes { frame: 1, count: 7 })
        );
        assert_eq!(Fault::parse("flip@0"), None);
        assert_eq!(Fault::parse("smash@1"), None);
    }

    fn reading() -> impl Strategy<Value = PanelReading> {
        (0..DialPosition::COUNT, -MAX_COUNTS..=MAX_COUNTS, 0..4u8).prop_map(|(d, c, k)| {
            let d = DialPosition::from_ordinal(d).unwrap();
            match k {
                0 => PanelReading::overload(d),
                1 => PanelReading::blank(d),
                _ => PanelReading::numeric(d, c).unwrap(),
            }
        })
    }

    proptest! {
        #[test]
        fn frames_satisfy_shape(r in reading()) {
            let f = encode_frame(&r).0;
            for (k, b) in f.iter().enumerate() {
                prop_assert_eq!(b >> 4, k as u8 + 1);
            }
            prop_assert_eq!(f[13] & 0xF, checksum(f[..13].iter().copied()));
            prop_assert_eq!(decode_frame(&f).unwrap(), r);
        }

        #[test]
        fn decode_is_total(f in any::<[u8; 14]>()) {
            if let Ok(r) = decode_frame(&f) {
                prop_assert_eq!(encode_frame(&r).0, f);
            }
        }

        #[test]
        fn resync_keeps_every_intact_frame(
            parts in prop::collection::vec((reading(), prop::collection::vec(any::<u8>(), 0..20)), 1..20)
        ) {
            let mut stream = Vec::new();
            let mut expected = Vec::new();
            for (r, garbage) in &parts {
                stream.extend(garbage);
                stream.extend(encode_frame(r).0);
                expected.push(*r);
            }
            let (got, _) = events_split(&scan_stream(&stream));
            // intact frames appear in order; garbage may add chance frames
            let mut it = got.iter();
            for e in &expected {
                prop_assert!(it.any(|g| g == e), "missing {:?}", e);
            }
        }
    }
}
