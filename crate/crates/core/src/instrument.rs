//! The virtual multimeter.
//!
//! A 3½-digit meter (max count 1999) with DC volts, resistance and diode-test
//! modes. State changes are pure set-semantics updates driven by
//! [`ControlParameter`]s; readings are computed analytically from a
//! [`CircuitStimulus`] and quantized to the selected range.
//!
//! Readings are carried as signed micro-units (µV or µΩ) so that two peers
//! holding the same state render byte-identical displays.

use std::fmt;

use thiserror::Error;

use crate::protocol::{ControlCode, ControlParameter, ReadingPayload};

/// Largest magnitude a 3½-digit panel can show.
pub const MAX_COUNTS: i32 = 1999;

/// Input impedance of the meter on every DC volts range, in ohms.
pub const DEFAULT_INPUT_IMPEDANCE_OHMS: f64 = 10.0e6;

/// Instrument id of the multimeter in [`ControlParameter::instrument`].
pub const MULTIMETER_ID: u8 = 0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InstrumentError {
    #[error("invalid control parameter: {0}")]
    InvalidParameter(String),
    #[error("meter is powered off")]
    PowerOff,
    #[error("invalid stimulus: {0}")]
    InvalidStimulus(String),
    #[error("invalid reading: {0}")]
    InvalidReading(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MeterMode {
    Dcv,
    Ohm,
    Diode,
}

impl MeterMode {
    pub fn wire(self) -> u8 {
        match self {
            MeterMode::Dcv => 0,
            MeterMode::Ohm => 1,
            MeterMode::Diode => 2,
        }
    }

    pub fn from_wire(b: u8) -> Option<Self> {
        match b {
            0 => Some(MeterMode::Dcv),
            1 => Some(MeterMode::Ohm),
            2 => Some(MeterMode::Diode),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MeterMode::Dcv => "DCV",
            MeterMode::Ohm => "OHM",
            MeterMode::Diode => "DIODE",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "DCV" => Some(MeterMode::Dcv),
            "OHM" => Some(MeterMode::Ohm),
            "DIODE" => Some(MeterMode::Diode),
            _ => None,
        }
    }
}

/// SI prefix shown on the panel for a range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prefix {
    None,
    Milli,
    Kilo,
    Mega,
}

/// Static properties of one dial position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RangeSpec {
    pub mode: MeterMode,
    /// Nominal full scale in micro-units.
    pub full_scale_micro: i64,
    /// Value of one count in micro-units.
    pub resolution_micro: i64,
    /// Digits after the decimal point on the panel.
    pub decimals: u8,
    pub prefix: Prefix,
    /// Short name used by the CLI (`dcv-20v`, `ohm-2k`, ...).
    pub name: &'static str,
}

impl RangeSpec {
    pub fn unit(&self) -> &'static str {
        match (self.mode, self.prefix) {
            (MeterMode::Ohm, Prefix::None) => "Ω",
            (MeterMode::Ohm, Prefix::Kilo) => "kΩ",
            (MeterMode::Ohm, Prefix::Mega) => "MΩ",
            (_, Prefix::Milli) => "mV",
            _ => "V",
        }
    }

    /// Readings strictly above this magnitude overload.
    pub fn overload_threshold_micro(&self) -> f64 {
        self.full_scale_micro as f64 * (MAX_COUNTS as f64 / 2000.0)
    }
}

const fn range(
    mode: MeterMode,
    full_scale_micro: i64,
    resolution_micro: i64,
    decimals: u8,
    prefix: Prefix,
    name: &'static str,
) -> RangeSpec {
    RangeSpec {
        mode,
        full_scale_micro,
        resolution_micro,
        decimals,
        prefix,
        name,
    }
}

// The 1000 V range keeps the 1 V resolution of a nominal 2000 V scale but is
// rated (and overloads) at 1000 V.
const RANGES: [RangeSpec; 12] = [
    range(MeterMode::Dcv, 200_000, 100, 1, Prefix::Milli, "dcv-200mv"),
    range(MeterMode::Dcv, 2_000_000, 1_000, 3, Prefix::None, "dcv-2v"),
    range(
        MeterMode::Dcv,
        20_000_000,
        10_000,
        2,
        Prefix::None,
        "dcv-20v",
    ),
    range(
        MeterMode::Dcv,
        200_000_000,
        100_000,
        1,
        Prefix::None,
        "dcv-200v",
    ),
    range(
        MeterMode::Dcv,
        1_000_000_000,
        1_000_000,
        0,
        Prefix::None,
        "dcv-1000v",
    ),
    range(
        MeterMode::Ohm,
        200_000_000,
        100_000,
        1,
        Prefix::None,
        "ohm-200",
    ),
    range(
        MeterMode::Ohm,
        2_000_000_000,
        1_000_000,
        3,
        Prefix::Kilo,
        "ohm-2k",
    ),
    range(
        MeterMode::Ohm,
        20_000_000_000,
        10_000_000,
        2,
        Prefix::Kilo,
        "ohm-20k",
    ),
    range(
        MeterMode::Ohm,
        200_000_000_000,
        100_000_000,
        1,
        Prefix::Kilo,
        "ohm-200k",
    ),
    range(
        MeterMode::Ohm,
        2_000_000_000_000,
        1_000_000_000,
        3,
        Prefix::Mega,
        "ohm-2m",
    ),
    range(
        MeterMode::Ohm,
        20_000_000_000_000,
        10_000_000_000,
        2,
        Prefix::Mega,
        "ohm-20m",
    ),
    range(MeterMode::Diode, 2_000_000, 1_000, 3, Prefix::None, "diode"),
];

/// A dial position: mode plus range, encoded as an ordinal 0..=11
/// (DCV 0–4, OHM 5–10, DIODE 11).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DialPosition(u8);

impl DialPosition {
    pub const COUNT: u8 = 12;
    pub const DCV_200MV: DialPosition = DialPosition(0);
    pub const DCV_2V: DialPosition = DialPosition(1);
    pub const DCV_20V: DialPosition = DialPosition(2);
    pub const DCV_200V: DialPosition = DialPosition(3);
    pub const DCV_1000V: DialPosition = DialPosition(4);
    pub const OHM_200: DialPosition = DialPosition(5);
    pub const OHM_2K: DialPosition = DialPosition(6);
    pub const OHM_20K: DialPosition = DialPosition(7);
    pub const OHM_200K: DialPosition = DialPosition(8);
    pub const OHM_2M: DialPosition = DialPosition(9);
    pub const OHM_20M: DialPosition = DialPosition(10);
    pub const DIODE: DialPosition = DialPosition(11);

    pub fn from_ordinal(ordinal: u8) -> Option<Self> {
        (ordinal < Self::COUNT).then_some(DialPosition(ordinal))
    }

    pub fn from_name(name: &str) -> Option<Self> {
        RANGES
            .iter()
            .position(|r| r.name.eq_ignore_ascii_case(name))
            .map(|i| DialPosition(i as u8))
    }

    pub fn all() -> impl Iterator<Item = DialPosition> {
        (0..Self::COUNT).map(DialPosition)
    }

    pub fn ordinal(self) -> u8 {
        self.0
    }

    pub fn spec(self) -> &'static RangeSpec {
        &RANGES[self.0 as usize]
    }

    pub fn mode(self) -> MeterMode {
        self.spec().mode
    }
}

impl fmt::Display for DialPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.spec().name)
    }
}

/// What the panel currently shows, quantized to a range.
///
/// `value_micro == counts * resolution_micro(range)` always holds; overload
/// and blank readings carry zero counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PanelReading {
    range: DialPosition,
    counts: i32,
    overload: bool,
    blank: bool,
}

impl PanelReading {
    pub fn numeric(range: DialPosition, counts: i32) -> Option<Self> {
        (counts.abs() <= MAX_COUNTS).then_some(PanelReading {
            range,
            counts,
            overload: false,
            blank: false,
        })
    }

    pub fn overload(range: DialPosition) -> Self {
        PanelReading {
            range,
            counts: 0,
            overload: true,
            blank: false,
        }
    }

    /// Powered-off panel.
    pub fn blank(range: DialPosition) -> Self {
        PanelReading {
            range,
            counts: 0,
            overload: false,
            blank: true,
        }
    }

    pub fn mode(&self) -> MeterMode {
        self.range.mode()
    }

    pub fn range(&self) -> DialPosition {
        self.range
    }

    pub fn counts(&self) -> i32 {
        self.counts
    }

    pub fn is_overload(&self) -> bool {
        self.overload
    }

    pub fn is_blank(&self) -> bool {
        self.blank
    }

    pub fn value_micro(&self) -> i64 {
        self.counts as i64 * self.range.spec().resolution_micro
    }

    /// The wire payload for a non-blank reading.
    pub fn to_payload(&self) -> Option<ReadingPayload> {
        (!self.blank).then(|| ReadingPayload {
            mode: self.mode(),
            range_ordinal: self.range.ordinal(),
            overload: self.overload,
            value_micro: self.value_micro(),
        })
    }
}

/// Quantize a true value (micro-units) onto a range: round half away from
/// zero, overload strictly above 1999/2000 of full scale.
pub fn quantize(true_micro: f64, range: DialPosition) -> PanelReading {
    let spec = range.spec();
    if !true_micro.is_finite() || true_micro.abs() > spec.overload_threshold_micro() {
        return PanelReading::overload(range);
    }
    let counts = (true_micro / spec.resolution_micro as f64).round() as i32;
    PanelReading::numeric(range, counts).unwrap_or_else(|| PanelReading::overload(range))
}

/// Last value reported to the panel, interpreted against the current dial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct LastReading {
    pub overload: bool,
    pub value_micro: i64,
}

/// The state every member of a group converges on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MultimeterState {
    pub dial: DialPosition,
    pub power: bool,
    pub last_reading: LastReading,
}

impl Default for MultimeterState {
    /// Powered on, dial at DCV/20 V, reading zero.
    fn default() -> Self {
        MultimeterState {
            dial: DialPosition::DCV_20V,
            power: true,
            last_reading: LastReading::default(),
        }
    }
}

impl MultimeterState {
    /// The panel content: blank when off, otherwise the last reading
    /// quantized to the current dial.
    pub fn panel(&self) -> PanelReading {
        if !self.power {
            PanelReading::blank(self.dial)
        } else if self.last_reading.overload {
            PanelReading::overload(self.dial)
        } else {
            quantize(self.last_reading.value_micro as f64, self.dial)
        }
    }

    pub fn display(&self) -> String {
        render_display(&self.panel())
    }
}

/// Check a parameter against the multimeter's control vocabulary.
pub fn validate_control(p: &ControlParameter) -> Result<(), InstrumentError> {
    if p.instrument != MULTIMETER_ID {
        return Err(InstrumentError::InvalidParameter(format!(
            "unknown instrument {}",
            p.instrument
        )));
    }
    match p.code {
        ControlCode::SET_DIAL => {
            let ok = u8::try_from(p.value)
                .ok()
                .and_then(DialPosition::from_ordinal)
                .is_some();
            if !ok {
                return Err(InstrumentError::InvalidParameter(format!(
                    "dial ordinal {} out of range 0..=11",
                    p.value
                )));
            }
        }
        ControlCode::SET_POWER => {
            if p.value != 0 && p.value != 1 {
                return Err(InstrumentError::InvalidParameter(format!(
                    "power value {} is not 0 or 1",
                    p.value
                )));
            }
        }
        ControlCode::SET_PROBE_NODE => {
            if p.value < 0 {
                return Err(InstrumentError::InvalidParameter(format!(
                    "negative probe node {}",
                    p.value
                )));
            }
        }
        other => {
            return Err(InstrumentError::InvalidParameter(format!(
                "unknown control code {}",
                other.0
            )))
        }
    }
    Ok(())
}

/// Apply one control parameter. Set semantics, so applying the same
/// parameter twice equals applying it once.
///
/// SET_PROBE_NODE is validated but does not change the shared state; the
/// circuit model keys off the stimulus type only.
pub fn apply_control(
    state: &MultimeterState,
    p: &ControlParameter,
) -> Result<MultimeterState, InstrumentError> {
    validate_control(p)?;
    let mut next = *state;
    match p.code {
        ControlCode::SET_DIAL => {
            next.dial = DialPosition::from_ordinal(p.value as u8).expect("validated");
        }
        ControlCode::SET_POWER => next.power = p.value == 1,
        _ => {}
    }
    Ok(next)
}

/// Check a measurement payload: known range, mode matching the range and a
/// zero value on overload.
pub fn validate_reading(r: &ReadingPayload) -> Result<DialPosition, InstrumentError> {
    let dial = DialPosition::from_ordinal(r.range_ordinal).ok_or_else(|| {
        InstrumentError::InvalidReading(format!("range ordinal {}", r.range_ordinal))
    })?;
    if dial.mode() != r.mode {
        return Err(InstrumentError::InvalidReading(format!(
            "mode {} does not match range {}",
            r.mode.name(),
            dial
        )));
    }
    if r.overload && r.value_micro != 0 {
        return Err(InstrumentError::InvalidReading(
            "overload reading with non-zero value".into(),
        ));
    }
    Ok(dial)
}

/// The panel a measurement payload describes.
pub fn reading_panel(r: &ReadingPayload) -> Result<PanelReading, InstrumentError> {
    let dial = validate_reading(r)?;
    Ok(if r.overload {
        PanelReading::overload(dial)
    } else {
        quantize(r.value_micro as f64, dial)
    })
}

/// Mirror a measured reading: the dial follows the measuring meter's range
/// and the reading replaces the last one.
pub fn apply_reading(
    state: &MultimeterState,
    r: &ReadingPayload,
) -> Result<MultimeterState, InstrumentError> {
    let dial = validate_reading(r)?;
    Ok(MultimeterState {
        dial,
        power: state.power,
        last_reading: LastReading {
            overload: r.overload,
            value_micro: r.value_micro,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedParameter {
    pub index: usize,
    pub error: InstrumentError,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldOutcome {
    pub state: MultimeterState,
    pub skipped: Vec<SkippedParameter>,
}

/// Left fold of [`apply_control`]; invalid parameters are skipped and
/// reported, never abort the fold.
pub fn fold_state<'a>(
    initial: &MultimeterState,
    params: impl IntoIterator<Item = &'a ControlParameter>,
) -> FoldOutcome {
    let mut state = *initial;
    let mut skipped = Vec::new();
    for (index, p) in params.into_iter().enumerate() {
        match apply_control(&state, p) {
            Ok(next) => state = next,
            Err(error) => {
                tracing::debug!(index, %error, "skipping control parameter");
                skipped.push(SkippedParameter { index, error });
            }
        }
    }
    FoldOutcome { state, skipped }
}

/// The circuit side of a measurement, modeled analytically.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CircuitStimulus {
    /// Source behind a series resistor; the probes sit across `r_probe`.
    DcSource {
        source_volts: f64,
        r_series: f64,
        r_probe: f64,
    },
    Resistor {
        ohms: f64,
    },
    Diode {
        forward_volts: f64,
    },
}

impl CircuitStimulus {
    pub fn validate(&self) -> Result<(), InstrumentError> {
        let bad = |msg: &str| Err(InstrumentError::InvalidStimulus(msg.to_string()));
        match *self {
            CircuitStimulus::DcSource {
                source_volts,
                r_series,
                r_probe,
            } => {
                if !source_volts.is_finite() {
                    return bad("source voltage must be finite");
                }
                if !(r_series >= 0.0 && r_probe >= 0.0) {
                    return bad("resistances must be non-negative");
                }
            }
            CircuitStimulus::Resistor { ohms } => {
                if !(ohms >= 0.0) {
                    return bad("resistance must be non-negative");
                }
            }
            CircuitStimulus::Diode { forward_volts } => {
                if !(0.0..=3.0).contains(&forward_volts) {
                    return bad("forward voltage must lie in [0, 3] V");
                }
            }
        }
        Ok(())
    }
}

/// `dc:<volts>[,<r_series>,<r_probe>]`, `resistor:<ohms>` or
/// `diode:<forward volts>`.
impl std::str::FromStr for CircuitStimulus {
    type Err = InstrumentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || InstrumentError::InvalidStimulus(format!("cannot parse stimulus {s:?}"));
        let (kind, args) = s.split_once(':').ok_or_else(bad)?;
        let nums = args
            .split(',')
            .map(|a| a.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>, _>>()?;
        let stim = match (kind.trim(), nums.as_slice()) {
            ("dc", &[v]) => CircuitStimulus::DcSource {
                source_volts: v,
                r_series: 0.0,
                r_probe: 0.0,
            },
            ("dc", &[v, rs, rp]) => CircuitStimulus::DcSource {
                source_volts: v,
                r_series: rs,
                r_probe: rp,
            },
            ("resistor", &[ohms]) => CircuitStimulus::Resistor { ohms },
            ("diode", &[forward_volts]) => CircuitStimulus::Diode { forward_volts },
            _ => return Err(bad()),
        };
        stim.validate()?;
        Ok(stim)
    }
}

fn parallel(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else if a.is_infinite() {
        b
    } else if b.is_infinite() {
        a
    } else {
        a * b / (a + b)
    }
}

/// Electrical model of the meter itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeterModel {
    pub input_impedance_ohms: f64,
}

impl Default for MeterModel {
    fn default() -> Self {
        MeterModel {
            input_impedance_ohms: DEFAULT_INPUT_IMPEDANCE_OHMS,
        }
    }
}

enum TrueValue {
    Micro(f64),
    Overload,
}

impl MeterModel {
    /// Loaded divider voltage seen by the meter across `r_probe`.
    pub fn loaded_voltage(&self, source_volts: f64, r_series: f64, r_probe: f64) -> f64 {
        if r_series == 0.0 && r_probe == 0.0 {
            return source_volts;
        }
        let shunt = parallel(r_probe, self.input_impedance_ohms);
        if r_series + shunt == 0.0 {
            return 0.0;
        }
        source_volts * shunt / (r_series + shunt)
    }

    fn true_value(&self, stimulus: &CircuitStimulus, mode: MeterMode) -> TrueValue {
        match (mode, *stimulus) {
            (
                MeterMode::Dcv,
                CircuitStimulus::DcSource {
                    source_volts,
                    r_series,
                    r_probe,
                },
            ) => TrueValue::Micro(self.loaded_voltage(source_volts, r_series, r_probe) * 1e6),
            (MeterMode::Dcv, _) => TrueValue::Micro(0.0),
            (MeterMode::Ohm, CircuitStimulus::Resistor { ohms }) => TrueValue::Micro(ohms * 1e6),
            (MeterMode::Ohm, _) => TrueValue::Overload,
            (MeterMode::Diode, CircuitStimulus::Diode { forward_volts }) => {
                TrueValue::Micro(forward_volts * 1e6)
            }
            (MeterMode::Diode, _) => TrueValue::Overload,
        }
    }

    /// Unquantized value the selected mode would read, in micro-units, or
    /// `None` when the mode/stimulus pairing overloads.
    pub fn true_value_micro(&self, stimulus: &CircuitStimulus, mode: MeterMode) -> Option<f64> {
        match self.true_value(stimulus, mode) {
            TrueValue::Micro(v) => Some(v),
            TrueValue::Overload => None,
        }
    }

    pub fn measure(
        &self,
        stimulus: &CircuitStimulus,
        state: &MultimeterState,
    ) -> Result<PanelReading, InstrumentError> {
        if !state.power {
            return Err(InstrumentError::PowerOff);
        }
        stimulus.validate()?;
        Ok(match self.true_value(stimulus, state.dial.mode()) {
            TrueValue::Micro(v) => quantize(v, state.dial),
            TrueValue::Overload => PanelReading::overload(state.dial),
        })
    }
}

/// Measure with the default 10 MΩ meter.
pub fn measure(
    stimulus: &CircuitStimulus,
    state: &MultimeterState,
) -> Result<PanelReading, InstrumentError> {
    MeterModel::default().measure(stimulus, state)
}

/// Panel text: sign, digits with the range's decimal point and unit;
/// `OL` on overload; empty when blank.
pub fn render_display(r: &PanelReading) -> String {
    if r.is_blank() {
        return String::new();
    }
    if r.is_overload() {
        return "OL".to_string();
    }
    let spec = r.range().spec();
    let sign = if r.counts() < 0 { "-" } else { "" };
    let magnitude = r.counts().unsigned_abs();
    let digits = if spec.decimals == 0 {
        magnitude.to_string()
    } else {
        let scale = 10u32.pow(spec.decimals as u32);
        format!(
            "{}.{:0width$}",
            magnitude / scale,
            magnitude % scale,
            width = spec.decimals as usize
        )
    };
    format!("{sign}{digits} {}", spec.unit())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dial(value: i64) -> ControlParameter {
        ControlParameter::new(ControlCode::SET_DIAL, value)
    }

    fn power(on: bool) -> ControlParameter {
        ControlParameter::new(ControlCode::SET_POWER, on as i64)
    }

    fn at(d: DialPosition) -> MultimeterState {
        MultimeterState {
            dial: d,
            ..MultimeterState::default()
        }
    }

    #[test]
    fn range_table_is_consistent() {
        for d in DialPosition::all() {
            let s = d.spec();
            match d.ordinal() {
                0..=4 => assert_eq!(s.mode, MeterMode::Dcv),
                5..=10 => assert_eq!(s.mode, MeterMode::Ohm),
                _ => assert_eq!(s.mode, MeterMode::Diode),
            }
            // 1999 counts at full resolution is the largest displayable value
            assert!(MAX_COUNTS as i64 * s.resolution_micro >= s.full_scale_micro * 999 / 1000);
            assert_eq!(DialPosition::from_name(s.name), Some(d));
        }
        assert_eq!(DialPosition::from_ordinal(12), None);
    }

    #[test]
    fn set_dial_replaces_dial_only() {
        let s = at(DialPosition::DCV_20V);
        let next = apply_control(&s, &dial(6)).unwrap();
        assert_eq!(next.dial, DialPosition::OHM_2K);
        assert_eq!(next.power, s.power);
        assert_eq!(next.last_reading, s.last_reading);
    }

    #[test]
    fn power_off_blanks_display() {
        let s = at(DialPosition::OHM_20K);
        let off = apply_control(&s, &power(false)).unwrap();
        assert!(!off.power);
        assert!(off.panel().is_blank());
        assert_eq!(off.display(), "");
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let s = MultimeterState::default();
        assert!(matches!(
            apply_control(&s, &dial(12)),
            Err(InstrumentError::InvalidParameter(_))
        ));
        assert!(apply_control(&s, &dial(-1)).is_err());
        assert!(apply_control(&s, &ControlParameter::new(ControlCode::SET_POWER, 2)).is_err());
        assert!(apply_control(&s, &ControlParameter::new(ControlCode(9), 0)).is_err());
        let other = ControlParameter {
            instrument: 1,
            ..dial(3)
        };
        assert!(apply_control(&s, &other).is_err());
    }

    #[test]
    fn probe_node_is_accepted_without_state_change() {
        let s = MultimeterState::default();
        let p = ControlParameter::new(ControlCode::SET_PROBE_NODE, 4);
        assert_eq!(apply_control(&s, &p).unwrap(), s);
    }

    #[test]
    fn equal_divider_reads_half() {
        let st = at(DialPosition::DCV_20V);
        let r = measure(
            &CircuitStimulus::DcSource {
                source_volts: 10.0,
                r_series: 1e3,
                r_probe: 1e3,
            },
            &st,
        )
        .unwrap();
        assert_eq!(r.counts(), 500);
        assert_eq!(render_display(&r), "5.00 V");
    }

    #[test]
    fn unloaded_source_reads_source_voltage() {
        let st = at(DialPosition::DCV_20V);
        let r = measure(
            &CircuitStimulus::DcSource {
                source_volts: 12.0,
                r_series: 0.0,
                r_probe: 0.0,
            },
            &st,
        )
        .unwrap();
        assert_eq!(render_display(&r), "12.00 V");
    }

    #[test]
    fn resistance_and_diode_readings() {
        let r = measure(
            &CircuitStimulus::Resistor { ohms: 1000.0 },
            &at(DialPosition::OHM_2K),
        )
        .unwrap();
        assert_eq!(r.counts(), 1000);
        assert_eq!(render_display(&r), "1.000 kΩ");

        let r = measure(
            &CircuitStimulus::Resistor { ohms: 250.0 },
            &at(DialPosition::OHM_200),
        )
        .unwrap();
        assert!(r.is_overload());
        assert_eq!(render_display(&r), "OL");

        let r = measure(
            &CircuitStimulus::Diode { forward_volts: 0.6 },
            &at(DialPosition::DIODE),
        )
        .unwrap();
        assert_eq!(r.counts(), 600);
        assert_eq!(render_display(&r), "0.600 V");
    }

    #[test]
    fn mode_mismatch_table() {
        let source = CircuitStimulus::DcSource {
            source_volts: 5.0,
            r_series: 0.0,
            r_probe: 100.0,
        };
        let resistor = CircuitStimulus::Resistor { ohms: 10.0 };
        let r = measure(&resistor, &at(DialPosition::DCV_2V)).unwrap();
        assert_eq!((r.counts(), r.is_overload()), (0, false));
        assert!(measure(&source, &at(DialPosition::OHM_2K))
            .unwrap()
            .is_overload());
        assert!(measure(&source, &at(DialPosition::DIODE))
            .unwrap()
            .is_overload());
        assert!(measure(&resistor, &at(DialPosition::DIODE))
            .unwrap()
            .is_overload());
    }

    #[test]
    fn measuring_requires_power() {
        let off = MultimeterState {
            power: false,
            ..MultimeterState::default()
        };
        assert_eq!(
            measure(&CircuitStimulus::Resistor { ohms: 1.0 }, &off),
            Err(InstrumentError::PowerOff)
        );
    }

    #[test]
    fn bad_stimulus_is_rejected() {
        let st = MultimeterState::default();
        assert!(measure(&CircuitStimulus::Resistor { ohms: -1.0 }, &st).is_err());
        assert!(measure(&CircuitStimulus::Diode { forward_volts: 3.5 }, &st).is_err());
        assert!(measure(
            &CircuitStimulus::DcSource {
                source_volts: f64::NAN,
                r_series: 0.0,
                r_probe: 0.0
            },
            &st
        )
        .is_err());
    }

    #[test]
    fn render_examples() {
        let r = PanelReading::numeric(DialPosition::DCV_2V, -1234).unwrap();
        assert_eq!(render_display(&r), "-1.234 V");
        let r = PanelReading::numeric(DialPosition::DCV_200MV, 1999).unwrap();
        assert_eq!(render_display(&r), "199.9 mV");
        let r = PanelReading::numeric(DialPosition::DCV_1000V, 750).unwrap();
        assert_eq!(render_display(&r), "750 V");
        let r = PanelReading::numeric(DialPosition::OHM_20M, 5).unwrap();
        assert_eq!(render_display(&r), "0.05 MΩ");
        assert_eq!(
            render_display(&PanelReading::overload(DialPosition::OHM_200)),
            "OL"
        );
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        // 0.005 V on the 20 V range sits exactly on a half count
        assert_eq!(quantize(5_000.0, DialPosition::DCV_20V).counts(), 1);
        assert_eq!(quantize(-5_000.0, DialPosition::DCV_20V).counts(), -1);
        assert_eq!(quantize(4_999.0, DialPosition::DCV_20V).counts(), 0);
    }

    #[test]
    fn overload_threshold() {
        let d = DialPosition::DCV_2V;
        assert_eq!(quantize(1_999_000.0, d).counts(), 1999);
        // threshold is 1999/2000 of full scale, so 1999.4 counts already overloads
        assert!(!quantize(1_998_900.0, d).is_overload());
        assert!(quantize(1_999_001.0, d).is_overload());
        assert!(quantize(-2_500_000.0, d).is_overload());
        assert!(quantize(f64::INFINITY, d).is_overload());
    }

    #[test]
    fn reading_follows_dial_changes() {
        let payload = ReadingPayload {
            mode: MeterMode::Dcv,
            range_ordinal: 2,
            overload: false,
            value_micro: 5_000_000,
        };
        let s = apply_reading(&at(DialPosition::OHM_2K), &payload).unwrap();
        assert_eq!(s.dial, DialPosition::DCV_20V);
        assert_eq!(s.display(), "5.00 V");
        let s = apply_control(&s, &dial(1)).unwrap();
        assert_eq!(s.display(), "OL");
        let s = apply_control(&s, &dial(3)).unwrap();
        assert_eq!(s.display(), "5.0 V");
    }

    #[test]
    fn invalid_reading_payloads() {
        let base = ReadingPayload {
            mode: MeterMode::Ohm,
            range_ordinal: 2,
            overload: false,
            value_micro: 0,
        };
        let s = MultimeterState::default();
        assert!(apply_reading(&s, &base).is_err());
        let bad_range = ReadingPayload {
            range_ordinal: 40,
            ..base
        };
        assert!(apply_reading(&s, &bad_range).is_err());
        let bad_ol = ReadingPayload {
            mode: MeterMode::Dcv,
            overload: true,
            value_micro: 3,
            ..base
        };
        assert!(apply_reading(&s, &bad_ol).is_err());
    }

    #[test]
    fn fold_skips_invalid_and_is_idempotent() {
        let s = MultimeterState::default();
        assert_eq!(fold_state(&s, &[]).state, s);
        let p = dial(7);
        assert_eq!(fold_state(&s, &[p, p]).state, fold_state(&s, &[p]).state);
        let out = fold_state(&s, &[dial(99), power(false), dial(5)]);
        assert_eq!(out.skipped.len(), 1);
        assert_eq!(out.skipped[0].index, 0);
        assert_eq!(out.state.dial, DialPosition::OHM_200);
        assert!(!out.state.power);
    }

    #[test]
    fn stimulus_syntax() {
        assert_eq!(
            "dc:10,10e6,10e6".parse::<CircuitStimulus>().unwrap(),
            CircuitStimulus::DcSource {
                source_volts: 10.0,
                r_series: 10e6,
                r_probe: 10e6
            }
        );
        assert_eq!(
            "resistor:1000".parse::<CircuitStimulus>().unwrap(),
            CircuitStimulus::Resistor { ohms: 1000.0 }
        );
        assert!(matches!(
            "dc:5".parse::<CircuitStimulus>().unwrap(),
            CircuitStimulus::DcSource { r_series, .. } if r_series == 0.0
        ));
        for bad in ["dc", "dc:1,2", "resistor:-1", "diode:9", "coil:3", "dc:x"] {
            assert!(bad.parse::<CircuitStimulus>().is_err(), "{bad}");
        }
    }
}
