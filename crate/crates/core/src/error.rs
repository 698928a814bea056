use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    EmptyTemplate,
    InvalidDuration(f64),
    InvalidSampleRate(f64),
    InvalidThreshold(f64),
    InvalidBand { low_hz: f64, high_hz: f64, nyquist_hz: f64 },
    InvalidParams(&'static str),
    NoGroundTruth,
    RaggedChannels,
    TooManyChannels(usize),
    AddressOutOfRange(u32),
    TooShort { needed: usize, got: usize },
    ShapeMismatch,
    EventOutsidePeriod { t_us: u64, start_us: u64, end_us: u64 },
    MissingStimuli,
    EmptyChannelSet,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::EmptyTemplate => f.write_str("no spike template given"),
            Error::InvalidDuration(d) => write!(f, "duration must be positive, got {d}"),
            Error::InvalidSampleRate(r) => write!(f, "sample rate must be positive, got {r}"),
            Error::InvalidThreshold(t) => write!(f, "threshold must be positive, got {t}"),
            Error::InvalidBand { low_hz, high_hz, nyquist_hz } => write!(
                f,
                "band edges must satisfy 0 < low < high < nyquist, got {low_hz}..{high_hz} with nyquist {nyquist_hz}"
            ),
            Error::InvalidParams(what) => write!(f, "invalid parameters: {what}"),
            Error::NoGroundTruth => f.write_str("recording has no ground truth"),
            Error::RaggedChannels => f.write_str("channels have different sample counts"),
            Error::TooManyChannels(n) => write!(f, "{n} channels exceeds the 1024-address space"),
            Error::AddressOutOfRange(a) => write!(f, "address {a} out of range"),
            Error::TooShort { needed, got } => {
                write!(f, "input too short: need at least {needed} samples, got {got}")
            }
            Error::ShapeMismatch => f.write_str("shape mismatch"),
            Error::EventOutsidePeriod { t_us, start_us, end_us } => {
                write!(f, "event at {t_us} us outside detection period [{start_us}, {end_us})")
            }
            Error::MissingStimuli => f.write_str("calibration stimuli are empty"),
            Error::EmptyChannelSet => f.write_str("empty channel set"),
        }
    }
}

impl core::error::Error for Error {}
