use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    DimensionMismatch {
        expected: usize,
        found: usize,
    },
    NonFinite,
    Empty(&'static str),
    /// Renormalizing over a selection that carries no mass.
    DegenerateSelection,
    BudgetExceedsLength {
        budget: usize,
        n: usize,
    },
    InvalidThreshold(f64),
    UnsortedGrid,
    NotNormalized {
        mass: f64,
    },
    InvalidConfig(&'static str),
    IndexOutOfRange {
        index: usize,
        n: usize,
    },
    CodeOutOfRange {
        code: u8,
        bits: u32,
    },
    /// Row length is not a multiple of the codes packed per byte.
    UnalignedDimension {
        d: usize,
        codes_per_byte: usize,
    },
    UnsupportedBits(u32),
    IndivisibleHeads {
        heads: usize,
        group_size: usize,
    },
    InconsistentTags,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::NonFinite => f.write_str("non-finite input value"),
            Error::Empty(what) => write!(f, "{what} must not be empty"),
            Error::DegenerateSelection => {
                f.write_str("cannot renormalize over a selection with zero attention mass")
            }
            Error::BudgetExceedsLength { budget, n } => {
                write!(f, "budget {budget} exceeds context length {n}")
            }
            Error::InvalidThreshold(p) => write!(f, "threshold p = {p} is outside [0, 1]"),
            Error::UnsortedGrid => f.write_str("threshold grid must be sorted ascending"),
            Error::NotNormalized { mass } => {
                write!(f, "weights are not normalized (total mass {mass})")
            }
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::IndexOutOfRange { index, n } => {
                write!(f, "token index {index} out of range for {n} tokens")
            }
            Error::CodeOutOfRange { code, bits } => {
                write!(f, "code {code} does not fit in {bits} bits")
            }
            Error::UnalignedDimension { d, codes_per_byte } => {
                write!(f, "row length {d} is not a multiple of {codes_per_byte}")
            }
            Error::UnsupportedBits(bits) => write!(f, "unsupported quantization width {bits}"),
            Error::IndivisibleHeads { heads, group_size } => {
                write!(
                    f,
                    "{heads} query heads cannot be split into groups of {group_size}"
                )
            }
            Error::InconsistentTags => f.write_str("duplicate report tag in dynamism stream"),
        }
    }
}

impl core::error::Error for Error {}
