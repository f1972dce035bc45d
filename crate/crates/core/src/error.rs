use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Errors raised by the core kernels and model plumbing.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A tensor extent or rank does not fit the operation.
    Shape(String),
    /// A class or element index is out of range.
    Index(String),
    /// An argument is outside its permitted domain.
    Argument(String),
    /// The model is in the wrong state for the call (e.g. weights unbound).
    State(String),
    /// Training configuration does not match the model or data.
    Config(String),
    /// An LWT byte stream is malformed.
    Format(String),
    /// An LWT byte stream ended early.
    Truncated { offset: usize, needed: usize },
    /// Two LWT entries (or manifest records) share a name.
    Duplicate(String),
    /// Weight binding could not find these parameters.
    MissingParams(Vec<String>),
    /// Weight binding found a parameter with the wrong shape.
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    /// A split asks for more records than a class holds.
    Capacity(Vec<ClassDeficit>),
    /// A metric is a 0/0 ratio.
    Undefined(&'static str),
}

/// One class that cannot satisfy its requested split counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassDeficit {
    pub class: String,
    pub requested: usize,
    pub available: usize,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::Index(msg) => write!(f, "index error: {msg}"),
            Error::Argument(msg) => write!(f, "invalid argument: {msg}"),
            Error::State(msg) => write!(f, "state error: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Truncated { offset, needed } => write!(
                f,
                "truncated input: needed {needed} more byte(s) at offset {offset}"
            ),
            Error::Duplicate(name) => write!(f, "duplicate name `{name}`"),
            Error::MissingParams(names) => {
                write!(f, "missing {} parameter(s): ", names.len())?;
                for (i, name) in names.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    f.write_str(name)?;
                }
                Ok(())
            }
            Error::ParamShape {
                name,
                expected,
                found,
            } => write!(
                f,
                "parameter `{name}` has shape {found:?}, model expects {expected:?}"
            ),
            Error::Capacity(deficits) => {
                f.write_str("split exceeds available records: ")?;
                for (i, d) in deficits.iter().enumerate() {
                    if i > 0 {
                        f.write_str("; ")?;
                    }
                    write!(
                        f,
                        "class `{}` needs {} but has {}",
                        d.class, d.requested, d.available
                    )?;
                }
                Ok(())
            }
            Error::Undefined(what) => write!(f, "{what} is undefined (0/0)"),
        }
    }
}

impl core::error::Error for Error {}
