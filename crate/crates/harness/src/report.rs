//! CSV and JSON output. Floats are written with 9 significant digits.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use crate::HarnessError;

/// Formats like C's `%.9g`.
pub fn fmt_g9(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.into();
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0" } else { "0" }.into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..9).contains(&exp) {
        let fixed = format!("{x:.*}", (8 - exp) as usize);
        trim_zeros(&fixed).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// A CSV sink with a fixed header, writing to a file or stdout.
pub struct CsvOut {
    writer: csv::Writer<Box<dyn Write>>,
    columns: usize,
}

impl CsvOut {
    pub fn create(path: Option<&Path>, header: &[&str]) -> Result<Self, HarnessError> {
        let sink: Box<dyn Write> = match path {
            Some(p) => Box::new(io::BufWriter::new(
                fs::File::create(p).map_err(|e| HarnessError::io(p, e))?,
            )),
            None => Box::new(io::stdout().lock()),
        };
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(sink);
        writer.write_record(header)?;
        Ok(Self {
            writer,
            columns: header.len(),
        })
    }

    pub fn row(&mut self, fields: &[Field]) -> Result<(), HarnessError> {
        assert_eq!(fields.len(), self.columns, "row width differs from header");
        self.writer.write_record(fields.iter().map(Field::render))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), HarnessError> {
        self.writer.flush().map_err(|e| HarnessError::Csv(e.into()))
    }
}

pub enum Field {
    Int(u64),
    Float(f64),
    Text(String),
}

impl Field {
    fn render(&self) -> String {
        match self {
            Field::Int(v) => v.to_string(),
            Field::Float(v) => fmt_g9(*v),
            Field::Text(s) => s.clone(),
        }
    }
}

impl From<usize> for Field {
    fn from(v: usize) -> Self {
        Field::Int(v as u64)
    }
}

impl From<u32> for Field {
    fn from(v: u32) -> Self {
        Field::Int(v as u64)
    }
}

impl From<f64> for Field {
    fn from(v: f64) -> Self {
        Field::Float(v)
    }
}

impl From<bool> for Field {
    fn from(v: bool) -> Self {
        Field::Int(v as u64)
    }
}

impl From<String> for Field {
    fn from(v: String) -> Self {
        Field::Text(v)
    }
}

impl From<&str> for Field {
    fn from(v: &str) -> Self {
        Field::Text(v.into())
    }
}

/// Builds a `[Field; N]` from heterogeneous values.
#[macro_export]
macro_rules! fields {
    ($($v:expr),* $(,)?) => {
        [$($crate::report::Field::from($v)),*]
    };
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| HarnessError::io(path, io::Error::other(e)))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}
