//! JSON serialization with 17-significant-digit reals.
//!
//! Estimates serialize as JSON objects whose floating-point numbers are
//! printed in scientific notation with 17 significant digits, enough for the
//! decimal text to round-trip bit-exactly back to the original doubles.

use std::io;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter, Serializer};

/// Pretty JSON formatter writing every `f64` as `{:.16e}` (17 significant
/// digits). Non-finite values become `null` before reaching the formatter.
pub struct SigFig17Pretty<'a> {
    inner: PrettyFormatter<'a>,
}

impl Default for SigFig17Pretty<'_> {
    fn default() -> Self {
        Self { inner: PrettyFormatter::new() }
    }
}

impl Formatter for SigFig17Pretty<'_> {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{value:.16e}")
    }

    fn begin_array<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.begin_array(writer)
    }

    fn end_array<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.end_array(writer)
    }

    fn begin_array_value<W>(&mut self, writer: &mut W, first: bool) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.begin_array_value(writer, first)
    }

    fn end_array_value<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.end_array_value(writer)
    }

    fn begin_object<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.begin_object(writer)
    }

    fn end_object<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.end_object(writer)
    }

    fn begin_object_key<W>(&mut self, writer: &mut W, first: bool) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.begin_object_key(writer, first)
    }

    fn begin_object_value<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.begin_object_value(writer)
    }

    fn end_object_value<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.end_object_value(writer)
    }
}

/// Serializes any value to pretty JSON with 17-significant-digit reals and a
/// trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let mut out = Vec::new();
    let mut ser = Serializer::with_formatter(&mut out, SigFig17Pretty::default());
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json writes UTF-8"))
}

/// Mantissa / decimal-exponent decomposition of a double, for report fields
/// that must stay readable at extreme magnitudes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SciRepr {
    /// 17-significant-digit decimal string of the exact double.
    pub decimal: String,
    pub mantissa: f64,
    pub exponent10: i32,
}

impl SciRepr {
    pub fn of(value: f64) -> Self {
        let decimal = format!("{value:.16e}");
        if value == 0.0 || !value.is_finite() {
            return Self { decimal, mantissa: value, exponent10: 0 };
        }
        let exponent10 = value.abs().log10().floor() as i32;
        let mantissa = value / 10f64.powi(exponent10);
        Self { decimal, mantissa, exponent10 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{IntegralEstimate, Warning};

    #[test]
    fn estimate_serializes_with_17_digits_and_round_trips() {
        let est = IntegralEstimate {
            value: 1.213e26,
            sigma: 0.007e26,
            bias: -2.0190934e21,
            acceptance_pct: 49.62,
            block_factors: vec![0.99, 1.01, 1.0 + 1e-15],
            warnings: vec![Warning::LowAcceptance],
        };
        let json = to_json_string(&est).unwrap();
        // 17 significant digits of the double nearest 1.213e26.
        assert!(json.contains("\"value\": 1.2129999999999999e26"), "{json}");
        assert!(json.contains("low_acceptance"));
        let back: IntegralEstimate = serde_json::from_str(&json).unwrap();
        assert_eq!(back.value.to_bits(), est.value.to_bits());
        assert_eq!(back.sigma.to_bits(), est.sigma.to_bits());
        for (a, b) in back.block_factors.iter().zip(&est.block_factors) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn sci_repr_decomposition() {
        let r = SciRepr::of(3.189e156);
        assert_eq!(r.exponent10, 156);
        assert!((r.mantissa - 3.189).abs() < 1e-12);
        assert!(r.decimal.starts_with("3.189"));
        let z = SciRepr::of(0.0);
        assert_eq!(z.exponent10, 0);
        assert_eq!(z.mantissa, 0.0);
    }

    #[test]
    fn negative_and_tiny_values() {
        let r = SciRepr::of(-4.2e-7);
        assert_eq!(r.exponent10, -7);
        assert!((r.mantissa + 4.2).abs() < 1e-12);
        let json = to_json_string(&vec![-4.2e-7f64]).unwrap();
        let back: Vec<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back[0].to_bits(), (-4.2e-7f64).to_bits());
    }
}
