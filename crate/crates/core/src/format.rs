//! Decimal output with 17 significant digits, enough to round-trip every
//! `f64` exactly.

use std::io;

use serde::Serialize;
use serde_json::ser::{CompactFormatter, Formatter, PrettyFormatter};

use crate::error::Result;

/// Formats a float with 17 significant digits in scientific notation.
pub fn fmt17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

struct Digits17<F>(F);

impl<F: Formatter> Formatter for Digits17<F> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(fmt17(value).as_bytes())
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }

    // Structural tokens are forwarded so pretty printing keeps its layout.
    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + io::Write>(
        &mut self,
        w: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + io::Write>(
        &mut self,
        w: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn end_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_key(w)
    }
    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Serializes to JSON, writing every float with 17 significant digits.
/// Non-finite floats become `null`.
pub fn to_json<T: Serialize + ?Sized>(value: &T, pretty: bool) -> Result<String> {
    let mut buf = Vec::new();
    if pretty {
        let mut ser =
            serde_json::Serializer::with_formatter(&mut buf, Digits17(PrettyFormatter::new()));
        value.serialize(&mut ser)?;
    } else {
        let mut ser = serde_json::Serializer::with_formatter(&mut buf, Digits17(CompactFormatter));
        value.serialize(&mut ser)?;
    }
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

/// Serde adapter writing a matrix as a list of rows.
pub mod matrix_rows {
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    use crate::numerics::Matrix;

    pub fn serialize<S: Serializer>(m: &Matrix, ser: S) -> Result<S::Ok, S::Error> {
        crate::model::matrix_to_rows(m).serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Matrix, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(de)?;
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        Ok(Matrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn seventeen_digits() {
        assert_eq!(fmt17(1.0), "1.0000000000000000e0");
        assert_eq!(fmt17(-0.1), "-1.0000000000000001e-1");
        assert_eq!(
            to_json(&vec![0.5, 2.0], false).unwrap(),
            "[5.0000000000000000e-1,2.0000000000000000e0]\n"
        );
        assert_eq!(to_json(&f64::INFINITY, false).unwrap(), "null\n");
    }

    proptest! {
        #[test]
        fn json_floats_round_trip_bit_exact(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let text = to_json(&x, false).unwrap();
            let back: f64 = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(back.to_bits(), x.to_bits());
            let parsed: f64 = fmt17(x).parse().unwrap();
            prop_assert_eq!(parsed.to_bits(), x.to_bits());
        }
    }
}
