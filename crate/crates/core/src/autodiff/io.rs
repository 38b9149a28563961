//! Plain-text parameter files.
//!
//! Each parameter is one section: a header line `name d0 d1 ...` followed
//! by the row-major values, one row of the last dimension per line, written
//! with 17 significant digits. Sections are separated by a blank line.

use std::fmt::Write as _;

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub fn params_to_string<S: Scalar>(params: &ParamSet<S>) -> String {
    let mut out = String::new();
    for (i, (name, t)) in params.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(name);
        for d in t.shape() {
            write!(out, " {d}").unwrap();
        }
        out.push('\n');
        let (_, cols) = t.rows_cols();
        for row in t.data().chunks(cols) {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(' ');
                }
                first = false;
                write!(out, "{:.16e}", v.as_f64()).unwrap();
            }
            out.push('\n');
        }
    }
    out
}

pub fn params_from_str<S: Scalar>(text: &str, origin: &std::path::Path) -> Result<ParamSet<S>> {
    let parse_err = |line: usize, column: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        column,
        message,
    };
    let mut params = ParamSet::new();
    let mut lines = text.lines().enumerate().peekable();
    while let Some((lineno, header)) = lines.next() {
        if header.trim().is_empty() {
            continue;
        }
        let mut parts = header.split_whitespace();
        let name = parts.next().unwrap().to_string();
        let shape = parts
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(lineno + 1, 1, format!("bad shape for `{name}`: {e}")))?;
        if shape.is_empty() {
            return Err(parse_err(
                lineno + 1,
                1,
                format!("missing shape for `{name}`"),
            ));
        }
        let expected: usize = shape.iter().product();
        let mut data = Vec::with_capacity(expected);
        while data.len() < expected {
            let Some((vline, row)) = lines.next() else {
                return Err(parse_err(
                    lineno + 1,
                    1,
                    format!("`{name}` truncated: {} of {expected} values", data.len()),
                ));
            };
            for (col, tok) in row.split_whitespace().enumerate() {
                let v: f64 = tok.parse().map_err(|e| {
                    parse_err(vline + 1, col + 1, format!("bad value `{tok}`: {e}"))
                })?;
                data.push(S::of(v));
            }
        }
        if data.len() != expected {
            return Err(parse_err(
                lineno + 1,
                1,
                format!("`{name}` has extra values"),
            ));
        }
        params.insert(name, Tensor::new(shape, data)?)?;
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::path::Path;

    proptest! {
        #[test]
        fn round_trip_is_value_exact(
            a in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 6),
            b in proptest::collection::vec(-1e6f64..1e6, 3),
        ) {
            let p = ParamSet::new()
                .with("layer.weight", Tensor::new(vec![2, 3], a).unwrap()).unwrap()
                .with("layer.bias", Tensor::new(vec![3], b).unwrap()).unwrap();
            let text = params_to_string(&p);
            let back: ParamSet<f64> = params_from_str(&text, Path::new("mem")).unwrap();
            prop_assert_eq!(back, p);
        }
    }

    #[test]
    fn layout_matches_format() {
        let p = ParamSet::new()
            .with(
                "w",
                Tensor::new(vec![2, 2], vec![1.0, 0.5, -2.0, 0.1]).unwrap(),
            )
            .unwrap();
        let text = params_to_string(&p);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "w 2 2");
        assert_eq!(lines[1], "1.0000000000000000e0 5.0000000000000000e-1");
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn truncated_input_is_an_error() {
        let err = params_from_str::<f64>("w 2 2\n1 2\n", Path::new("m.params")).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
        let err = params_from_str::<f64>("w 2\n1 x\n", Path::new("m.params")).unwrap_err();
        assert!(err.to_string().contains("m.params:2:2"), "{err}");
    }
}
