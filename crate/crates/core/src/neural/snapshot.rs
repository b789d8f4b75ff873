//! Plain-text parameter serialization.
//!
//! One `param <name> <rows> <cols>` header per tensor followed by its rows,
//! each value printed as `{:.16e}` (17 significant digits), which
//! round-trips every finite f64 bit-exactly through Rust's float parser.

use super::Parameterized;
use crate::error::{Error, Result};
use crate::tensor::Tensor2;
use std::io::{BufRead, Write};

pub fn write_tensor(w: &mut impl Write, name: &str, t: &Tensor2) -> std::io::Result<()> {
    writeln!(w, "param {} {} {}", name, t.rows(), t.cols())?;
    for i in 0..t.rows() {
        let row = t.row(i);
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                w.write_all(b" ")?;
            }
            write!(w, "{v:.16e}")?;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Write every parameter of `net` in visit order.
pub fn write_params(w: &mut impl Write, net: &impl Parameterized) -> std::io::Result<()> {
    let mut result = Ok(());
    net.visit_params(&mut |name, p| {
        if result.is_ok() {
            result = write_tensor(w, name, &p.value);
        }
    });
    result
}

/// Parse a stream of `param` blocks into named tensors.
pub fn read_params(r: impl BufRead) -> Result<Vec<(String, Tensor2)>> {
    let mut out = Vec::new();
    let mut lines = r.lines().enumerate();
    while let Some((lineno, line)) = lines.next() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let tag = parts.next().unwrap_or("");
        if tag != "param" {
            return Err(Error::Load {
                path: "<params>".into(),
                line: lineno + 1,
                msg: format!("expected 'param' header, found {tag:?}"),
            });
        }
        let name = parts
            .next()
            .ok_or_else(|| Error::Load {
                path: "<params>".into(),
                line: lineno + 1,
                msg: "param header missing name".into(),
            })?
            .to_string();
        let dims: Vec<usize> = parts
            .map(|p| p.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Load {
                path: "<params>".into(),
                line: lineno + 1,
                msg: format!("bad dims: {e}"),
            })?;
        if dims.len() != 2 {
            return Err(Error::Load {
                path: "<params>".into(),
                line: lineno + 1,
                msg: "param header needs rows and cols".into(),
            });
        }
        let (rows, cols) = (dims[0], dims[1]);
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (rno, row) = lines.next().ok_or_else(|| Error::Load {
                path: "<params>".into(),
                line: lineno + 1,
                msg: format!("truncated tensor {name}"),
            })?;
            let row = row?;
            let before = data.len();
            for tok in row.split_whitespace() {
                let v: f64 = tok.parse().map_err(|e| Error::Load {
                    path: "<params>".into(),
                    line: rno + 1,
                    msg: format!("bad float {tok:?}: {e}"),
                })?;
                data.push(v);
            }
            if data.len() - before != cols {
                return Err(Error::Load {
                    path: "<params>".into(),
                    line: rno + 1,
                    msg: format!(
                        "tensor {name}: row has {} values, expected {cols}",
                        data.len() - before
                    ),
                });
            }
        }
        out.push((name, Tensor2::from_vec(rows, cols, data)?));
    }
    Ok(out)
}

/// Assign parsed tensors back onto a network. Validates the complete entry
/// list against the network layout before mutating anything, so a mismatch
/// leaves the network untouched.
pub fn assign_params<N: Parameterized + ?Sized>(
    net: &mut N,
    entries: &[(String, Tensor2)],
) -> Result<()> {
    let mut expected = Vec::new();
    net.visit_params(&mut |name, p| expected.push((name.to_string(), p.value.shape())));
    if expected.len() != entries.len() {
        return Err(Error::shape(format!(
            "snapshot has {} tensors, network has {}",
            entries.len(),
            expected.len()
        )));
    }
    for ((ename, eshape), (name, t)) in expected.iter().zip(entries) {
        if ename != name {
            return Err(Error::shape(format!(
                "snapshot tensor {name:?} does not match expected {ename:?}"
            )));
        }
        if t.shape() != *eshape {
            return Err(Error::shape(format!(
                "snapshot tensor {name}: shape {:?} != expected {:?}",
                t.shape(),
                eshape
            )));
        }
    }
    let mut i = 0;
    net.visit_params_mut(&mut |_, p| {
        p.value = entries[i].1.clone();
        i += 1;
    });
    Ok(())
}
