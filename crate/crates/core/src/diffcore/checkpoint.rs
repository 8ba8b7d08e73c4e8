//! Parameter checkpoints as a plain text list of (name, shape, values)
//! records.
//!
//! Format, one record per parameter in registration order:
//!
//! ```text
//! duparams v1
//! param <name> <trainable 0|1> <rank> <dim...>
//! <value value ...>
//! end
//! ```
//!
//! Values print in Rust's shortest round-trip decimal form, so a
//! save/load cycle reproduces every f64 bit-exactly and the file is
//! locale- and endian-independent.

use crate::diffcore::params::ParamStore;
use crate::diffcore::tensor::Tensor;
use crate::error::{CoreError, Result};
use std::fmt::Write as _;
use std::path::Path;

const MAGIC: &str = "duparams v1";

pub fn serialize(store: &ParamStore) -> String {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    for entry in store.entries() {
        write!(
            out,
            "param {} {} {}",
            entry.name,
            u8::from(entry.trainable),
            entry.value.shape().len()
        )
        .unwrap();
        for d in entry.value.shape() {
            write!(out, " {d}").unwrap();
        }
        out.push('\n');
        let mut first = true;
        for v in entry.value.data() {
            if !first {
                out.push(' ');
            }
            write!(out, "{v}").unwrap();
            first = false;
        }
        out.push('\n');
    }
    out.push_str("end\n");
    out
}

pub fn deserialize(text: &str) -> Result<ParamStore> {
    let mut lines = text.lines().enumerate();
    let parse_err = |line: usize, msg: &str| CoreError::Parse {
        line: line + 1,
        msg: msg.to_string(),
    };
    let (ln, header) = lines
        .next()
        .ok_or_else(|| parse_err(0, "empty checkpoint"))?;
    if header.trim() != MAGIC {
        return Err(parse_err(ln, "bad checkpoint header"));
    }
    let mut store = ParamStore::new();
    loop {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| parse_err(0, "missing end marker"))?;
        let line = line.trim();
        if line == "end" {
            return Ok(store);
        }
        let mut parts = line.split_whitespace();
        if parts.next() != Some("param") {
            return Err(parse_err(ln, "expected a param record"));
        }
        let name = parts
            .next()
            .ok_or_else(|| parse_err(ln, "missing parameter name"))?;
        let trainable = match parts.next() {
            Some("0") => false,
            Some("1") => true,
            _ => return Err(parse_err(ln, "missing trainable flag")),
        };
        let rank: usize = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| parse_err(ln, "missing rank"))?;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d: usize = parts
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| parse_err(ln, "missing dimension"))?;
            shape.push(d);
        }
        if parts.next().is_some() {
            return Err(parse_err(ln, "trailing tokens after shape"));
        }
        let numel: usize = shape.iter().product();
        let (vln, vline) = lines
            .next()
            .ok_or_else(|| parse_err(ln, "missing value line"))?;
        let mut values = Vec::with_capacity(numel);
        for tok in vline.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(vln, &format!("bad value {tok}")))?;
            values.push(v);
        }
        if values.len() != numel {
            return Err(parse_err(
                vln,
                &format!("expected {} values, got {}", numel, values.len()),
            ));
        }
        store.register(name, Tensor::from_vec(&shape, values)?, trainable)?;
    }
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    std::fs::write(path, serialize(store))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamStore> {
    let text = std::fs::read_to_string(path)?;
    deserialize(&text)
}
