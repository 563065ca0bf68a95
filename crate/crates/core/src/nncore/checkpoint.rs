//! `DETT-CKPT 1` text checkpoints.
//!
//! ```text
//! DETT-CKPT 1
//! <role> <d_out> <d_in> <frozen 0|1> <d_out*d_in weights, row-major> <d_out biases>
//! ...
//! ```
//!
//! Values are written with 17 significant digits, which round-trips every
//! finite `f64` exactly.

use std::io::{BufRead, Write};

use super::{LayerRole, Linear, Matrix, Mlp};
use crate::error::{Error, Result};

pub const CHECKPOINT_HEADER: &str = "DETT-CKPT 1";

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| Error::parse(line, format!("not a number: {tok:?}")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("non-finite value {tok:?}")));
    }
    Ok(v)
}

pub fn write_checkpoint<W: Write>(model: &Mlp, mut out: W) -> Result<()> {
    writeln!(out, "{CHECKPOINT_HEADER}")?;
    for (role, layer) in model.layers() {
        let mut line = format!(
            "{} {} {} {}",
            role.tag(),
            layer.d_out(),
            layer.d_in(),
            u8::from(layer.frozen)
        );
        for &v in layer.weight.as_slice().iter().chain(&layer.bias) {
            line.push(' ');
            line.push_str(&fmt_f64(v));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn checkpoint_to_string(model: &Mlp) -> String {
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("checkpoint text is ASCII")
}

pub fn read_checkpoint<R: BufRead>(input: R) -> Result<Mlp> {
    let mut lines = input.lines().enumerate();
    match lines.next() {
        Some((_, Ok(h))) if h.trim() == CHECKPOINT_HEADER => {}
        Some((_, Ok(h))) => return Err(Error::parse(1, format!("expected {CHECKPOINT_HEADER:?}, found {h:?}"))),
        Some((_, Err(e))) => return Err(e.into()),
        None => return Err(Error::parse(1, "empty checkpoint")),
    }
    let mut features = Vec::new();
    let mut projector = None;
    let mut head = None;
    for (i, line) in lines {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if head.is_some() {
            return Err(Error::parse(lineno, "layer after head"));
        }
        let mut toks = line.split_ascii_whitespace();
        let tag = toks.next().unwrap_or_default();
        let role = LayerRole::from_tag(tag).ok_or_else(|| Error::parse(lineno, format!("unknown role {tag:?}")))?;
        let mut dim = |name: &str| -> Result<usize> {
            toks.next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::parse(lineno, format!("missing or invalid {name}")))
        };
        let d_out = dim("d_out")?;
        let d_in = dim("d_in")?;
        let frozen = match toks.next() {
            Some("0") => false,
            Some("1") => true,
            other => return Err(Error::parse(lineno, format!("frozen flag must be 0 or 1, got {other:?}"))),
        };
        let values = toks.map(|t| parse_f64(t, lineno)).collect::<Result<Vec<_>>>()?;
        let expected = d_out * (d_in + 1);
        if values.len() != expected {
            return Err(Error::parse(lineno, format!("expected {expected} values, found {}", values.len())));
        }
        let (w, b) = values.split_at(d_out * d_in);
        let mut layer = Linear::new(Matrix::from_vec(d_out, d_in, w.to_vec())?, b.to_vec())?;
        layer.frozen = frozen;
        match role {
            LayerRole::Feature if projector.is_none() => features.push(layer),
            LayerRole::Feature => return Err(Error::parse(lineno, "feature layer after projector")),
            LayerRole::Projector if projector.is_none() => projector = Some(layer),
            LayerRole::Projector => return Err(Error::parse(lineno, "more than one projector")),
            LayerRole::Head => head = Some(layer),
        }
    }
    let head = head.ok_or_else(|| Error::parse(0, "checkpoint has no head layer"))?;
    Mlp::new(features, projector, head)
}

pub fn checkpoint_from_str(text: &str) -> Result<Mlp> {
    read_checkpoint(text.as_bytes())
}

pub fn save_checkpoint(model: &Mlp, path: &std::path::Path) -> Result<()> {
    crate::io::write_atomic(path, checkpoint_to_string(model).as_bytes())
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<Mlp> {
    let f = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(f))
}
