//! `DETT-DATA 1` text datasets.
//!
//! ```text
//! DETT-DATA 1 <n> <d> <n_classes> <n_attrs> [unlabeled]
//! <y> <a> <weight> <d feature values>
//! ...
//! ```
//!
//! Numbers use 17 significant digits so every `f64` round-trips exactly.

use std::io::{BufRead, Write};

use super::Dataset;
use crate::error::{Error, Result};
use crate::nncore::{fmt_f64, parse_f64, Matrix};

pub const DATA_MAGIC: &str = "DETT-DATA";
pub const DATA_VERSION: &str = "1";

pub fn write_dataset<W: Write>(data: &Dataset, mut out: W) -> Result<()> {
    write!(
        out,
        "{DATA_MAGIC} {DATA_VERSION} {} {} {} {}",
        data.len(),
        data.d(),
        data.n_classes(),
        data.n_attrs()
    )?;
    if !data.labels_usable() {
        write!(out, " unlabeled")?;
    }
    writeln!(out)?;
    for i in 0..data.len() {
        let mut line = format!("{} {} {}", data.raw_labels()[i], data.attrs()[i], fmt_f64(data.weights()[i]));
        for &v in data.x().row(i) {
            line.push(' ');
            line.push_str(&fmt_f64(v));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn dataset_to_string(data: &Dataset) -> String {
    let mut buf = Vec::new();
    write_dataset(data, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("dataset text is ASCII")
}

pub fn read_dataset<R: BufRead>(input: R) -> Result<Dataset> {
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| Error::parse(1, "empty dataset file"))??;
    let toks: Vec<&str> = header.split_ascii_whitespace().collect();
    if toks.len() < 6 || toks[0] != DATA_MAGIC || toks[1] != DATA_VERSION {
        return Err(Error::parse(1, format!("bad header {header:?}")));
    }
    let num = |i: usize, name: &str| -> Result<usize> {
        toks[i].parse().map_err(|_| Error::parse(1, format!("invalid {name}: {:?}", toks[i])))
    };
    let (n, d, n_classes, n_attrs) = (num(2, "n")?, num(3, "d")?, num(4, "n_classes")?, num(5, "n_attrs")?);
    let unlabeled = match toks.get(6) {
        None => false,
        Some(&"unlabeled") if toks.len() == 7 => true,
        Some(other) => return Err(Error::parse(1, format!("unexpected header token {other:?}"))),
    };

    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_ascii_whitespace().collect();
        if toks.len() != 3 + d {
            return Err(Error::parse(lineno, format!("expected {} fields, found {}", 3 + d, toks.len())));
        }
        let idx = |t: &str, name: &str| -> Result<usize> {
            t.parse().map_err(|_| Error::parse(lineno, format!("invalid {name}: {t:?}")))
        };
        y.push(idx(toks[0], "label")?);
        a.push(idx(toks[1], "attribute")?);
        w.push(parse_f64(toks[2], lineno)?);
        for t in &toks[3..] {
            x.push(parse_f64(t, lineno)?);
        }
    }
    if y.len() != n {
        return Err(Error::parse(0, format!("header declares {n} samples, found {}", y.len())));
    }
    let mut data = Dataset::new(Matrix::from_vec(n, d, x)?, y, a, n_classes, n_attrs)?.with_weights(w)?;
    data.set_labels_usable(!unlabeled);
    Ok(data)
}

pub fn dataset_from_str(text: &str) -> Result<Dataset> {
    read_dataset(text.as_bytes())
}

pub fn save_dataset(data: &Dataset, path: &std::path::Path) -> Result<()> {
    crate::io::write_atomic(path, dataset_to_string(data).as_bytes())
}

pub fn load_dataset(path: &std::path::Path) -> Result<Dataset> {
    read_dataset(std::io::BufReader::new(std::fs::File::open(path)?))
}
