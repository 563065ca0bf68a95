//! Feature export: one CSV row per sample with the head's input vector.

use std::fmt::Write as _;

use dett_core::datagen::Dataset;
use dett_core::nncore::Mlp;

use crate::error::Result;

/// Header `y,a,group,f0..f{d-1}` followed by one row per sample, values at
/// 17 significant digits.
pub fn features_csv(model: &Mlp, data: &Dataset) -> Result<String> {
    let features = model.forward_features(data.x())?;
    let mut out = String::from("y,a,group");
    for j in 0..features.cols() {
        let _ = write!(out, ",f{j}");
    }
    out.push('\n');
    for (i, row) in features.iter_rows().enumerate() {
        let _ = write!(out, "{},{},{}", data.raw_labels()[i], data.attrs()[i], data.groups()[i]);
        for v in row {
            let _ = write!(out, ",{v:.16e}");
        }
        out.push('\n');
    }
    Ok(out)
}
