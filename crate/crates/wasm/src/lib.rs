//! Browser demo bindings. Every export takes a JSON parameter object and
//! returns a JSON string; the same functions are callable natively through
//! [`demo`].

use wasm_bindgen::prelude::*;

pub mod demo;

fn call<P, R>(params: &str, f: impl FnOnce(&P) -> Result<R, demo::DemoError>) -> Result<String, JsError>
where
    P: serde::de::DeserializeOwned,
    R: serde::Serialize,
{
    let p: P = serde_json::from_str(if params.trim().is_empty() { "{}" } else { params })?;
    Ok(serde_json::to_string(&f(&p)?)?)
}

/// Per-sample core and spurious block means of a freshly generated training
/// split, for a 2-D scatter plot.
#[wasm_bindgen]
pub fn scatter(params: &str) -> Result<String, JsError> {
    call(params, demo::scatter)
}

/// Teacher, ERM, KD, SimKD and DeTT on one seed; average and per-group
/// accuracy for each.
#[wasm_bindgen]
pub fn compare_methods(params: &str) -> Result<String, JsError> {
    call(params, demo::compare_methods)
}

/// DeTT worst-group accuracy across upweighting factors.
#[wasm_bindgen]
pub fn lambda_sweep(params: &str) -> Result<String, JsError> {
    call(params, demo::lambda_sweep)
}
