//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each export takes a JSON scenario and returns a JSON string, or throws the
//! error message.

pub mod demo;

use wasm_bindgen::prelude::*;

fn js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

/// Runs a full simulation on synthetic contexts.
#[wasm_bindgen]
pub fn simulate(scenario: &str) -> Result<String, JsValue> {
    js(demo::simulate_json(scenario))
}

/// `e(K)` table from the first round of CGPFL-Heur.
#[wasm_bindgen]
pub fn heuristic_scores(scenario: &str) -> Result<String, JsValue> {
    js(demo::heuristic_json(scenario))
}

/// Training samples of every client, for plotting.
#[wasm_bindgen]
pub fn synth_points(scenario: &str) -> Result<String, JsValue> {
    js(demo::points_json(scenario))
}
