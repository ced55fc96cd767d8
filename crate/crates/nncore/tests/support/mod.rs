#[allow(dead_code)]
pub mod layer_cases;
