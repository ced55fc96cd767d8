#[allow(dead_code)]
pub mod decoder;
#[allow(dead_code)]
pub mod oracles;
