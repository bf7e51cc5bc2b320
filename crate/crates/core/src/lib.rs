pub mod digest;
pub mod domain;
pub mod agents;
pub mod backends;
pub mod memory;
pub mod pipeline;
pub mod eval;
pub mod bench;
