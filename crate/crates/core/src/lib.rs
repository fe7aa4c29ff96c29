pub mod distill;
pub mod gateway;
pub mod graph;
pub mod ids;
pub mod import;
pub mod insight;
pub mod reflection;
pub mod service;
pub mod text;
pub mod transcript;
