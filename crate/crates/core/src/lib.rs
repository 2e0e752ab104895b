pub mod error;
pub mod grid;
pub mod kernel;
pub mod model;
pub mod oracle;
pub mod scheme;
pub mod diagnostics;
pub mod config;
pub mod presets;
pub mod io;
pub mod selftest;
