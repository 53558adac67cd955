pub mod classify;
pub mod expr;
pub mod intervalopt;
pub mod lds;
pub mod misdp;
pub mod model;
pub mod observer;
pub mod sdp;
pub mod traffic;

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
