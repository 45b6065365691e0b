//! Read-only HTTP API over a loaded analysis session: map slices, label
//! slices and per-voxel fitted curves with corrected observations.
//!
//! Endpoints (all JSON, arrays row-major, NaN as `null`):
//!
//! - `GET /api/meta`
//! - `GET /api/slice?axis={x|y|z}&index=<int>&map=<int>`
//! - `GET /api/labels?axis={x|y|z}&index=<int>`
//! - `GET /api/curves?i=<int>&j=<int>&k=<int>[&predictor=<name>]`
//!
//! Errors are `{"error": <message>, "code": <http status>}`.

mod curves;
mod server;
mod session;

pub use curves::{curves_at, CorrectedObservation, CurveBundle, ModelCurve};
pub use server::{bind, router, AppState, Explorer, ExplorerError};
pub use session::{slice, Axis, Meta, MapInfo, Session, Slice};
