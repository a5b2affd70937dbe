//! Traffic-light assistant library.
//!
//! A connected electric vehicle approaches signalized intersections and
//! pedestrian crossings. Red phases and occupied crossings are modeled as
//! time-dependent upper bounds on position; a receding-horizon optimizer
//! picks acceleration commands that trade battery energy, comfort, and
//! timeliness against those bounds. V2X messages feed the optimizer only
//! after their dependability contracts (a small XML dialect) are checked
//! against the platform's capabilities.

pub mod ddi;
pub mod mpc;
pub mod plot;
pub mod reference;
pub mod route;
pub mod run;
pub mod scenario;
pub mod signal;
pub mod vehicle;
pub mod world;
