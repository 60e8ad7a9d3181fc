//! Battery-aware receding-horizon task scheduling for LEO satellites.
//!
//! * [`battery`]: kinetic battery model, load profiles and the voltage map.
//! * [`mission`]: scenario data (payloads, windows, sunlight, passes) and CSV I/O.
//! * [`scheduler`]: reward-maximal window selection under a state-of-charge floor.
//! * [`estimator`]: telemetry-driven state-of-charge correction.
//! * [`orchestrator`]: the pass-driven replanning loop and flight-plan handling.
//! * [`satsim`]: a ground-truth satellite used to close the loop.

pub mod battery;
pub mod mission;
pub mod scheduler;
pub mod estimator;
pub mod orchestrator;
pub mod satsim;
