//! Simulator for a driven electron spin coupled to one nuclear spin:
//! operators and open-system propagation, pulse sequences, optical readout,
//! experiment sweeps and curve fitting.

pub mod config;
pub mod dynamics;
pub mod experiments;
pub mod fitting;
pub mod model;
pub mod operator;
pub mod pulse;
pub mod readout;
pub mod spin;
pub mod units;

pub use config::{ConfigError, FluorescenceConfig, GridSpec, ParamsConfig};
pub use dynamics::{Channel, ChannelLabel, DynamicsError, Propagator};
pub use experiments::{check_driver, DriverInfo, DriverOptions, ExperimentError, SweepPoint, SweepResult};
pub use fitting::{FitError, FitResult, Model};
pub use model::{DriveKind, DriveParams, ModelError, SystemParams};
pub use operator::{ComplexMatrix, DensityMatrix, OperatorError, StateError, Superoperator, C64};
pub use pulse::{Knobs, Segment, SegmentKind, Sequence, Template};
pub use readout::{FluorescenceParams, ReadoutError, ReadoutWindow};
