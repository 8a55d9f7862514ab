//! Layer-wise LMO optimizers with compressed communication, simulated over
//! `n` deterministic workers.

pub mod comms;
pub mod compress;
pub mod data;
pub mod engine;
pub mod error;
pub mod lmo;
pub mod objective;
pub mod rng;
pub mod schedule;
pub mod tensor;

pub use comms::{expected_round_cost, ledger_vs_expected, CommLedger, RoundCostModel};
pub use compress::{Accounting, CompressorKind, CompressorSpec};
pub use engine::{AlgorithmVariant, RoundRecord, RunConfig, Simulation, StepSchedule};
pub use error::{Error, Result};
pub use objective::{solve_reference_optimum, Objective};
pub use schedule::{expected_oracle_count, preset, PresetKind, ScheduleConstants};
pub use tensor::{LayerSpec, LayeredTensor, Layout, NormKind, Shape};
