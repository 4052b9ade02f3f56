//! Hydraulic simulation and synthetic SCADA data.

mod attack;
mod series;
mod solver;

pub use attack::{inject_attack, mask_sensors, AttackKind, AttackSpec, LABEL_HEAD_THRESHOLD};
pub use series::{generate_series, GroundTruth, ScadaSeries, DEFAULT_TIMESTEP, START_TIME, TANK_MAX_LEVEL};
pub use solver::{
    fixed_heads, solve, solve_steady_state, HydraulicState, SolveInput, ENERGY_TOLERANCE, MASS_TOLERANCE,
    MAX_ITERATIONS,
};
