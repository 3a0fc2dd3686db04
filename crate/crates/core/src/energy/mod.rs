//! Geothermal harvesting feasibility: thermal divider, matched-load TEG
//! power, trace analysis and node energy budgets.

pub mod budget;
pub mod params;
pub mod teg;
pub mod thermal;
pub mod trace;

pub use budget::{
    node_energy_budget, BudgetError, BudgetVerdict, EnergySource, ModeDraw, PowerProfile,
    PowerProfileBudget, HOURS_PER_YEAR,
};
pub use params::{HarvesterParams, ParamError, ParamFile};
pub use teg::{
    calibrate_r_elec, cross_check, teg_power, CrossCheck, TegError, TegParams, CONVEXITY_CAVEAT,
};
pub use thermal::{
    delta_t_teg, r_cylinder, r_interface, r_plate, ThermalError, ThermalStack, COPPER_CONDUCTIVITY,
};
pub use trace::{
    analyze_trace, read_trace_csv, AnalysisOptions, FeasibilityReport, TemperatureSample,
    TraceError,
};
