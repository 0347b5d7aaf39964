//! Admission control, grid-power allocation and customer routing for a
//! network of EV charging stations with local energy storage.
//!
//! The pieces compose bottom-up: [`station`] solves the per-station loss
//! chain, [`pricing`] turns load into a congestion price, [`allocation`]
//! splits the grid budget, [`game`] decides where each customer charges, and
//! [`sim`] runs it all as a discrete-event simulation driven by [`demand`].

pub mod allocation;
pub mod demand;
pub mod error;
pub mod game;
pub mod location;
pub mod output;
pub mod pricing;
pub mod scenario;
pub mod sim;
pub mod station;

pub use allocation::{allocate, phase1_allocate, phase2_redistribute, AllocationReport, NetworkTopology};
pub use demand::{nearest_station, rate_at, sample_location, station_shares, DemandProfile, SpatialDemand};
pub use error::{Error, Result};
pub use game::{decentralized_control_step, ev_choose, ev_utility, leader_payoff, tune_theta, EvCustomer, GameOutcome};
pub use location::Location;
pub use pricing::{acceptance_fraction, congestion_price, effective_rate, ArrivalStreams, PriceSignal};
pub use scenario::{preset, NetworkScenario, ScenarioFile, ScenarioTier};
pub use sim::{compare_tiers, network_weighted_blocking, run_simulation, SimMetrics};
pub use station::{
    blocking_probability, build_generator, max_admissible_rate, stationary_distribution, weighted_blocking,
    BlockingWeights, MarkovModel, StationConfig, StationState,
};
