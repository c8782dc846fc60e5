//! Fixtures shared by the criterion benches.

use hmtune_core::{Policy, RunOptions, Scenario, Simulation};

/// Reference network at `lambda`, shortened to `duration` seconds.
pub fn reference_at(lambda: f64, duration: f64) -> Scenario {
    let mut s = Scenario::reference();
    s.traffic.arrival_rate = lambda;
    s.sim_duration = duration;
    s
}

/// Steps `sim` through `warm_steps` snapshots so benches start from a
/// populated network.
pub fn warmed(scenario: &Scenario, policy: Policy, warm_steps: usize) -> Simulation<'_> {
    let mut sim = Simulation::new(scenario, RunOptions::new(policy)).expect("valid scenario");
    for _ in 0..warm_steps {
        sim.step().expect("consistent state");
    }
    sim
}
