//! Traffic-intensity sweeps: independent runs over (lambda, seed, policy).

use rayon::prelude::*;

use crate::engine::{run_with, Policy, RunOptions};
use crate::error::Result;
use crate::metrics::{MetricsReport, SummaryRow};
use crate::scenario::Scenario;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    pub lambdas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub policies: Vec<Policy>,
    /// Worker threads; `None` uses every core.
    pub parallelism: Option<usize>,
}

impl SweepPlan {
    pub fn new(lambdas: Vec<f64>, seeds: Vec<u64>) -> Self {
        Self {
            lambdas,
            seeds,
            policies: Policy::ALL.to_vec(),
            parallelism: None,
        }
    }

    /// Runs in output order: lambda-major, then seed, then policy.
    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out = Vec::with_capacity(self.lambdas.len() * self.seeds.len() * self.policies.len());
        for &lambda in &self.lambdas {
            for &seed in &self.seeds {
                for &policy in &self.policies {
                    out.push(SweepPoint {
                        lambda,
                        seed,
                        policy,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub lambda: f64,
    pub seed: u64,
    pub policy: Policy,
}

impl SweepPoint {
    pub fn scenario(&self, base: &Scenario) -> Scenario {
        let mut s = base.clone();
        s.traffic.arrival_rate = self.lambda;
        s.rng_seed = self.seed;
        s
    }

    /// Directory-friendly run name, e.g. `lambda4.5_seed3_auto`.
    pub fn label(&self) -> String {
        format!("lambda{}_seed{}_{}", self.lambda, self.seed, self.policy)
    }
}

#[derive(Debug)]
pub struct SweepRun {
    pub point: SweepPoint,
    pub outcome: Result<MetricsReport>,
}

impl SweepRun {
    pub fn summary(&self) -> Option<SummaryRow> {
        self.outcome.as_ref().ok().map(|r| {
            SummaryRow::from_report(self.point.lambda, self.point.policy, self.point.seed, r)
        })
    }
}

/// Executes every point of `plan` concurrently. Each run owns its state;
/// results come back in [`SweepPlan::points`] order.
pub fn run_sweep(base: &Scenario, plan: &SweepPlan) -> Vec<SweepRun> {
    let points = plan.points();
    let work = || {
        points
            .par_iter()
            .map(|&point| {
                let scenario = point.scenario(base);
                let outcome = run_with(&scenario, RunOptions::new(point.policy)).map(|o| o.report);
                SweepRun { point, outcome }
            })
            .collect()
    };
    match plan.parallelism {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map(|pool| pool.install(work))
            .unwrap_or_else(|_| work()),
        None => work(),
    }
}
