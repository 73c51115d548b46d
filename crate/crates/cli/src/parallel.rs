//! Deterministic shot-level parallelism.
//!
//! Shots are independent given their per-index RNG streams, so the worker
//! pool only changes scheduling, never results: records come back in index
//! order and all aggregation happens on that ordered sequence afterwards.

use rayon::prelude::*;

use tbi_core::protocol::{
    estimate_q_from_records, run_shot, ExperimentConfig, QEstimate, ShotRecord,
};
use tbi_core::rng::Seeder;

use crate::error::{CliError, CliResult};

pub struct WorkerPool {
    pool: rayon::ThreadPool,
}

impl WorkerPool {
    pub fn new(workers: usize) -> CliResult<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| CliError::io(format!("worker pool: {e}")))?;
        Ok(Self { pool })
    }

    /// Runs `n_shots` shots of the protocol, one stream per shot index.
    pub fn run_shots(
        &self,
        tau: f64,
        n_shots: u64,
        config: &ExperimentConfig,
        seeder: &Seeder,
        domain: &str,
    ) -> CliResult<Vec<ShotRecord>> {
        let prep = config.prepare()?;
        let records: Result<Vec<ShotRecord>, tbi_core::Error> = self.pool.install(|| {
            (0..n_shots)
                .into_par_iter()
                .map(|i| run_shot(tau, &prep, &mut seeder.stream(domain, i)))
                .collect()
        });
        Ok(records?)
    }

    /// Parallel counterpart of `protocol::estimate_q`, with the same
    /// minimum-shot precondition.
    pub fn estimate_q(
        &self,
        tau: f64,
        n_shots: u64,
        config: &ExperimentConfig,
        seeder: &Seeder,
        domain: &str,
    ) -> CliResult<(QEstimate, Vec<ShotRecord>)> {
        if n_shots < 10 * config.batch_size as u64 {
            return Err(CliError::new(
                "DOMAIN",
                format!(
                    "n_shots = {n_shots} below 10 * batch_size = {}",
                    10 * config.batch_size as u64
                ),
            ));
        }
        let records = self.run_shots(tau, n_shots, config, seeder, domain)?;
        let estimate = estimate_q_from_records(records.iter(), config)?;
        Ok((estimate, records))
    }

    /// Generic deterministic map over indexed work units.
    pub fn map_indexed<T: Send>(
        &self,
        n: u64,
        f: impl Fn(u64) -> CliResult<T> + Sync,
    ) -> CliResult<Vec<T>> {
        self.pool
            .install(|| (0..n).into_par_iter().map(&f).collect())
    }
}
