//! Replica-parallel execution.
//!
//! Each replica `i` of a run with seed `s` draws from the stream `(s, i)`.
//! Results are collected in replica order and folded sequentially, so the
//! aggregate does not depend on how many worker threads ran the replicas.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{replica_rng, ReplicaRng};
use crate::stats::{Accumulator, McEstimate};

/// Runs `replicas` independent replicas and returns their outputs in
/// replica order.
pub fn run_replicas<T, F>(seed: u64, replicas: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, &mut ReplicaRng) -> Result<T> + Sync,
{
    (0..replicas)
        .into_par_iter()
        .map(|i| {
            let mut rng = replica_rng(seed, i);
            f(i, &mut rng).map_err(|e| Error::Replica {
                replica: i,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Runs scalar-valued replicas and summarises them. The closure returns the
/// replica value and whether it was censored.
pub fn estimate<F>(seed: u64, replicas: u64, f: F) -> Result<McEstimate>
where
    F: Fn(u64, &mut ReplicaRng) -> Result<(f64, bool)> + Sync,
{
    let values = run_replicas(seed, replicas, f)?;
    let mut acc = Accumulator::new();
    for (v, c) in values {
        acc.push_censored(v, c);
    }
    Ok(acc.estimate(seed))
}

/// Like [`estimate`] for replicas that produce one value per entry of a
/// fixed-length vector (for example one value per observation time).
pub fn estimate_many<F>(seed: u64, replicas: u64, width: usize, f: F) -> Result<Vec<McEstimate>>
where
    F: Fn(u64, &mut ReplicaRng) -> Result<Vec<f64>> + Sync,
{
    let values = run_replicas(seed, replicas, f)?;
    let mut accs = vec![Accumulator::new(); width];
    for row in values {
        if row.len() != width {
            return Err(Error::InvalidParameter(format!(
                "replica produced {} values, expected {width}",
                row.len()
            )));
        }
        for (acc, v) in accs.iter_mut().zip(row) {
            acc.push(v);
        }
    }
    Ok(accs.iter().map(|a| a.estimate(seed)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngExt;

    #[test]
    fn worker_count_does_not_change_the_aggregate() {
        let job = || {
            estimate(11, 500, |_, rng| Ok((rng.random::<f64>(), false))).unwrap()
        };
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(job);
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(job);
        assert_eq!(one, four);
    }

    #[test]
    fn replica_errors_carry_their_index() {
        let err = run_replicas(1, 10, |i, _| {
            if i == 7 {
                Err(Error::AtOrigin)
            } else {
                Ok(())
            }
        })
        .unwrap_err();
        assert!(matches!(err, Error::Replica { replica: 7, .. }));
    }

    #[test]
    fn zero_replicas_is_empty() {
        let e = estimate(1, 0, |_, _| Ok((1.0, false))).unwrap();
        assert_eq!(e.replicas, 0);
    }
}
