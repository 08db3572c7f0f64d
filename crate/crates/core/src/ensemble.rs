//! Deterministic parallel reduction of per-path observable trajectories.
//!
//! Paths are grouped into fixed-size chunks; each chunk is reduced serially
//! (Welford) and chunk summaries are merged in chunk order. The result depends
//! only on `n_paths`, never on the worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CHUNK: usize = 256;

/// Monte Carlo statistics of `E g(x_k)` on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub observable: String,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_paths: usize,
    pub seed: u64,
}

#[derive(Clone)]
struct Moments {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(len: usize) -> Self {
        Moments {
            n: 0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    fn push(&mut self, values: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(values) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
    }

    fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other.clone();
            return;
        }
        let na = self.n as f64;
        let nb = other.n as f64;
        let n = na + nb;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / n;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / n;
        }
        self.n += other.n;
    }
}

/// Runs `path_fn(p)` for every path and reduces the returned trajectories.
///
/// `threads = Some(k)` runs on a dedicated pool of `k` workers; `None` uses the
/// global rayon pool.
pub fn reduce_paths<F>(n_paths: usize, len: usize, threads: Option<usize>, path_fn: F) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: Fn(u64) -> Result<Vec<f64>> + Sync + Send,
{
    if n_paths < 2 {
        return Err(Error::invalid("an ensemble needs at least 2 paths"));
    }
    let n_chunks = n_paths.div_ceil(CHUNK);
    let work = || -> Result<Vec<Moments>> {
        (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let mut acc = Moments::new(len);
                let end = ((c + 1) * CHUNK).min(n_paths);
                for p in (c * CHUNK)..end {
                    let traj = path_fn(p as u64)?;
                    debug_assert_eq!(traj.len(), len);
                    acc.push(&traj);
                }
                Ok(acc)
            })
            .collect()
    };
    let chunks = match threads {
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k.max(1))
                .build()
                .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
            pool.install(work)?
        }
        None => work()?,
    };
    let mut total = Moments::new(len);
    for c in &chunks {
        total.merge(c);
    }
    let n = total.n as f64;
    let stderr = total
        .m2
        .iter()
        .map(|s| (s.max(0.0) / (n - 1.0)).sqrt() / n.sqrt())
        .collect();
    Ok((total.mean, stderr))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_two_pass_statistics() {
        let f = |p: u64| Ok(vec![(p as f64).sin(), (p as f64 * 0.37).cos() * 3.0]);
        let n = 1000;
        let (mean, se) = reduce_paths(n, 2, Some(3), f).unwrap();
        for i in 0..2 {
            let xs: Vec<f64> = (0..n as u64).map(|p| f(p).unwrap()[i]).collect();
            let m = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((mean[i] - m).abs() < 1e-12);
            assert!((se[i] - (var / n as f64).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn independent_of_thread_count() {
        let f = |p: u64| Ok(vec![((p * 7919) % 1013) as f64 / 1013.0; 3]);
        let a = reduce_paths(5000, 3, Some(1), f).unwrap();
        let b = reduce_paths(5000, 3, Some(7), f).unwrap();
        let c = reduce_paths(5000, 3, None, f).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn constant_paths_have_zero_error() {
        let (mean, se) = reduce_paths(777, 1, None, |_| Ok(vec![0.1])).unwrap();
        assert_eq!(mean, vec![0.1]);
        assert_eq!(se, vec![0.0]);
    }
}
