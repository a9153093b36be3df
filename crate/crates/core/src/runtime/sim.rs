//! Deterministic model of the fetch protocol: workers start together, fetch
//! through a serialized queue and run every block at a fixed cost. Used to
//! report the idle-worker figures independently of OS scheduling.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimFetch {
    pub worker: usize,
    pub first: usize,
    pub count: usize,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Schedule {
    pub pool: usize,
    pub grain: usize,
    pub total_blocks: usize,
    pub fetches: Vec<SimFetch>,
    pub per_worker_blocks: Vec<usize>,
    pub idle_workers: usize,
    pub makespan: f64,
}

/// `block_cost` and `fetch_cost` are in arbitrary time units. The queue
/// guard admits one fetch at a time.
pub fn simulate_schedule(total_blocks: usize, grain: usize, pool: usize, block_cost: f64, fetch_cost: f64) -> Schedule {
    let pool = pool.max(1);
    let grain = grain.max(1);
    let mut free_at = vec![0.0f64; pool];
    let mut queue_free = 0.0f64;
    let mut next = 0usize;
    let mut fetches = Vec::new();
    let mut per_worker_blocks = vec![0usize; pool];
    while next < total_blocks {
        let w = (0..pool)
            .min_by(|&a, &b| free_at[a].total_cmp(&free_at[b]).then(a.cmp(&b)))
            .expect("pool is non-empty");
        let start = free_at[w].max(queue_free);
        queue_free = start + fetch_cost;
        let count = grain.min(total_blocks - next);
        let end = queue_free + count as f64 * block_cost;
        fetches.push(SimFetch { worker: w, first: next, count, start, end });
        per_worker_blocks[w] += count;
        free_at[w] = end;
        next += count;
    }
    let makespan = fetches.iter().map(|f| f.end).fold(0.0, f64::max);
    Schedule {
        pool,
        grain,
        total_blocks,
        idle_workers: per_worker_blocks.iter().filter(|&&b| b == 0).count(),
        fetches,
        per_worker_blocks,
        makespan,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid12_pool3() {
        let avg = simulate_schedule(12, 4, 3, 1.0, 0.1);
        assert_eq!((avg.fetches.len(), avg.idle_workers), (3, 0));
        assert_eq!(avg.per_worker_blocks, vec![4, 4, 4]);
        let aggr = simulate_schedule(12, 6, 3, 1.0, 0.1);
        assert_eq!((aggr.fetches.len(), aggr.idle_workers), (2, 1));
        let one = simulate_schedule(12, 12, 3, 1.0, 0.1);
        assert_eq!((one.fetches.len(), one.idle_workers), (1, 2));
    }

    #[test]
    fn fetches_are_serialized() {
        let s = simulate_schedule(8, 1, 4, 1.0, 0.5);
        let starts: Vec<f64> = s.fetches.iter().take(4).map(|f| f.start).collect();
        assert_eq!(starts, vec![0.0, 0.5, 1.0, 1.5]);
        assert_eq!(s.fetches.iter().map(|f| f.count).sum::<usize>(), 8);
    }
}
