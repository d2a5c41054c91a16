use std::time::Instant;

use crate::error::{Error, Result};

/// Half-open range `[start, end)` into the coordinate-sorted pixel list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorkChunk {
    pub start: usize,
    pub end: usize,
}

impl WorkChunk {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// Contiguous partition of `n` items into at most `workers` chunks whose
/// sizes differ by at most one, larger chunks first. Empty chunks are
/// omitted.
pub fn plan_chunks(n: usize, workers: usize) -> Result<Vec<WorkChunk>> {
    if workers == 0 {
        return Err(Error::Param("workers must be >= 1".into()));
    }
    let (base, extra) = (n / workers, n % workers);
    let mut out = Vec::with_capacity(workers.min(n));
    let mut start = 0;
    for w in 0..workers {
        let len = base + (w < extra) as usize;
        if len == 0 {
            break;
        }
        out.push(WorkChunk {
            start,
            end: start + len,
        });
        start += len;
    }
    Ok(out)
}

/// Evaluates `f` on every item, one scoped thread per chunk. Each worker
/// writes only its own output slice, so the result does not depend on
/// scheduling.
pub fn run_chunked<T, R, F>(items: &[T], workers: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send + Default + Clone,
    F: Fn(&[T], &mut [R]) -> Result<()> + Sync,
{
    let chunks = plan_chunks(items.len(), workers)?;
    let mut out = vec![R::default(); items.len()];
    if chunks.len() <= 1 {
        f(items, &mut out)?;
        return Ok(out);
    }
    let mut slices = Vec::with_capacity(chunks.len());
    let mut rest = out.as_mut_slice();
    for c in &chunks {
        let (head, tail) = rest.split_at_mut(c.len());
        slices.push((&items[c.start..c.end], head));
        rest = tail;
    }
    let results: Vec<Result<()>> = std::thread::scope(|s| {
        let handles: Vec<_> = slices
            .into_iter()
            .map(|(input, output)| {
                let f = &f;
                s.spawn(move || f(input, output))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Param("worker panicked".into()))))
            .collect()
    });
    for r in results {
        r?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingRow {
    pub workers: usize,
    pub wall_seconds: f64,
    pub speedup: f64,
    pub efficiency: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub pixels: usize,
    pub rows: Vec<ScalingRow>,
    /// Every worker count produced the bitwise-identical map.
    pub outputs_identical: bool,
}

impl ScalingReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("workers,wall_seconds,speedup,efficiency\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{:.6},{:.4},{:.4}\n",
                r.workers, r.wall_seconds, r.speedup, r.efficiency
            ));
        }
        if !self.outputs_identical {
            s.push_str("# FAILED: outputs differ across worker counts\n");
        }
        s
    }

    pub fn row(&self, workers: usize) -> Option<&ScalingRow> {
        self.rows.iter().find(|r| r.workers == workers)
    }
}

/// Median wall time of `runs` calls of `f`, plus the output of the first.
pub(crate) fn time_median<R>(runs: usize, mut f: impl FnMut() -> Result<R>) -> Result<(f64, R)> {
    let mut times = Vec::with_capacity(runs);
    let mut first = None;
    for _ in 0..runs.max(1) {
        let t = Instant::now();
        let r = f()?;
        times.push(t.elapsed().as_secs_f64());
        first.get_or_insert(r);
    }
    times.sort_by(f64::total_cmp);
    Ok((times[times.len() / 2], first.expect("at least one run")))
}

/// Builds rows from `(workers, seconds)`; speedup is relative to the
/// one-worker time.
pub(crate) fn scaling_rows(baseline: f64, timings: &[(usize, f64)]) -> Vec<ScalingRow> {
    timings
        .iter()
        .map(|&(workers, wall_seconds)| {
            let speedup = if wall_seconds > 0.0 {
                baseline / wall_seconds
            } else {
                1.0
            };
            ScalingRow {
                workers,
                wall_seconds,
                speedup: if workers == 1 { 1.0 } else { speedup },
                efficiency: if workers == 1 { 1.0 } else { speedup / workers as f64 },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sizes(n: usize, w: usize) -> Vec<usize> {
        plan_chunks(n, w).unwrap().iter().map(WorkChunk::len).collect()
    }

    #[test]
    fn balanced_plans() {
        assert_eq!(sizes(10, 3), vec![4, 3, 3]);
        assert_eq!(sizes(5, 8), vec![1; 5]);
        assert!(sizes(0, 4).is_empty());
        assert!(matches!(plan_chunks(3, 0), Err(Error::Param(_))));
    }

    #[test]
    fn chunks_cover_contiguously() {
        for n in 0..40 {
            for w in 1..10 {
                let c = plan_chunks(n, w).unwrap();
                let mut next = 0;
                for ch in &c {
                    assert_eq!(ch.start, next);
                    assert!(!ch.is_empty());
                    next = ch.end;
                }
                assert_eq!(next, n);
                let lens: Vec<usize> = c.iter().map(WorkChunk::len).collect();
                if let (Some(a), Some(b)) = (lens.iter().max(), lens.iter().min()) {
                    assert!(a - b <= 1);
                }
            }
        }
    }

    #[test]
    fn chunked_map_matches_sequential() {
        let items: Vec<u64> = (0..1000).collect();
        let square = |i: &[u64], o: &mut [u64]| {
            for (a, b) in i.iter().zip(o) {
                *b = a * a;
            }
            Ok(())
        };
        let seq = run_chunked(&items, 1, square).unwrap();
        for w in [2, 3, 8, 2000] {
            assert_eq!(run_chunked(&items, w, square).unwrap(), seq);
        }
    }

    #[test]
    fn single_worker_speedup_is_one() {
        let rows = scaling_rows(2.0, &[(1, 2.1), (2, 1.0)]);
        assert_eq!(rows[0].speedup, 1.0);
        assert_eq!(rows[1].speedup, 2.0);
        assert_eq!(rows[1].efficiency, 1.0);
    }
}
