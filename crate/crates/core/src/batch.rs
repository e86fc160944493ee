//! Bounded fan-out of independent batch jobs.

/// Runs `job(0..count)` with at most `in_flight` jobs executing at once and
/// returns the results in job order.
pub(crate) fn run_batches<T, F>(count: usize, in_flight: usize, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let in_flight = in_flight.max(1);
    if in_flight == 1 || count <= 1 {
        return (0..count).map(&job).collect();
    }
    let mut results = Vec::with_capacity(count);
    let job = &job;
    for wave_start in (0..count).step_by(in_flight) {
        let wave_end = (wave_start + in_flight).min(count);
        std::thread::scope(|scope| {
            let handles: Vec<_> = (wave_start..wave_end)
                .map(|i| scope.spawn(move || job(i)))
                .collect();
            for handle in handles {
                results.push(handle.join().expect("batch job panicked"));
            }
        });
    }
    results
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order() {
        for in_flight in [1, 2, 3, 8] {
            let out = run_batches(10, in_flight, |i| i * i);
            assert_eq!(out, (0..10).map(|i| i * i).collect::<Vec<_>>());
        }
        assert!(run_batches(0, 4, |i| i).is_empty());
    }
}
