//! Throughput, latency, Jain fairness and completion-time series.

/// `(Σx)² / (n·Σx²)`; `None` for an empty or all-zero vector.
pub fn jain_index(loads: &[f64]) -> Option<f64> {
    let sum: f64 = loads.iter().sum();
    let squares: f64 = loads.iter().map(|x| x * x).sum();
    if loads.is_empty() || squares == 0.0 {
        return None;
    }
    Some(sum * sum / (loads.len() as f64 * squares))
}

/// Phits per server per cycle.
pub fn accepted_throughput(consumed_phits: u64, servers: usize, cycles: u64) -> f64 {
    if cycles == 0 || servers == 0 {
        return 0.0;
    }
    consumed_phits as f64 / (servers as f64 * cycles as f64)
}

/// Result of one steady-state run.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub offered_load: f64,
    pub cycles: u64,
    pub throughput: f64,
    /// Average creation-to-tail-ejection latency of packets delivered in the window.
    pub latency: Option<f64>,
    pub jain: Option<f64>,
    pub delivered_packets: u64,
    pub forced_hops: u64,
    pub escape_hops: u64,
    pub routing_hops: u64,
    /// Longest switch-to-switch path among packets delivered in the window.
    pub max_hops: u16,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompletionSeries {
    pub bucket: u64,
    /// Phits ejected in `[i·bucket, (i+1)·bucket)`.
    pub accepted_phits: Vec<u64>,
    /// Cycle of the last ejection, 0 for an empty workload.
    pub completion_cycle: u64,
    pub servers: usize,
}

impl CompletionSeries {
    /// Normalized throughput of each bucket. The last bucket may be partial
    /// and is normalized by the cycles it actually covers.
    pub fn throughput(&self) -> Vec<(u64, f64)> {
        let end = self.completion_cycle + 1;
        self.accepted_phits
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let start = i as u64 * self.bucket;
                let width = self.bucket.min(end.saturating_sub(start)).max(1);
                (start, accepted_throughput(p, self.servers, width))
            })
            .collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["cycle_bucket", "accepted_phits"])?;
        for (i, p) in self.accepted_phits.iter().enumerate() {
            w.write_record([(i as u64 * self.bucket).to_string(), p.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Buckets an ejection log of `(cycle, phits)` events.
pub fn completion_series(events: &[(u64, u64)], bucket: u64, servers: usize) -> CompletionSeries {
    let bucket = bucket.max(1);
    let completion_cycle = events.iter().map(|e| e.0).max().unwrap_or(0);
    let mut accepted_phits = Vec::new();
    if !events.is_empty() {
        accepted_phits = vec![0; (completion_cycle / bucket + 1) as usize];
        for &(cycle, phits) in events {
            accepted_phits[(cycle / bucket) as usize] += phits;
        }
    }
    CompletionSeries {
        bucket,
        accepted_phits,
        completion_cycle,
        servers,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn jain_examples() {
        assert_eq!(jain_index(&[5.0, 5.0, 5.0, 5.0]), Some(1.0));
        assert_eq!(jain_index(&[1.0, 0.0, 0.0, 0.0]), Some(0.25));
        assert_eq!(jain_index(&[1.0, 1.0, 1.0, 0.0]), Some(0.75));
        assert_eq!(jain_index(&[0.0, 0.0]), None);
        assert_eq!(jain_index(&[]), None);
    }

    #[test]
    fn throughput_normalization() {
        assert_eq!(accepted_throughput(0, 16, 100), 0.0);
        assert_eq!(accepted_throughput(1600, 16, 100), 1.0);
        assert_eq!(accepted_throughput(5, 16, 0), 0.0);
    }

    #[test]
    fn series_buckets() {
        let s = completion_series(&[(3, 16), (999, 16), (1000, 32)], 1000, 2);
        assert_eq!(s.accepted_phits, vec![32, 32]);
        assert_eq!(s.completion_cycle, 1000);
        let single = completion_series(&[(10, 64)], 1000, 4);
        assert_eq!(single.accepted_phits.len(), 1);
        assert_eq!(single.throughput(), vec![(0, 64.0 / (4.0 * 11.0))]);
        let empty = completion_series(&[], 1000, 4);
        assert_eq!(empty.completion_cycle, 0);
        assert!(empty.accepted_phits.is_empty());
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "cycle_bucket,accepted_phits\n0,32\n1000,32\n");
    }

    proptest! {
        #[test]
        fn jain_range_and_scale(loads in prop::collection::vec(0.0f64..100.0, 1..50), c in 0.01f64..1000.0) {
            if let Some(j) = jain_index(&loads) {
                let n = loads.len() as f64;
                prop_assert!(j >= 1.0 / n - 1e-12 && j <= 1.0 + 1e-12);
                let scaled: Vec<f64> = loads.iter().map(|x| x * c).collect();
                prop_assert!((jain_index(&scaled).unwrap() - j).abs() < 1e-9);
            }
        }

        #[test]
        fn cumulative_series_is_monotone(events in prop::collection::vec((0u64..10_000, 1u64..32), 0..200)) {
            let s = completion_series(&events, 500, 8);
            let mut total = 0;
            for &p in &s.accepted_phits {
                let next = total + p;
                prop_assert!(next >= total);
                total = next;
            }
            prop_assert_eq!(total, events.iter().map(|e| e.1).sum::<u64>());
        }
    }
}
