use std::collections::VecDeque;

/// Future trunks a node may fetch ahead of its consumers.
pub const MAX_PREFETCH: usize = 7;
/// Trunks kept in local storage at once.
pub const MAX_RESIDENT: usize = 12;

/// Trunk bookkeeping shared by the threaded loader and the simulator.
///
/// Positions index the epoch's trunk visit order. Each rank sits on the
/// position it is reading (or `n` once done). A trunk is fetched in order,
/// only while it lies at most `max_prefetch` past the furthest active rank,
/// and only if a storage slot is free or the oldest resident trunk has been
/// read by every rank, in which case that trunk is evicted.
#[derive(Debug, Clone)]
pub struct PrefetchPolicy {
    n: usize,
    max_prefetch: usize,
    max_resident: usize,
    rank_pos: Vec<usize>,
    next_fetch: usize,
    resident: VecDeque<usize>,
    high_water_prefetch: usize,
    high_water_resident: usize,
    evictions: usize,
}

impl PrefetchPolicy {
    pub fn new(n_trunks: usize, ranks: usize, max_prefetch: usize, max_resident: usize) -> Self {
        assert!(ranks >= 1 && max_resident >= 1);
        PrefetchPolicy {
            n: n_trunks,
            max_prefetch,
            max_resident,
            rank_pos: vec![0; ranks],
            next_fetch: 0,
            resident: VecDeque::new(),
            high_water_prefetch: 0,
            high_water_resident: 0,
            evictions: 0,
        }
    }

    pub fn with_defaults(n_trunks: usize, ranks: usize) -> Self {
        Self::new(n_trunks, ranks, MAX_PREFETCH, MAX_RESIDENT)
    }

    pub fn n_trunks(&self) -> usize {
        self.n
    }

    pub fn rank_position(&self, rank: usize) -> usize {
        self.rank_pos[rank]
    }

    fn lagging(&self) -> usize {
        self.rank_pos.iter().copied().min().unwrap_or(self.n)
    }

    fn leading(&self) -> usize {
        self.rank_pos
            .iter()
            .copied()
            .filter(|&p| p < self.n)
            .max()
            .unwrap_or(self.n)
    }

    /// Fetched (or in-flight) trunks beyond the furthest active rank.
    pub fn prefetched(&self) -> usize {
        self.next_fetch.saturating_sub(self.leading() + 1)
    }

    pub fn resident(&self) -> usize {
        self.resident.len()
    }

    /// Whether position `pos` has been handed to the fetcher.
    pub fn is_requested(&self, pos: usize) -> bool {
        pos < self.next_fetch
    }

    pub fn all_fetched(&self) -> bool {
        self.next_fetch >= self.n
    }

    pub fn all_done(&self) -> bool {
        self.lagging() >= self.n
    }

    /// The next position to fetch, if the window and storage allow it now.
    pub fn fetchable(&self) -> Option<usize> {
        if self.next_fetch >= self.n || self.next_fetch > self.leading() + self.max_prefetch {
            return None;
        }
        if self.resident.len() >= self.max_resident {
            match self.resident.front() {
                Some(&oldest) if oldest < self.lagging() => {}
                _ => return None,
            }
        }
        Some(self.next_fetch)
    }

    /// Reserves the next fetch. Returns its position and the evicted one.
    ///
    /// Panics if [`Self::fetchable`] is `None`.
    pub fn start_fetch(&mut self) -> (usize, Option<usize>) {
        let pos = self.fetchable().expect("fetch outside the prefetch window");
        let evicted = if self.resident.len() >= self.max_resident {
            self.evictions += 1;
            self.resident.pop_front()
        } else {
            None
        };
        self.resident.push_back(pos);
        self.next_fetch += 1;
        self.record();
        (pos, evicted)
    }

    /// Rank `rank` finished its slice of the trunk it was on.
    pub fn advance(&mut self, rank: usize) {
        if self.rank_pos[rank] < self.n {
            self.rank_pos[rank] += 1;
        }
        self.record();
    }

    /// Rank `rank` stops consuming for the rest of the epoch.
    pub fn detach(&mut self, rank: usize) {
        self.rank_pos[rank] = self.n;
        self.record();
    }

    fn record(&mut self) {
        let ahead = self.prefetched();
        self.high_water_prefetch = self.high_water_prefetch.max(ahead);
        self.high_water_resident = self.high_water_resident.max(self.resident.len());
        debug_assert!(ahead <= self.max_prefetch, "prefetch lead {ahead}");
        debug_assert!(self.resident.len() <= self.max_resident);
    }

    pub fn high_water_prefetch(&self) -> usize {
        self.high_water_prefetch
    }

    pub fn high_water_resident(&self) -> usize {
        self.high_water_resident
    }

    pub fn evictions(&self) -> usize {
        self.evictions
    }
}
