use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::policy::{PrefetchPolicy, MAX_PREFETCH, MAX_RESIDENT};
use super::shard::{rank_split, trunk_order, trunk_shuffle, Trunk, TrunkManifest};
use crate::error::{Error, Result};

/// Source of trunk contents ("download" in the large-scale setting).
pub trait Fetch: Send + Sync + 'static {
    type Item: Send + 'static;

    /// Items of `trunk` in storage order; must return exactly `trunk.len`.
    fn fetch(&self, trunk: &Trunk) -> Result<Vec<Self::Item>>;
}

/// Yields global sample indices, optionally sleeping to mimic latency.
#[derive(Clone, Default)]
pub struct IndexFetch {
    pub latency: Option<Arc<dyn Fn(&Trunk) -> Duration + Send + Sync>>,
}

impl IndexFetch {
    pub fn with_latency(f: impl Fn(&Trunk) -> Duration + Send + Sync + 'static) -> Self {
        IndexFetch {
            latency: Some(Arc::new(f)),
        }
    }
}

impl Fetch for IndexFetch {
    type Item = usize;

    fn fetch(&self, trunk: &Trunk) -> Result<Vec<usize>> {
        if let Some(f) = &self.latency {
            let d = f(trunk);
            if !d.is_zero() {
                std::thread::sleep(d);
            }
        }
        Ok(trunk.range().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoaderConfig {
    pub ranks: usize,
    pub seed: u64,
    pub epoch: u64,
    /// Also permute the trunk visit order per epoch.
    pub reshuffle_trunks: bool,
    pub max_prefetch: usize,
    pub max_resident: usize,
}

impl LoaderConfig {
    pub fn new(ranks: usize, seed: u64) -> Self {
        LoaderConfig {
            ranks,
            seed,
            epoch: 0,
            reshuffle_trunks: false,
            max_prefetch: MAX_PREFETCH,
            max_resident: MAX_RESIDENT,
        }
    }

    /// Seed used for within-trunk shuffles in this epoch.
    pub fn epoch_seed(&self) -> u64 {
        self.seed.wrapping_add(self.epoch)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoaderStats {
    pub high_water_prefetch: usize,
    pub high_water_resident: usize,
    pub fetches: usize,
    pub evictions: usize,
    /// Wall time each rank spent waiting for data.
    pub stall: Vec<Duration>,
}

/// The item order of one trunk per rank, without fetching anything.
pub fn trunk_plan(trunk: &Trunk, cfg: &LoaderConfig) -> Result<Vec<Vec<usize>>> {
    let shuffled = trunk_shuffle(trunk.range(), cfg.epoch_seed(), trunk.id as u64);
    rank_split(&shuffled, cfg.ranks)
}

/// Every rank's full delivery order for one epoch.
pub fn epoch_plan(manifest: &TrunkManifest, cfg: &LoaderConfig) -> Result<Vec<Vec<usize>>> {
    let mut out = vec![Vec::new(); cfg.ranks];
    for &t in &trunk_order(manifest.trunks.len(), cfg.seed, cfg.epoch, cfg.reshuffle_trunks) {
        for (r, part) in trunk_plan(&manifest.trunks[t], cfg)?.into_iter().enumerate() {
            out[r].extend(part);
        }
    }
    Ok(out)
}

struct State<I> {
    policy: PrefetchPolicy,
    /// Per position, per rank slice once the trunk has arrived.
    slices: Vec<Option<Vec<Option<Vec<I>>>>>,
    error: Option<Error>,
    failed: bool,
    cancelled: bool,
    fetches: usize,
    stall: Vec<Duration>,
}

struct Shared<I> {
    state: Mutex<State<I>>,
    cv: Condvar,
}

impl<I> Shared<I> {
    fn lock(&self) -> MutexGuard<'_, State<I>> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }
}

/// Starts one node's epoch: a producer thread fetches trunks under the
/// prefetch/retention policy while each returned stream serves one rank.
pub fn stream_epoch<F: Fetch>(
    manifest: &TrunkManifest,
    cfg: LoaderConfig,
    fetch: Arc<F>,
) -> Result<(Vec<RankStream<F::Item>>, LoaderHandle<F::Item>)> {
    if cfg.ranks == 0 {
        return Err(Error::Input("need at least one rank".into()));
    }
    if cfg.max_resident <= cfg.max_prefetch {
        return Err(Error::Validation(
            "retention must exceed the prefetch window".into(),
        ));
    }
    manifest.validate()?;
    let order = trunk_order(manifest.trunks.len(), cfg.seed, cfg.epoch, cfg.reshuffle_trunks);
    let n = order.len();
    let shared = Arc::new(Shared {
        state: Mutex::new(State {
            policy: PrefetchPolicy::new(n, cfg.ranks, cfg.max_prefetch, cfg.max_resident),
            slices: (0..n).map(|_| None).collect(),
            error: None,
            failed: false,
            cancelled: false,
            fetches: 0,
            stall: vec![Duration::ZERO; cfg.ranks],
        }),
        cv: Condvar::new(),
    });
    let trunks: Vec<Trunk> = order.iter().map(|&t| manifest.trunks[t].clone()).collect();
    let producer = {
        let shared = Arc::clone(&shared);
        std::thread::Builder::new()
            .name(format!("loader-node{}", manifest.node_id))
            .spawn(move || produce(&shared, &trunks, &cfg, &*fetch))
            .map_err(|e| Error::Contract(format!("cannot start loader thread: {e}")))?
    };
    let streams = (0..cfg.ranks)
        .map(|rank| RankStream {
            shared: Arc::clone(&shared),
            rank,
            current: Vec::new().into_iter(),
            started: false,
            done: false,
        })
        .collect();
    Ok((
        streams,
        LoaderHandle {
            shared,
            producer: Some(producer),
        },
    ))
}

fn produce<F: Fetch>(shared: &Shared<F::Item>, trunks: &[Trunk], cfg: &LoaderConfig, fetch: &F) {
    loop {
        let pos = {
            let mut st = shared.lock();
            loop {
                if st.cancelled || st.failed || st.policy.all_fetched() || st.policy.all_done() {
                    return;
                }
                if st.policy.fetchable().is_some() {
                    let (pos, evicted) = st.policy.start_fetch();
                    if let Some(e) = evicted {
                        st.slices[e] = None;
                    }
                    st.fetches += 1;
                    break pos;
                }
                st = shared.cv.wait(st).unwrap_or_else(|p| p.into_inner());
            }
        };
        let result = fetch.fetch(&trunks[pos]).and_then(|items| split(&trunks[pos], items, cfg));
        let mut st = shared.lock();
        match result {
            Ok(parts) => st.slices[pos] = Some(parts.into_iter().map(Some).collect()),
            Err(e) => {
                st.error = Some(e);
                st.failed = true;
            }
        }
        drop(st);
        shared.cv.notify_all();
    }
}

fn split<I>(trunk: &Trunk, items: Vec<I>, cfg: &LoaderConfig) -> Result<Vec<Vec<I>>> {
    if items.len() != trunk.len {
        return Err(Error::format(
            "trunk",
            format!("trunk {} returned {} items, expected {}", trunk.id, items.len(), trunk.len),
        ));
    }
    let mut slots: Vec<Option<I>> = items.into_iter().map(Some).collect();
    Ok(trunk_plan(trunk, cfg)?
        .into_iter()
        .map(|part| {
            part.into_iter()
                .map(|g| slots[g - trunk.start].take().expect("shuffle is a permutation"))
                .collect()
        })
        .collect())
}

/// One rank's stream of items for the epoch.
pub struct RankStream<I> {
    shared: Arc<Shared<I>>,
    rank: usize,
    current: std::vec::IntoIter<I>,
    started: bool,
    done: bool,
}

impl<I> RankStream<I> {
    pub fn rank(&self) -> usize {
        self.rank
    }
}

impl<I> Iterator for RankStream<I> {
    type Item = Result<I>;

    fn next(&mut self) -> Option<Result<I>> {
        loop {
            if let Some(item) = self.current.next() {
                return Some(Ok(item));
            }
            if self.done {
                return None;
            }
            let mut st = self.shared.lock();
            if self.started {
                st.policy.advance(self.rank);
                self.shared.cv.notify_all();
            }
            self.started = true;
            let pos = st.policy.rank_position(self.rank);
            if pos >= st.policy.n_trunks() {
                self.done = true;
                return None;
            }
            let mut waited: Option<Instant> = None;
            while st.slices[pos].is_none() && !st.failed {
                waited.get_or_insert_with(Instant::now);
                st = self.shared.cv.wait(st).unwrap_or_else(|p| p.into_inner());
            }
            if let Some(t0) = waited {
                st.stall[self.rank] += t0.elapsed();
            }
            if st.slices[pos].is_none() {
                self.done = true;
                let err = st.error.take().unwrap_or_else(|| {
                    Error::Contract("loader stopped after an earlier failure".into())
                });
                return Some(Err(err));
            }
            let part = st.slices[pos].as_mut().unwrap()[self.rank]
                .take()
                .expect("rank reads each trunk once");
            self.current = part.into_iter();
        }
    }
}

impl<I> Drop for RankStream<I> {
    fn drop(&mut self) {
        if !self.done {
            self.shared.lock().policy.detach(self.rank);
            self.shared.cv.notify_all();
        }
    }
}

/// Owns the producer thread of one epoch.
pub struct LoaderHandle<I> {
    shared: Arc<Shared<I>>,
    producer: Option<JoinHandle<()>>,
}

impl<I> LoaderHandle<I> {
    /// Waits for the producer and returns the run's instrumentation. Call
    /// after every stream is exhausted or dropped.
    pub fn finish(mut self) -> LoaderStats {
        self.join();
        let st = self.shared.lock();
        LoaderStats {
            high_water_prefetch: st.policy.high_water_prefetch(),
            high_water_resident: st.policy.high_water_resident(),
            fetches: st.fetches,
            evictions: st.policy.evictions(),
            stall: st.stall.clone(),
        }
    }

    fn join(&mut self) {
        if let Some(h) = self.producer.take() {
            let _ = h.join();
        }
    }
}

impl<I> Drop for LoaderHandle<I> {
    fn drop(&mut self) {
        if self.producer.is_some() {
            self.shared.lock().cancelled = true;
            self.shared.cv.notify_all();
            self.join();
        }
    }
}
