//! Discrete-event replay of the loader in virtual time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::loader::{trunk_plan, LoaderConfig};
use super::policy::PrefetchPolicy;
use super::shard::{trunk_order, TrunkManifest};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub total: usize,
    pub nodes: usize,
    pub ranks: usize,
    pub trunk_size: usize,
    /// Mean virtual time to fetch one trunk.
    pub fetch_latency: f64,
    /// Mean virtual time a rank spends on one item.
    pub consume_time: f64,
    /// Relative spread of both delays, in `[0, 1]`.
    pub jitter: f64,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes == 0 || self.ranks == 0 {
            return Err(Error::Validation("nodes and ranks must be at least 1".into()));
        }
        if self.trunk_size == 0 {
            return Err(Error::Validation("trunk_size must be at least 1".into()));
        }
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.fetch_latency) || !ok(self.consume_time) || !(0.0..=1.0).contains(&self.jitter) {
            return Err(Error::Validation(
                "latencies must be finite and non-negative, jitter in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeReport {
    pub node_id: usize,
    pub trunks: usize,
    pub delivered: usize,
    pub fetches: usize,
    pub evictions: usize,
    pub high_water_prefetch: usize,
    pub high_water_resident: usize,
    pub stall_total: f64,
    pub stall_max: f64,
    pub finish_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub exactly_once: bool,
    pub high_water_prefetch: usize,
    pub high_water_resident: usize,
    pub stall_total: f64,
    pub stall_max: f64,
    pub makespan: f64,
    /// FNV-1a over every rank's delivery sequence.
    pub order_digest: u64,
    pub nodes: Vec<NodeReport>,
    #[serde(skip)]
    pub delivered: Vec<Vec<Vec<usize>>>,
}

pub fn simulate(cfg: &SimConfig) -> Result<SimReport> {
    cfg.validate()?;
    let manifests = TrunkManifest::for_topology(cfg.total, cfg.nodes, cfg.trunk_size)?;
    let mut nodes = Vec::new();
    let mut delivered = Vec::new();
    for m in &manifests {
        let (report, d) = simulate_node(m, cfg)?;
        nodes.push(report);
        delivered.push(d);
    }
    let mut all: Vec<usize> = delivered.iter().flatten().flatten().copied().collect();
    all.sort_unstable();
    let exactly_once = all.len() == cfg.total && all.iter().enumerate().all(|(i, &v)| i == v);
    let mut digest = Fnv::new();
    for rank in delivered.iter().flatten() {
        digest.write(rank.len() as u64);
        rank.iter().for_each(|&v| digest.write(v as u64));
    }
    Ok(SimReport {
        exactly_once,
        high_water_prefetch: nodes.iter().map(|n| n.high_water_prefetch).max().unwrap_or(0),
        high_water_resident: nodes.iter().map(|n| n.high_water_resident).max().unwrap_or(0),
        stall_total: nodes.iter().map(|n| n.stall_total).sum(),
        stall_max: nodes.iter().map(|n| n.stall_max).fold(0.0, f64::max),
        makespan: nodes.iter().map(|n| n.finish_time).fold(0.0, f64::max),
        order_digest: digest.0,
        nodes,
        delivered,
    })
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    fn write(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }
}

struct RankSim {
    t: f64,
    items: std::vec::IntoIter<usize>,
    started: bool,
    loading: bool,
    done: bool,
    waiting_since: Option<f64>,
    stall: f64,
    stall_max: f64,
    out: Vec<usize>,
}

fn simulate_node(m: &TrunkManifest, cfg: &SimConfig) -> Result<(NodeReport, Vec<Vec<usize>>)> {
    let lcfg = LoaderConfig::new(cfg.ranks, cfg.seed);
    let order = trunk_order(m.trunks.len(), lcfg.seed, lcfg.epoch, lcfg.reshuffle_trunks);
    let n = order.len();
    let mut policy = PrefetchPolicy::new(n, cfg.ranks, lcfg.max_prefetch, lcfg.max_resident);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(m.node_id as u64);
    let mut delay = |mean: f64| -> f64 {
        if cfg.jitter == 0.0 {
            mean
        } else {
            mean * (1.0 + cfg.jitter * rng.gen_range(-1.0..=1.0))
        }
    };
    let mut ready: Vec<Option<Vec<Vec<usize>>>> = vec![None; n];
    let mut in_flight: Option<(f64, usize)> = None;
    let mut fetches = 0;
    let mut ranks: Vec<RankSim> = (0..cfg.ranks)
        .map(|_| RankSim {
            t: 0.0,
            items: Vec::new().into_iter(),
            started: false,
            loading: false,
            done: false,
            waiting_since: None,
            stall: 0.0,
            stall_max: 0.0,
            out: Vec::new(),
        })
        .collect();
    let mut now = 0.0f64;

    loop {
        if in_flight.is_none() && policy.fetchable().is_some() {
            let (pos, evicted) = policy.start_fetch();
            if let Some(e) = evicted {
                ready[e] = None;
            }
            fetches += 1;
            in_flight = Some((now + delay(cfg.fetch_latency), pos));
        }
        let next_rank = ranks
            .iter()
            .enumerate()
            .filter(|(_, r)| !r.done && r.waiting_since.is_none())
            .min_by(|a, b| a.1.t.total_cmp(&b.1.t))
            .map(|(i, r)| (r.t, i));
        // Arrivals win ties so a trunk landing "now" is not counted as a stall.
        match (in_flight, next_rank) {
            (Some((t, pos)), nr) if nr.map_or(true, |(rt, _)| t <= rt) => {
                now = now.max(t);
                in_flight = None;
                ready[pos] = Some(trunk_plan(&m.trunks[order[pos]], &lcfg)?);
                for (i, r) in ranks.iter_mut().enumerate() {
                    if let Some(since) = r.waiting_since {
                        if policy.rank_position(i) == pos {
                            let s = now - since;
                            r.stall += s;
                            r.stall_max = r.stall_max.max(s);
                            r.waiting_since = None;
                            r.t = now;
                        }
                    }
                }
            }
            (_, Some((t, i))) => {
                now = now.max(t);
                let r = &mut ranks[i];
                if let Some(item) = r.items.next() {
                    r.out.push(item);
                    r.t = now + delay(cfg.consume_time);
                    continue;
                }
                if !r.loading {
                    if r.started {
                        policy.advance(i);
                    }
                    r.started = true;
                    r.loading = true;
                }
                let pos = policy.rank_position(i);
                if pos >= n {
                    r.done = true;
                } else if let Some(parts) = ready[pos].as_mut() {
                    r.items = std::mem::take(&mut parts[i]).into_iter();
                    r.loading = false;
                } else {
                    r.waiting_since = Some(now);
                }
            }
            (None, None) => break,
            (Some(_), None) => unreachable!("guard covers a lone arrival"),
        }
    }
    if !policy.all_done() {
        return Err(Error::Contract("loader simulation stalled permanently".into()));
    }
    let report = NodeReport {
        node_id: m.node_id,
        trunks: n,
        delivered: ranks.iter().map(|r| r.out.len()).sum(),
        fetches,
        evictions: policy.evictions(),
        high_water_prefetch: policy.high_water_prefetch(),
        high_water_resident: policy.high_water_resident(),
        stall_total: ranks.iter().map(|r| r.stall).sum(),
        stall_max: ranks.iter().map(|r| r.stall_max).fold(0.0, f64::max),
        finish_time: now,
    };
    Ok((report, ranks.into_iter().map(|r| r.out).collect()))
}
