//! Fluid bandwidth model.
//!
//! Every active transfer touches one or two endpoints (a node, the persistent store).
//! Each endpoint splits its bandwidth evenly across the transfers touching it, and a
//! transfer moves at the smallest share among its endpoints. Rates are recomputed
//! whenever the set of transfers changes; between changes progress is linear. A transfer
//! may carry a start delay (per-transfer latency), during which it holds no bandwidth.

use std::collections::BTreeMap;

use crate::model::available_bandwidth;
use crate::types::{Micros, MICROS_PER_SEC};

pub type FlowId = u64;
pub type Endpoint = usize;

/// Where the bits of a transfer came from, for throughput attribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum SourceClass {
    Local = 0,
    Remote = 1,
    Persistent = 2,
}

#[derive(Clone, Debug)]
pub struct Flow {
    pub endpoints: Vec<Endpoint>,
    pub bits: f64,
    pub remaining: f64,
    pub rate: f64,
    pub class: SourceClass,
    /// When the transfer begins moving bits.
    pub starts_at: Micros,
    active: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Network {
    capacity: Vec<f64>,
    load: Vec<u32>,
    flows: BTreeMap<FlowId, Flow>,
    next_id: FlowId,
    last_advance: Micros,
    /// Bits delivered so far, per source class.
    pub delivered: [f64; 3],
    pub recalcs: u64,
    pub feasibility_violations: u64,
}

impl Network {
    pub fn add_endpoint(&mut self, capacity_bps: f64) -> Endpoint {
        self.capacity.push(capacity_bps);
        self.load.push(0);
        self.capacity.len() - 1
    }

    pub fn load(&self, e: Endpoint) -> u32 {
        self.load[e]
    }

    pub fn active(&self) -> usize {
        self.flows.len()
    }

    pub fn flow(&self, id: FlowId) -> Option<&Flow> {
        self.flows.get(&id)
    }

    /// Moves every flow forward to `now` at its current rate.
    pub fn advance(&mut self, now: Micros) {
        if now <= self.last_advance {
            return;
        }
        let dt = (now - self.last_advance) as f64 / MICROS_PER_SEC as f64;
        for f in self.flows.values_mut() {
            let moved = (f.rate * dt).min(f.remaining);
            if moved > 0.0 {
                f.remaining -= moved;
                self.delivered[f.class as usize] += moved;
            }
        }
        self.last_advance = now;
    }

    pub fn start(&mut self, now: Micros, endpoints: Vec<Endpoint>, bits: f64, class: SourceClass) -> FlowId {
        self.start_after(now, 0, endpoints, bits, class)
    }

    /// Like [`Network::start`], but the transfer only begins `delay` from now.
    pub fn start_after(&mut self, now: Micros, delay: Micros, endpoints: Vec<Endpoint>, bits: f64, class: SourceClass) -> FlowId {
        self.advance(now);
        let id = self.next_id;
        self.next_id += 1;
        self.flows.insert(id, Flow { endpoints, bits, remaining: bits, rate: 0.0, class, starts_at: now + delay, active: false });
        self.activate_due(now);
        id
    }

    /// Starts every delayed transfer whose time has come, then recomputes rates.
    fn activate_due(&mut self, now: Micros) {
        for f in self.flows.values_mut() {
            if !f.active && f.starts_at <= now {
                f.active = true;
                for &e in &f.endpoints {
                    self.load[e] += 1;
                }
            }
        }
        self.recalc();
    }

    fn rate_of(&self, f: &Flow) -> f64 {
        f.endpoints
            .iter()
            .map(|&e| available_bandwidth(self.capacity[e], self.load[e]))
            .fold(f64::INFINITY, f64::min)
    }

    fn recalc(&mut self) {
        let rates: Vec<(FlowId, f64)> =
            self.flows.iter().map(|(&id, f)| (id, if f.active { self.rate_of(f) } else { 0.0 })).collect();
        for (id, r) in rates {
            self.flows.get_mut(&id).expect("listed").rate = r;
        }
        self.recalcs += 1;
        let mut allocated = vec![0.0f64; self.capacity.len()];
        for f in self.flows.values() {
            for &e in &f.endpoints {
                allocated[e] += f.rate;
            }
        }
        for (e, &sum) in allocated.iter().enumerate() {
            if self.capacity[e].is_finite() && sum > self.capacity[e] * (1.0 + 1e-9) {
                self.feasibility_violations += 1;
            }
        }
    }

    /// Time of the next change: a transfer finishing or a delayed one starting.
    pub fn next_completion(&self) -> Option<Micros> {
        self.flows
            .values()
            .map(|f| {
                if !f.active {
                    f.starts_at
                } else if f.rate.is_infinite() || f.remaining <= 0.0 {
                    self.last_advance
                } else {
                    self.last_advance + (f.remaining / f.rate * MICROS_PER_SEC as f64).ceil() as Micros
                }
            })
            .min()
    }

    /// Starts due transfers, then removes and returns every flow finished by `now`.
    pub fn take_completed(&mut self, now: Micros) -> Vec<(FlowId, Flow)> {
        self.advance(now);
        if self.flows.values().any(|f| !f.active && f.starts_at <= now) {
            self.activate_due(now);
        }
        let done: Vec<FlowId> = self
            .flows
            .iter()
            // Anything with less than a microsecond of work left counts as done.
            .filter(|(_, f)| f.active && (f.rate.is_infinite() || f.remaining <= f.rate / MICROS_PER_SEC as f64 + 1e-6))
            .map(|(&id, _)| id)
            .collect();
        if done.is_empty() {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(done.len());
        for id in done {
            let f = self.flows.remove(&id).expect("listed");
            self.delivered[f.class as usize] += f.remaining;
            for &e in &f.endpoints {
                self.load[e] -= 1;
            }
            out.push((id, f));
        }
        self.recalc();
        out
    }

    /// Sum of current rates at an endpoint.
    pub fn allocated(&self, e: Endpoint) -> f64 {
        self.flows.values().filter(|f| f.active && f.endpoints.contains(&e)).map(|f| f.rate).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_to_end(n: &mut Network) -> Vec<(FlowId, Micros)> {
        let mut out = Vec::new();
        while let Some(t) = n.next_completion() {
            for (id, _) in n.take_completed(t) {
                out.push((id, t));
            }
        }
        out
    }

    #[test]
    fn sole_transfer_takes_size_over_bandwidth() {
        let mut n = Network::default();
        let store = n.add_endpoint(80e6);
        let node = n.add_endpoint(f64::INFINITY);
        n.start(0, vec![store, node], 80e6, SourceClass::Persistent);
        assert_eq!(run_to_end(&mut n), vec![(0, 1_000_000)]);
        assert_eq!(n.delivered[2], 80e6);
    }

    #[test]
    fn two_equal_transfers_share_the_store() {
        let mut n = Network::default();
        let store = n.add_endpoint(80e6);
        let a = n.add_endpoint(f64::INFINITY);
        let b = n.add_endpoint(f64::INFINITY);
        n.start(0, vec![store, a], 80e6, SourceClass::Persistent);
        n.start(0, vec![store, b], 80e6, SourceClass::Persistent);
        assert_eq!(run_to_end(&mut n), vec![(0, 2_000_000), (1, 2_000_000)]);
    }

    #[test]
    fn late_joiner_slows_the_first() {
        // First runs alone for 0.5 s (40 Mb), then both share: 40 Mb left at 40 Mb/s → 1.5 s.
        // The second then has 40 Mb left alone → 2.0 s.
        let mut n = Network::default();
        let store = n.add_endpoint(80e6);
        let a = n.add_endpoint(f64::INFINITY);
        n.start(0, vec![store, a], 80e6, SourceClass::Persistent);
        n.start(500_000, vec![store, a], 80e6, SourceClass::Persistent);
        assert_eq!(run_to_end(&mut n), vec![(0, 1_500_000), (1, 2_000_000)]);
        assert!((n.delivered[2] - 160e6).abs() < 1e-3);
    }

    #[test]
    fn slowest_endpoint_limits_rate() {
        let mut n = Network::default();
        let store = n.add_endpoint(4.4e9);
        let node = n.add_endpoint(1.6e9);
        let id = n.start(0, vec![store, node], 80e6, SourceClass::Persistent);
        assert_eq!(n.flow(id).unwrap().rate, 1.6e9);
        assert_eq!(n.next_completion(), Some(50_000));
    }

    #[test]
    fn unbounded_transfer_is_instant() {
        let mut n = Network::default();
        let a = n.add_endpoint(f64::INFINITY);
        n.start(7, vec![a], 1e9, SourceClass::Local);
        assert_eq!(run_to_end(&mut n), vec![(0, 7)]);
        assert_eq!(n.delivered[0], 1e9);
    }

    #[test]
    fn delayed_transfer_holds_no_bandwidth_until_it_starts() {
        // The second transfer waits 1 s, so the first runs alone: 1 s. The second then
        // moves alone from 1 s to 2 s.
        let mut n = Network::default();
        let store = n.add_endpoint(80e6);
        let a = n.add_endpoint(f64::INFINITY);
        n.start(0, vec![store, a], 80e6, SourceClass::Persistent);
        n.start_after(0, 1_000_000, vec![store, a], 80e6, SourceClass::Persistent);
        assert_eq!(n.load(store), 1);
        assert_eq!(run_to_end(&mut n), vec![(0, 1_000_000), (1, 2_000_000)]);
    }

    #[test]
    fn allocation_never_exceeds_capacity() {
        let mut n = Network::default();
        let store = n.add_endpoint(4.4e9);
        let nodes: Vec<_> = (0..5).map(|_| n.add_endpoint(1.6e9)).collect();
        for (i, &d) in nodes.iter().cycle().take(23).enumerate() {
            n.start(i as u64 * 1000, vec![store, d], 80e6, SourceClass::Persistent);
            assert!(n.allocated(store) <= 4.4e9 * (1.0 + 1e-9));
            for &x in &nodes {
                assert!(n.allocated(x) <= 1.6e9 * (1.0 + 1e-9));
            }
        }
        run_to_end(&mut n);
        assert_eq!(n.feasibility_violations, 0);
        assert!((n.delivered[2] - 23.0 * 80e6).abs() < 1e-2);
    }
}
