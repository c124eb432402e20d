//! Per-node object cache with capacity accounting and pluggable eviction.
//!
//! Objects are cached whole. An object may be pinned while a task reads it or a peer
//! copies it; pinned objects are never chosen as victims.

use std::collections::{BTreeSet, HashMap};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::types::{Bits, ObjectId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EvictionPolicy {
    Random { seed: u64 },
    Fifo,
    #[default]
    Lru,
    Lfu,
}

impl EvictionPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            EvictionPolicy::Random { .. } => "random",
            EvictionPolicy::Fifo => "fifo",
            EvictionPolicy::Lru => "lru",
            EvictionPolicy::Lfu => "lfu",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CacheError {
    #[error("object-too-large: {size} bits exceeds capacity {capacity}")]
    ObjectTooLarge { size: Bits, capacity: Bits },
    #[error("all-pinned: cannot free {needed} bits without evicting pinned objects")]
    AllPinned { needed: Bits },
    #[error("object {0} already resident")]
    AlreadyResident(ObjectId),
    #[error("not-resident: {0}")]
    NotResident(ObjectId),
    #[error("object {0} is not pinned")]
    NotPinned(ObjectId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lookup {
    Hit,
    Miss,
}

#[derive(Clone, Debug)]
struct Entry {
    size_bits: Bits,
    pinned: u32,
    inserted: u64,
    last_access: u64,
    accesses: u64,
}

type OrderKey = (u64, u64, ObjectId);

#[derive(Clone, Debug)]
pub struct CacheState {
    capacity_bits: Bits,
    used_bits: Bits,
    policy: EvictionPolicy,
    entries: HashMap<ObjectId, Entry>,
    // Victim order for the deterministic policies; unused for Random.
    order: BTreeSet<OrderKey>,
    rng: Option<ChaCha8Rng>,
    clock: u64,
}

impl CacheState {
    pub fn new(capacity_bits: Bits, policy: EvictionPolicy) -> Self {
        let rng = match policy {
            EvictionPolicy::Random { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
            _ => None,
        };
        Self {
            capacity_bits,
            used_bits: 0,
            policy,
            entries: HashMap::new(),
            order: BTreeSet::new(),
            rng,
            clock: 0,
        }
    }

    pub fn capacity_bits(&self) -> Bits {
        self.capacity_bits
    }

    pub fn used_bits(&self) -> Bits {
        self.used_bits
    }

    pub fn policy(&self) -> EvictionPolicy {
        self.policy
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Residency test that leaves policy metadata untouched.
    pub fn contains(&self, id: ObjectId) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn pin_count(&self, id: ObjectId) -> Option<u32> {
        self.entries.get(&id).map(|e| e.pinned)
    }

    /// Resident object ids in ascending order.
    pub fn resident(&self) -> Vec<ObjectId> {
        let mut ids: Vec<_> = self.entries.keys().copied().collect();
        ids.sort_unstable();
        ids
    }

    fn key(policy: EvictionPolicy, id: ObjectId, e: &Entry) -> OrderKey {
        match policy {
            EvictionPolicy::Fifo | EvictionPolicy::Random { .. } => (e.inserted, 0, id),
            EvictionPolicy::Lru => (e.last_access, 0, id),
            EvictionPolicy::Lfu => (e.accesses, e.inserted, id),
        }
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    /// Looks an object up, refreshing recency and frequency on a hit.
    pub fn lookup(&mut self, id: ObjectId) -> Lookup {
        let now = self.tick();
        let policy = self.policy;
        let Some(entry) = self.entries.get_mut(&id) else {
            return Lookup::Miss;
        };
        let old = Self::key(policy, id, entry);
        entry.last_access = now;
        entry.accesses += 1;
        let new = Self::key(policy, id, entry);
        if old != new && !matches!(policy, EvictionPolicy::Random { .. }) {
            self.order.remove(&old);
            self.order.insert(new);
        }
        Lookup::Hit
    }

    /// Inserts an object, evicting as needed. Returns the victims in eviction order.
    ///
    /// On error the cache is left unchanged.
    pub fn insert(&mut self, id: ObjectId, size_bits: Bits) -> Result<Vec<ObjectId>, CacheError> {
        if self.entries.contains_key(&id) {
            return Err(CacheError::AlreadyResident(id));
        }
        if size_bits > self.capacity_bits {
            return Err(CacheError::ObjectTooLarge { size: size_bits, capacity: self.capacity_bits });
        }
        let needed = (self.used_bits + size_bits).saturating_sub(self.capacity_bits);
        let victims = if needed > 0 { self.choose_victims(needed)? } else { Vec::new() };
        for v in &victims {
            self.remove_entry(*v);
        }
        let now = self.tick();
        let entry = Entry { size_bits, pinned: 0, inserted: now, last_access: now, accesses: 1 };
        if !matches!(self.policy, EvictionPolicy::Random { .. }) {
            self.order.insert(Self::key(self.policy, id, &entry));
        }
        self.entries.insert(id, entry);
        self.used_bits += size_bits;
        debug_assert!(self.used_bits <= self.capacity_bits);
        Ok(victims)
    }

    fn choose_victims(&mut self, needed: Bits) -> Result<Vec<ObjectId>, CacheError> {
        let mut victims = Vec::new();
        let mut freed = 0;
        match self.policy {
            EvictionPolicy::Random { .. } => {
                let mut candidates: Vec<ObjectId> =
                    self.entries.iter().filter(|(_, e)| e.pinned == 0).map(|(id, _)| *id).collect();
                candidates.sort_unstable();
                let available: Bits = candidates.iter().map(|id| self.entries[id].size_bits).sum();
                if available < needed {
                    return Err(CacheError::AllPinned { needed });
                }
                let rng = self.rng.as_mut().expect("random policy carries an rng");
                while freed < needed {
                    let pick = *candidates.choose(rng).expect("enough unpinned bits remain");
                    candidates.retain(|c| *c != pick);
                    freed += self.entries[&pick].size_bits;
                    victims.push(pick);
                }
            }
            _ => {
                for &(_, _, id) in &self.order {
                    let e = &self.entries[&id];
                    if e.pinned > 0 {
                        continue;
                    }
                    victims.push(id);
                    freed += e.size_bits;
                    if freed >= needed {
                        break;
                    }
                }
                if freed < needed {
                    return Err(CacheError::AllPinned { needed });
                }
            }
        }
        Ok(victims)
    }

    fn remove_entry(&mut self, id: ObjectId) -> Option<Bits> {
        let entry = self.entries.remove(&id)?;
        if !matches!(self.policy, EvictionPolicy::Random { .. }) {
            self.order.remove(&Self::key(self.policy, id, &entry));
        }
        self.used_bits -= entry.size_bits;
        Some(entry.size_bits)
    }

    /// Removes an unpinned object outright.
    pub fn remove(&mut self, id: ObjectId) -> Result<Bits, CacheError> {
        match self.entries.get(&id) {
            None => Err(CacheError::NotResident(id)),
            Some(e) if e.pinned > 0 => Err(CacheError::AllPinned { needed: e.size_bits }),
            Some(_) => Ok(self.remove_entry(id).expect("checked above")),
        }
    }

    pub fn pin(&mut self, id: ObjectId) -> Result<u32, CacheError> {
        let e = self.entries.get_mut(&id).ok_or(CacheError::NotResident(id))?;
        e.pinned += 1;
        Ok(e.pinned)
    }

    pub fn unpin(&mut self, id: ObjectId) -> Result<u32, CacheError> {
        let e = self.entries.get_mut(&id).ok_or(CacheError::NotResident(id))?;
        if e.pinned == 0 {
            return Err(CacheError::NotPinned(id));
        }
        e.pinned -= 1;
        Ok(e.pinned)
    }

    /// Drops every object, pinned or not. Used when a node is released.
    pub fn clear(&mut self) -> Vec<ObjectId> {
        let ids = self.resident();
        self.entries.clear();
        self.order.clear();
        self.used_bits = 0;
        ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const UNIT: Bits = 80_000_000;

    fn ids(raw: &[u32]) -> Vec<ObjectId> {
        raw.iter().map(|&i| ObjectId(i)).collect()
    }

    #[test]
    fn lookup_examples() {
        let mut c = CacheState::new(2 * UNIT, EvictionPolicy::Lru);
        assert_eq!(c.lookup(ObjectId(1)), Lookup::Miss);
        c.insert(ObjectId(1), UNIT).unwrap();
        assert_eq!(c.lookup(ObjectId(1)), Lookup::Hit);
        c.insert(ObjectId(2), UNIT).unwrap();
        c.insert(ObjectId(3), 2 * UNIT).unwrap();
        assert_eq!(c.lookup(ObjectId(1)), Lookup::Miss);
    }

    #[test]
    fn lru_evicts_least_recent() {
        let mut c = CacheState::new(2 * UNIT, EvictionPolicy::Lru);
        c.insert(ObjectId(0), UNIT).unwrap();
        c.insert(ObjectId(1), UNIT).unwrap();
        c.lookup(ObjectId(0));
        assert_eq!(c.insert(ObjectId(2), UNIT).unwrap(), ids(&[1]));
    }

    #[test]
    fn fifo_ignores_recency() {
        let mut c = CacheState::new(2 * UNIT, EvictionPolicy::Fifo);
        c.insert(ObjectId(0), UNIT).unwrap();
        c.insert(ObjectId(1), UNIT).unwrap();
        c.lookup(ObjectId(0));
        assert_eq!(c.insert(ObjectId(2), UNIT).unwrap(), ids(&[0]));
    }

    #[test]
    fn lfu_evicts_least_frequent() {
        let mut c = CacheState::new(2 * UNIT, EvictionPolicy::Lfu);
        c.insert(ObjectId(0), UNIT).unwrap();
        c.lookup(ObjectId(0));
        c.lookup(ObjectId(0));
        c.insert(ObjectId(1), UNIT).unwrap();
        assert_eq!(c.insert(ObjectId(2), UNIT).unwrap(), ids(&[1]));
    }

    #[test]
    fn lfu_ties_break_by_insertion_order() {
        let mut c = CacheState::new(3 * UNIT, EvictionPolicy::Lfu);
        for i in [5, 2, 9] {
            c.insert(ObjectId(i), UNIT).unwrap();
        }
        assert_eq!(c.insert(ObjectId(1), 2 * UNIT).unwrap(), ids(&[5, 2]));
    }

    #[test]
    fn random_is_deterministic_per_seed() {
        let run = |seed| {
            let mut c = CacheState::new(4 * UNIT, EvictionPolicy::Random { seed });
            let mut evicted = Vec::new();
            for i in 0..40 {
                evicted.extend(c.insert(ObjectId(i), UNIT).unwrap());
            }
            evicted
        };
        assert_eq!(run(7), run(7));
        assert_eq!(run(7).len(), 36);
    }

    #[test]
    fn insert_errors() {
        let mut c = CacheState::new(2 * UNIT, EvictionPolicy::Lru);
        assert!(matches!(c.insert(ObjectId(0), 3 * UNIT), Err(CacheError::ObjectTooLarge { .. })));
        c.insert(ObjectId(0), UNIT).unwrap();
        assert_eq!(c.insert(ObjectId(0), UNIT), Err(CacheError::AlreadyResident(ObjectId(0))));
        c.insert(ObjectId(1), UNIT).unwrap();
        c.pin(ObjectId(0)).unwrap();
        c.pin(ObjectId(1)).unwrap();
        assert!(matches!(c.insert(ObjectId(2), UNIT), Err(CacheError::AllPinned { .. })));
        // A failed insert leaves the cache untouched.
        assert_eq!(c.resident(), ids(&[0, 1]));
        assert_eq!(c.used_bits(), 2 * UNIT);
    }

    #[test]
    fn pinned_objects_are_skipped() {
        let mut c = CacheState::new(2 * UNIT, EvictionPolicy::Lru);
        c.insert(ObjectId(0), UNIT).unwrap();
        c.insert(ObjectId(1), UNIT).unwrap();
        c.pin(ObjectId(0)).unwrap();
        assert_eq!(c.insert(ObjectId(2), UNIT).unwrap(), ids(&[1]));
        c.unpin(ObjectId(0)).unwrap();
        assert_eq!(c.insert(ObjectId(3), UNIT).unwrap(), ids(&[0]));
    }

    #[test]
    fn pin_errors() {
        let mut c = CacheState::new(2 * UNIT, EvictionPolicy::Lru);
        assert_eq!(c.pin(ObjectId(4)), Err(CacheError::NotResident(ObjectId(4))));
        c.insert(ObjectId(4), UNIT).unwrap();
        assert_eq!(c.unpin(ObjectId(4)), Err(CacheError::NotPinned(ObjectId(4))));
        assert_eq!(c.pin(ObjectId(4)), Ok(1));
        assert_eq!(c.pin(ObjectId(4)), Ok(2));
        assert_eq!(c.unpin(ObjectId(4)), Ok(1));
    }

    #[test]
    fn uniform_access_hit_rate_is_bounded_by_capacity_fraction() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let working_set = 1000u32;
        let capacity = 250u64;
        let mut c = CacheState::new(capacity, EvictionPolicy::Lru);
        let (mut hits, mut total) = (0u64, 0u64);
        for step in 0..200_000 {
            let id = ObjectId(rng.random_range(0..working_set));
            let hit = c.lookup(id) == Lookup::Hit;
            if !hit {
                c.insert(id, 1).unwrap();
            }
            if step >= 20_000 {
                total += 1;
                hits += u64::from(hit);
            }
        }
        let rate = hits as f64 / total as f64;
        let bound = capacity as f64 / f64::from(working_set);
        assert!(rate <= bound + 0.01, "hit rate {rate} above bound {bound}");
        assert!(rate > bound - 0.05);
    }

    #[derive(Debug, Clone)]
    enum Op {
        Insert(u32, u64),
        Lookup(u32),
        Pin(u32),
        Unpin(u32),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (0u32..24, 1u64..40).prop_map(|(i, s)| Op::Insert(i, s)),
            (0u32..24).prop_map(Op::Lookup),
            (0u32..24).prop_map(Op::Pin),
            (0u32..24).prop_map(Op::Unpin),
        ]
    }

    fn policy() -> impl Strategy<Value = EvictionPolicy> {
        prop_oneof![
            Just(EvictionPolicy::Lru),
            Just(EvictionPolicy::Fifo),
            Just(EvictionPolicy::Lfu),
            any::<u64>().prop_map(|seed| EvictionPolicy::Random { seed }),
        ]
    }

    proptest! {
        #[test]
        fn capacity_and_pins_hold_under_random_ops(policy in policy(), ops in prop::collection::vec(op(), 1..200)) {
            let mut c = CacheState::new(100, policy);
            for op in ops {
                match op {
                    Op::Insert(i, s) => {
                        let pinned_before: Vec<_> =
                            c.resident().into_iter().filter(|id| c.pin_count(*id) > Some(0)).collect();
                        if let Ok(victims) = c.insert(ObjectId(i), s) {
                            for v in victims {
                                prop_assert!(!pinned_before.contains(&v));
                            }
                        }
                    }
                    Op::Lookup(i) => { c.lookup(ObjectId(i)); }
                    Op::Pin(i) => { let _ = c.pin(ObjectId(i)); }
                    Op::Unpin(i) => { let _ = c.unpin(ObjectId(i)); }
                }
                prop_assert!(c.used_bits() <= c.capacity_bits());
            }
        }

        #[test]
        fn lru_victim_is_least_recent_unpinned(accesses in prop::collection::vec(0u32..6, 1..60)) {
            let mut c = CacheState::new(6, EvictionPolicy::Lru);
            let mut last_use = HashMap::new();
            for i in 0..6 {
                c.insert(ObjectId(i), 1).unwrap();
                last_use.insert(i, i as usize);
            }
            for (step, &i) in accesses.iter().enumerate() {
                c.lookup(ObjectId(i));
                last_use.insert(i, 6 + step);
            }
            let expected = *last_use.iter().min_by_key(|(_, &t)| t).unwrap().0;
            prop_assert_eq!(c.insert(ObjectId(100), 1).unwrap(), vec![ObjectId(expected)]);
        }
    }
}
