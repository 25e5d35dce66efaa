//! Per-peer advertisement cache.
//!
//! The registry maps `(origin, service_name)` to the freshest advertisement
//! heard for that pair. Freshness is decided by the origin's sequence
//! number alone: an incoming advertisement whose seqno is less than or
//! equal to the stored one is ignored, so replays and reordered floods
//! converge to the same state on every peer (last-writer-wins per origin).
//!
//! All operations take `&self`; reads share an `RwLock` so lookups and
//! snapshots proceed concurrently with upserts.

use std::collections::BTreeMap;
use std::sync::RwLock;

use crate::descriptor::{Advertisement, PeerId, ServiceDescriptor};

/// Outcome of offering one advertisement to the registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpsertOutcome {
    /// No entry existed for the key; the advertisement was stored.
    Inserted,
    /// The incoming seqno was strictly newer; the entry was replaced.
    Replaced,
    /// The incoming seqno was equal or older; the stored entry stands.
    IgnoredStale,
}

/// A stored advertisement plus local bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistryEntry {
    pub advertisement: Advertisement,
    /// Local arrival order: the value of the registry's accept counter when
    /// this entry was inserted or last replaced. Monotone per registry,
    /// never compared across registries.
    pub received_at: u64,
}

impl RegistryEntry {
    pub fn descriptor(&self) -> &ServiceDescriptor {
        &self.advertisement.descriptor
    }
}

#[derive(Debug, Default)]
struct Inner {
    entries: BTreeMap<(PeerId, String), RegistryEntry>,
    accept_counter: u64,
}

/// The advertisement cache of one peer.
#[derive(Debug, Default)]
pub struct Registry {
    inner: RwLock<Inner>,
}

impl Registry {
    pub fn new() -> Registry {
        Registry::default()
    }

    /// Offers an advertisement. Stores it iff it is strictly newer than the
    /// current entry for its `(origin, service_name)` key.
    pub fn upsert(&self, ad: Advertisement) -> UpsertOutcome {
        let key = ad.key();
        let mut inner = self.inner.write().unwrap();
        match inner.entries.get(&key) {
            Some(existing) if ad.seqno <= existing.advertisement.seqno => {
                UpsertOutcome::IgnoredStale
            }
            Some(_) => {
                inner.accept_counter += 1;
                let received_at = inner.accept_counter;
                inner.entries.insert(
                    key,
                    RegistryEntry {
                        advertisement: ad,
                        received_at,
                    },
                );
                UpsertOutcome::Replaced
            }
            None => {
                inner.accept_counter += 1;
                let received_at = inner.accept_counter;
                inner.entries.insert(
                    key,
                    RegistryEntry {
                        advertisement: ad,
                        received_at,
                    },
                );
                UpsertOutcome::Inserted
            }
        }
    }

    /// The stored entry for one `(origin, service_name)` pair.
    pub fn get(&self, origin: &PeerId, service_name: &str) -> Option<RegistryEntry> {
        let inner = self.inner.read().unwrap();
        inner
            .entries
            .get(&(origin.clone(), service_name.to_string()))
            .cloned()
    }

    /// All entries whose service name matches, in key order.
    pub fn lookup_by_name(&self, service_name: &str) -> Vec<RegistryEntry> {
        let inner = self.inner.read().unwrap();
        inner
            .entries
            .values()
            .filter(|e| e.descriptor().service_name == service_name)
            .cloned()
            .collect()
    }

    /// A point-in-time copy of every entry, ordered by
    /// `(origin, service_name)`.
    pub fn snapshot(&self) -> Vec<RegistryEntry> {
        let inner = self.inner.read().unwrap();
        inner.entries.values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.inner.read().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::{ParameterSpec, ServiceState, TypeTag};
    use proptest::prelude::*;

    fn ad(origin: &str, service: &str, seqno: u64, state: ServiceState) -> Advertisement {
        let provider = PeerId::new(origin).unwrap();
        Advertisement::new(
            ServiceDescriptor {
                service_name: service.to_string(),
                version: 0,
                inputs: vec![],
                outputs: vec![ParameterSpec::new("out", TypeTag::Bool)],
                status: state,
                provider,
                endpoint: format!("127.0.0.1:7001"),
            },
            seqno,
            4,
        )
        .unwrap()
    }

    #[test]
    fn insert_then_stale_then_replace() {
        let r = Registry::new();
        assert_eq!(
            r.upsert(ad("peer1", "svc", 2, ServiceState::Deactivated)),
            UpsertOutcome::Inserted
        );
        assert_eq!(
            r.upsert(ad("peer1", "svc", 2, ServiceState::Activated)),
            UpsertOutcome::IgnoredStale
        );
        assert_eq!(
            r.upsert(ad("peer1", "svc", 1, ServiceState::Activated)),
            UpsertOutcome::IgnoredStale
        );
        let stored = r.get(&PeerId::new("peer1").unwrap(), "svc").unwrap();
        assert_eq!(stored.descriptor().status, ServiceState::Deactivated);

        assert_eq!(
            r.upsert(ad("peer1", "svc", 3, ServiceState::Activated)),
            UpsertOutcome::Replaced
        );
        let stored = r.get(&PeerId::new("peer1").unwrap(), "svc").unwrap();
        assert_eq!(stored.descriptor().status, ServiceState::Activated);
        assert_eq!(stored.advertisement.seqno, 3);
    }

    #[test]
    fn same_name_different_origins_coexist() {
        let r = Registry::new();
        r.upsert(ad("peer1", "svc", 1, ServiceState::Activated));
        r.upsert(ad("peer2", "svc", 1, ServiceState::Activated));
        assert_eq!(r.len(), 2);
        assert_eq!(r.lookup_by_name("svc").len(), 2);
    }

    #[test]
    fn received_at_is_strictly_monotone_over_accepts() {
        let r = Registry::new();
        r.upsert(ad("peer1", "a", 1, ServiceState::Activated));
        r.upsert(ad("peer1", "a", 1, ServiceState::Activated)); // stale, no tick
        r.upsert(ad("peer2", "b", 1, ServiceState::Activated));
        r.upsert(ad("peer1", "a", 2, ServiceState::Activated));
        let p1 = PeerId::new("peer1").unwrap();
        let p2 = PeerId::new("peer2").unwrap();
        assert_eq!(r.get(&p2, "b").unwrap().received_at, 2);
        assert_eq!(r.get(&p1, "a").unwrap().received_at, 3);
    }

    #[test]
    fn snapshot_is_sorted_and_detached() {
        let r = Registry::new();
        r.upsert(ad("peer2", "b", 1, ServiceState::Activated));
        r.upsert(ad("peer1", "z", 1, ServiceState::Activated));
        r.upsert(ad("peer1", "a", 1, ServiceState::Activated));
        let snap = r.snapshot();
        let keys: Vec<_> = snap.iter().map(|e| e.advertisement.key()).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);

        r.upsert(ad("peer3", "c", 1, ServiceState::Activated));
        assert_eq!(snap.len(), 3);
        assert_eq!(r.len(), 4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// Feeding any interleaving of advertisements converges to the
        /// per-key maximum seqno, independent of arrival order.
        #[test]
        fn order_independent_convergence(
            updates in proptest::collection::vec(
                (1u8..4, 0u8..3, 1u64..6, any::<bool>()),
                1..24,
            ),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;

            let services = ["alpha", "beta", "gamma"];
            let build = |(p, s, seq, act): &(u8, u8, u64, bool)| {
                ad(
                    &format!("peer{p}"),
                    services[*s as usize],
                    *seq,
                    if *act { ServiceState::Activated } else { ServiceState::Deactivated },
                )
            };

            let forward = Registry::new();
            for u in &updates {
                forward.upsert(build(u));
            }

            let mut shuffled = updates.clone();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            shuffled.shuffle(&mut rng);
            let scrambled = Registry::new();
            for u in &shuffled {
                scrambled.upsert(build(u));
            }

            let strip = |r: &Registry| -> Vec<(PeerId, String, u64)> {
                r.snapshot()
                    .into_iter()
                    .map(|e| {
                        let (o, n) = e.advertisement.key();
                        (o, n, e.advertisement.seqno)
                    })
                    .collect()
            };
            prop_assert_eq!(strip(&forward), strip(&scrambled));

            // Every stored seqno is the max offered for its key.
            for entry in forward.snapshot() {
                let (origin, name) = entry.advertisement.key();
                let max = updates
                    .iter()
                    .filter(|(p, s, _, _)| {
                        format!("peer{p}") == origin.as_str()
                            && services[*s as usize] == name
                    })
                    .map(|(_, _, seq, _)| *seq)
                    .max()
                    .unwrap();
                prop_assert_eq!(entry.advertisement.seqno, max);
            }
        }
    }
}
