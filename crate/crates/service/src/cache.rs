//! LRU cache of segment-everything output keyed by image id.

use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use capengine_core::geometry::BitMask;
use lru::LruCache;
use serde::Serialize;

type Slot = Arc<Mutex<Option<Arc<Vec<BitMask>>>>>;

#[derive(Debug)]
pub struct MaskCache {
    slots: Mutex<LruCache<String, Slot>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub entries: usize,
    pub capacity: usize,
}

impl MaskCache {
    pub fn new(capacity: NonZeroUsize) -> Self {
        Self {
            slots: Mutex::new(LruCache::new(capacity)),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    /// Returns the cached masks for `key`, running `compute` on a miss.
    /// Concurrent callers for the same key wait for one computation; a failed
    /// computation leaves the key uncached.
    pub fn get_or_try_insert<E>(
        &self,
        key: &str,
        compute: impl FnOnce() -> Result<Vec<BitMask>, E>,
    ) -> Result<Arc<Vec<BitMask>>, E> {
        let slot = {
            let mut slots = self.slots.lock().unwrap();
            slots.get_or_insert(key.to_string(), Slot::default).clone()
        };
        let mut value = slot.lock().unwrap();
        if let Some(masks) = value.as_ref() {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(masks.clone());
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let masks = Arc::new(compute()?);
        *value = Some(masks.clone());
        Ok(masks)
    }

    pub fn stats(&self) -> CacheStats {
        let slots = self.slots.lock().unwrap();
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            entries: slots.len(),
            capacity: slots.cap().get(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use capengine_core::geometry::ImageDims;

    fn masks() -> Result<Vec<BitMask>, ()> {
        Ok(vec![BitMask::full(ImageDims::new(2, 2).unwrap())])
    }

    #[test]
    fn counts_hits_and_evicts_lru() {
        let cache = MaskCache::new(NonZeroUsize::new(2).unwrap());
        cache.get_or_try_insert("a", masks).unwrap();
        cache.get_or_try_insert("a", masks).unwrap();
        cache.get_or_try_insert("b", masks).unwrap();
        cache.get_or_try_insert("a", masks).unwrap();
        cache.get_or_try_insert("c", masks).unwrap(); // evicts b
        let s = cache.stats();
        assert_eq!((s.hits, s.misses, s.entries), (2, 3, 2));
        cache.get_or_try_insert("a", masks).unwrap();
        cache.get_or_try_insert("b", masks).unwrap();
        assert_eq!((cache.stats().hits, cache.stats().misses), (3, 4));
    }

    #[test]
    fn failures_are_not_cached() {
        let cache = MaskCache::new(NonZeroUsize::new(2).unwrap());
        assert_eq!(cache.get_or_try_insert("a", || Err::<Vec<BitMask>, _>("down")), Err("down"));
        assert!(cache.get_or_try_insert("a", || Ok::<_, &str>(vec![])).unwrap().is_empty());
        assert_eq!(cache.stats().misses, 2);
    }

    #[test]
    fn one_computation_per_key_under_contention() {
        let cache = MaskCache::new(NonZeroUsize::new(4).unwrap());
        let runs = AtomicU64::new(0);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    cache
                        .get_or_try_insert("k", || {
                            runs.fetch_add(1, Ordering::SeqCst);
                            std::thread::sleep(std::time::Duration::from_millis(20));
                            masks()
                        })
                        .unwrap();
                });
            }
        });
        assert_eq!(runs.load(Ordering::SeqCst), 1);
        assert_eq!(cache.stats().hits, 7);
    }
}
