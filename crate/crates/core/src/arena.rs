//! Byte accounting for scoring workspaces.
//!
//! Scoring code requests its buffers through a [`ScoringArena`], which tracks
//! live bytes and their high-water mark. This measures what the scoring path
//! itself needs, independent of the process allocator and runtime overhead.

use std::ops::{Deref, DerefMut};
use std::sync::atomic::{AtomicUsize, Ordering};

#[derive(Debug, Default)]
pub struct ScoringArena {
    live: AtomicUsize,
    peak: AtomicUsize,
}

impl ScoringArena {
    pub fn new() -> Self {
        Self::default()
    }

    fn acquire(&self, bytes: usize) {
        let now = self.live.fetch_add(bytes, Ordering::SeqCst) + bytes;
        self.peak.fetch_max(now, Ordering::SeqCst);
    }

    fn release(&self, bytes: usize) {
        self.live.fetch_sub(bytes, Ordering::SeqCst);
    }

    /// A zero-filled tracked buffer.
    pub fn alloc<T: Clone + Default>(&self, len: usize) -> ArenaBuf<'_, T> {
        let bytes = len * std::mem::size_of::<T>();
        self.acquire(bytes);
        ArenaBuf {
            buf: vec![T::default(); len],
            bytes,
            arena: self,
        }
    }

    /// Accounts for `bytes` of scratch owned elsewhere until the guard drops.
    pub fn reserve(&self, bytes: usize) -> Reservation<'_> {
        self.acquire(bytes);
        Reservation { bytes, arena: self }
    }

    pub fn live_bytes(&self) -> usize {
        self.live.load(Ordering::SeqCst)
    }

    pub fn peak_bytes(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    /// Starts a new high-water measurement from the current live level.
    pub fn reset_peak(&self) {
        self.peak.store(self.live_bytes(), Ordering::SeqCst);
    }
}

pub struct ArenaBuf<'a, T> {
    buf: Vec<T>,
    bytes: usize,
    arena: &'a ScoringArena,
}

impl<T> ArenaBuf<'_, T> {
    /// Hands the buffer to the caller; it stops being counted.
    pub fn into_vec(mut self) -> Vec<T> {
        std::mem::take(&mut self.buf)
    }
}

impl<T> Deref for ArenaBuf<'_, T> {
    type Target = Vec<T>;
    fn deref(&self) -> &Vec<T> {
        &self.buf
    }
}

impl<T> DerefMut for ArenaBuf<'_, T> {
    fn deref_mut(&mut self) -> &mut Vec<T> {
        &mut self.buf
    }
}

impl<T> Drop for ArenaBuf<'_, T> {
    fn drop(&mut self) {
        self.arena.release(self.bytes);
    }
}

pub struct Reservation<'a> {
    bytes: usize,
    arena: &'a ScoringArena,
}

impl Drop for Reservation<'_> {
    fn drop(&mut self) {
        self.arena.release(self.bytes);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tracks_high_water_mark() {
        let arena = ScoringArena::new();
        {
            let _a = arena.alloc::<f32>(100);
            {
                let _b = arena.alloc::<f64>(10);
                assert_eq!(arena.live_bytes(), 480);
            }
            let _r = arena.reserve(20);
            assert_eq!(arena.live_bytes(), 420);
        }
        assert_eq!(arena.live_bytes(), 0);
        assert_eq!(arena.peak_bytes(), 480);
        let v = arena.alloc::<u8>(7).into_vec();
        assert_eq!(v.len(), 7);
        assert_eq!(arena.live_bytes(), 0);
        arena.reset_peak();
        assert_eq!(arena.peak_bytes(), 0);
    }
}
