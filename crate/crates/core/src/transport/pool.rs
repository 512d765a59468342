//! Fixed-capacity pool of object-sized buffers.
//!
//! Both endpoints bound their in-flight data with one of these: a block may
//! only be read (source) or received (sink) into a reserved slot, and the slot
//! goes back to the pool when dropped.

use std::fmt;
use std::ops::{Deref, DerefMut};
use std::sync::{Arc, Condvar, Mutex};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PoolStats {
    pub slot_count: usize,
    pub in_use: usize,
    pub peak_in_use: usize,
    pub reservations: u64,
}

struct State {
    free: Vec<Vec<u8>>,
    allocated: usize,
    in_use: usize,
    peak: usize,
    reservations: u64,
    closed: bool,
}

struct Inner {
    slot_size: usize,
    slot_count: usize,
    state: Mutex<State>,
    freed: Condvar,
}

#[derive(Clone)]
pub struct BufferPool {
    inner: Arc<Inner>,
}

impl BufferPool {
    /// Buffers are allocated on first use, never more than `slot_count` of them.
    pub fn new(slot_size: usize, slot_count: usize) -> Self {
        assert!(slot_count > 0, "pool needs at least one slot");
        BufferPool {
            inner: Arc::new(Inner {
                slot_size,
                slot_count,
                state: Mutex::new(State {
                    free: Vec::new(),
                    allocated: 0,
                    in_use: 0,
                    peak: 0,
                    reservations: 0,
                    closed: false,
                }),
                freed: Condvar::new(),
            }),
        }
    }

    pub fn slot_size(&self) -> usize {
        self.inner.slot_size
    }

    pub fn slot_count(&self) -> usize {
        self.inner.slot_count
    }

    /// Blocks until a slot is free. `None` once the pool is closed.
    pub fn reserve(&self) -> Option<Slot> {
        let mut st = self.inner.state.lock().unwrap();
        loop {
            if st.closed {
                return None;
            }
            if st.in_use < self.inner.slot_count {
                return Some(self.take(&mut st));
            }
            st = self.inner.freed.wait(st).unwrap();
        }
    }

    pub fn try_reserve(&self) -> Option<Slot> {
        let mut st = self.inner.state.lock().unwrap();
        if st.closed || st.in_use >= self.inner.slot_count {
            return None;
        }
        Some(self.take(&mut st))
    }

    fn take(&self, st: &mut State) -> Slot {
        let buf = match st.free.pop() {
            Some(b) => b,
            None => {
                st.allocated += 1;
                vec![0u8; self.inner.slot_size]
            }
        };
        st.in_use += 1;
        st.peak = st.peak.max(st.in_use);
        st.reservations += 1;
        Slot {
            buf,
            len: self.inner.slot_size,
            pool: Arc::clone(&self.inner),
        }
    }

    /// Wakes every waiter; later reservations fail. Outstanding slots stay valid.
    pub fn close(&self) {
        self.inner.state.lock().unwrap().closed = true;
        self.inner.freed.notify_all();
    }

    pub fn stats(&self) -> PoolStats {
        let st = self.inner.state.lock().unwrap();
        PoolStats {
            slot_count: self.inner.slot_count,
            in_use: st.in_use,
            peak_in_use: st.peak,
            reservations: st.reservations,
        }
    }
}

/// A reserved buffer. Derefs to the first `len` bytes.
pub struct Slot {
    buf: Vec<u8>,
    len: usize,
    pool: Arc<Inner>,
}

impl Slot {
    /// Shrinks or restores the visible length (at most the slot size).
    pub fn set_len(&mut self, len: usize) {
        assert!(len <= self.buf.len(), "slot length {len} exceeds {}", self.buf.len());
        self.len = len;
    }
}

impl Deref for Slot {
    type Target = [u8];
    fn deref(&self) -> &[u8] {
        &self.buf[..self.len]
    }
}

impl DerefMut for Slot {
    fn deref_mut(&mut self) -> &mut [u8] {
        &mut self.buf[..self.len]
    }
}

impl fmt::Debug for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Slot({} bytes)", self.len)
    }
}

impl Drop for Slot {
    fn drop(&mut self) {
        let buf = std::mem::take(&mut self.buf);
        let mut st = self.pool.state.lock().unwrap();
        st.in_use -= 1;
        st.free.push(buf);
        drop(st);
        self.pool.freed.notify_one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::thread;
    use std::time::Duration;

    #[test]
    fn bounded() {
        let pool = BufferPool::new(16, 2);
        let a = pool.reserve().unwrap();
        let _b = pool.reserve().unwrap();
        assert!(pool.try_reserve().is_none());
        drop(a);
        let c = pool.try_reserve().unwrap();
        assert_eq!(c.len(), 16);
        assert_eq!(pool.stats().peak_in_use, 2);
    }

    #[test]
    fn reserve_waits_for_release() {
        let pool = BufferPool::new(4, 1);
        let held = pool.reserve().unwrap();
        let p2 = pool.clone();
        let t = thread::spawn(move || p2.reserve().map(|s| s.len()));
        thread::sleep(Duration::from_millis(20));
        drop(held);
        assert_eq!(t.join().unwrap(), Some(4));
    }

    #[test]
    fn close_wakes_waiters() {
        let pool = BufferPool::new(4, 1);
        let _held = pool.reserve().unwrap();
        let p2 = pool.clone();
        let t = thread::spawn(move || p2.reserve().is_none());
        thread::sleep(Duration::from_millis(20));
        pool.close();
        assert!(t.join().unwrap());
    }
}
