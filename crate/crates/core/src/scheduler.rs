//! Layout-aware object scheduling at the source.
//!
//! Every OST has a FIFO of pending objects. A worker claims the head of a
//! queue and holds that OST until its read completes, so two workers never
//! contend on one OST and a slow OST only stalls the worker holding it.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::Duration;

use crate::error::{Error, Result};
use crate::ftlog::CompletedSet;
use crate::layout::{DatasetManifest, ObjectDescriptor, OstId};

pub type WorkerId = usize;

#[derive(Debug)]
pub struct OstQueue {
    pub ost_id: OstId,
    pub pending: VecDeque<ObjectDescriptor>,
    pub busy: bool,
    pub congestion_delay: Duration,
    holder: Option<WorkerId>,
}

impl OstQueue {
    fn new(ost_id: OstId) -> Self {
        OstQueue {
            ost_id,
            pending: VecDeque::new(),
            busy: false,
            congestion_delay: Duration::ZERO,
            holder: None,
        }
    }
}

/// An object handed to a worker together with its OST's artificial service delay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Claim {
    pub object: ObjectDescriptor,
    pub delay: Duration,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PlanCounts {
    pub scheduled: u64,
    pub pending: u64,
    pub in_flight: u64,
    pub synced: u64,
}

#[derive(Debug, Default)]
struct FileProgress {
    enqueued: bool,
    /// Blocks scheduled but not yet synced.
    remaining: BTreeSet<u64>,
}

#[derive(Debug)]
struct PlanState {
    queues: Vec<OstQueue>,
    slot_of: HashMap<OstId, usize>,
    files: HashMap<u32, FileProgress>,
    last_held: HashMap<WorkerId, usize>,
    counts: PlanCounts,
    shutdown: bool,
}

/// Shared scheduling state: per-file remaining sets and per-OST queues.
#[derive(Debug)]
pub struct TransferPlan {
    manifest: Arc<DatasetManifest>,
    state: Mutex<PlanState>,
    work: Condvar,
}

impl TransferPlan {
    /// Creates one queue per OST referenced by the manifest.
    pub fn new(manifest: Arc<DatasetManifest>) -> Self {
        let osts = manifest.osts();
        let slot_of = osts.iter().enumerate().map(|(i, &o)| (o, i)).collect();
        TransferPlan {
            state: Mutex::new(PlanState {
                queues: osts.into_iter().map(OstQueue::new).collect(),
                slot_of,
                files: HashMap::new(),
                last_held: HashMap::new(),
                counts: PlanCounts::default(),
                shutdown: false,
            }),
            work: Condvar::new(),
            manifest,
        }
    }

    pub fn manifest(&self) -> &Arc<DatasetManifest> {
        &self.manifest
    }

    fn lock(&self) -> MutexGuard<'_, PlanState> {
        self.state.lock().expect("plan lock poisoned")
    }

    /// Sets the per-object service delay of one OST.
    pub fn set_congestion(&self, ost: OstId, delay: Duration) {
        let mut st = self.lock();
        if let Some(&i) = st.slot_of.get(&ost) {
            st.queues[i].congestion_delay = delay;
        }
    }

    /// Appends every block of `file_id` not in `skip` to its OST queue, in
    /// ascending block order. A file can be enqueued once; later calls return 0.
    pub fn enqueue_file(&self, file_id: u32, skip: &CompletedSet) -> Result<u64> {
        let count = self.manifest.object_count(file_id);
        if self.manifest.file(file_id).is_none() {
            return Err(Error::BlockOutOfRange {
                file_id,
                block: 0,
                count: 0,
            });
        }
        if skip.total_blocks() != count {
            return Err(Error::Protocol(format!(
                "skip set covers {} blocks, file {file_id} has {count}",
                skip.total_blocks()
            )));
        }
        let mut st = self.lock();
        let progress = st.files.entry(file_id).or_default();
        if progress.enqueued {
            return Ok(0);
        }
        progress.enqueued = true;
        let mut added = 0u64;
        for obj in self.manifest.objects(file_id) {
            if skip.contains(obj.block_index) {
                continue;
            }
            st.files
                .get_mut(&file_id)
                .expect("inserted above")
                .remaining
                .insert(obj.block_index);
            let q = st.slot_of[&obj.ost_id];
            st.queues[q].pending.push_back(obj);
            added += 1;
        }
        st.counts.scheduled += added;
        st.counts.pending += added;
        drop(st);
        if added > 0 {
            self.work.notify_all();
        }
        Ok(added)
    }

    /// Puts an in-flight object back at the tail of its OST queue (write retry).
    pub fn requeue(&self, obj: ObjectDescriptor) {
        let mut st = self.lock();
        let q = st.slot_of[&obj.ost_id];
        st.queues[q].pending.push_back(obj);
        st.counts.in_flight -= 1;
        st.counts.pending += 1;
        drop(st);
        self.work.notify_all();
    }

    /// Non-blocking claim: scans queues round-robin starting after the OST
    /// this worker last held and takes the head of the first free, non-empty one.
    pub fn claim_next(&self, worker: WorkerId) -> Option<Claim> {
        let mut st = self.lock();
        Self::claim_locked(&mut st, worker)
    }

    fn claim_locked(st: &mut PlanState, worker: WorkerId) -> Option<Claim> {
        debug_assert!(
            !st.queues.iter().any(|q| q.holder == Some(worker)),
            "worker {worker} claims while holding an OST"
        );
        let n = st.queues.len();
        let start = st.last_held.get(&worker).map_or(0, |&i| i + 1);
        for step in 0..n {
            let i = (start + step) % n;
            let q = &mut st.queues[i];
            if q.busy || q.pending.is_empty() {
                continue;
            }
            let object = q.pending.pop_front().expect("non-empty");
            q.busy = true;
            q.holder = Some(worker);
            let delay = q.congestion_delay;
            st.last_held.insert(worker, i);
            st.counts.pending -= 1;
            st.counts.in_flight += 1;
            return Some(Claim { object, delay });
        }
        None
    }

    /// Blocks until an object can be claimed. `None` after [`shutdown`](Self::shutdown).
    pub fn wait_claim(&self, worker: WorkerId) -> Option<Claim> {
        let mut st = self.lock();
        loop {
            if st.shutdown {
                return None;
            }
            if let Some(c) = Self::claim_locked(&mut st, worker) {
                return Some(c);
            }
            st = self.work.wait(st).expect("plan lock poisoned");
        }
    }

    /// Ends a worker's hold on `ost`.
    pub fn release_ost(&self, ost: OstId) -> Result<()> {
        let mut st = self.lock();
        let i = *st.slot_of.get(&ost).ok_or(Error::NotHeld(ost))?;
        let q = &mut st.queues[i];
        if !q.busy {
            return Err(Error::NotHeld(ost));
        }
        q.busy = false;
        q.holder = None;
        let wake = !q.pending.is_empty();
        drop(st);
        if wake {
            self.work.notify_all();
        }
        Ok(())
    }

    /// Marks an in-flight block as durable at the sink. Returns the number of
    /// blocks of that file still outstanding.
    pub fn mark_synced(&self, file_id: u32, block: u64) -> Result<u64> {
        let mut st = self.lock();
        let progress = st
            .files
            .get_mut(&file_id)
            .ok_or_else(|| Error::Protocol(format!("sync for unscheduled file {file_id}")))?;
        if !progress.remaining.remove(&block) {
            return Err(Error::Protocol(format!(
                "sync for block {block} of file {file_id} that is not outstanding"
            )));
        }
        let left = progress.remaining.len() as u64;
        st.counts.in_flight -= 1;
        st.counts.synced += 1;
        Ok(left)
    }

    pub fn remaining(&self, file_id: u32) -> Vec<u64> {
        self.lock()
            .files
            .get(&file_id)
            .map(|p| p.remaining.iter().copied().collect())
            .unwrap_or_default()
    }

    pub fn counts(&self) -> PlanCounts {
        self.lock().counts
    }

    /// Pending block indices (with file ids) in one OST's queue.
    pub fn queue_snapshot(&self, ost: OstId) -> Vec<(u32, u64)> {
        let st = self.lock();
        st.slot_of
            .get(&ost)
            .map(|&i| {
                st.queues[i]
                    .pending
                    .iter()
                    .map(|o| (o.file_id, o.block_index))
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn is_busy(&self, ost: OstId) -> bool {
        let st = self.lock();
        st.slot_of.get(&ost).is_some_and(|&i| st.queues[i].busy)
    }

    /// Wakes all waiting workers and makes further waits return `None`.
    pub fn shutdown(&self) {
        self.lock().shutdown = true;
        self.work.notify_all();
    }
}
