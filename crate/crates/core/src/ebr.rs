//! Epoch-based memory reclamation.
//!
//! Every thread that touches shared nodes owns a participant record in the
//! collector. Before reading shared memory a thread *pins*: it marks itself
//! active and announces the global epoch it observed. The global epoch only
//! moves from `e` to `e + 1` once every active participant has announced `e`,
//! so while a thread stays pinned the global epoch can run at most one step
//! ahead of its announcement.
//!
//! Unlinked objects are retired into one of three per-participant bags keyed by
//! `epoch mod 3`, tagged with the global epoch seen at retirement. A bag tagged
//! `e` is destroyed once the global epoch reaches `e + 2`: by then every
//! participant that was pinned when the object was unlinked has unpinned.
//!
//! All atomic accesses use `SeqCst`.

use std::cell::{Cell, RefCell, UnsafeCell};
use std::marker::PhantomData;
use std::ptr::{self, NonNull};
use std::sync::atomic::{AtomicBool, AtomicPtr, AtomicU64, AtomicUsize, Ordering::SeqCst};
use std::sync::{Arc, Mutex};

use thiserror::Error;

/// Default number of pins between opportunistic advance + collect attempts.
pub const DEFAULT_CADENCE: u64 = 64;

/// Environment variable overriding [`DEFAULT_CADENCE`] for `EbrConfig::default()`.
pub const CADENCE_ENV: &str = "TIERMAP_EBR_CADENCE";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EbrError {
    #[error("participant is already pinned")]
    AlreadyPinned,
    #[error("advance cadence must be at least 1")]
    ZeroCadence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EbrConfig {
    /// Every `cadence`-th pin of a participant tries to advance the epoch and
    /// collects that participant's expired bags.
    pub cadence: u64,
    /// Instead of freeing, destroyed objects are poisoned and quarantined until
    /// the collector is dropped. Readers that find a poisoned object report a
    /// canary hit.
    pub poison: bool,
}

impl Default for EbrConfig {
    fn default() -> Self {
        let cadence = std::env::var(CADENCE_ENV)
            .ok()
            .and_then(|s| s.parse().ok())
            .filter(|&k| k > 0)
            .unwrap_or(DEFAULT_CADENCE);
        EbrConfig {
            cadence,
            poison: false,
        }
    }
}

/// Objects handed to the collector. `poison` is called instead of freeing when
/// the collector runs in quarantine mode; it should leave a canary readers can
/// detect.
pub trait Reclaim: Send {
    fn poison(&self) {}
}

struct Retired {
    ptr: *mut u8,
    free: unsafe fn(*mut u8),
    poison: unsafe fn(*mut u8),
}

// Retired objects are exclusively owned by the collector once unlinked.
unsafe impl Send for Retired {}

unsafe fn free_box<T>(p: *mut u8) {
    drop(Box::from_raw(p.cast::<T>()));
}

unsafe fn poison_box<T: Reclaim>(p: *mut u8) {
    (*p.cast::<T>()).poison();
}

#[derive(Default)]
struct Bag {
    epoch: u64,
    items: Vec<Retired>,
}

struct Participant {
    active: AtomicBool,
    announced: AtomicU64,
    exited: AtomicBool,
    // Owner-only, like `bags`.
    pins: Cell<u64>,
    allocated: AtomicUsize,
    retired: AtomicUsize,
    destroyed: AtomicUsize,
    /// Largest bag this participant has filled, i.e. its peak retirements in one epoch.
    max_bag: AtomicUsize,
    // Touched only by the owning thread, or by `Global::drop`.
    bags: UnsafeCell<[Bag; 3]>,
    next: *const Participant,
}

// `bags` and `pins` are confined to the owning thread; every other field is
// atomic or immutable after the record is published.
unsafe impl Sync for Participant {}
unsafe impl Send for Participant {}

struct Global {
    epoch: AtomicU64,
    participants: AtomicPtr<Participant>,
    registered: AtomicUsize,
    config: EbrConfig,
    orphans: Mutex<Vec<Bag>>,
    quarantine: Mutex<Vec<Retired>>,
    canary_hits: AtomicUsize,
}

impl Global {
    fn participants(&self) -> impl Iterator<Item = &Participant> {
        let mut cur = self.participants.load(SeqCst) as *const Participant;
        std::iter::from_fn(move || {
            // Records are only freed when `Global` drops.
            let p = unsafe { cur.as_ref()? };
            cur = p.next;
            Some(p)
        })
    }

    fn begin_advance(&self) -> AdvanceAttempt<'_> {
        let observed = self.epoch.load(SeqCst);
        let blocked = self
            .participants()
            .filter(|p| !p.exited.load(SeqCst))
            .any(|p| p.active.load(SeqCst) && p.announced.load(SeqCst) != observed);
        AdvanceAttempt {
            global: self,
            observed,
            blocked,
        }
    }

    /// Destroys `items`, returning how many were destroyed.
    fn destroy(&self, items: Vec<Retired>) -> usize {
        let n = items.len();
        if self.config.poison {
            for r in &items {
                unsafe { (r.poison)(r.ptr) };
            }
            self.quarantine
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .extend(items);
        } else {
            for r in items {
                unsafe { (r.free)(r.ptr) };
            }
        }
        n
    }
}

impl Drop for Global {
    fn drop(&mut self) {
        let mut cur = *self.participants.get_mut();
        while !cur.is_null() {
            let p = unsafe { Box::from_raw(cur) };
            for bag in p.bags.into_inner() {
                for r in bag.items {
                    unsafe { (r.free)(r.ptr) };
                }
            }
            cur = p.next as *mut Participant;
        }
        let orphans = std::mem::take(self.orphans.get_mut().unwrap_or_else(|e| e.into_inner()));
        for bag in orphans {
            for r in bag.items {
                unsafe { (r.free)(r.ptr) };
            }
        }
        let quarantine = std::mem::take(self.quarantine.get_mut().unwrap_or_else(|e| e.into_inner()));
        for r in quarantine {
            unsafe { (r.free)(r.ptr) };
        }
    }
}

/// One scan of the participant registry, split from the epoch CAS so tests
/// can interleave other steps between the two.
pub struct AdvanceAttempt<'a> {
    global: &'a Global,
    observed: u64,
    blocked: bool,
}

impl AdvanceAttempt<'_> {
    pub fn observed_epoch(&self) -> u64 {
        self.observed
    }

    pub fn commit(self) -> bool {
        !self.blocked
            && self
                .global
                .epoch
                .compare_exchange(self.observed, self.observed + 1, SeqCst, SeqCst)
                .is_ok()
    }
}

/// Counters summed across all participants, including exited ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EbrStats {
    pub epoch: u64,
    pub participants: usize,
    pub allocated: usize,
    pub retired: usize,
    pub destroyed: usize,
    /// Most objects any one participant retired within a single epoch.
    pub max_bag: usize,
    pub canary_hits: usize,
}

impl EbrStats {
    /// Retired objects not yet destroyed.
    pub fn pending(&self) -> usize {
        self.retired - self.destroyed
    }
}

/// Shared epoch registry. Cheap to clone; clones refer to the same registry.
#[derive(Clone)]
pub struct Collector {
    global: Arc<Global>,
}

impl Default for Collector {
    fn default() -> Self {
        Collector::new()
    }
}

thread_local! {
    static LOCALS: RefCell<Vec<LocalHandle>> = const { RefCell::new(Vec::new()) };
}

impl Collector {
    pub fn new() -> Self {
        Collector::with_config(EbrConfig::default()).expect("default config is valid")
    }

    pub fn with_config(config: EbrConfig) -> Result<Self, EbrError> {
        if config.cadence == 0 {
            return Err(EbrError::ZeroCadence);
        }
        Ok(Collector {
            global: Arc::new(Global {
                epoch: AtomicU64::new(0),
                participants: AtomicPtr::new(ptr::null_mut()),
                registered: AtomicUsize::new(0),
                config,
                orphans: Mutex::new(Vec::new()),
                quarantine: Mutex::new(Vec::new()),
                canary_hits: AtomicUsize::new(0),
            }),
        })
    }

    pub fn config(&self) -> EbrConfig {
        self.global.config
    }

    pub fn global_epoch(&self) -> u64 {
        self.global.epoch.load(SeqCst)
    }

    /// Adds a new, inactive participant record. Threads normally go through
    /// [`Collector::with_local`], which registers once per thread.
    pub fn register(&self) -> LocalHandle {
        let record = Box::into_raw(Box::new(Participant {
            active: AtomicBool::new(false),
            announced: AtomicU64::new(0),
            exited: AtomicBool::new(false),
            pins: Cell::new(0),
            allocated: AtomicUsize::new(0),
            retired: AtomicUsize::new(0),
            destroyed: AtomicUsize::new(0),
            max_bag: AtomicUsize::new(0),
            bags: UnsafeCell::new(Default::default()),
            next: ptr::null(),
        }));
        let mut head = self.global.participants.load(SeqCst);
        loop {
            unsafe { (*record).next = head };
            match self
                .global
                .participants
                .compare_exchange(head, record, SeqCst, SeqCst)
            {
                Ok(_) => break,
                Err(h) => head = h,
            }
        }
        self.global.registered.fetch_add(1, SeqCst);
        LocalHandle {
            global: self.global.clone(),
            record: unsafe { NonNull::new_unchecked(record) },
        }
    }

    /// Runs `f` with the calling thread's participant for this collector,
    /// registering one on first use.
    pub fn with_local<R>(&self, f: impl FnOnce(&LocalHandle) -> R) -> R {
        let mut f = Some(f);
        let cached = LOCALS.try_with(|cell| {
            {
                let locals = cell.borrow();
                if let Some(h) = locals.iter().find(|h| Arc::ptr_eq(&h.global, &self.global)) {
                    return (f.take().unwrap())(h);
                }
            }
            let handle = self.register();
            let mut locals = cell.borrow_mut();
            // Handles whose collector is otherwise unreferenced are dead weight.
            locals.retain(|h| Arc::strong_count(&h.global) > 1);
            locals.push(handle);
            drop(locals);
            let locals = cell.borrow();
            (f.take().unwrap())(locals.last().unwrap())
        });
        match cached {
            Ok(r) => r,
            // Thread-local storage is being torn down; use a one-off record.
            Err(_) => (f.take().unwrap())(&self.register()),
        }
    }

    /// Advances the global epoch if every active participant has announced it.
    pub fn try_advance(&self) -> bool {
        self.global.begin_advance().commit()
    }

    /// First half of [`Collector::try_advance`]: scan without committing.
    #[cfg(any(test, feature = "test-hooks"))]
    pub fn begin_advance(&self) -> AdvanceAttempt<'_> {
        self.global.begin_advance()
    }

    pub fn stats(&self) -> EbrStats {
        let mut s = EbrStats {
            epoch: self.global_epoch(),
            participants: self.global.registered.load(SeqCst),
            canary_hits: self.global.canary_hits.load(SeqCst),
            ..EbrStats::default()
        };
        // Destroyed counters are all read before any retired counter, so a
        // snapshot taken mid-run never shows more destroyed than retired.
        for p in self.global.participants() {
            s.destroyed += p.destroyed.load(SeqCst);
        }
        for p in self.global.participants() {
            s.allocated += p.allocated.load(SeqCst);
            s.retired += p.retired.load(SeqCst);
            s.max_bag = s.max_bag.max(p.max_bag.load(SeqCst));
        }
        s
    }

    pub fn is_poisoning(&self) -> bool {
        self.global.config.poison
    }
}

/// A thread's participant record. Not `Send`: pins are thread-confined.
pub struct LocalHandle {
    global: Arc<Global>,
    record: NonNull<Participant>,
}

impl LocalHandle {
    fn record(&self) -> &Participant {
        unsafe { self.record.as_ref() }
    }

    pub fn is_pinned(&self) -> bool {
        self.record().active.load(SeqCst)
    }

    pub fn announced_epoch(&self) -> u64 {
        self.record().announced.load(SeqCst)
    }

    /// Marks this participant active and announces the current global epoch.
    pub fn pin(&self) -> Result<Guard<'_>, EbrError> {
        let rec = self.record();
        if rec.active.load(SeqCst) {
            return Err(EbrError::AlreadyPinned);
        }
        // The active store must be visible before the epoch is read, or an
        // advancing thread could miss this participant while it holds a stale epoch.
        rec.active.store(true, SeqCst);
        let epoch = self.global.epoch.load(SeqCst);
        // Usually unchanged since the last pin; skip the redundant store.
        if rec.announced.load(SeqCst) != epoch {
            rec.announced.store(epoch, SeqCst);
        }
        let guard = Guard {
            local: self,
            epoch,
            _not_send: PhantomData,
        };
        let pins = rec.pins.get() + 1;
        rec.pins.set(pins);
        if pins.is_multiple_of(self.global.config.cadence) {
            self.global.begin_advance().commit();
            guard.collect();
        }
        Ok(guard)
    }

    /// Repeatedly advances and collects so that, once every other participant
    /// is unpinned, all garbage retired so far is destroyed. Returns the number
    /// of objects destroyed.
    pub fn flush(&self) -> usize {
        let mut freed = 0;
        for _ in 0..3 {
            self.global.begin_advance().commit();
            if let Ok(g) = self.pin() {
                freed += g.collect();
            }
        }
        freed
    }

    pub fn try_advance(&self) -> bool {
        self.global.begin_advance().commit()
    }
}

impl Drop for LocalHandle {
    fn drop(&mut self) {
        let rec = self.record();
        debug_assert!(!rec.active.load(SeqCst));
        rec.exited.store(true, SeqCst);
        let bags = unsafe { &mut *rec.bags.get() };
        let leftovers: Vec<Bag> = bags
            .iter_mut()
            .filter(|b| !b.items.is_empty())
            .map(std::mem::take)
            .collect();
        if !leftovers.is_empty() {
            self.global
                .orphans
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .extend(leftovers);
        }
    }
}

/// Proof that the owning thread is pinned. Unpins on drop.
pub struct Guard<'a> {
    local: &'a LocalHandle,
    epoch: u64,
    _not_send: PhantomData<*const ()>,
}

impl Guard<'_> {
    /// Global epoch observed when this guard was pinned.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn unpin(self) {}

    pub fn is_poisoning(&self) -> bool {
        self.local.global.config.poison
    }

    pub fn report_canary_hit(&self) {
        self.local.global.canary_hits.fetch_add(1, SeqCst);
    }

    /// Counts an allocation of a reclaimable object, for leak reconciliation.
    pub fn count_allocation(&self) {
        self.local.record().allocated.fetch_add(1, SeqCst);
    }

    /// Counts an object freed directly because it was never shared.
    pub fn count_unshared_free(&self) {
        let rec = self.local.record();
        rec.retired.fetch_add(1, SeqCst);
        rec.destroyed.fetch_add(1, SeqCst);
    }

    /// Hands `ptr` to the collector for deferred destruction.
    ///
    /// # Safety
    ///
    /// `ptr` must come from `Box::into_raw`, must already be unreachable for
    /// traversals starting after this call, and must be retired exactly once.
    pub unsafe fn retire<T: Reclaim>(&self, ptr: *mut T) {
        let global = &self.local.global;
        let rec = self.local.record();
        let tag = global.epoch.load(SeqCst);
        let bags = &mut *rec.bags.get();
        let bag = &mut bags[(tag % 3) as usize];
        if bag.epoch != tag {
            if !bag.items.is_empty() {
                // Same residue, older tag: at least three epochs old.
                debug_assert!(bag.epoch + 3 <= tag);
                let n = global.destroy(std::mem::take(&mut bag.items));
                rec.destroyed.fetch_add(n, SeqCst);
            }
            bag.epoch = tag;
        }
        bag.items.push(Retired {
            ptr: ptr.cast(),
            free: free_box::<T>,
            poison: poison_box::<T>,
        });
        rec.max_bag.fetch_max(bag.items.len(), SeqCst);
        rec.retired.fetch_add(1, SeqCst);
    }

    /// Destroys this participant's bags tagged at least two epochs behind the
    /// global epoch, plus any expired bags left by exited threads.
    pub fn collect(&self) -> usize {
        let global = &self.local.global;
        let rec = self.local.record();
        let now = global.epoch.load(SeqCst);
        let bags = unsafe { &mut *rec.bags.get() };
        let mut freed = 0;
        for bag in bags.iter_mut() {
            if !bag.items.is_empty() && bag.epoch + 2 <= now {
                freed += global.destroy(std::mem::take(&mut bag.items));
            }
        }
        let expired: Vec<Bag> = match global.orphans.try_lock() {
            Ok(mut orphans) if !orphans.is_empty() => {
                let (expired, keep) = std::mem::take(&mut *orphans)
                    .into_iter()
                    .partition(|b| b.epoch + 2 <= now);
                *orphans = keep;
                expired
            }
            _ => Vec::new(),
        };
        for bag in expired {
            freed += global.destroy(bag.items);
        }
        rec.destroyed.fetch_add(freed, SeqCst);
        freed
    }
}

impl Drop for Guard<'_> {
    fn drop(&mut self) {
        self.local.record().active.store(false, SeqCst);
    }
}
