//! Harris's sorted lock-free linked list with mark-bit logical deletion
//! (<https://www.cl.cam.ac.uk/research/srg/netos/papers/2001-caslists.pdf>).
//!
//! Each node carries two marked words: `value`, pointing at an immutable
//! [`ValueCell`], and `next`. Removal first marks `value` (the linearization
//! point, which also freezes the value against concurrent upserts) and then
//! marks `next`, after which the node is structurally dead and any traversal
//! may unlink it. A node's `next` is therefore only ever marked after its
//! `value` is. Upserts replace the value by CAS on the `value` word, which
//! fails once it is marked.
//!
//! Every operation takes a [`Guard`]; nodes and cells returned by a traversal
//! stay valid for the guard's lifetime. All atomics are `SeqCst`.

use std::marker::PhantomData;
use std::ptr;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicU8, AtomicUsize, Ordering::SeqCst};

use crate::api::{Key, MapReport, Value};
use crate::ebr::{Guard, Reclaim};

const MARK: usize = 1;

/// A pointer plus a deletion mark in its least significant bit.
pub struct Marked<T> {
    word: usize,
    _ty: PhantomData<*mut T>,
}

impl<T> Clone for Marked<T> {
    fn clone(&self) -> Self {
        *self
    }
}
impl<T> Copy for Marked<T> {}

impl<T> PartialEq for Marked<T> {
    fn eq(&self, other: &Self) -> bool {
        self.word == other.word
    }
}
impl<T> Eq for Marked<T> {}

impl<T> std::fmt::Debug for Marked<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Marked({:#x}, {})", self.word & !MARK, self.is_marked())
    }
}

impl<T> Marked<T> {
    pub fn new(ptr: *const T, marked: bool) -> Self {
        let addr = ptr as usize;
        debug_assert_eq!(addr & MARK, 0, "pointer not aligned for a mark bit");
        Marked {
            word: addr | marked as usize,
            _ty: PhantomData,
        }
    }

    pub fn null() -> Self {
        Marked::new(ptr::null(), false)
    }

    pub fn from_raw(word: usize) -> Self {
        Marked {
            word,
            _ty: PhantomData,
        }
    }

    pub fn raw(self) -> usize {
        self.word
    }

    pub fn ptr(self) -> *mut T {
        (self.word & !MARK) as *mut T
    }

    pub fn is_marked(self) -> bool {
        self.word & MARK != 0
    }

    pub fn marked(self) -> Self {
        Marked::from_raw(self.word | MARK)
    }

    pub fn unmarked(self) -> Self {
        Marked::from_raw(self.word & !MARK)
    }
}

/// Atomic [`Marked`] word. Address and mark are always read, written and
/// compared together.
pub struct MarkedLink<T> {
    word: AtomicUsize,
    _ty: PhantomData<*mut T>,
}

impl<T> MarkedLink<T> {
    /// Unmarked null link, usable in constants.
    pub const fn null() -> Self {
        MarkedLink {
            word: AtomicUsize::new(0),
            _ty: PhantomData,
        }
    }

    pub fn new(init: Marked<T>) -> Self {
        MarkedLink {
            word: AtomicUsize::new(init.word),
            _ty: PhantomData,
        }
    }

    pub fn load(&self) -> Marked<T> {
        Marked::from_raw(self.word.load(SeqCst))
    }

    pub fn store(&self, w: Marked<T>) {
        self.word.store(w.word, SeqCst)
    }

    pub fn compare_exchange(&self, current: Marked<T>, new: Marked<T>) -> Result<Marked<T>, Marked<T>> {
        self.word
            .compare_exchange(current.word, new.word, SeqCst, SeqCst)
            .map(Marked::from_raw)
            .map_err(Marked::from_raw)
    }

    /// Sets the mark, keeping whatever address is current. Returns the
    /// unmarked word that was marked, or the already-marked word.
    pub fn mark(&self) -> Marked<T> {
        let mut cur = self.load();
        loop {
            if cur.is_marked() {
                return cur;
            }
            match self.compare_exchange(cur, cur.marked()) {
                Ok(w) => return w,
                Err(w) => cur = w,
            }
        }
    }
}

/// Immutable value. Replacing a value swaps in a new cell.
pub struct ValueCell {
    value: Value,
    poisoned: AtomicBool,
}

impl ValueCell {
    const fn new(value: Value) -> Self {
        ValueCell {
            value,
            poisoned: AtomicBool::new(false),
        }
    }

    fn boxed(value: Value) -> *mut ValueCell {
        Box::into_raw(Box::new(ValueCell::new(value)))
    }
}

impl Reclaim for ValueCell {
    fn poison(&self) {
        self.poisoned.store(true, SeqCst);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
enum Kind {
    Data,
    Tail,
}

/// List node. A data node's first value lives inline in `first`, so a fresh
/// node is one allocation and a lookup of a never-replaced value touches one
/// object; later values are boxed cells that the node owns once installed.
#[repr(C)]
pub struct Node {
    key: Key,
    next: MarkedLink<Node>,
    value: MarkedLink<ValueCell>,
    first: ValueCell,
    kind: Kind,
    poisoned: AtomicBool,
    retirements: AtomicU8,
}

impl Reclaim for Node {
    fn poison(&self) {
        self.poisoned.store(true, SeqCst);
    }
}

// Nodes are shared between threads through the list; all mutable state is atomic.
unsafe impl Send for Node {}
unsafe impl Sync for Node {}
unsafe impl Send for ValueCell {}

// The list owns its nodes; all shared access goes through atomics.
unsafe impl Send for LockFreeList {}
unsafe impl Sync for LockFreeList {}

/// The tail sentinel, shared by every list. Nothing ever writes to it: it is
/// never a CAS target, never marked and never retired.
static TAIL: Node = Node::sentinel(Kind::Tail);

fn tail() -> *const Node {
    &TAIL
}

impl Node {
    const fn sentinel(kind: Kind) -> Node {
        Node {
            key: 0,
            next: MarkedLink::null(),
            value: MarkedLink::null(),
            first: ValueCell::new(0),
            kind,
            poisoned: AtomicBool::new(false),
            retirements: AtomicU8::new(0),
        }
    }

    fn alloc(key: Key, value: Value, next: *const Node) -> *mut Node {
        let node = Box::into_raw(Box::new(Node {
            key,
            first: ValueCell::new(value),
            ..Node::sentinel(Kind::Data)
        }));
        unsafe {
            (*node).next.store(Marked::new(next, false));
            (*node).value.store(Marked::new(&(*node).first, false));
        }
        node
    }

    fn is_tail(&self) -> bool {
        self.kind == Kind::Tail
    }

    /// `self.key < key`, with the tail at +inf.
    fn precedes(&self, key: Key) -> bool {
        match self.kind {
            Kind::Data => self.key < key,
            Kind::Tail => false,
        }
    }

    fn holds(&self, key: Key) -> bool {
        self.kind == Kind::Data && self.key == key
    }

    /// Whether `cell` is a separately allocated cell rather than `first`.
    fn owns_boxed(&self, cell: *const ValueCell) -> bool {
        !ptr::eq(cell, &self.first)
    }
}

/// Sorted lock-free list of `(Key, Value)` entries ending at a tail sentinel.
///
/// The head (key -inf) is represented by its outgoing link alone: it is never
/// marked or removed, and only its `next` word is ever read or CASed. This
/// keeps a list in a bucket array down to two words.
pub struct LockFreeList {
    head: MarkedLink<Node>,
    restarts: AtomicU64,
}

/// Result of a search: `left` is the unmarked link (the head or a node's
/// `next`) that addressed `right` at some instant during the search.
struct Window<'g> {
    left: &'g MarkedLink<Node>,
    /// The node owning `left`, or `None` for the head.
    #[cfg_attr(not(any(test, feature = "test-hooks")), allow(dead_code))]
    left_node: Option<&'g Node>,
    right: &'g Node,
}

impl Default for LockFreeList {
    fn default() -> Self {
        LockFreeList::new()
    }
}

impl LockFreeList {
    pub fn new() -> Self {
        LockFreeList {
            head: MarkedLink::new(Marked::new(tail(), false)),
            restarts: AtomicU64::new(0),
        }
    }

    /// Times an operation had to go round its retry loop after a failed CAS
    /// or after meeting a node mid-removal.
    pub fn restarts(&self) -> u64 {
        self.restarts.load(SeqCst)
    }

    fn restart(&self) {
        self.restarts.fetch_add(1, SeqCst);
    }

    fn node<'g>(&self, p: *const Node, guard: &'g Guard<'_>) -> &'g Node {
        // Every node reached under `guard` was reachable at some point after
        // the pin, so it cannot be destroyed before the guard drops.
        let node = unsafe { &*p };
        if node.poisoned.load(SeqCst) {
            guard.report_canary_hit();
        }
        node
    }

    fn cell<'g>(&self, p: *const ValueCell, guard: &'g Guard<'_>) -> &'g ValueCell {
        let cell = unsafe { &*p };
        if cell.poisoned.load(SeqCst) {
            guard.report_canary_hit();
        }
        cell
    }

    fn retire_node(&self, node: &Node, guard: &Guard<'_>) {
        let prior = node.retirements.fetch_add(1, SeqCst);
        assert_eq!(prior, 0, "node {} retired twice", node.key);
        // Both words are marked, so neither the node nor its cell can change.
        let cell = node.value.load().ptr();
        unsafe {
            if node.owns_boxed(cell) {
                guard.retire(cell);
            }
            guard.retire(node as *const Node as *mut Node);
        }
    }

    /// Finds adjacent `(left, right)` with `left.key < key <= right.key`,
    /// unlinking (and retiring) any structurally deleted nodes between them.
    fn search<'g>(&'g self, key: Key, guard: &'g Guard<'_>) -> Window<'g> {
        'retry: loop {
            let mut left = &self.head;
            let mut left_node = None;
            let mut left_next = left.load();
            // `t` is the node under inspection, `t_link` and `t_node` the
            // link it was reached from and that link's owner.
            let (mut t_link, mut t_node, mut t_next) = (left, None, left_next);
            let mut t;

            loop {
                if !t_next.is_marked() {
                    (left, left_node, left_next) = (t_link, t_node, t_next);
                }
                t = self.node(t_next.ptr(), guard);
                if t.is_tail() {
                    break;
                }
                (t_link, t_node, t_next) = (&t.next, Some(t), t.next.load());
                if !(t_next.is_marked() || t.precedes(key)) {
                    break;
                }
            }
            let right = t;
            let window = Window { left, left_node, right };

            if ptr::eq(left_next.ptr(), right) {
                if !right.is_tail() && right.next.load().is_marked() {
                    self.restart();
                    continue 'retry;
                }
                return window;
            }

            if left.compare_exchange(left_next, Marked::new(right, false)).is_ok() {
                let mut cur = left_next.ptr() as *const Node;
                while !ptr::eq(cur, right) {
                    let dead = self.node(cur, guard);
                    cur = dead.next.load().ptr();
                    self.retire_node(dead, guard);
                }
                if !right.is_tail() && right.next.load().is_marked() {
                    self.restart();
                    continue 'retry;
                }
                return window;
            }
            self.restart();
        }
    }

    /// Upsert. Replaces the value in place when an unmarked node with `key`
    /// exists, otherwise links a new node.
    pub fn insert(&self, key: Key, value: Value, guard: &Guard<'_>) -> MapReport {
        let mut fresh: *mut Node = ptr::null_mut();
        let mut spare: *mut ValueCell = ptr::null_mut();
        let report = loop {
            let Window { left, right, .. } = self.search(key, guard);

            if right.holds(key) {
                let cur = right.value.load();
                if cur.is_marked() {
                    // Mid-removal: finish its structural mark and look again.
                    right.next.mark();
                    self.restart();
                    continue;
                }
                if spare.is_null() {
                    spare = ValueCell::boxed(value);
                    guard.count_allocation();
                }
                if right
                    .value
                    .compare_exchange(cur, Marked::new(spare, false))
                    .is_ok()
                {
                    spare = ptr::null_mut();
                    let prior = self.cell(cur.ptr(), guard).value;
                    // The inline first cell goes away with its node.
                    if right.owns_boxed(cur.ptr()) {
                        unsafe { guard.retire(cur.ptr()) };
                    }
                    break MapReport::Replaced(prior);
                }
                self.restart();
                continue;
            }

            if fresh.is_null() {
                fresh = Node::alloc(key, value, right);
                guard.count_allocation();
            } else {
                unsafe { (*fresh).next.store(Marked::new(right, false)) };
            }
            if left
                .compare_exchange(Marked::new(right, false), Marked::new(fresh, false))
                .is_ok()
            {
                fresh = ptr::null_mut();
                break MapReport::Inserted;
            }
            self.restart();
        };

        // Leftovers were never visible to other threads.
        if !spare.is_null() {
            drop(unsafe { Box::from_raw(spare) });
            guard.count_unshared_free();
        }
        if !fresh.is_null() {
            drop(unsafe { Box::from_raw(fresh) });
            guard.count_unshared_free();
        }
        report
    }

    pub fn remove(&self, key: Key, guard: &Guard<'_>) -> MapReport {
        loop {
            let Window { left, right, .. } = self.search(key, guard);
            if !right.holds(key) {
                return MapReport::NotFound;
            }
            let cur = right.value.load();
            if cur.is_marked() {
                // Another remover won; help it so the next search unlinks the node.
                right.next.mark();
                self.restart();
                continue;
            }
            let value = self.cell(cur.ptr(), guard).value;
            if right.value.compare_exchange(cur, cur.marked()).is_err() {
                self.restart();
                continue;
            }

            let succ = right.next.mark().ptr();
            let unlinked = left
                .compare_exchange(Marked::new(right, false), Marked::new(succ, false))
                .is_ok();
            if unlinked {
                self.retire_node(right, guard);
            } else {
                self.search(key, guard);
            }
            return MapReport::Removed(value);
        }
    }

    /// Read-only lookup: never writes shared memory.
    pub fn get(&self, key: Key, guard: &Guard<'_>) -> MapReport {
        let mut node = self.node(self.head.load().ptr(), guard);
        while node.precedes(key) {
            node = self.node(node.next.load().ptr(), guard);
        }
        if !node.holds(key) || node.next.load().is_marked() {
            return MapReport::NotFound;
        }
        let cur = node.value.load();
        if cur.is_marked() {
            return MapReport::NotFound;
        }
        MapReport::Found(self.cell(cur.ptr(), guard).value)
    }

    /// Physically linked data nodes, marked or not. Requires exclusive access.
    pub fn physical_len(&mut self) -> usize {
        self.owned_objects().0
    }

    /// Allocations still owned by the list: linked nodes plus the boxed value
    /// cells they point at. Requires exclusive access.
    pub fn live_allocations(&mut self) -> usize {
        let (nodes, cells) = self.owned_objects();
        nodes + cells
    }

    fn owned_objects(&mut self) -> (usize, usize) {
        let (mut nodes, mut cells) = (0, 0);
        let mut cur = self.head.load().ptr() as *const Node;
        while !ptr::eq(cur, tail()) {
            let node = unsafe { &*cur };
            nodes += 1;
            cells += usize::from(node.owns_boxed(node.value.load().ptr()));
            cur = node.next.load().ptr();
        }
        (nodes, cells)
    }
}

impl Drop for LockFreeList {
    fn drop(&mut self) {
        let mut cur = self.head.load().ptr();
        while !ptr::eq(cur, tail()) {
            let node = unsafe { Box::from_raw(cur) };
            let cell = node.value.load().ptr();
            if node.owns_boxed(cell) {
                drop(unsafe { Box::from_raw(cell) });
            }
            cur = node.next.load().ptr();
        }
    }
}

/// One physically linked node as seen by [`LockFreeList::snapshot`].
#[cfg(any(test, feature = "test-hooks"))]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeSnapshot {
    pub key: Key,
    pub value: Value,
    pub value_marked: bool,
    pub next_marked: bool,
    /// Node address, stable while the snapshotting guard is held.
    pub addr: usize,
}

#[cfg(any(test, feature = "test-hooks"))]
impl LockFreeList {
    /// All physically linked data nodes in link order, marked ones included.
    pub fn snapshot(&self, guard: &Guard<'_>) -> Vec<NodeSnapshot> {
        let mut out = Vec::new();
        let mut link = &self.head;
        loop {
            let node = self.node(link.load().ptr(), guard);
            if node.is_tail() {
                return out;
            }
            link = &node.next;
            let v = node.value.load();
            out.push(NodeSnapshot {
                key: node.key,
                value: self.cell(v.ptr(), guard).value,
                value_marked: v.is_marked(),
                next_marked: node.next.load().is_marked(),
                addr: node as *const Node as usize,
            });
        }
    }

    /// Keys of nodes whose `next` is unmarked, in link order.
    pub fn live_keys(&self, guard: &Guard<'_>) -> Vec<Key> {
        self.snapshot(guard)
            .into_iter()
            .filter(|n| !n.next_marked)
            .map(|n| n.key)
            .collect()
    }

    /// Logically and structurally deletes the node holding `key` without
    /// unlinking it, as if a remover stalled right after marking.
    pub fn inject_mark(&self, key: Key, guard: &Guard<'_>) -> bool {
        match self.snapshot(guard).into_iter().find(|n| n.key == key) {
            Some(n) => {
                let node = self.node(n.addr as *const Node, guard);
                node.value.mark();
                node.next.mark();
                true
            }
            None => false,
        }
    }

    /// Raw `next` word of the node at `addr`.
    ///
    /// `addr` must come from a snapshot taken under the same guard.
    pub fn link_word(&self, addr: usize, guard: &Guard<'_>) -> Marked<Node> {
        self.node(addr as *const Node, guard).next.load()
    }

    /// How many times the node at `addr` has been retired.
    ///
    /// `addr` must come from a snapshot taken under the same guard.
    pub fn retirements(&self, addr: usize, guard: &Guard<'_>) -> u8 {
        self.node(addr as *const Node, guard).retirements.load(SeqCst)
    }

    /// Runs the internal search and returns the keys of `(left, right)`,
    /// `None` standing for a sentinel.
    pub fn search_keys(&self, key: Key, guard: &Guard<'_>) -> (Option<Key>, Option<Key>) {
        let w = self.search(key, guard);
        (w.left_node.map(|n| n.key), (!w.right.is_tail()).then_some(w.right.key))
    }
}
