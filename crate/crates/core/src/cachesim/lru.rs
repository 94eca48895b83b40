use rustc_hash::FxHashMap;

const NIL: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    key: u64,
    prev: u32,
    next: u32,
    dirty: bool,
}

/// Fully-associative LRU set of line keys with a dirty bit each.
pub(crate) struct Lru {
    capacity: usize,
    map: FxHashMap<u64, u32>,
    nodes: Vec<Node>,
    free: Vec<u32>,
    /// most recently used
    head: u32,
    /// least recently used
    tail: u32,
}

impl Lru {
    pub fn new(capacity: usize) -> Self {
        Lru {
            capacity,
            map: FxHashMap::default(),
            nodes: Vec::new(),
            free: Vec::new(),
            head: NIL,
            tail: NIL,
        }
    }

    #[cfg(test)]
    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn contains(&self, key: u64) -> bool {
        self.map.contains_key(&key)
    }

    fn unlink(&mut self, slot: u32) {
        let Node { prev, next, .. } = self.nodes[slot as usize];
        if prev == NIL {
            self.head = next;
        } else {
            self.nodes[prev as usize].next = next;
        }
        if next == NIL {
            self.tail = prev;
        } else {
            self.nodes[next as usize].prev = prev;
        }
    }

    fn push_front(&mut self, slot: u32) {
        self.nodes[slot as usize].prev = NIL;
        self.nodes[slot as usize].next = self.head;
        if self.head != NIL {
            self.nodes[self.head as usize].prev = slot;
        }
        self.head = slot;
        if self.tail == NIL {
            self.tail = slot;
        }
    }

    /// Marks `key` most recently used; `false` if absent.
    pub fn touch(&mut self, key: u64, dirty: bool) -> bool {
        let Some(&slot) = self.map.get(&key) else {
            return false;
        };
        if self.head != slot {
            self.unlink(slot);
            self.push_front(slot);
        }
        self.nodes[slot as usize].dirty |= dirty;
        true
    }

    /// Sets the dirty bit without changing recency; `false` if absent.
    pub fn mark_dirty(&mut self, key: u64) -> bool {
        match self.map.get(&key) {
            Some(&slot) => {
                self.nodes[slot as usize].dirty = true;
                true
            }
            None => false,
        }
    }

    /// Inserts an absent key as most recently used, returning the evicted
    /// `(key, dirty)` if the set was full.
    pub fn insert(&mut self, key: u64, dirty: bool) -> Option<(u64, bool)> {
        debug_assert!(!self.map.contains_key(&key));
        let evicted = if self.map.len() >= self.capacity { self.pop_lru() } else { None };
        let node = Node { key, prev: NIL, next: NIL, dirty };
        let slot = match self.free.pop() {
            Some(s) => {
                self.nodes[s as usize] = node;
                s
            }
            None => {
                self.nodes.push(node);
                (self.nodes.len() - 1) as u32
            }
        };
        self.push_front(slot);
        self.map.insert(key, slot);
        evicted
    }

    fn pop_lru(&mut self) -> Option<(u64, bool)> {
        if self.tail == NIL {
            return None;
        }
        let slot = self.tail;
        let Node { key, dirty, .. } = self.nodes[slot as usize];
        self.unlink(slot);
        self.map.remove(&key);
        self.free.push(slot);
        Some((key, dirty))
    }

    /// Removes `key`, returning its dirty bit.
    pub fn remove(&mut self, key: u64) -> Option<bool> {
        let slot = self.map.remove(&key)?;
        let dirty = self.nodes[slot as usize].dirty;
        self.unlink(slot);
        self.free.push(slot);
        Some(dirty)
    }

    /// Dirty keys from least to most recently used; clears their bits.
    pub fn take_dirty(&mut self) -> Vec<u64> {
        let mut out = Vec::new();
        let mut slot = self.tail;
        while slot != NIL {
            let node = &mut self.nodes[slot as usize];
            if node.dirty {
                node.dirty = false;
                out.push(node.key);
            }
            slot = node.prev;
        }
        out
    }

    pub fn keys(&self) -> impl Iterator<Item = u64> + '_ {
        self.map.keys().copied()
    }
}
