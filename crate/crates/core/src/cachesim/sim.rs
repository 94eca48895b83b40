use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::lru::Lru;
use super::{AccessKind, TraceEvent};
use crate::{CacheHierarchy, CacheLevel};

/// Counters of one simulated cache level.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: usize,
    pub capacity: usize,
    pub granularity: usize,
    /// Demand accesses arriving from the faster side.
    pub accesses: u64,
    pub hits: u64,
    pub misses: u64,
    /// Misses caused by reads.
    pub read_misses: u64,
    /// Lines written to the slower side.
    pub writebacks: u64,
    /// Elements moved across the boundary to the slower side.
    pub transferred_elements: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimResult {
    pub events: u64,
    pub levels: Vec<LevelStats>,
    pub memory_reads: u64,
    pub memory_writes: u64,
}

impl SimResult {
    pub fn level(&self, level: usize) -> Option<&LevelStats> {
        self.levels.iter().find(|l| l.level == level)
    }

    /// Stats of the outermost simulated level.
    pub fn outermost(&self) -> &LevelStats {
        self.levels.last().expect("at least one level is simulated")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,capacity,accesses,hits,misses,read_misses,writebacks,transferred_elements\n");
        for l in &self.levels {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                l.level, l.capacity, l.accesses, l.hits, l.misses, l.read_misses, l.writebacks, l.transferred_elements
            )
            .expect("string write");
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimOptions {
    /// Simulate the register level too.
    pub include_registers: bool,
}

struct State {
    cfg: CacheLevel,
    lru: Lru,
    stats: LevelStats,
}

/// Multilevel fully-associative LRU simulator, fed one event at a time.
pub struct Simulator {
    levels: Vec<State>,
    events: u64,
    memory_reads: u64,
    memory_writes: u64,
}

fn line(op: u8, index: usize, g: usize) -> u64 {
    ((op as u64) << 56) | (index / g) as u64
}

fn split(key: u64) -> (u8, usize) {
    ((key >> 56) as u8, (key & ((1 << 56) - 1)) as usize)
}

impl Simulator {
    pub fn new(hierarchy: &CacheHierarchy, options: SimOptions) -> Self {
        let first = usize::from(!options.include_registers);
        let levels = hierarchy.levels()[first.min(hierarchy.len())..]
            .iter()
            .map(|cfg| State {
                cfg: cfg.clone(),
                lru: Lru::new(cfg.lines()),
                stats: LevelStats {
                    level: cfg.index,
                    capacity: cfg.capacity,
                    granularity: cfg.granularity,
                    ..Default::default()
                },
            })
            .collect();
        Simulator { levels, events: 0, memory_reads: 0, memory_writes: 0 }
    }

    pub fn access(&mut self, event: TraceEvent) {
        self.events += 1;
        self.demand(0, event.operand as u8, event.index, event.kind);
    }

    fn demand(&mut self, h: usize, op: u8, index: usize, kind: AccessKind) {
        if h == self.levels.len() {
            match kind {
                AccessKind::Read => self.memory_reads += 1,
                AccessKind::Write => self.memory_writes += 1,
            }
            return;
        }
        let st = &mut self.levels[h];
        let key = line(op, index, st.cfg.granularity);
        let write = kind == AccessKind::Write;
        st.stats.accesses += 1;
        if st.lru.touch(key, write && st.cfg.write_back) {
            st.stats.hits += 1;
            if write && !st.cfg.write_back {
                self.write_out(h, op, index);
            }
            return;
        }
        st.stats.misses += 1;
        if !write {
            st.stats.read_misses += 1;
        }
        if write && !st.cfg.write_allocate {
            self.demand(h + 1, op, index, AccessKind::Write);
            return;
        }
        self.demand(h + 1, op, index, AccessKind::Read);
        let dirty = write && self.levels[h].cfg.write_back;
        self.install(h, key, dirty);
        if write && !self.levels[h].cfg.write_back {
            self.write_out(h, op, index);
        }
    }

    /// Inserts `key` at level `h`, writing back whatever it evicts.
    fn install(&mut self, h: usize, key: u64, dirty: bool) {
        let Some((victim, mut victim_dirty)) = self.levels[h].lru.insert(key, dirty) else {
            return;
        };
        if self.levels[h].cfg.inclusive {
            victim_dirty |= self.back_invalidate(h, victim);
        }
        if victim_dirty {
            let (op, l) = split(victim);
            self.write_out(h, op, l * self.levels[h].cfg.granularity);
        }
    }

    /// Drops every copy of the level-`h` line `key` from faster levels,
    /// returning whether any of them was dirty.
    fn back_invalidate(&mut self, h: usize, key: u64) -> bool {
        let (op, l) = split(key);
        let g = self.levels[h].cfg.granularity;
        let mut dirty = false;
        for inner in 0..h {
            let gi = self.levels[inner].cfg.granularity;
            for idx in (l * g..(l + 1) * g).step_by(gi) {
                dirty |= self.levels[inner].lru.remove(line(op, idx, gi)).unwrap_or(false);
            }
        }
        dirty
    }

    /// Level `h` sends the line holding `index` to the slower side.
    fn write_out(&mut self, h: usize, op: u8, index: usize) {
        self.levels[h].stats.writebacks += 1;
        let g = self.levels[h].cfg.granularity;
        self.levels[h].stats.transferred_elements += g as u64;
        let outer = h + 1;
        if outer == self.levels.len() {
            self.memory_writes += 1;
            return;
        }
        let st = &mut self.levels[outer];
        let key = line(op, index, st.cfg.granularity);
        if st.cfg.write_back {
            if !st.lru.mark_dirty(key) {
                if st.cfg.write_allocate {
                    self.install(outer, key, true);
                } else {
                    self.write_out(outer, op, index);
                }
            }
        } else {
            self.write_out(outer, op, index);
        }
    }

    /// Flushes dirty lines, innermost level first, and returns the counts.
    pub fn finish(mut self) -> SimResult {
        for h in 0..self.levels.len() {
            for key in self.levels[h].lru.take_dirty() {
                let (op, l) = split(key);
                self.write_out(h, op, l * self.levels[h].cfg.granularity);
            }
        }
        let levels = self
            .levels
            .iter()
            .map(|s| {
                let mut stats = s.stats;
                stats.transferred_elements += stats.misses * s.cfg.granularity as u64;
                stats
            })
            .collect();
        SimResult { events: self.events, levels, memory_reads: self.memory_reads, memory_writes: self.memory_writes }
    }

    /// Every line held by a faster simulated level is also held by each
    /// slower inclusive level.
    pub fn inclusion_holds(&self) -> bool {
        for (h, outer) in self.levels.iter().enumerate() {
            if !outer.cfg.inclusive {
                continue;
            }
            for inner in &self.levels[..h] {
                for key in inner.lru.keys() {
                    let (op, l) = split(key);
                    if !outer.lru.contains(line(op, l * inner.cfg.granularity, outer.cfg.granularity)) {
                        return false;
                    }
                }
            }
        }
        true
    }
}

/// Replays `trace` through `hierarchy`.
pub fn simulate(trace: impl IntoIterator<Item = TraceEvent>, hierarchy: &CacheHierarchy, options: SimOptions) -> SimResult {
    let mut sim = Simulator::new(hierarchy, options);
    for e in trace {
        sim.access(e);
    }
    sim.finish()
}
