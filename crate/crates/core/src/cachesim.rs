//! Single-level set-associative LRU cache model with write-allocate and
//! write-back accounting.

use serde::{Deserialize, Serialize};

use crate::exec::MemEvent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheConfig {
    /// Total bytes.
    pub capacity: usize,
    /// Bytes per line; a power of two.
    pub line_size: usize,
    pub associativity: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("line size {0} is not a power of two")]
    LineSize(usize),
    #[error("associativity must be at least 1")]
    Ways,
    #[error("capacity {capacity} is not a positive multiple of line size x associativity ({unit})")]
    Capacity { capacity: usize, unit: usize },
}

impl CacheConfig {
    pub fn new(capacity: usize, line_size: usize, associativity: usize) -> Result<CacheConfig, ConfigError> {
        let c = CacheConfig { capacity, line_size, associativity };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.line_size.is_power_of_two() {
            return Err(ConfigError::LineSize(self.line_size));
        }
        if self.associativity == 0 {
            return Err(ConfigError::Ways);
        }
        let unit = self.line_size * self.associativity;
        if self.capacity == 0 || self.capacity % unit != 0 {
            return Err(ConfigError::Capacity { capacity: self.capacity, unit });
        }
        Ok(())
    }

    pub fn sets(&self) -> usize {
        self.capacity / (self.line_size * self.associativity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CacheReport {
    pub loads: u64,
    pub load_misses: u64,
    pub stores: u64,
    pub store_misses: u64,
    /// Dirty lines evicted.
    pub writebacks: u64,
    /// Lines still dirty at the end of the trace.
    pub dirty_at_end: u64,
}

impl CacheReport {
    pub fn misses(&self) -> u64 {
        self.load_misses + self.store_misses
    }

    pub fn load_miss_rate(&self) -> f64 {
        if self.loads == 0 {
            0.0
        } else {
            self.load_misses as f64 / self.loads as f64
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Line {
    tag: u64,
    dirty: bool,
    last_used: u64,
}

/// Incremental cache state.
#[derive(Debug, Clone)]
pub struct Cache {
    cfg: CacheConfig,
    sets: Vec<Vec<Line>>,
    clock: u64,
    report: CacheReport,
}

impl Cache {
    pub fn new(cfg: CacheConfig) -> Result<Cache, ConfigError> {
        cfg.validate()?;
        Ok(Cache { cfg, sets: vec![Vec::with_capacity(cfg.associativity); cfg.sets()], clock: 0, report: CacheReport::default() })
    }

    fn touch_line(&mut self, line_addr: u64, write: bool) -> bool {
        self.clock += 1;
        let nsets = self.sets.len() as u64;
        let set = &mut self.sets[(line_addr % nsets) as usize];
        let tag = line_addr / nsets;
        if let Some(l) = set.iter_mut().find(|l| l.tag == tag) {
            l.last_used = self.clock;
            l.dirty |= write;
            return true;
        }
        if set.len() == self.cfg.associativity {
            let (victim, _) = set.iter().enumerate().min_by_key(|(_, l)| l.last_used).expect("set is full");
            if set[victim].dirty {
                self.report.writebacks += 1;
            }
            set.swap_remove(victim);
        }
        set.push(Line { tag, dirty: write, last_used: self.clock });
        false
    }

    /// Applies one access; returns true on a hit. An access spanning several
    /// lines hits only if every line hits.
    pub fn access(&mut self, e: MemEvent) -> bool {
        let ls = self.cfg.line_size as u64;
        let first = e.addr / ls;
        let last = (e.addr + u64::from(e.size.max(1)) - 1) / ls;
        let mut hit = true;
        for line in first..=last {
            hit &= self.touch_line(line, e.write);
        }
        if e.write {
            self.report.stores += 1;
            self.report.store_misses += u64::from(!hit);
        } else {
            self.report.loads += 1;
            self.report.load_misses += u64::from(!hit);
        }
        hit
    }

    pub fn report(&self) -> CacheReport {
        let mut r = self.report;
        r.dirty_at_end = self.sets.iter().flatten().filter(|l| l.dirty).count() as u64;
        r
    }
}

pub fn simulate(trace: &[MemEvent], cfg: CacheConfig) -> Result<CacheReport, ConfigError> {
    let mut c = Cache::new(cfg)?;
    for e in trace {
        c.access(*e);
    }
    Ok(c.report())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rd(addr: u64) -> MemEvent {
        MemEvent { write: false, addr, size: 4 }
    }

    #[test]
    fn config_validation() {
        assert_eq!(CacheConfig::new(32768, 48, 8).unwrap_err(), ConfigError::LineSize(48));
        assert_eq!(CacheConfig::new(32768, 64, 0).unwrap_err(), ConfigError::Ways);
        assert!(matches!(CacheConfig::new(1000, 64, 8), Err(ConfigError::Capacity { .. })));
        assert_eq!(CacheConfig::new(32768, 64, 8).unwrap().sets(), 64);
    }

    #[test]
    fn repeated_line_misses_once() {
        let t: Vec<_> = (0..100).map(|_| rd(0x40)).collect();
        let r = simulate(&t, CacheConfig::new(1024, 64, 2).unwrap()).unwrap();
        assert_eq!((r.loads, r.load_misses), (100, 1));
    }

    #[test]
    fn sequential_scan_misses_once_per_line() {
        let cfg = CacheConfig::new(4096, 64, 1).unwrap();
        let t: Vec<_> = (0..2 * 4096 / 4).map(|i| rd(i * 4)).collect();
        let r = simulate(&t, cfg).unwrap();
        assert_eq!(r.load_misses, 2 * 4096 / 64);
    }

    #[test]
    fn lru_evicts_least_recent() {
        // One set, two ways: lines 0,1 then touch 0, then 2 evicts 1.
        let cfg = CacheConfig::new(128, 64, 2).unwrap();
        let mut c = Cache::new(cfg).unwrap();
        assert!(!c.access(rd(0)));
        assert!(!c.access(rd(64)));
        assert!(c.access(rd(0)));
        assert!(!c.access(rd(128)));
        assert!(c.access(rd(0)));
        assert!(!c.access(rd(64)));
    }

    #[test]
    fn writebacks_count_dirty_evictions() {
        let cfg = CacheConfig::new(64, 64, 1).unwrap();
        let t = [
            MemEvent { write: true, addr: 0, size: 4 },
            rd(64),
            MemEvent { write: true, addr: 128, size: 4 },
        ];
        let r = simulate(&t, cfg).unwrap();
        assert_eq!((r.stores, r.store_misses, r.writebacks, r.dirty_at_end), (2, 2, 1, 1));
    }

    #[test]
    fn straddling_access_touches_two_lines() {
        let cfg = CacheConfig::new(1024, 64, 4).unwrap();
        let mut c = Cache::new(cfg).unwrap();
        assert!(!c.access(MemEvent { write: false, addr: 60, size: 8 }));
        assert!(c.access(rd(64)));
        assert!(c.access(rd(0)));
    }
}
