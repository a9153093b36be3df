use blockfuse::cachesim::{simulate, CacheConfig};
use blockfuse::exec::{parse_trace_binary, parse_trace_text, write_trace_binary, write_trace_text, MemEvent};
use proptest::prelude::*;

/// Straightforward LRU model: per set, a most-recent-first list of lines.
fn brute_force_misses(trace: &[MemEvent], cfg: CacheConfig) -> (u64, u64) {
    let sets = cfg.capacity / (cfg.line_size * cfg.associativity);
    let mut lists: Vec<Vec<u64>> = vec![Vec::new(); sets];
    let (mut lm, mut sm) = (0, 0);
    for e in trace {
        let first = e.addr / cfg.line_size as u64;
        let last = (e.addr + e.size.max(1) as u64 - 1) / cfg.line_size as u64;
        let mut all_hit = true;
        for line in first..=last {
            let l = &mut lists[(line % sets as u64) as usize];
            match l.iter().position(|&x| x == line) {
                Some(p) => {
                    l.remove(p);
                }
                None => {
                    all_hit = false;
                    if l.len() == cfg.associativity {
                        l.pop();
                    }
                }
            }
            l.insert(0, line);
        }
        if !all_hit {
            if e.write {
                sm += 1;
            } else {
                lm += 1;
            }
        }
    }
    (lm, sm)
}

fn event() -> impl Strategy<Value = MemEvent> {
    (any::<bool>(), 0u64..16384, prop::sample::select(vec![1u32, 4, 8, 16])).prop_map(|(write, addr, size)| MemEvent {
        write,
        addr,
        size,
    })
}

fn config() -> ProptestConfig {
    ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn matches_brute_force_lru(
        trace in prop::collection::vec(event(), 0..400),
        line_pow in 4u32..8,
        ways in prop::sample::select(vec![1usize, 2, 4, 8]),
        sets in prop::sample::select(vec![1usize, 2, 4, 16]),
    ) {
        let line = 1usize << line_pow;
        let cfg = CacheConfig::new(line * ways * sets, line, ways).unwrap();
        let r = simulate(&trace, cfg).unwrap();
        prop_assert_eq!((r.load_misses, r.store_misses), brute_force_misses(&trace, cfg));
        prop_assert_eq!(r.loads + r.stores, trace.len() as u64);
        prop_assert!(r.load_misses <= r.loads && r.store_misses <= r.stores);
    }

    #[test]
    fn fully_associative_capacity_is_monotone(trace in prop::collection::vec(event(), 0..400), lines in 1usize..32) {
        let small = CacheConfig::new(64 * lines, 64, lines).unwrap();
        let big = CacheConfig::new(64 * (lines + 1), 64, lines + 1).unwrap();
        prop_assert!(simulate(&trace, big).unwrap().misses() <= simulate(&trace, small).unwrap().misses());
    }

    #[test]
    fn trace_formats_round_trip(trace in prop::collection::vec(event(), 0..100)) {
        prop_assert_eq!(parse_trace_text(&write_trace_text(&trace)).unwrap(), trace.clone());
        let bin = write_trace_binary(&trace);
        prop_assert_eq!(bin.len(), trace.len() * 13);
        prop_assert_eq!(parse_trace_binary(&bin).unwrap(), trace);
    }
}

#[test]
fn direct_mapped_scan_of_twice_capacity() {
    let cfg = CacheConfig::new(32 * 1024, 64, 1).unwrap();
    let trace: Vec<MemEvent> = (0..(2 * 32 * 1024 / 4)).map(|i| MemEvent { write: false, addr: i * 4, size: 4 }).collect();
    let r = simulate(&trace, cfg).unwrap();
    assert_eq!(r.load_misses, 2 * 32 * 1024 / 64);
    assert_eq!(brute_force_misses(&trace, cfg).0, r.load_misses);
}

#[test]
fn order_matters() {
    let cfg = CacheConfig::new(128, 64, 2).unwrap();
    let a = [0u64, 64, 128, 0, 64, 128];
    let b = [0u64, 0, 64, 64, 128, 128];
    let ev = |xs: &[u64]| xs.iter().map(|&addr| MemEvent { write: false, addr, size: 4 }).collect::<Vec<_>>();
    assert_eq!(simulate(&ev(&a), cfg).unwrap().load_misses, 6);
    assert_eq!(simulate(&ev(&b), cfg).unwrap().load_misses, 3);
}

#[test]
fn writebacks_and_dirty_lines() {
    let cfg = CacheConfig::new(64, 64, 1).unwrap();
    let t = [
        MemEvent { write: true, addr: 0, size: 4 },
        MemEvent { write: false, addr: 64, size: 4 },
        MemEvent { write: true, addr: 128, size: 4 },
    ];
    let r = simulate(&t, cfg).unwrap();
    assert_eq!((r.writebacks, r.dirty_at_end), (1, 1));
}
