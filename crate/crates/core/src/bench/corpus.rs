//! The kernel corpus, embedded at build time.

pub const VEC_ADD: &str = include_str!("../../corpus/vec_add.kn");
pub const DYNAMIC_REVERSE: &str = include_str!("../../corpus/dynamic_reverse.kn");
pub const REDUCE: &str = include_str!("../../corpus/reduce.kn");
pub const HISTOGRAM: &str = include_str!("../../corpus/histogram.kn");
pub const FIR: &str = include_str!("../../corpus/fir.kn");
pub const WARP_REDUCE: &str = include_str!("../../corpus/warp_reduce.kn");

/// `(case name, source)` for every corpus kernel.
pub const SOURCES: [(&str, &str); 6] = [
    ("vec_add", VEC_ADD),
    ("dynamic_reverse", DYNAMIC_REVERSE),
    ("reduce", REDUCE),
    ("histogram", HISTOGRAM),
    ("fir", FIR),
    ("warp_reduce", WARP_REDUCE),
];
