mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use blockfuse::exec::{DeviceArena, Handle};
use blockfuse::host::{
    insert_barriers, pack_params, parse_host, unpack_params, Backend, HostOp, KernelArg, KernelSet, RunOptions,
    ScriptRunner, Signatures,
};
use blockfuse::lang::ast::{Param, ParamType, Span};
use blockfuse::{ScalarType, Value};
use common::ConflictKind;
use proptest::prelude::*;
use rand::SeedableRng;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, failure_persistence: None, ..ProptestConfig::default() }
}

fn arg_strategy() -> impl Strategy<Value = (ParamType, KernelArg)> {
    let ty = prop::sample::select(ScalarType::ALL.to_vec());
    (ty, any::<u64>(), any::<bool>()).prop_map(|(ty, bits, buffer)| {
        if buffer {
            (ParamType::GlobalRef(ty), KernelArg::Buffer(Handle(bits as u32)))
        } else {
            (ParamType::Scalar(ty), KernelArg::Scalar(Value::from_bits(ty, bits)))
        }
    })
}

proptest! {
    #![proptest_config(config(300))]

    #[test]
    fn pack_unpack_round_trip(list in prop::collection::vec(arg_strategy(), 0..10)) {
        let sig: Vec<Param> = list
            .iter()
            .enumerate()
            .map(|(i, (t, _))| Param { name: format!("p{i}"), ptype: *t, span: Span::default() })
            .collect();
        let args: Vec<KernelArg> = list.iter().map(|(_, a)| *a).collect();
        let packed = pack_params(&sig, &args).unwrap();
        prop_assert_eq!(packed.len(), sig.len());
        let back = unpack_params(&sig, &packed).unwrap();
        for (a, b) in back.iter().zip(&args) {
            match (a, b) {
                (KernelArg::Scalar(x), KernelArg::Scalar(y)) => prop_assert!(x.bit_eq(*y)),
                (x, y) => prop_assert_eq!(x, y),
            }
        }
    }
}

proptest! {
    #![proptest_config(config(60))]

    #[test]
    fn insertion_is_idempotent_and_placed(seed in any::<u64>(), control in any::<bool>()) {
        let set = common::unit();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let kind = if control { ConflictKind::None } else { ConflictKind::Raw };
        let spec = common::generate(kind, &mut rng);
        let p = insert_barriers(&set.parse_host(&spec.text).unwrap(), set.summaries());
        prop_assert_eq!(&insert_barriers(&p, set.summaries()), &p);
        prop_assert_eq!(common::lines_after_implicit_syncs(&p), spec.sync_before);
    }
}

/// Hand-written read/write roles of the helper kernels, independent of the
/// summarizer: `copy(src, dst)` reads src and writes dst, `bump(buf)` reads
/// and writes buf.
fn roles(op: &str) -> (BTreeSet<char>, BTreeSet<char>) {
    let w: Vec<&str> = op.split_whitespace().collect();
    let b = |s: &str| s.chars().nth(1).unwrap();
    match w[0] {
        "copy" => ([b(w[1])].into(), [b(w[2])].into()),
        "bump" => ([b(w[1])].into(), [b(w[1])].into()),
        "download" => ([b(w[1])].into(), BTreeSet::new()),
        "upload" | "free" => (BTreeSet::new(), [b(w[1])].into()),
        _ => unreachable!(),
    }
}

fn render(op: &str) -> String {
    let w: Vec<&str> = op.split_whitespace().collect();
    match w[0] {
        "copy" => format!("launch copy grid 1 1 1 block 8 1 1 shmem 0 args {} {} 8", w[1], w[2]),
        "bump" => format!("launch bump grid 1 1 1 block 8 1 1 shmem 0 args {} 8", w[1]),
        "download" => format!("download {} -", w[1]),
        "upload" => format!("upload {} fill:seq", w[1]),
        "free" => format!("free {}", w[1]),
        _ => unreachable!(),
    }
}

#[test]
fn conflict_matrix_matches_brute_force() {
    let set = common::unit();
    let bufs = ["ba", "bb", "bc"];
    let mut launches = Vec::new();
    for x in bufs {
        launches.push(format!("bump {x}"));
        for y in bufs {
            if x != y {
                launches.push(format!("copy {x} {y}"));
            }
        }
    }
    let mut probes = launches.clone();
    for x in bufs {
        for op in ["download", "upload", "free"] {
            probes.push(format!("{op} {x}"));
        }
    }
    let mut checked = 0;
    for l in &launches {
        for o in &probes {
            let (lr, lw) = roles(l);
            let (or, ow) = roles(o);
            let expect = lw.iter().any(|b| or.contains(b) || ow.contains(b)) || lr.iter().any(|b| ow.contains(b));
            let text = format!(
                "alloc ba i32 8\nalloc bb i32 8\nalloc bc i32 8\n{}\n{}\n",
                render(l),
                render(o)
            );
            let p = insert_barriers(&set.parse_host(&text).unwrap(), set.summaries());
            assert_eq!(p.implicit_syncs() == 1, expect, "{l} then {o}");
            assert!(p.implicit_syncs() <= 1);
            checked += 1;
        }
    }
    assert_eq!(checked, 9 * 18);
}

#[test]
fn aliasing_buffer_passed_twice_unions_roles() {
    let set = common::unit();
    let p = set
        .parse_host("alloc a i32 8\nalloc x i32 8\nlaunch copy grid 1 1 1 block 8 1 1 shmem 0 args a a 8\nupload x fill:seq\ndownload a -\n")
        .unwrap();
    let q = insert_barriers(&p, set.summaries());
    assert_eq!(common::lines_after_implicit_syncs(&q), vec![5]);
}

#[test]
fn explicit_syncs_are_kept_and_not_marked() {
    let set = common::unit();
    let p = set
        .parse_host("alloc a i32 8\nlaunch bump grid 1 1 1 block 8 1 1 shmem 0 args a 8\nsync\ndownload a -\n")
        .unwrap();
    let q = insert_barriers(&p, set.summaries());
    assert_eq!(q, p);
    assert!(matches!(q.ops[2].op, HostOp::Sync { implicit: false }));
    assert!(q.to_string().lines().all(|l| !l.contains("implicit")));
}

#[test]
fn files_round_trip_through_scripts() {
    let dir = std::env::temp_dir().join(format!("blockfuse-host-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let input: Vec<u8> = (0..8i32).flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(dir.join("in.bin"), &input).unwrap();
    let set = KernelSet::compile(blockfuse::bench::corpus::DYNAMIC_REVERSE, false, 32).unwrap();
    let script = "alloc d i32 8\nupload d file:in.bin\n\
                  launch dynamicReverse grid 1 1 1 block 8 1 1 shmem 32 args d 8\ndownload d out.bin\n";
    let p = insert_barriers(&set.parse_host(script).unwrap(), set.summaries());
    let opts = RunOptions { base_dir: Some(dir.clone()), out_dir: Some(dir.clone()) };
    let arena = Arc::new(DeviceArena::new());
    let out = ScriptRunner::new(&set, Backend::Reference(Arc::clone(&arena))).with_options(opts).run(&p).unwrap();
    let want: Vec<Value> = (0..8).rev().map(Value::I32).collect();
    assert_eq!(out.download("d").unwrap(), want.as_slice());
    let bytes = std::fs::read(dir.join("out.bin")).unwrap();
    let expect: Vec<u8> = (0..8i32).rev().flat_map(|v| v.to_le_bytes()).collect();
    assert_eq!(bytes, expect);
    assert!(arena.live_handles().is_empty());
    std::fs::write(dir.join("in.bin"), &input[..12]).unwrap();
    let err = ScriptRunner::new(&set, Backend::Reference(arena)).with_options(RunOptions { base_dir: Some(dir.clone()), out_dir: None }).run(&p);
    assert!(err.is_err());
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn shipped_scripts_parse_against_their_kernels() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus");
    let mut seen = 0;
    for (name, src) in blockfuse::bench::corpus::SOURCES {
        let path = root.join(format!("{name}.host"));
        let text = std::fs::read_to_string(&path).unwrap();
        let ks = blockfuse::lang::parse_unit(src).unwrap();
        let p = parse_host(&text, &Signatures::from_kernels(&ks)).unwrap();
        assert!(p.ops.iter().any(|s| matches!(s.op, HostOp::Launch(_))), "{name}");
        seen += 1;
    }
    assert_eq!(seen, 6);
}
