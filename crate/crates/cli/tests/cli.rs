use std::path::PathBuf;
use std::process::{Command, Output};

fn corpus(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/corpus").join(name)
}

fn blockfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blockfuse")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(args: &[&str]) -> serde_json::Value {
    let o = blockfuse(args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn tmp(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("blockfuse-cli-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d.join(name)
}

#[test]
fn compile_prints_listing_and_dump() {
    let src = corpus("reduce.kn");
    let o = blockfuse(&["compile", src.to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("kernel reduce("));
    assert!(text.contains("expanded: t: i32[block_size]"));
    assert!(text.contains("uniform for (s = 1; s < blockDim.x; s += s)"));
    let v = json(&["compile", src.to_str().unwrap(), "--json"]);
    assert_eq!(v[0]["name"], "reduce");
    assert_eq!(v[0]["expanded_vars"][0]["name"], "t");
    let again = json(&["compile", src.to_str().unwrap(), "--json"]);
    assert_eq!(v, again);
}

#[test]
fn every_corpus_script_matches_the_reference() {
    for (name, warp) in [
        ("vec_add", false),
        ("dynamic_reverse", false),
        ("reduce", false),
        ("histogram", false),
        ("fir", false),
        ("warp_reduce", true),
    ] {
        let script = corpus(&format!("{name}.host"));
        let mut args = vec!["run", script.to_str().unwrap(), "--pool", "3", "--json"];
        if warp {
            args.push("--warp");
        }
        let v = json(&args);
        assert_eq!(v["passed"], true, "{name}");
        assert_eq!(v["conflicts"].as_array().unwrap().len(), 0, "{name}");
        assert!(v["inserted_syncs"].as_u64().unwrap() >= 1, "{name}");
    }
}

#[test]
fn warp_kernel_without_warp_mode_is_an_error() {
    let o = blockfuse(&["run", corpus("warp_reduce.host").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("shfl_down"));
}

#[test]
fn run_writes_downloads_to_out_dir() {
    let dir = tmp("out");
    std::fs::create_dir_all(&dir).unwrap();
    let o = blockfuse(&[
        "run",
        corpus("vec_add.host").to_str().unwrap(),
        "--policy",
        "fixed:3",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("policy fixed:3"));
    assert_eq!(std::fs::metadata(dir.join("c.bin")).unwrap().len(), 2048 * 8);
}

#[test]
fn sweep_reports_ceiling_fetch_counts() {
    let v = json(&["sweep", "reduce", "--grid", "12", "--grains", "1,5,12", "--pool", "3", "--repeats", "1", "--json"]);
    let rows = v["rows"].as_array().unwrap();
    let fetches: Vec<u64> = rows.iter().map(|r| r["fetch_count"].as_u64().unwrap()).collect();
    assert_eq!(fetches, vec![12, 3, 1]);
    assert!(rows.iter().all(|r| r["oracle_passed"] == true && r["blocks_executed"] == 12));
}

#[test]
fn reorder_experiment_lowers_misses() {
    let v = json(&["reorder-exp", "histogram", "--json"]);
    assert!(v["load_miss_delta"].as_i64().unwrap() > 0);
    assert_eq!(v["original"]["oracle_passed"], true);
    let o = blockfuse(&["reorder-exp", "vec_add"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn text_and_binary_traces_simulate_identically() {
    let (t, b) = (tmp("fir.txt"), tmp("fir.bin"));
    assert!(blockfuse(&["trace", "fir", "-o", t.to_str().unwrap()]).status.success());
    assert!(blockfuse(&["trace", "fir", "--binary", "-o", b.to_str().unwrap()]).status.success());
    let text = std::fs::read_to_string(&t).unwrap();
    let events = text.lines().count();
    assert_eq!(std::fs::metadata(&b).unwrap().len() as usize, events * 13);
    let cfg = ["--capacity", "16384", "--line", "32", "--ways", "4", "--json"];
    let a = json(&[&["cachesim", "--trace", t.to_str().unwrap()][..], &cfg].concat());
    let z = json(&[&["cachesim", "--trace", b.to_str().unwrap()][..], &cfg].concat());
    assert_eq!(a, z);
    assert_eq!(a["events"].as_u64().unwrap() as usize, events);
    assert_eq!(a["config"]["associativity"], 4);
}

#[test]
fn bad_cache_config_is_rejected() {
    let t = tmp("one.txt");
    std::fs::write(&t, "R 0x0 4\n").unwrap();
    let o = blockfuse(&["cachesim", "--capacity", "1000", "--line", "64", "--ways", "8", "--trace", t.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
