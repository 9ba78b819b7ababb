//! The acceptance gate: eight criteria, one test and one printed verdict
//! line each. Exhaustive walks cover the small scan/write scenarios; seed
//! sweeps at a million-tick budget cover the ring variants; determinism is
//! checked down to the bytes.

use safering::checker::ScanClass;
use safering::explorer::{
    explore_contamination_bound, explore_scenario, qa_preset, ExploreOpts,
};
use safering::protocols::gray_code::{diff_positions, gray_decode, gray_encode};
use safering::{
    replay, run_ring, run_sweep, run_sweep_sequential, AdversaryPolicy, CheckResult, InitPolicy,
    SweepReport, SweepSpec, Trace, Variant,
};
use std::io::BufReader;
use std::sync::OnceLock;
use std::time::Instant;

/// The two-reg sweep grid shared by criteria 4 and 5: n in {2,3,4},
/// K = 2n+2, phi = 2n+1, random and targeted adversaries, 100 seeds each.
static TWO_REG_SWEEPS: OnceLock<Vec<SweepReport>> = OnceLock::new();

fn two_reg_sweeps() -> &'static [SweepReport] {
    TWO_REG_SWEEPS.get_or_init(|| {
        let mut reports = Vec::new();
        for n in [2u16, 3, 4] {
            for adversary in
                [AdversaryPolicy::Random, AdversaryPolicy::FixedTarget { value: 1 }]
            {
                let mut spec = SweepSpec::new(Variant::TwoReg, n, 100);
                spec.token_domain = Some(u64::from(2 * n) + 2);
                spec.phi = Some(2 * n + 1);
                spec.budget = 1_000_000;
                spec.adversary = adversary;
                reports.push(run_sweep(&spec).expect("sweep runs"));
            }
        }
        reports
    })
}

#[test]
fn criterion_1_gray_code_fidelity() {
    // The full 3-bit code, most significant bit first.
    let table: [(u64, [u8; 3]); 8] = [
        (0, [0, 0, 0]),
        (1, [0, 0, 1]),
        (2, [0, 1, 1]),
        (3, [0, 1, 0]),
        (4, [1, 1, 0]),
        (5, [1, 1, 1]),
        (6, [1, 0, 1]),
        (7, [1, 0, 0]),
    ];
    for (v, bits) in table {
        let w = gray_encode(v, 3).unwrap();
        assert_eq!(w.bits, bits, "encode({v})");
        assert_eq!(gray_decode(&w), v, "decode({w})");
    }
    for k in 2..=5usize {
        let period = 1u64 << k;
        for v in 0..period {
            let cur = gray_encode(v, k).unwrap();
            let nxt = gray_encode((v + 1) % period, k).unwrap();
            assert_eq!(diff_positions(&cur, &nxt).len(), 1, "k={k}, {v} -> {}", (v + 1) % period);
        }
    }
    println!("criterion 1 (gray-code fidelity, 3-bit table + one-bit increments k=2..5): pass");
}

#[test]
fn criterion_2_single_write_scans_are_old_new_or_busy() {
    let start = Instant::now();
    let opts = ExploreOpts::default();

    // One dup-write against one 2-scan over domain 3: every branch's result
    // is the preceding value, the concurrent value, or busy.
    let single = qa_preset("qa-single-write", 2, 3, 1).unwrap();
    let report = explore_scenario(&single.setup, &single.initial, &opts).unwrap();
    assert!(report.complete, "walk must close");
    assert!(!report.has_class(ScanClass::Contaminated), "contaminated branch found");
    assert_eq!(report.max_contaminated, 0);
    assert_eq!(report.inversions, 0);
    for result in &report.scan_results {
        assert!(
            matches!(result, None | Some(0) | Some(1)),
            "scan returned {result:?}, outside {{preceding 0, concurrent 1, busy}}"
        );
    }

    // The same write pressure against two sequential 2-scans: no branch
    // inverts the first scan's result, and none contaminates.
    let sparse = qa_preset("qa-sparse-writes", 2, 3, 1).unwrap();
    let report = explore_scenario(&sparse.setup, &sparse.initial, &opts).unwrap();
    assert!(report.complete, "walk must close");
    assert!(!report.has_class(ScanClass::Contaminated), "contaminated branch found");
    assert_eq!(report.inversions, 0, "a later scan stepped behind an earlier one");

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "target is under a minute, took {elapsed:?}");
    println!(
        "criterion 2 (single write vs one and two 2-scans, exhaustive, {elapsed:?}): pass"
    );
}

#[test]
fn criterion_3_contamination_stays_under_the_write_budget() {
    let start = Instant::now();
    let opts = ExploreOpts::default();
    for m in [1u64, 2] {
        // m*2 writes against m+1 2-scans over domain 3; no branch may show
        // more than m contaminated results.
        let preset = qa_preset("qa-contamination", 2, 3, m).unwrap();
        let report =
            explore_contamination_bound(&preset.setup, &preset.initial, m, &opts).unwrap();
        assert!(report.complete, "m={m}: walk must close");
        assert!(
            report.violation.is_none(),
            "m={m}: a branch exceeded the bound: {:?}",
            report.violation.map(|w| w.detail)
        );
        assert!(report.max_contaminated <= m, "m={m}: {}", report.max_contaminated);
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 300, "target is under five minutes, took {elapsed:?}");
    println!(
        "criterion 3 (contaminated <= m for m in {{1,2}}, exhaustive, {elapsed:?}): pass"
    );
}

#[test]
fn criterion_4_two_reg_links_never_contaminate() {
    for report in two_reg_sweeps() {
        for run in &report.runs {
            assert_eq!(
                run.contaminated, 0,
                "n={} adversary={:?} seed={}: contaminated scan",
                report.spec.n, report.spec.adversary, run.seed
            );
        }
    }
    println!(
        "criterion 4 (two-reg n=2..4, random+target adversaries, 600 runs, zero contaminated \
         scans): pass"
    );
}

#[test]
fn criterion_5_two_reg_converges_with_a_long_stable_suffix() {
    for report in two_reg_sweeps() {
        let label = format!("n={} adversary={:?}", report.spec.n, report.spec.adversary);
        assert_eq!(report.inconclusive, 0, "{label}: inconclusive after a doubling");
        assert_eq!(report.failed, 0, "{label}: failed runs");
        for run in &report.runs {
            assert_eq!(
                run.convergence,
                CheckResult::Pass,
                "{label} seed={}: convergence {:?}",
                run.seed,
                run.convergence
            );
            // A pass certifies the violation-free suffix: no overlapping
            // critical sections and no processor starved of the CS past the
            // deadline from the stabilization tick on.
            assert!(
                run.stabilization_tick <= run.budget / 2,
                "{label} seed={}: stable suffix shorter than half the budget",
                run.seed
            );
            assert!(run.doublings <= 1, "{label} seed={}: {} doublings", run.seed, run.doublings);
        }
    }
    println!(
        "criterion 5 (two-reg sweeps converge with stable single-token suffix >= half budget, \
         0 inconclusive): pass"
    );
}

#[test]
fn criterion_6_gray_runs_flash_then_home_then_stay_coherent() {
    for n in [2u16, 3] {
        let mut spec = SweepSpec::new(Variant::Gray, n, 100);
        spec.budget = 1_000_000;
        let report = run_sweep(&spec).expect("sweep runs");
        for run in &report.runs {
            let label = format!("n={n} seed={}", run.seed);
            let flash = run.first_flash.unwrap_or_else(|| panic!("{label}: no flash state"));
            let home = run.first_home.unwrap_or_else(|| panic!("{label}: no home state"));
            assert!(flash <= home, "{label}: home at {home} before flash at {flash}");
            assert_eq!(run.convergence, CheckResult::Pass, "{label}: did not converge");
            // Home states are legitimate, so the violation-free suffix must
            // already cover the first home tick.
            if let Some(last) = run.last_violation {
                assert!(last < home, "{label}: token violation at {last} after home at {home}");
            }
            // Every pair is coherent at every tick from home onward.
            if let Some(torn) = run.last_incoherent {
                assert!(torn < home, "{label}: incoherent pair at {torn} after home at {home}");
            }
        }
    }
    println!(
        "criterion 6 (gray n=2,3: flash tick <= home tick, then violation-free and coherent \
         to the end, 200 runs): pass"
    );
}

#[test]
fn criterion_7_atomic_baseline_is_spotless() {
    for n in [2u16, 3, 4] {
        let mut spec = SweepSpec::new(Variant::Atomic, n, 50);
        spec.budget = 1_000_000;
        spec.init = InitPolicy::AllEqual { value: 0 };
        let report = run_sweep(&spec).expect("sweep runs");
        for run in &report.runs {
            let label = format!("n={n} seed={}", run.seed);
            assert_eq!(run.contaminated, 0, "{label}: contaminated");
            assert_eq!(run.inversions, 0, "{label}: inversion");
            assert_eq!(run.bottoms, 0, "{label}: busy result on an atomic ring");
            assert_eq!(run.token_violations, 0, "{label}: token count left 1");
            assert_eq!(run.cs_overlaps, 0, "{label}: overlapping critical sections");
            assert_eq!(run.stabilization_tick, 0, "{label}: all-equal start must converge at 0");
            assert_eq!(run.progress, CheckResult::Pass, "{label}: progress");
            assert_eq!(run.convergence, CheckResult::Pass, "{label}: convergence");
            assert!(run.coherent_snapshots > 0, "{label}: snapshots never checked");
        }
    }
    println!(
        "criterion 7 (atomic baseline n=2..4, 150 all-equal runs: no busy, no contamination, \
         one token forever): pass"
    );
}

#[test]
fn criterion_8_reruns_are_byte_identical() {
    // Report path: the same sweep twice, and sequentially, must serialize to
    // the same bytes.
    let mut spec = SweepSpec::new(Variant::TwoReg, 3, 5);
    spec.budget = 100_000;
    let a = run_sweep(&spec).unwrap().to_json();
    let b = run_sweep(&spec).unwrap().to_json();
    let c = run_sweep_sequential(&spec).unwrap().to_json();
    assert_eq!(a, b, "rerun drifted");
    assert_eq!(a, c, "sequential sweep drifted from the parallel one");

    // Trace path: the same configuration twice, through a file and back.
    let cfg = spec.config(1, 50_000);
    let first = run_ring(&cfg).unwrap().to_jsonl_string();
    let second = run_ring(&cfg).unwrap().to_jsonl_string();
    assert_eq!(first, second, "trace rerun drifted");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.jsonl");
    std::fs::write(&path, &first).unwrap();
    let read_back =
        Trace::from_jsonl(BufReader::new(std::fs::File::open(&path).unwrap())).unwrap();
    assert_eq!(read_back.to_jsonl_string(), first, "file round trip drifted");
    let replayed = replay(&read_back.meta).unwrap();
    assert_eq!(replayed.to_jsonl_string(), first, "replay drifted");

    println!("criterion 8 (sweep reports and traces byte-identical across reruns): pass");
}
