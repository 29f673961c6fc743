use cofee_core::config::ExperimentConfig;
use cofee_core::engine::trace::write_jsonl;
use cofee_core::harness::{run_experiment, run_one, PolicyKind};
use cofee_core::metrics::to_csv;

fn csv_for(threads: Option<usize>) -> Vec<u8> {
    let mut cfg = ExperimentConfig::load("desk").unwrap();
    cfg.workload.mtbf_min = Some(20.0);
    let sc = cfg.build().unwrap();
    let seeds: Vec<u64> = (1..=6).collect();
    to_csv(&run_experiment(&sc, &PolicyKind::ALL, &seeds, threads).unwrap()).unwrap()
}

#[test]
fn csv_is_byte_identical_across_runs_and_thread_counts() {
    let one = csv_for(Some(1));
    assert_eq!(one, csv_for(Some(1)));
    assert_eq!(one, csv_for(Some(4)));
    assert_eq!(one, csv_for(None));
}

#[test]
fn traces_repeat_and_seeds_matter() {
    let sc = ExperimentConfig::load("desk").unwrap().build().unwrap();
    let trace = |seed| {
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &run_one(&sc, PolicyKind::Cofee, seed, true).unwrap().trace).unwrap();
        buf
    };
    assert_eq!(trace(3), trace(3));
    assert_ne!(trace(3), trace(4));
}
