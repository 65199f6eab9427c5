mod common;

use std::thread::available_parallelism;
use std::time::Duration;

use common::*;
use llmsched::graph::{Graph, TagName};
use llmsched::profiler::check_step;
use llmsched::scheduler::{assign_backends, run, BackendPolicy, LeafBindings};
use llmsched::{AccelModel, Backend, Phase, SchedulerError, SchedulerKind, Tag};

fn zero_latency() -> Option<AccelModel> {
    Some(AccelModel {
        launch_latency: Duration::ZERO,
        ..AccelModel::default()
    })
}

#[test]
fn every_kind_and_thread_count_matches_the_serial_baseline() {
    let (c, w) = toy();
    let p = prompt(&c, 7);
    let (base, _, _) = profiled_run(&c, &w, options(SchedulerKind::Sequential, 1, None), &p, 12);
    for kind in SchedulerKind::ALL {
        for threads in [1, 2, 3, 4, 6] {
            let (g, trace, e) = profiled_run(&c, &w, options(kind, threads, zero_latency()), &p, 12);
            assert_eq!(g.tokens, base.tokens, "{kind} x{threads}");
            assert_eq!(bits(&g.logits), bits(&base.logits), "{kind} x{threads}");

            for step in steps(&trace, e.graph().len()) {
                let (missing, violations) = check_step(e.graph(), step);
                assert!(missing.is_empty(), "{kind} x{threads}: nodes not covered {missing:?}");
                assert!(violations.is_empty(), "{kind} x{threads}: {violations:?}");
            }
        }
    }
}

#[test]
fn phases_are_labeled_by_the_calling_step() {
    let (c, w) = small(1);
    let p = prompt(&c, 5);
    let (_, trace, e) = profiled_run(&c, &w, options(SchedulerKind::GraphParallel, 2, None), &p, 3);
    let per_step = steps(&trace, e.graph().len());
    assert_eq!(per_step.len(), 4);
    assert!(per_step[0].iter().all(|r| r.phase == Phase::Prefill));
    assert!(per_step[1..].iter().flat_map(|s| s.iter()).all(|r| r.phase == Phase::Decode));
    assert!(trace.records.iter().all(|r| r.end_ns >= r.start_ns));
}

#[test]
fn projections_start_after_the_attention_norm() {
    let (c, w) = small(2);
    let p = prompt(&c, 7);
    let (_, trace, e) = profiled_run(&c, &w, options(SchedulerKind::GraphParallel, 4, None), &p, 1);
    let g = e.graph();
    for step in steps(&trace, g.len()) {
        for l in 0..2 {
            let norm = &step[g.find(Tag::layer(TagName::NormInp, l)).unwrap().0];
            for name in [TagName::Qcur, TagName::Kcur, TagName::Vcur] {
                let r = &step[g.find(Tag::layer(name, l)).unwrap().0];
                assert!(r.start_ns >= norm.end_ns);
            }
        }
    }
}

/// Needs real parallel hardware; on fewer than three cores the OS may run
/// the workers back to back.
#[test]
fn graph_parallel_overlaps_nodes_of_a_level() {
    let cores = available_parallelism().map_or(1, |n| n.get());
    if cores < 3 {
        eprintln!("skipped: {cores} core(s) available, overlap needs at least 3");
        return;
    }
    let (c, w) = toy();
    let p = prompt(&c, 7);
    let (_, trace, e) = profiled_run(&c, &w, options(SchedulerKind::GraphParallel, 4, None), &p, 4);
    let plan = e.graph().compute_wavefronts().unwrap();
    let overlapped = steps(&trace, e.graph().len()).iter().any(|step| {
        plan.levels().iter().any(|level| {
            level.iter().enumerate().any(|(i, a)| {
                level[i + 1..].iter().any(|b| {
                    let (ra, rb) = (&step[a.0], &step[b.0]);
                    ra.start_ns < rb.end_ns && rb.start_ns < ra.end_ns
                })
            })
        })
    });
    assert!(overlapped);
}

#[test]
fn graph_parallel_spreads_a_level_over_workers() {
    let (c, w) = small(1);
    let p = prompt(&c, 3);
    let (_, trace, e) = profiled_run(&c, &w, options(SchedulerKind::GraphParallel, 3, None), &p, 0);
    let g = e.graph();
    let workers: Vec<usize> = [TagName::Qcur, TagName::Kcur, TagName::Vcur]
        .iter()
        .map(|&t| trace.records[g.find(Tag::layer(t, 0)).unwrap().0].worker)
        .collect();
    assert_eq!(workers, vec![0, 1, 2]);
}

#[test]
fn executor_preconditions() {
    let (c, w) = small(1);
    let graph: Graph = llmsched::model::build_llama(&c, &w).unwrap().graph;
    assert!(matches!(
        run(&graph, &LeafBindings::new(), SchedulerKind::GraphParallel, 0, None, Phase::Decode),
        Err(SchedulerError::ZeroThreads)
    ));
    assert!(matches!(
        run(&graph, &LeafBindings::new(), SchedulerKind::Hybrid, 2, None, Phase::Decode),
        Err(SchedulerError::MissingAccelModel)
    ));
}

#[test]
fn hybrid_places_even_layer_gemms_on_the_accelerator() {
    let (c, w) = small(2);
    let (_, trace, e) = profiled_run(&c, &w, options(SchedulerKind::Hybrid, 2, zero_latency()), &prompt(&c, 4), 1);
    let accel: Vec<_> = e.graph().nodes().iter().filter(|n| n.backend == Backend::Accel).collect();
    assert_eq!(accel.len(), 7);
    assert!(accel.iter().all(|n| n.tag.layer == Some(0) && n.op.is_weight_matmul()));
    let recorded = trace.records.iter().filter(|r| r.backend == Backend::Accel).count();
    assert_eq!(recorded, 7 * 2);

    let g = assign_backends(e.graph(), BackendPolicy::AllMain);
    assert!(g.nodes().iter().all(|n| n.backend == Backend::Main));
}
