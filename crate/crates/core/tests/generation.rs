mod common;

use common::*;
use llmsched::runtime::{greedy_sample, EngineOptions, RuntimeError};
use llmsched::{Engine, SchedulerKind};

fn rel_close(a: &[f32], b: &[f32], tol: f32) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * x.abs().max(y.abs()).max(f32::MIN_POSITIVE))
}

/// Token-by-token decoding against a fresh batched prefill of every prefix.
#[test]
fn stepped_decode_matches_batched_prefill() {
    let (c, w) = toy();
    let seq = prompt(&c, 16);
    let mut stepped = Engine::new(&c, &w, EngineOptions::default()).unwrap();
    let mut full = Engine::new(&c, &w, EngineOptions::default()).unwrap();

    let mut logits = stepped.prefill(&seq[..1]).unwrap();
    for n in 1..=seq.len() {
        if n > 1 {
            logits = stepped.decode_step(seq[n - 1]).unwrap();
        }
        full.reset();
        let batched = full.prefill(&seq[..n]).unwrap();
        assert!(rel_close(&logits, &batched, 1e-4), "prefix {n}");
    }
}

#[test]
fn split_prefill_matches_single_prefill() {
    let (c, w) = toy();
    let seq = prompt(&c, 12);
    let mut a = Engine::new(&c, &w, EngineOptions::default()).unwrap();
    a.prefill(&seq[..7]).unwrap();
    let mut last = Vec::new();
    for &t in &seq[7..] {
        last = a.decode_step(t).unwrap();
    }
    let mut b = Engine::new(&c, &w, EngineOptions::default()).unwrap();
    assert!(rel_close(&last, &b.prefill(&seq).unwrap(), 1e-4));
}

#[test]
fn context_fills_exactly_then_errors() {
    let (c, w) = toy();
    assert_eq!(c.ctx_len, 128);
    let mut e = Engine::new(&c, &w, EngineOptions::default()).unwrap();
    let mut logits = e.prefill(&prompt(&c, 7)).unwrap();
    assert_eq!(e.n_past(), 7);
    for _ in 0..121 {
        logits = e.decode_step(greedy_sample(&logits)).unwrap();
        assert_eq!(logits.len(), c.vocab);
    }
    assert_eq!(e.n_past(), 128);
    assert!(matches!(
        e.decode_step(0),
        Err(RuntimeError::ContextExhausted { needed: 129, ctx_len: 128 })
    ));
}

#[test]
fn generate_budget_is_checked_up_front() {
    let (c, w) = toy();
    let mut e = Engine::new(&c, &w, EngineOptions::default()).unwrap();
    assert!(matches!(
        e.generate(&prompt(&c, 7), 122, None),
        Err(RuntimeError::ContextExhausted { needed: 129, .. })
    ));
    let g = e.generate(&prompt(&c, 7), 9, None).unwrap();
    assert_eq!(e.n_past(), 16);
    assert_eq!(g.tokens.len(), 16);
    assert_eq!(g.metrics.generated_tokens, 9);
    let m = g.metrics;
    assert!((m.decode_tps - 9.0 / m.decode_seconds).abs() <= 1e-9 * m.decode_tps);
    assert!((m.prefill_tps - 7.0 / m.prefill_seconds).abs() <= 1e-9 * m.prefill_tps);
}

#[test]
fn engines_with_equal_inputs_agree_each_step() {
    let (c, w) = small(2);
    let p = prompt(&c, 7);
    let mut a = Engine::new(&c, &w, options(SchedulerKind::GraphTensorParallel, 3, None)).unwrap();
    let mut b = Engine::new(&c, &w, EngineOptions::default()).unwrap();
    let (mut la, mut lb) = (a.prefill(&p).unwrap(), b.prefill(&p).unwrap());
    for _ in 0..8 {
        assert_eq!(bits(&la), bits(&lb));
        let t = greedy_sample(&la);
        la = a.decode_step(t).unwrap();
        lb = b.decode_step(t).unwrap();
    }
}

#[test]
fn repeated_generate_restarts_from_an_empty_cache() {
    let (c, w) = small(1);
    let p = prompt(&c, 4);
    let mut e = Engine::new(&c, &w, EngineOptions::default()).unwrap();
    let first = e.generate(&p, 5, None).unwrap();
    let second = e.generate(&p, 5, None).unwrap();
    assert_eq!(first.tokens, second.tokens);
    assert_eq!(bits(&first.logits), bits(&second.logits));
}
