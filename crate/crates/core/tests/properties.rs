use std::sync::Arc;

use llmsched::graph::{Graph, Input, NodeId, Op, Tag, TagName};
use llmsched::kernels::{dequantize_tensor, matmul, quantize_q8, quantize_tensor, softmax_causal};
use llmsched::model::{build_llama, gen_synthetic_weights};
use llmsched::tensor::QK;
use llmsched::{DType, ModelConfig, Tensor};
use proptest::prelude::*;

/// Random DAG: node `i` reads up to three earlier nodes, or the leaf when the
/// pick list is empty.
fn dag() -> impl Strategy<Value = Graph> {
    prop::collection::vec(prop::collection::vec(any::<prop::sample::Index>(), 0..4), 1..40).prop_map(|picks| {
        let mut g = Graph::new();
        let leaf = g.add_input("x").unwrap();
        for (i, p) in picks.iter().enumerate() {
            let mut inputs: Vec<Input> = if i == 0 {
                Vec::new()
            } else {
                p.iter().map(|ix| Input::Node(NodeId(ix.index(i)))).collect()
            };
            inputs.dedup();
            if inputs.is_empty() {
                inputs.push(Input::Leaf(leaf));
            }
            g.add_node(Op::EltAdd, &inputs, Tag::global(TagName::Other)).unwrap();
        }
        g
    })
}

fn depends_on(g: &Graph, from: NodeId, target: NodeId) -> bool {
    let mut stack = vec![from];
    let mut seen = vec![false; g.len()];
    while let Some(n) = stack.pop() {
        for i in g.node(n).node_inputs() {
            if i == target {
                return true;
            }
            if !seen[i.0] {
                seen[i.0] = true;
                stack.push(i);
            }
        }
    }
    false
}

/// Naive triple loop over f32 values, ascending k.
fn naive(w: &[f32], x: &[f32], r: usize, d: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; r * n];
    for i in 0..r {
        for j in 0..n {
            let mut acc = 0.0f32;
            for k in 0..d {
                acc += w[i * d + k] * x[k * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

fn to_bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn small_config() -> impl Strategy<Value = ModelConfig> {
    (1usize..3, 1usize..3, 0usize..2, 1usize..3).prop_map(|(layers, kv_heads, head_pow, ff_mult)| {
        let n_heads = kv_heads * 2;
        let head_dim = 8 << head_pow;
        let d_model = n_heads * head_dim;
        ModelConfig {
            n_layers: layers,
            d_model,
            n_heads,
            n_kv_heads: kv_heads,
            d_ff: d_model * (ff_mult + 1),
            vocab: 64,
            ctx_len: 16,
            rope_theta: 10000.0,
            norm_eps: 1e-5,
            dtype: DType::F32,
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn wavefront_levels_partition_and_respect_dependencies(g in dag()) {
        let s = g.compute_wavefronts().unwrap();
        let mut count = vec![0usize; g.len()];
        for (k, level) in s.levels().iter().enumerate() {
            prop_assert!(!level.is_empty());
            for &id in level {
                count[id.0] += 1;
                prop_assert_eq!(s.level_of(id), k);
                for i in g.node(id).node_inputs() {
                    prop_assert!(s.level_of(i) < k);
                }
            }
            for &a in level {
                for &b in level {
                    prop_assert!(!depends_on(&g, a, b));
                }
            }
        }
        prop_assert!(count.iter().all(|&c| c == 1));
    }

    #[test]
    fn level_count_equals_node_count_only_for_chains(g in dag()) {
        let s = g.compute_wavefronts().unwrap();
        prop_assert!(s.len() <= g.len());
        let chain = (1..g.len()).all(|i| g.node(NodeId(i)).node_inputs().any(|n| n.0 == i - 1));
        prop_assert_eq!(s.len() == g.len(), chain);
    }

    #[test]
    fn serialization_round_trip_keeps_the_schedule(g in dag()) {
        let json = serde_json::to_string(&g).unwrap();
        let back: Graph = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(back.compute_wavefronts().unwrap(), g.compute_wavefronts().unwrap());
        prop_assert_eq!(back.debug_dump().unwrap(), g.debug_dump().unwrap());
    }

    #[test]
    fn float_matmul_equals_naive_oracle(
        r in 1usize..=64, d in 1usize..=64, n in 1usize..=64, seed in any::<u64>(), half in any::<bool>()
    ) {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let wv: Vec<f32> = (0..r * d).map(|_| rand::Rng::random_range(&mut rng, -2.0..2.0)).collect();
        let xv: Vec<f32> = (0..d * n).map(|_| rand::Rng::random_range(&mut rng, -2.0..2.0)).collect();
        let dtype = if half { DType::F16 } else { DType::F32 };
        let w = quantize_tensor("w", &[r, d], &wv, dtype).unwrap();
        let x = Tensor::from_f32("x", &[d, n], xv.clone()).unwrap();
        let expect = naive(&dequantize_tensor(&w), &xv, r, d, n);
        prop_assert_eq!(to_bits(matmul(&w, &x).unwrap().as_f32().unwrap()), to_bits(&expect));
    }

    #[test]
    fn quantized_matmul_equals_dequantized_oracle(
        r in 1usize..=64, blocks in 1usize..=2, n in 1usize..=64, seed in any::<u64>(), q4 in any::<bool>()
    ) {
        let d = blocks * QK;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let wv: Vec<f32> = (0..r * d).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        let xv: Vec<f32> = (0..d * n).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        let dtype = if q4 { DType::Q4_0 } else { DType::Q8_0 };
        let w = quantize_tensor("w", &[r, d], &wv, dtype).unwrap();
        let x = Tensor::from_f32("x", &[d, n], xv.clone()).unwrap();
        let expect = naive(&dequantize_tensor(&w), &xv, r, d, n);
        let got = matmul(&w, &x).unwrap();
        prop_assert_eq!(to_bits(got.as_f32().unwrap()), to_bits(&expect));
        // Pure: a second call gives the same bits.
        prop_assert_eq!(to_bits(matmul(&w, &x).unwrap().as_f32().unwrap()), to_bits(&expect));
    }

    #[test]
    fn encoded_length_matches_block_size(rows in 1usize..8, blocks in 1usize..4) {
        let v = vec![0.5f32; rows * blocks * QK];
        let q4 = quantize_tensor("w", &[rows, blocks * QK], &v, DType::Q4_0).unwrap();
        let q8 = quantize_tensor("w", &[rows, blocks * QK], &v, DType::Q8_0).unwrap();
        prop_assert_eq!(q4.to_bytes().len(), rows * blocks * 18);
        prop_assert_eq!(q8.to_bytes().len(), rows * blocks * 34);
        prop_assert_eq!(q4.byte_len() * 8, rows * blocks * QK * 9 / 2);
    }

    #[test]
    fn q8_round_trip_within_half_step(v in prop::collection::vec(-100.0f32..100.0, QK)) {
        let b = quantize_q8(&v).unwrap();
        let s = b.scale.to_f32().abs();
        let t = quantize_tensor("b", &[QK], &v, DType::Q8_0).unwrap();
        for (x, y) in dequantize_tensor(&t).iter().zip(&v) {
            prop_assert!((x - y).abs() <= s / 2.0 + f32::EPSILON * y.abs());
        }
    }

    #[test]
    fn q4_values_on_the_grid_reconstruct_exactly(codes in prop::collection::vec(-7i32..=7, QK), exp in -4i32..4) {
        let s = 2f32.powi(exp);
        let mut v: Vec<f32> = codes.iter().map(|&c| c as f32 * s).collect();
        v[0] = -8.0 * s;
        let t = quantize_tensor("b", &[QK], &v, DType::Q4_0).unwrap();
        prop_assert_eq!(dequantize_tensor(&t), v);
    }

    #[test]
    fn causal_softmax_rows_sum_to_one(
        heads in 1usize..4, n_q in 1usize..6, n_past in 0usize..6, seed in any::<u64>()
    ) {
        let n_kv = n_past + n_q;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let v: Vec<f32> = (0..heads * n_q * n_kv).map(|_| rand::Rng::random_range(&mut rng, -20.0..20.0)).collect();
        let t = Tensor::from_f32("s", &[heads, n_q, n_kv], v).unwrap();
        let p = softmax_causal(&t, n_past).unwrap();
        for (row_idx, row) in p.as_f32().unwrap().chunks(n_kv).enumerate() {
            let allowed = n_past + row_idx % n_q + 1;
            let sum: f64 = row[..allowed].iter().map(|&x| x as f64).sum();
            prop_assert!((sum - 1.0).abs() <= 1e-6);
            prop_assert!(row[allowed..].iter().all(|&x| x == 0.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn built_graphs_keep_parallel_projections_together(c in small_config()) {
        let w = gen_synthetic_weights(&c, 1).unwrap();
        let m = build_llama(&c, &w).unwrap();
        let g = &m.graph;
        g.validate_topological().unwrap();
        let s = g.compute_wavefronts().unwrap();
        for l in 0..c.n_layers {
            let level = |t| s.level_of(g.find(Tag::layer(t, l)).unwrap());
            prop_assert_eq!(level(TagName::Qcur), level(TagName::Kcur));
            prop_assert_eq!(level(TagName::Kcur), level(TagName::Vcur));
            prop_assert_eq!(level(TagName::FfnGate), level(TagName::FfnUp));
            for t in [TagName::Kcur, TagName::Vcur] {
                let id = g.find(Tag::layer(t, l)).unwrap();
                let weight = g.node(id).inputs[0];
                let Input::Leaf(leaf) = weight else { panic!("weight input expected") };
                let rows = g.leaf(leaf).tensor.as_ref().map(|t: &Arc<Tensor>| t.shape()[0]);
                prop_assert_eq!(rows, Some(c.d_model * c.n_kv_heads / c.n_heads));
            }
        }
        for id in 0..g.len() {
            for i in g.node(NodeId(id)).node_inputs() {
                prop_assert!(s.level_of(i) < s.level_of(NodeId(id)));
            }
        }
    }
}
