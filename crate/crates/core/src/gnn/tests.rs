use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::features::{GraphSample, Label};

const DIM: usize = 8;

fn random_graph(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> GraphSample {
    let x = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut edges = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if a != b && rng.random_bool(0.3) {
                edges.push((a, b));
            }
        }
    }
    let label = Some(Label::from_bit(rng.random_bool(0.5)));
    GraphSample::new(n, dim, x, edges, label, "g").unwrap()
}

fn prepare(samples: &[GraphSample], kind: ConvKind) -> Vec<PreparedGraph> {
    samples.iter().map(|s| PreparedGraph::new(s, kind).unwrap()).collect()
}

fn linear_loss(
    graphs: &[PreparedGraph],
    config: &ModelConfig,
    params: &ModelParams,
    mode: Mode,
    coef: &[f64],
) -> f64 {
    let refs: Vec<&PreparedGraph> = graphs.iter().collect();
    let out = forward_batch(&refs, config, params, mode).unwrap();
    out.logits.iter().zip(coef).map(|(z, c)| z * c).sum()
}

/// Analytic gradients against central finite differences, train mode so
/// batch statistics and dropout are in the graph.
#[test]
fn gradients_match_finite_differences() {
    let step = 1e-5;
    for kind in ConvKind::ALL {
        for pooling in Pooling::ALL {
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            let samples: Vec<GraphSample> = (0..4).map(|_| random_graph(&mut rng, 5, DIM)).collect();
            let graphs = prepare(&samples, kind);
            let refs: Vec<&PreparedGraph> = graphs.iter().collect();
            let config = ModelConfig::new(kind, 2, 32, pooling, DIM);
            let mut params = ModelParams::init(&config, 3).unwrap();
            // Move off the zero-bias symmetric point so every path carries signal.
            for t in params.tensors_mut() {
                if t.len() <= 32 {
                    for v in t.iter_mut() {
                        *v += rng.random_range(-0.1..0.1);
                    }
                }
            }
            let coef: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mode = Mode::Train { seed: 9 };

            let out = forward_batch(&refs, &config, &params, mode).unwrap();
            let grads = backward(&refs, &config, &params, out.cache.as_ref().unwrap(), &coef);
            let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();

            let mut worst = 0.0f64;
            let mut checked = 0usize;
            for (ti, tensor) in analytic.iter().enumerate() {
                for (j, &a) in tensor.iter().enumerate() {
                    let original = params.tensors()[ti][j];
                    params.tensors_mut()[ti][j] = original + step;
                    let up = linear_loss(&graphs, &config, &params, mode, &coef);
                    params.tensors_mut()[ti][j] = original - step;
                    let down = linear_loss(&graphs, &config, &params, mode, &coef);
                    params.tensors_mut()[ti][j] = original;
                    let numeric = (up - down) / (2.0 * step);
                    // The floor absorbs differencing roundoff (~1e-10) on
                    // gradients that are exactly zero, e.g. biases ahead of batch norm.
                    let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-5);
                    worst = worst.max(rel);
                    checked += 1;
                }
            }
            assert!(checked > 1000);
            assert!(worst < 1e-4, "{kind} {pooling}: worst relative error {worst:e}");
        }
    }
}

#[test]
fn scores_are_invariant_to_node_relabeling() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for kind in ConvKind::ALL {
        for pooling in Pooling::ALL {
            let config = ModelConfig::new(kind, 3, 32, pooling, DIM);
            let params = ModelParams::init(&config, 11).unwrap();
            for _ in 0..10 {
                let n = rng.random_range(1..9);
                let sample = random_graph(&mut rng, n, DIM);
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut rng);
                let (a, _) = forward(&sample, &config, &params, Mode::Eval).unwrap();
                let (b, _) = forward(&sample.permuted(&perm), &config, &params, Mode::Eval).unwrap();
                assert!((a - b).abs() < 1e-9, "{config}: {a} vs {b}");
            }
        }
    }
}

fn logit(graph: &GraphSample, config: &ModelConfig, params: &ModelParams) -> f64 {
    let g = PreparedGraph::new(graph, config.conv).unwrap();
    forward_batch(&[&g], config, params, Mode::Eval).unwrap().logits[0]
}

/// With zero biases every stage after pooling is positively homogeneous,
/// so the sum-pooled logit is exactly `n` times the average-pooled one.
#[test]
fn sum_pooling_scales_average_pooling_by_node_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for kind in ConvKind::ALL {
        let avg = ModelConfig::new(kind, 2, 32, Pooling::Average, DIM);
        let sum = ModelConfig { pooling: Pooling::Sum, ..avg };
        let params = ModelParams::init(&avg, 4).unwrap();
        for n in [1, 2, 5] {
            let g = random_graph(&mut rng, n, DIM);
            let a = logit(&g, &avg, &params);
            let s = logit(&g, &sum, &params);
            assert!((s - n as f64 * a).abs() <= 1e-12 * s.abs().max(1.0), "{kind} n={n}");
        }
    }
}

#[test]
fn isolated_zero_node_leaves_sum_pooling_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for kind in ConvKind::ALL {
        let config = ModelConfig::new(kind, 2, 32, Pooling::Sum, DIM);
        let params = ModelParams::init(&config, 6).unwrap();
        let g = random_graph(&mut rng, 4, DIM);
        let mut x = g.x.clone();
        x.extend(std::iter::repeat_n(0.0, DIM));
        let padded = GraphSample::new(5, DIM, x, g.edges.clone(), g.label, "padded").unwrap();
        let a = logit(&g, &config, &params);
        let b = logit(&padded, &config, &params);
        assert!((a - b).abs() < 1e-12, "{kind}: {a} vs {b}");
    }
}

#[test]
fn zero_input_gives_zero_weight_gradients_in_first_layer() {
    for kind in [ConvKind::Gcn, ConvKind::Sage, ConvKind::Gin, ConvKind::General] {
        let config = ModelConfig { dropout_rate: 0.0, ..ModelConfig::new(kind, 1, 32, Pooling::Sum, DIM) };
        let params = ModelParams::init(&config, 2).unwrap();
        let samples: Vec<GraphSample> = (0..3)
            .map(|i| GraphSample::new(3, DIM, vec![0.0; 3 * DIM], vec![(0, 1), (1, 2)], None, format!("z{i}")).unwrap())
            .collect();
        let graphs = prepare(&samples, kind);
        let refs: Vec<&PreparedGraph> = graphs.iter().collect();
        let out = forward_batch(&refs, &config, &params, Mode::Train { seed: 1 }).unwrap();
        let grads = backward(&refs, &config, &params, out.cache.as_ref().unwrap(), &[1.0, -0.5, 0.25]);
        let weight_grads: Vec<&Array2<f64>> = match &grads.convs[0] {
            ConvParams::Gcn { w, .. } => vec![w],
            ConvParams::Sage { w_self, w_neigh, .. } => vec![w_self, w_neigh],
            ConvParams::Gin { w1, .. } => vec![w1],
            ConvParams::General { w_self, w_msg, .. } => vec![w_self, w_msg],
            ConvParams::Agnn { .. } => unreachable!(),
        };
        for w in weight_grads {
            assert!(w.iter().all(|v| *v == 0.0), "{kind}");
        }
    }
}

#[test]
fn eval_is_deterministic_and_train_depends_on_seed() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let samples: Vec<GraphSample> = (0..6).map(|_| random_graph(&mut rng, 4, DIM)).collect();
    let config = ModelConfig::new(ConvKind::Gin, 2, 64, Pooling::Average, DIM);
    let params = ModelParams::init(&config, 0).unwrap();
    let graphs = prepare(&samples, config.conv);
    let refs: Vec<&PreparedGraph> = graphs.iter().collect();
    let e1 = predict(&refs, &config, &params).unwrap();
    let e2 = predict(&refs, &config, &params).unwrap();
    assert_eq!(e1, e2);
    let t1 = forward_batch(&refs, &config, &params, Mode::Train { seed: 1 }).unwrap().scores;
    let t1b = forward_batch(&refs, &config, &params, Mode::Train { seed: 1 }).unwrap().scores;
    let t2 = forward_batch(&refs, &config, &params, Mode::Train { seed: 2 }).unwrap().scores;
    assert_eq!(t1, t1b);
    assert_ne!(t1, t2);
}

/// One node, no edges: the GCN operator is 1, so the whole network reduces
/// to a chain of dense maps computed here by hand.
#[test]
fn single_node_gcn_matches_hand_computation() {
    let dim = 3;
    let config = ModelConfig::new(ConvKind::Gcn, 1, 32, Pooling::Average, dim);
    let params = ModelParams::init(&config, 99).unwrap();
    let features = [0.5, -1.0, 2.0];
    let sample = GraphSample::new(1, dim, features.to_vec(), vec![], None, "one").unwrap();
    let (score, _) = forward(&sample, &config, &params, Mode::Eval).unwrap();

    let ConvParams::Gcn { w, b } = &params.convs[0] else { unreachable!() };
    let mut h: Vec<f64> = (0..32)
        .map(|c| ((0..dim).map(|k| features[k] * w[[k, c]]).sum::<f64>() + b[c]).max(0.0))
        .collect();
    for (d, state) in params.dense.iter().zip(&params.bn) {
        h = (0..32)
            .map(|c| {
                let z = (0..32).map(|k| h[k] * d.w[[k, c]]).sum::<f64>() + d.b[c];
                let y = (z - state.running_mean[c]) / (state.running_var[c] + BN_EPSILON).sqrt() * d.gamma[c]
                    + d.beta[c];
                y.max(0.0)
            })
            .collect();
    }
    let z: f64 = (0..32).map(|k| h[k] * params.head_w[k]).sum::<f64>() + params.head_b[0];
    let expected = 1.0 / (1.0 + (-z).exp());
    assert!((score - expected).abs() < 1e-14, "{score} vs {expected}");
}

#[test]
fn scores_are_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for kind in ConvKind::ALL {
        let config = ModelConfig::new(kind, 2, 32, Pooling::Sum, DIM);
        let mut params = ModelParams::init(&config, 1).unwrap();
        params.head_w *= 1e3;
        for _ in 0..20 {
            let n = rng.random_range(1..7);
            let g = random_graph(&mut rng, n, DIM);
            let (s, _) = forward(&g, &config, &params, Mode::Eval).unwrap();
            assert!((0.0..=1.0).contains(&s), "{s}");
        }
    }
}

#[test]
fn shape_mismatches_are_rejected() {
    let config = ModelConfig::new(ConvKind::Sage, 1, 32, Pooling::Sum, DIM);
    let params = ModelParams::init(&config, 1).unwrap();
    let wrong = GraphSample::new(2, DIM + 1, vec![0.1; 2 * (DIM + 1)], vec![], None, "w").unwrap();
    assert!(matches!(forward(&wrong, &config, &params, Mode::Eval), Err(GnnError::ShapeMismatch(_))));
    let other_kind = PreparedGraph::new(&GraphSample::new(1, DIM, vec![0.0; DIM], vec![], None, "k").unwrap(), ConvKind::Gcn)
        .unwrap();
    assert!(forward_batch(&[&other_kind], &config, &params, Mode::Eval).is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(ModelConfig::new(ConvKind::Gcn, 4, 32, Pooling::Sum, 8).validate().is_err());
    assert!(ModelConfig::new(ConvKind::Gcn, 1, 48, Pooling::Sum, 8).validate().is_err());
    assert!(ModelConfig::new(ConvKind::Gcn, 1, 32, Pooling::Sum, 0).validate().is_err());
    assert_eq!(ModelConfig::new(ConvKind::Agnn, 3, 128, Pooling::Average, 8).to_string(), "AGNN-3x128-average");
}

#[test]
fn init_is_seeded() {
    let config = ModelConfig::new(ConvKind::General, 3, 64, Pooling::Sum, DIM);
    let a = ModelParams::init(&config, 5).unwrap();
    assert_eq!(a, ModelParams::init(&config, 5).unwrap());
    assert_ne!(a, ModelParams::init(&config, 6).unwrap());
    let shapes: Vec<usize> = a.tensors().iter().map(|t| t.len()).collect();
    assert_eq!(shapes, ModelParams::expected_shapes(&config));
}

#[test]
fn batch_norm_running_stats_follow_momentum() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let samples: Vec<GraphSample> = (0..5).map(|_| random_graph(&mut rng, 3, DIM)).collect();
    let config = ModelConfig::new(ConvKind::Gcn, 1, 32, Pooling::Average, DIM);
    let mut params = ModelParams::init(&config, 1).unwrap();
    let graphs = prepare(&samples, config.conv);
    let refs: Vec<&PreparedGraph> = graphs.iter().collect();
    let out = forward_batch(&refs, &config, &params, Mode::Train { seed: 0 }).unwrap();
    let cache = out.cache.unwrap();
    let (mean, var) = cache.bn_batch_stats[0].clone().unwrap();
    params.apply_bn_updates(&cache);
    for c in 0..32 {
        assert!((params.bn[0].running_mean[c] - 0.01 * mean[c]).abs() < 1e-15);
        assert!((params.bn[0].running_var[c] - (0.99 + 0.01 * var[c])).abs() < 1e-15);
    }

    // A single-graph batch cannot estimate variance; running stats are used.
    let single = forward_batch(&refs[..1], &config, &params, Mode::Train { seed: 0 }).unwrap();
    assert!(single.cache.unwrap().bn_batch_stats.iter().all(Option::is_none));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for kind in ConvKind::ALL {
        let config = ModelConfig::new(kind, 2, 32, Pooling::Average, DIM);
        let mut params = ModelParams::init(&config, 8).unwrap();
        for t in params.tensors_mut() {
            for v in t.iter_mut() {
                *v += rng.random_range(-1e-3..1e-3) * std::f64::consts::PI;
            }
        }
        params.bn[1].running_var[3] = 0.1 + 0.2;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        Checkpoint::new(config, 8, &params).save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.config, config);
        let restored = loaded.to_params().unwrap();
        for (a, b) in params.tensors().iter().zip(restored.tensors()) {
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(restored.bn, params.bn);

        let g = random_graph(&mut rng, 4, DIM);
        let before = forward(&g, &config, &params, Mode::Eval).unwrap().0;
        let after = forward(&g, &config, &restored, Mode::Eval).unwrap().0;
        assert_eq!(before.to_bits(), after.to_bits());
    }
}

#[test]
fn checkpoint_shape_errors_are_reported() {
    let config = ModelConfig::new(ConvKind::Gcn, 1, 32, Pooling::Sum, DIM);
    let params = ModelParams::init(&config, 1).unwrap();
    let mut ck = Checkpoint::new(config, 1, &params);
    ck.tensors[0].pop();
    assert!(matches!(ck.to_params(), Err(GnnError::Checkpoint(_))));
    let mut ck = Checkpoint::new(config, 1, &params);
    ck.version = 2;
    assert!(ck.to_params().is_err());
    assert!(Checkpoint::from_json("{\"format\":").is_err());
}
