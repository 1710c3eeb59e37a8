use hdemg::gesture::{
    cross_entropy, cross_validate, evaluate, fold_indices, forward, loss_and_gradients,
    predict_proba, summarize_folds, train, NetworkParams, NetworkShape, TrainConfig,
    WindowedDataset, TENSOR_NAMES,
};
use hdemg::synth::{synth_gesture_dataset, GestureSynthConfig};
use ndarray::{Array2, ArrayView2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn random_window(t: usize, c: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((t, c), || StandardNormal.sample(&mut rng))
}

fn randomize_biases(p: &mut NetworkParams, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for b in [&mut p.weights.conv_b, &mut p.weights.dense1_b, &mut p.weights.dense2_b] {
        b.iter_mut()
            .for_each(|v| *v = 0.1 * Distribution::<f64>::sample(&StandardNormal, &mut rng));
    }
}

/// Direct-loop forward pass, written independently of the library's blocked GEMM path.
fn naive_forward(p: &NetworkParams, x: &Array2<f64>) -> Vec<f64> {
    let s = &p.shape;
    let w = &p.weights;
    let (oh, ow) = s.conv_out();
    let (ph, pw) = s.pool_out();
    let mut conv = vec![vec![vec![0.0; ow]; oh]; s.filters];
    for f in 0..s.filters {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = w.conv_b[f];
                for a in 0..s.kernel.0 {
                    for b in 0..s.kernel.1 {
                        acc += w.conv_w[[f, a * s.kernel.1 + b]]
                            * p.input_scale
                            * x[[i * s.stride.0 + a, j * s.stride.1 + b]];
                    }
                }
                conv[f][i][j] = acc.max(0.0);
            }
        }
    }
    let mut flat = vec![0.0; s.flat_len()];
    for pi in 0..ph {
        for pj in 0..pw {
            for f in 0..s.filters {
                let mut m = f64::NEG_INFINITY;
                for a in 0..s.pool.0 {
                    for b in 0..s.pool.1 {
                        m = m.max(conv[f][pi * s.pool_stride.0 + a][pj * s.pool_stride.1 + b]);
                    }
                }
                flat[(pi * pw + pj) * s.filters + f] = m;
            }
        }
    }
    let hidden: Vec<f64> = (0..s.hidden)
        .map(|h| {
            let z: f64 = w.dense1_b[h] + (0..flat.len()).map(|k| w.dense1_w[[h, k]] * flat[k]).sum::<f64>();
            z.max(0.0)
        })
        .collect();
    let logits: Vec<f64> = (0..s.classes)
        .map(|c| w.dense2_b[c] + (0..s.hidden).map(|h| w.dense2_w[[c, h]] * hidden[h]).sum::<f64>())
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.iter().map(|v| v / sum).collect()
}

fn odd_shape() -> NetworkShape {
    NetworkShape {
        window_samples: 41,
        channels: 9,
        kernel: (7, 3),
        stride: (3, 2),
        pool: (2, 2),
        pool_stride: (2, 1),
        filters: 3,
        hidden: 5,
        classes: 4,
    }
}

#[test]
fn forward_matches_direct_loops_standard_shape() {
    let shape = NetworkShape::standard(500, 60, 7);
    let mut p = NetworkParams::init(shape, 0.5, 11).unwrap();
    randomize_biases(&mut p, 12);
    let x = random_window(500, 60, 13);
    let fast = forward(&p, &x).unwrap();
    let slow = naive_forward(&p, &x);
    for (a, b) in fast.iter().zip(&slow) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn forward_matches_direct_loops_when_kernel_is_not_a_stride_multiple() {
    let mut p = NetworkParams::init(odd_shape(), 1.3, 21).unwrap();
    randomize_biases(&mut p, 22);
    for seed in 0..4 {
        let x = random_window(41, 9, seed);
        let fast = forward(&p, &x).unwrap();
        let slow = naive_forward(&p, &x);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

fn batch_loss(p: &NetworkParams, xs: &[ArrayView2<'_, f64>], ys: &[usize]) -> f64 {
    cross_entropy(&predict_proba(p, xs).unwrap(), ys)
}

/// Worst central-difference relative error per tensor over the given entries.
fn gradient_errors(
    p: &NetworkParams,
    xs: &[Array2<f64>],
    ys: &[usize],
    entries: impl Fn(usize, usize) -> Vec<usize>,
) -> Vec<f64> {
    let views: Vec<ArrayView2<'_, f64>> = xs.iter().map(|x| x.view()).collect();
    let (_, grads) = loss_and_gradients(p, &views, ys).unwrap();
    let h = 1e-5;
    let mut worst = vec![0.0f64; 6];
    for (k, g) in grads.slices().iter().enumerate() {
        for i in entries(k, g.len()) {
            let mut plus = p.clone();
            plus.weights.slices_mut()[k][i] += h;
            let mut minus = p.clone();
            minus.weights.slices_mut()[k][i] -= h;
            let numeric = (batch_loss(&plus, &views, ys) - batch_loss(&minus, &views, ys)) / (2.0 * h);
            let denom = g[i].abs().max(numeric.abs()).max(1e-8);
            worst[k] = worst[k].max((g[i] - numeric).abs() / denom);
        }
    }
    worst
}

#[test]
fn every_gradient_entry_matches_finite_differences_on_small_network() {
    let shape = NetworkShape {
        filters: 4,
        hidden: 8,
        ..NetworkShape::standard(120, 14, 7)
    };
    let mut p = NetworkParams::init(shape, 1.0, 31).unwrap();
    randomize_biases(&mut p, 32);
    let xs: Vec<Array2<f64>> = (0..3).map(|s| random_window(120, 14, 40 + s)).collect();
    let worst = gradient_errors(&p, &xs, &[0, 3, 6], |_, n| (0..n).collect());
    for (name, err) in TENSOR_NAMES.iter().zip(&worst) {
        assert!(*err < 1e-4, "{name}: {err}");
    }
}

#[test]
fn every_gradient_entry_matches_finite_differences_on_odd_geometry() {
    let mut p = NetworkParams::init(odd_shape(), 0.8, 51).unwrap();
    randomize_biases(&mut p, 52);
    let xs: Vec<Array2<f64>> = (0..3).map(|s| random_window(41, 9, 60 + s)).collect();
    let worst = gradient_errors(&p, &xs, &[1, 2, 3], |_, n| (0..n).collect());
    for (name, err) in TENSOR_NAMES.iter().zip(&worst) {
        assert!(*err < 1e-4, "{name}: {err}");
    }
}

#[test]
fn softmax_of_zero_network_is_uniform_and_loss_is_ln7() {
    let p = NetworkParams::zeros(NetworkShape::standard(500, 60, 7)).unwrap();
    let xs: Vec<Array2<f64>> = (0..2).map(|s| random_window(500, 60, s)).collect();
    let views: Vec<ArrayView2<'_, f64>> = xs.iter().map(|x| x.view()).collect();
    let (loss, _) = loss_and_gradients(&p, &views, &[0, 5]).unwrap();
    assert!((loss - 7f64.ln()).abs() < 1e-12);
    assert!((loss - 1.9459).abs() < 1e-4);
}

fn small_gesture_set(snr_db: f64, per_class: usize, seed: u64) -> WindowedDataset {
    synth_gesture_dataset(&GestureSynthConfig {
        num_classes: 3,
        windows_per_class: per_class,
        num_channels: 15,
        snr_db,
        seed,
        ..GestureSynthConfig::default()
    })
    .unwrap()
}

fn quick_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 4,
        filters: 4,
        hidden: 16,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let ds = small_gesture_set(30.0, 20, 1);
    let a = train(&ds, &quick_config(5)).unwrap();
    assert_eq!(a.epoch_losses.len(), 4);
    assert!(a.epoch_losses[3] < a.epoch_losses[0], "{:?}", a.epoch_losses);
    let b = train(&ds, &quick_config(5)).unwrap();
    assert_eq!(a, b);
    let c = train(&ds, &quick_config(6)).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn one_class_dataset_is_learned_perfectly() {
    let ds = small_gesture_set(30.0, 12, 2);
    let idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels()[i] == 1).collect();
    let one = ds.subset(&idx);
    let model = train(&one, &TrainConfig { epochs: 20, ..quick_config(3) }).unwrap();
    let report = evaluate(&model.params, &one).unwrap();
    assert_eq!(report.accuracy, 100.0);
}

#[test]
fn evaluation_is_order_independent_and_consistent() {
    let ds = small_gesture_set(30.0, 10, 3);
    let model = train(&ds, &quick_config(1)).unwrap();
    let report = evaluate(&model.params, &ds).unwrap();
    let reversed: Vec<usize> = (0..ds.len()).rev().collect();
    assert_eq!(evaluate(&model.params, &ds.subset(&reversed)).unwrap(), report);
    let row_sums: Vec<u64> = report.confusion_matrix.iter().map(|r| r.iter().sum()).collect();
    assert_eq!(row_sums, vec![10, 10, 10]);
    assert_eq!(report.accuracy, 100.0 * report.correct() as f64 / report.total() as f64);
}

#[test]
fn cross_validation_folds_partition_the_data() {
    let ds = small_gesture_set(30.0, 9, 4);
    let reports = cross_validate(&ds, &TrainConfig { folds: 4, ..quick_config(2) }).unwrap();
    assert_eq!(reports.len(), 4);
    let tested: u64 = reports.iter().map(|r| r.total()).sum();
    assert_eq!(tested, ds.len() as u64);
    let summary = summarize_folds(&reports).unwrap();
    assert_eq!(summary.total(), ds.len() as u64);
    assert_eq!(summary.fold_accuracies.len(), 4);
    let folds = fold_indices(ds.len(), 4, 9).unwrap();
    let mut all = folds.concat();
    all.sort_unstable();
    assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
    assert!(cross_validate(&small_gesture_set(30.0, 1, 5), &quick_config(0)).is_err());
}

#[test]
fn pipeline_runs_with_masked_channels_removed() {
    let ds = small_gesture_set(30.0, 6, 6);
    let reduced = ds.map_windows(|w| Ok(w.slice(ndarray::s![.., ..11]).to_owned())).unwrap();
    assert_eq!(reduced.num_channels(), 11);
    let model = train(&reduced, &TrainConfig { epochs: 1, ..quick_config(0) }).unwrap();
    assert_eq!(model.params.shape.channels, 11);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn output_is_a_probability_vector(seed in 0u64..1000, scale in 0.01f64..100.0) {
        let p = NetworkParams::init(odd_shape(), scale, seed).unwrap();
        let probs = forward(&p, &random_window(41, 9, seed + 1)).unwrap();
        prop_assert!(probs.iter().all(|&v| v >= 0.0));
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}
