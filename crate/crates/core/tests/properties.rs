use batchsnn::encoding::{poisson_encode, PoissonSource};
use batchsnn::experiments::labels::{assign_labels, CLASSES};
use batchsnn::experiments::output::{emit_csv, pgm_bytes};
use batchsnn::plasticity::{reduced_stdp_update, stdp_delta, update_traces, SpikeTraces};
use batchsnn::snnw::{decode_snnw, encode_snnw, encoded_len, DenseLayer};
use batchsnn::tensor::{matmul_batch, reduce_batch};
use batchsnn::topology::normalize_columns;
use batchsnn::{
    AdaptiveLifGroup, BatchedTensor, Connection, InputGroup, Matrix, MonitorTarget, Net, Reduction, Rng,
    StdpRule, TimeSeries, Variable,
};
use proptest::prelude::*;
use rand::Rng as _;

fn random_tensor(rng: &Rng, shape: &[usize], lo: f32, hi: f32) -> BatchedTensor<f32> {
    let mut g = rng.generator(0);
    let n = shape.iter().product();
    BatchedTensor::from_vec(shape, (0..n).map(|_| g.random_range(lo..hi)).collect()).unwrap()
}

fn random_spikes(rng: &Rng, batch: usize, n: usize, p: f64) -> BatchedTensor<f32> {
    let mut g = rng.generator(1);
    let data = (0..batch * n).map(|_| if g.random_bool(p) { 1.0 } else { 0.0 }).collect();
    BatchedTensor::from_vec(&[batch, n], data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stacked_matmul_equals_row_matmuls(seed in any::<u64>(), batch in 1usize..6, n_pre in 1usize..20, n_post in 1usize..20) {
        let rng = Rng::new(seed);
        let s = random_spikes(&rng, batch, n_pre, 0.4);
        let w = Matrix::from_vec(n_pre, n_post, random_tensor(&rng.fork(1), &[1, n_pre * n_post], -1.0, 1.0).into_vec()).unwrap();
        let all = matmul_batch(&s, &w).unwrap();
        for b in 0..batch {
            let one = matmul_batch(&s.select(b), &w).unwrap();
            prop_assert_eq!(one.data(), all.sample(b));
        }
    }

    #[test]
    fn sum_is_batch_times_mean(seed in any::<u64>(), batch in 1usize..9, rows in 1usize..5, cols in 1usize..5) {
        let d = random_tensor(&Rng::new(seed), &[batch, rows, cols], -1.0, 1.0);
        let sum = reduce_batch(&d, Reduction::Sum).unwrap();
        let mean = reduce_batch(&d, Reduction::Mean).unwrap();
        for (s, m) in sum.data().iter().zip(mean.data()) {
            let scaled = m * batch as f32;
            prop_assert!((s - scaled).abs() <= 1e-6 * s.abs().max(1.0), "{} vs {}", s, scaled);
        }
    }

    #[test]
    fn single_sample_reductions_agree(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..6) {
        let d = random_tensor(&Rng::new(seed), &[1, rows, cols], -1.0, 1.0);
        let mean = reduce_batch(&d, Reduction::Mean).unwrap();
        prop_assert_eq!(&reduce_batch(&d, Reduction::Sum).unwrap(), &mean);
        prop_assert_eq!(&reduce_batch(&d, Reduction::Max).unwrap(), &mean);
        prop_assert_eq!(mean.data(), d.data());
    }

    #[test]
    fn batched_sum_update_equals_serial_sum(seed in any::<u64>(), batch in 1usize..6) {
        let (n_pre, n_post) = (7, 5);
        let rng = Rng::new(seed);
        let rule = StdpRule::pair(0.001f32, 0.01);
        let mut traces = SpikeTraces::new(batch, n_pre, n_post, 20.0);
        let s_pre = random_spikes(&rng.fork(1), batch, n_pre, 0.3);
        let s_post = random_spikes(&rng.fork(2), batch, n_post, 0.3);
        update_traces(&mut traces, &random_spikes(&rng.fork(3), batch, n_pre, 0.5), &random_spikes(&rng.fork(4), batch, n_post, 0.5), 1.0).unwrap();
        update_traces(&mut traces, &s_pre, &s_post, 1.0).unwrap();
        let batched = reduced_stdp_update(&rule, &traces, &s_pre, &s_post, Reduction::Sum).unwrap();
        let mut serial = vec![0.0f32; n_pre * n_post];
        for b in 0..batch {
            let mut one = SpikeTraces::new(1, n_pre, n_post, 20.0);
            one.x_pre = traces.x_pre.select(b);
            one.x_post = traces.x_post.select(b);
            let d = stdp_delta(&rule, &one, &s_pre.select(b), &s_post.select(b)).unwrap();
            serial.iter_mut().zip(d.data()).for_each(|(s, x)| *s += x);
        }
        for (a, e) in batched.data().iter().zip(&serial) {
            prop_assert!((a - e).abs() <= 1e-5 * e.abs().max(1e-6), "{} vs {}", a, e);
        }
    }

    #[test]
    fn normalized_columns_hit_the_target(seed in any::<u64>(), rows in 1usize..30, cols in 1usize..10, target in 0.5f32..100.0) {
        let mut w = Matrix::from_vec(rows, cols, random_tensor(&Rng::new(seed), &[1, rows * cols], 0.0, 1.0).into_vec()).unwrap();
        w.set(0, 0, 0.0);
        normalize_columns(&mut w, target).unwrap();
        for s in w.column_sums() {
            prop_assert!(s == 0.0 || (s - target).abs() <= 1e-4 * target);
        }
    }

    #[test]
    fn poisson_encoding_is_seed_deterministic(seed in any::<u64>(), batch in 1usize..4) {
        let px = random_tensor(&Rng::new(seed ^ 1), &[batch, 30], 0.0, 255.0);
        let a: TimeSeries<f32> = poisson_encode(&px, 40.0, 1.0, Rng::new(seed)).unwrap();
        let b: TimeSeries<f32> = poisson_encode(&px, 40.0, 1.0, Rng::new(seed)).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.data().iter().all(|&s| s == 0.0 || s == 1.0));
        // Sample b of a batch equals a lone sample on stream b.
        let last = batch - 1;
        let single: TimeSeries<f32> = poisson_encode(&px.select(last), 40.0, 1.0, Rng::new(seed).offset(last as u64)).unwrap();
        prop_assert_eq!(single, a.select(last));
    }

    #[test]
    fn snnw_round_trips(seed in any::<u64>(), sizes in proptest::collection::vec(1usize..12, 2..5)) {
        let rng = Rng::new(seed);
        let layers: Vec<DenseLayer<f32>> = sizes
            .windows(2)
            .enumerate()
            .map(|(k, p)| {
                let w = random_tensor(&rng.fork(k as u64), &[1, p[0] * p[1]], -2.0, 2.0).into_vec();
                let bias = random_tensor(&rng.fork(100 + k as u64), &[1, p[1]], -1.0, 1.0).into_vec();
                DenseLayer::new(Matrix::from_vec(p[0], p[1], w).unwrap(), bias).unwrap()
            })
            .collect();
        let bytes = encode_snnw(&layers).unwrap();
        let shapes: Vec<[usize; 2]> = sizes.windows(2).map(|p| [p[0], p[1]]).collect();
        prop_assert_eq!(bytes.len(), encoded_len(&shapes));
        let back: Vec<DenseLayer<f32>> = decode_snnw(&bytes).unwrap();
        prop_assert_eq!(back.len(), layers.len());
        for (a, b) in back.iter().zip(&layers) {
            prop_assert_eq!(&a.weights, &b.weights);
            prop_assert_eq!(&a.bias, &b.bias);
        }
        for cut in [1, bytes.len() / 2, bytes.len() - 1] {
            prop_assert!(decode_snnw::<f32>(&bytes[..cut]).is_err());
        }
    }

    #[test]
    fn every_neuron_gets_one_label(seed in any::<u64>(), n in 1usize..20, examples in 1usize..40) {
        let mut g = Rng::new(seed).generator(0);
        let counts: Vec<f64> = (0..n * examples).map(|_| g.random_range(0..5) as f64).collect();
        let labels: Vec<u8> = (0..examples).map(|_| g.random_range(0..10)).collect();
        let a = assign_labels(&counts, &labels, n).unwrap();
        prop_assert_eq!(a.labels.len(), n);
        prop_assert!(a.labels.iter().all(|&l| l < CLASSES));
    }

    #[test]
    fn pgm_is_min_max_scaled(seed in any::<u64>(), rows in 1usize..8, cols in 1usize..8) {
        let m = Matrix::from_vec(rows, cols, random_tensor(&Rng::new(seed), &[1, rows * cols], -3.0, 3.0).into_vec()).unwrap();
        let bytes = pgm_bytes(&m);
        let header = format!("P5\n{cols} {rows}\n255\n");
        prop_assert!(bytes.starts_with(header.as_bytes()));
        let px = &bytes[header.len()..];
        prop_assert_eq!(px.len(), rows * cols);
        if rows * cols > 1 {
            prop_assert_eq!(*px.iter().min().unwrap(), 0);
            prop_assert_eq!(*px.iter().max().unwrap(), 255);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn post_only_weights_never_decrease(seed in any::<u64>(), batch in 1usize..4) {
        let rng = Rng::new(seed);
        let w0 = Matrix::filled(20, 6, 0.2f32);
        let conn = Connection::new(w0)
            .with_bounds(0.0, 1.0)
            .unwrap()
            .with_rule(StdpRule::post_only(0.01), 20.0, Reduction::Max);
        let mut net = Net::new(1.0);
        net.add_group("input", InputGroup::new(20)).unwrap();
        net.add_group("out", AdaptiveLifGroup::diehl_cook(6)).unwrap();
        net.connect("in->out", "input", "out", conn).unwrap();
        net.add_monitor("w", MonitorTarget::Weights { connection: "in->out".into() }).unwrap();
        let px = BatchedTensor::filled(&[batch, 20], 255.0f32);
        let src = PoissonSource::from_pixels(&px, 1.0, rng).unwrap();
        let rec = net.run(&[("input", &src)], 60.0).unwrap();
        let w = rec.get("w").unwrap();
        for t in 1..w.steps() {
            for (a, b) in w.step(t - 1).iter().zip(w.step(t)) {
                prop_assert!(b >= a);
            }
        }
    }

    #[test]
    fn reset_restores_a_fresh_state_fingerprint(seed in any::<u64>()) {
        let fingerprint = |net: &Net| {
            let g = net.group("out").unwrap();
            let mut v: Vec<f32> = g.variable(Variable::Voltage).unwrap().1.to_vec();
            v.extend(g.spikes().data());
            v.extend(net.connection("in->out").unwrap().traces().unwrap().x_post.data());
            v
        };
        let build = || {
            let mut net = Net::new(1.0);
            net.add_group("input", InputGroup::new(10)).unwrap();
            net.add_group("out", AdaptiveLifGroup::diehl_cook(4)).unwrap();
            let conn = Connection::new(Matrix::filled(10, 4, 0.5f32))
                .with_rule(StdpRule::post_only(0.01), 20.0, Reduction::Sum);
            net.connect("in->out", "input", "out", conn).unwrap();
            net.set_batch_size(2).unwrap();
            net
        };
        let fresh = fingerprint(&build());
        let mut net = build();
        let src = PoissonSource::from_pixels(&BatchedTensor::filled(&[2, 10], 255.0f32), 1.0, Rng::new(seed)).unwrap();
        net.run(&[("input", &src)], 50.0).unwrap();
        net.reset_episode();
        prop_assert_eq!(fingerprint(&net), fresh);
    }
}

#[test]
fn reduction_oracle_over_random_small_tensors() {
    let rng = Rng::new(2024);
    for k in 0..1000u64 {
        let mut g = rng.generator(k);
        let (b, r, c) = (g.random_range(1..5), g.random_range(1..4), g.random_range(1..4));
        let d = random_tensor(&rng.fork(k), &[b, r, c], -1.0, 1.0);
        for method in [Reduction::Mean, Reduction::Sum, Reduction::Max] {
            let got = reduce_batch(&d, method).unwrap();
            for e in 0..r * c {
                let column = (0..b).map(|s| d.sample(s)[e]);
                let want = match method {
                    Reduction::Sum => column.sum::<f32>(),
                    Reduction::Mean => column.sum::<f32>() / b as f32,
                    Reduction::Max => column.fold(f32::NEG_INFINITY, f32::max),
                };
                assert!((got.data()[e] - want).abs() <= 1e-6, "{method:?} case {k}");
            }
        }
    }
}

#[test]
fn csv_rows_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/rows.csv");
    let rows = vec![(1u32, 0.5f64, "a".to_string()), (2, -1.25, "b".into())];
    emit_csv(&path, &["k", "x", "tag"], &rows).unwrap();
    let mut rdr = csv::Reader::from_path(&path).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["k", "x", "tag"]);
    let back: Vec<(u32, f64, String)> = rdr.deserialize().map(|r| r.unwrap()).collect();
    assert_eq!(back, rows);

    let empty: Vec<(u32,)> = Vec::new();
    emit_csv(&path, &["k"], &empty).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "k\n");
}
