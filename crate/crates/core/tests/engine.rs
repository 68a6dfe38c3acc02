use batchsnn::encoding::{poisson_encode_rates, uniform_rates, PoissonSource};
use batchsnn::experiments::scaling::scaling_network;
use batchsnn::{
    BatchedTensor, InputGroup, LifGroup, LifParams, MonitorTarget, Net, Propagation, Rng,
    SimulationMode, SnnError, SubtractiveIfGroup, TimeSeries, Variable,
};
use batchsnn::topology::Connection;
use batchsnn::Matrix;

fn spike_monitor(net: &mut Net) {
    net.add_monitor(
        "out",
        MonitorTarget::Group {
            group: "output".into(),
            variable: Variable::Spikes,
        },
    )
    .unwrap();
}

#[test]
fn silent_input_gives_no_spikes_and_no_learning() {
    let mut net = scaling_network::<f32>(1000, true, 1.0, &Rng::new(1)).unwrap();
    spike_monitor(&mut net);
    let w0 = net.connection("input->output").unwrap().weights().clone();
    let zeros = BatchedTensor::<f32>::zeros(&[2, 100]);
    let src = PoissonSource::from_rates(&zeros, 1.0, Rng::new(2)).unwrap();
    let rec = net.run(&[("input", &src)], 200.0).unwrap();
    assert!(rec.get("out").unwrap().data().iter().all(|&s| s == 0.0));
    assert_eq!(net.connection("input->output").unwrap().weights(), &w0);
}

#[test]
fn batched_run_matches_serial_runs() {
    let rng = Rng::new(5).with_stream(100);
    let rates = uniform_rates::<f32>(4, 100, 120.0, &Rng::new(6)).unwrap();
    let mut net = scaling_network::<f32>(300, false, 1.0, &Rng::new(7)).unwrap();
    spike_monitor(&mut net);
    let src = PoissonSource::from_rates(&rates, 1.0, rng).unwrap();
    let batched = net.run(&[("input", &src)], 300.0).unwrap().get("out").unwrap().clone();
    assert!(batched.data().contains(&1.0));
    for b in 0..4 {
        let single = PoissonSource::from_rates(&rates.select(b), 1.0, rng.offset(b as u64)).unwrap();
        let serial = net.run(&[("input", &single)], 300.0).unwrap();
        assert_eq!(serial.get("out").unwrap(), &batched.select(b), "sample {b}");
    }
}

#[test]
fn monitor_shape_follows_steps_batch_and_size() {
    let mut net = scaling_network::<f32>(1000, false, 1.0, &Rng::new(1)).unwrap();
    spike_monitor(&mut net);
    let rates = uniform_rates::<f32>(3, 100, 120.0, &Rng::new(2)).unwrap();
    let src = PoissonSource::from_rates(&rates, 1.0, Rng::new(3)).unwrap();
    let rec = net.run(&[("input", &src)], 1000.0).unwrap();
    assert_eq!(rec.get("out").unwrap().shape(), [1000, 3, 1000]);
    assert_eq!(net.steps_elapsed(), 1000);
    assert_eq!(net.monitor("out").unwrap().recording().steps(), 1000);
}

#[test]
fn half_step_time_is_rejected() {
    let mut net = scaling_network::<f32>(10, false, 1.0, &Rng::new(1)).unwrap();
    let src = PoissonSource::from_rates(&BatchedTensor::zeros(&[1, 100]), 1.0, Rng::new(1)).unwrap();
    assert!(matches!(net.run(&[("input", &src)], 2.5), Err(SnnError::Domain(_))));
}

#[test]
fn reset_keeps_weights_and_reproduces_episode() {
    let mut net = scaling_network::<f32>(200, true, 1.0, &Rng::new(1)).unwrap();
    spike_monitor(&mut net);
    let rates = uniform_rates::<f32>(2, 100, 120.0, &Rng::new(2)).unwrap();
    let src = PoissonSource::from_rates(&rates, 1.0, Rng::new(3)).unwrap();
    net.run(&[("input", &src)], 100.0).unwrap();
    let w = net.connection("input->output").unwrap().weights().clone();
    net.reset_episode();
    assert_eq!(net.connection("input->output").unwrap().weights(), &w);
    assert_eq!(net.monitor("out").unwrap().recording().steps(), 0);
    let lif = net.group_as::<LifGroup<f32>>("output").unwrap();
    assert!(lif.voltage().data().iter().all(|&v| v == -65.0));
    assert!(lif.refractory().data().iter().all(|&r| r == 0.0));
    assert!(net.connection("input->output").unwrap().traces().unwrap().x_pre.data().iter().all(|&x| x == 0.0));

    net.set_learning(false);
    let a = net.run(&[("input", &src)], 100.0).unwrap();
    let b = net.run(&[("input", &src)], 100.0).unwrap();
    assert_eq!(a.get("out").unwrap(), b.get("out").unwrap());
}

#[test]
fn continuing_mode_carries_state_across_runs() {
    let rates = uniform_rates::<f32>(2, 100, 120.0, &Rng::new(2)).unwrap();
    let whole = poisson_encode_rates(&rates, 200.0, 1.0, Rng::new(3)).unwrap();
    let first = whole.window(0, 120).unwrap();
    let second = whole.window(120, 200).unwrap();

    let mut episodic = scaling_network::<f32>(150, false, 1.0, &Rng::new(4)).unwrap();
    spike_monitor(&mut episodic);
    let full = episodic.run(&[("input", &whole)], 200.0).unwrap();

    let mut cont = scaling_network::<f32>(150, false, 1.0, &Rng::new(4))
        .unwrap()
        .with_mode(SimulationMode::Continuing);
    spike_monitor(&mut cont);
    let a = cont.run(&[("input", &first)], 120.0).unwrap();
    let b = cont.run(&[("input", &second)], 80.0).unwrap();
    assert_eq!(a.get("out").unwrap(), &full.get("out").unwrap().window(0, 120).unwrap());
    assert_eq!(b.get("out").unwrap(), &full.get("out").unwrap().window(120, 200).unwrap());
    assert_eq!(cont.monitor("out").unwrap().recording(), full.get("out").unwrap());

    // The same split in episodic mode restarts from rest and differs.
    let restarted = episodic.run(&[("input", &second)], 80.0).unwrap();
    assert_ne!(restarted.get("out").unwrap(), b.get("out").unwrap());
}

#[test]
fn batch_size_follows_the_input() {
    let mut net = scaling_network::<f32>(50, true, 1.0, &Rng::new(1)).unwrap();
    let w_init = net.connection("input->output").unwrap().weights().clone();
    for batch in [3, 1, 7] {
        let rates = uniform_rates::<f32>(batch, 100, 120.0, &Rng::new(batch as u64)).unwrap();
        let src = PoissonSource::from_rates(&rates, 1.0, Rng::new(9)).unwrap();
        net.run(&[("input", &src)], 50.0).unwrap();
        assert_eq!(net.batch_size(), batch);
        for name in net.group_names() {
            assert_eq!(net.group(name).unwrap().batch_size(), batch);
        }
    }
    assert_ne!(net.connection("input->output").unwrap().weights(), &w_init);
    assert!(matches!(net.set_batch_size(0), Err(SnnError::Domain(_))));
}

#[test]
fn mismatched_input_batches_are_rejected() {
    let mut net = Net::new(1.0);
    net.add_group("a", InputGroup::new(3)).unwrap();
    net.add_group("b", InputGroup::new(3)).unwrap();
    let x = TimeSeries::<f32>::zeros(5, 2, 3);
    let y = TimeSeries::<f32>::zeros(5, 4, 3);
    assert!(matches!(
        net.run(&[("a", &x), ("b", &y)], 5.0),
        Err(SnnError::Dimension { .. })
    ));
    let short = TimeSeries::<f32>::zeros(4, 2, 3);
    assert!(net.run(&[("a", &short)], 5.0).is_err());
    assert!(matches!(net.run(&[("nope", &x)], 5.0), Err(SnnError::NotFound { .. })));
}

#[test]
fn memory_report_is_linear_in_batch() {
    let mut net = scaling_network::<f32>(1000, true, 1.0, &Rng::new(1)).unwrap();
    net.set_batch_size(32).unwrap();
    let r32 = net.memory_report();
    assert_eq!(r32.trace_state, 32 * (100 + 1000) * 4);
    assert_eq!(r32.synapse_state, 0);
    net.set_batch_size(64).unwrap();
    let r64 = net.memory_report();
    assert_eq!(r64.neuron_state, 2 * r32.neuron_state);
    assert_eq!(r64.batched_state(), 2 * r32.batched_state());
    assert_eq!(r64.shared_parameters, r32.shared_parameters);
    assert_eq!(r64.shared_parameters, 100 * 1000 * 4);
    assert_eq!(r64.update_buffers, r32.update_buffers);
    for b in [1, 5, 13] {
        net.set_batch_size(b).unwrap();
        assert_eq!(net.memory_report().batched_state() * 64, r64.batched_state() * b);
    }
}

#[test]
fn weights_change_during_a_run() {
    let mut net = scaling_network::<f32>(100, true, 1.0, &Rng::new(1)).unwrap();
    net.add_monitor(
        "w",
        MonitorTarget::Weights {
            connection: "input->output".into(),
        },
    )
    .unwrap();
    let rates = uniform_rates::<f32>(2, 100, 120.0, &Rng::new(2)).unwrap();
    let src = PoissonSource::from_rates(&rates, 1.0, Rng::new(3)).unwrap();
    let rec = net.run(&[("input", &src)], 100.0).unwrap();
    let w = rec.get("w").unwrap();
    let changed = (1..w.steps()).filter(|&t| w.step(t) != w.step(t - 1)).count();
    assert!(changed > 10, "weights changed on only {changed} steps");
}

#[test]
fn frozen_learning_never_touches_weights() {
    let mut net = scaling_network::<f32>(100, true, 1.0, &Rng::new(1)).unwrap();
    net.set_learning(false);
    let w = net.connection("input->output").unwrap().weights().clone();
    let rates = uniform_rates::<f32>(4, 100, 120.0, &Rng::new(2)).unwrap();
    let src = PoissonSource::from_rates(&rates, 1.0, Rng::new(3)).unwrap();
    net.run(&[("input", &src)], 200.0).unwrap();
    assert_eq!(net.connection("input->output").unwrap().weights(), &w);
}

#[test]
fn non_finite_state_reports_the_step() {
    let mut net = Net::new(1.0);
    net.add_group("output", LifGroup::new(2, LifParams::default())).unwrap();
    let mut data = vec![0.0f32; 10 * 2];
    data[6 * 2 + 1] = f32::NAN;
    let x = TimeSeries::from_vec(10, 1, 2, data).unwrap();
    match net.run(&[("output", &x)], 10.0) {
        Err(SnnError::Numeric { step, what }) => {
            assert_eq!(step, 6);
            assert!(what.contains("output"));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn delayed_and_immediate_propagation() {
    // input -> a -> b, all weights 1, IF neurons firing on any unit input.
    let build = |p: Propagation| {
        let mut net = Net::new(1.0).with_propagation(p);
        net.add_group("input", InputGroup::new(1)).unwrap();
        net.add_group("a", SubtractiveIfGroup::new(1)).unwrap();
        net.add_group("b", SubtractiveIfGroup::new(1)).unwrap();
        let one = || Connection::new(Matrix::from_rows(&[[1.0f32]]).unwrap());
        net.connect("ia", "input", "a", one()).unwrap();
        net.connect("ab", "a", "b", one()).unwrap();
        net.add_monitor(
            "b",
            MonitorTarget::Group {
                group: "b".into(),
                variable: Variable::Spikes,
            },
        )
        .unwrap();
        net
    };
    let mut pulse = vec![0.0f32; 5];
    pulse[0] = 1.0;
    let x = TimeSeries::from_vec(5, 1, 1, pulse).unwrap();
    let mut delayed = build(Propagation::Delayed);
    let rec = delayed.run(&[("input", &x)], 5.0).unwrap();
    assert_eq!(rec.get("b").unwrap().data(), &[0.0, 0.0, 1.0, 0.0, 0.0]);
    let mut immediate = build(Propagation::Immediate);
    let rec = immediate.run(&[("input", &x)], 5.0).unwrap();
    assert_eq!(rec.get("b").unwrap().data(), &[1.0, 0.0, 0.0, 0.0, 0.0]);
}

#[test]
fn duplicate_and_unknown_names() {
    let mut net = Net::new(1.0);
    net.add_group("a", InputGroup::new(2)).unwrap();
    assert!(net.add_group("a", InputGroup::new(2)).is_err());
    let w = Matrix::<f32>::zeros(3, 2);
    net.add_group("b", InputGroup::new(2)).unwrap();
    assert!(matches!(
        net.connect("ab", "a", "b", Connection::new(w)),
        Err(SnnError::Dimension { .. })
    ));
    assert!(net.group("zzz").is_err());
    assert!(net
        .add_monitor(
            "m",
            MonitorTarget::Group {
                group: "zzz".into(),
                variable: Variable::Spikes
            }
        )
        .is_err());
}

#[test]
fn toml_description_builds_a_runnable_network() {
    let text = r#"
dt = 1.0
propagation = "delayed"

[[group]]
name = "input"
kind = "input"
size = 100

[[group]]
name = "output"
kind = "lif"
size = 1000

[[connection]]
pre = "input"
post = "output"
init = { kind = "normal", mean = 0.1, std = 0.01 }
stdp = { variant = "pair", eta_pre = 0.0001, eta_post = 0.01, tc_trace = 20.0 }
reduction = "mean"

[[monitor]]
name = "out_spikes"
group = "output"
variable = "spikes"
"#;
    let mut net = batchsnn::NetworkConfig::from_toml(text).unwrap().build::<f32>().unwrap();
    assert!(net.connection("input->output").unwrap().is_plastic());
    let rates = uniform_rates::<f32>(2, 100, 120.0, &Rng::new(1)).unwrap();
    let src = PoissonSource::from_rates(&rates, 1.0, Rng::new(2)).unwrap();
    let rec = net.run(&[("input", &src)], 50.0).unwrap();
    assert_eq!(rec.get("out_spikes").unwrap().shape(), [50, 2, 1000]);
}
