use onsager::nets::{OdeNet, OnsagerConfig, OnsagerNet};
use onsager::systems::{generate_dataset, BenchmarkSystem, DatasetConfig, SnapshotPair};
use onsager::tensor::Tensor;
use onsager::train::{
    evaluate, fit, loss_and_grad, ode_loss, Adam, Batch, LossConfig, OptimizerKind, TrainConfig, TrainError,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent scalar Adam/AMSGrad on `f(w) = w²`; returns `w` after each step.
fn scalar_adam_trace(w0: f64, lr: f64, steps: usize, amsgrad: bool) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut w, mut m, mut v, mut vmax) = (w0, 0.0, 0.0, 0.0f64);
    let mut out = Vec::new();
    for t in 1..=steps {
        let g = 2.0 * w;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1.powi(t as i32));
        let mut v_hat = v / (1.0 - b2.powi(t as i32));
        if amsgrad {
            vmax = vmax.max(v_hat);
            v_hat = vmax;
        }
        w -= lr * m_hat / (v_hat.sqrt() + eps);
        out.push(w);
    }
    out
}

#[test]
fn adam_matches_scalar_oracle() {
    for (kind, ams) in [(OptimizerKind::Adam, false), (OptimizerKind::AmsGrad, true)] {
        let expected = scalar_adam_trace(1.0, 0.1, 5, ams);
        let mut w = Tensor::row(&[1.0]);
        let mut opt = Adam::new(kind, &[1]);
        for want in expected {
            let g = Tensor::row(&[2.0 * w.data()[0]]);
            opt.step(&mut [&mut w], &[g], 0.1);
            assert!(
                (w.data()[0] - want).abs() < 1e-12,
                "{kind:?}: {} vs {want}",
                w.data()[0]
            );
        }
        assert_eq!(opt.steps(), 5);
    }
}

fn pendulum_data(n_traj: usize) -> onsager::systems::SnapshotDataset {
    let cfg = DatasetConfig {
        n_traj,
        snapshots_per_traj: 20,
        ..Default::default()
    };
    generate_dataset(&BenchmarkSystem::pendulum(), &cfg, 3).unwrap()
}

fn small_net(seed: u64) -> OdeNet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    OdeNet::Onsager(OnsagerNet::new(&OnsagerConfig::small_unforced(2), &mut rng))
}

#[test]
fn zero_epochs_leave_params_untouched() {
    let data = pendulum_data(5);
    let mut net = small_net(0);
    let before = net.clone();
    let cfg = TrainConfig {
        epochs: 0,
        ..Default::default()
    };
    let report = fit(&mut net, &data, &cfg).unwrap();
    assert!(report.history.is_empty());
    assert_eq!(net, before);
}

#[test]
fn fit_is_deterministic_for_a_seed() {
    let data = pendulum_data(5);
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 16,
        seed: 11,
        ..Default::default()
    };
    let mut a = small_net(1);
    let mut b = small_net(1);
    let ra = fit(&mut a, &data, &cfg).unwrap();
    let rb = fit(&mut b, &data, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra.history, rb.history);
    assert_eq!(ra.mse_test, rb.mse_test);
}

#[test]
fn parallel_gradients_match_serial_training() {
    let data = pendulum_data(5);
    let serial = TrainConfig {
        epochs: 3,
        batch_size: 32,
        ..Default::default()
    };
    let threaded = TrainConfig {
        threads: 3,
        ..serial.clone()
    };
    let mut a = small_net(2);
    let mut b = small_net(2);
    fit(&mut a, &data, &serial).unwrap();
    fit(&mut b, &data, &threaded).unwrap();
    for (x, y) in a.tensors().iter().zip(b.tensors()) {
        for (p, q) in x.data().iter().zip(y.data()) {
            assert!((p - q).abs() < 1e-9 * (1.0 + p.abs()));
        }
    }
}

#[test]
fn tau_mismatch_is_rejected() {
    let data = pendulum_data(5);
    let cfg = TrainConfig {
        tau: Some(0.01),
        ..Default::default()
    };
    let err = fit(&mut small_net(0), &data, &cfg).unwrap_err();
    assert!(matches!(err, TrainError::TauMismatch { .. }));
}

#[test]
fn tiny_step_decreases_batch_loss() {
    let data = pendulum_data(5);
    let pairs = data.train();
    let batch = Batch::from_pairs(&pairs[..32], (0..32).collect()).unwrap();
    let cfg = LossConfig::ode(data.tau, 1);
    for seed in 0..4 {
        let mut net = small_net(seed);
        let (before, grads) = loss_and_grad(&net, &batch, &cfg).unwrap();
        let mut opt = Adam::new(
            OptimizerKind::AmsGrad,
            &grads.iter().map(|g| g.len()).collect::<Vec<_>>(),
        );
        opt.step(&mut net.tensors_mut(), &grads, 1e-6);
        let (after, _) = loss_and_grad(&net, &batch, &cfg).unwrap();
        assert!(after < before, "seed {seed}: {after} >= {before}");
    }
}

#[test]
fn ode_loss_matches_per_pair_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let net = small_net(4);
    let tau = 0.01;
    let pairs: Vec<SnapshotPair> = (0..7)
        .map(|k| {
            let h1: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let h2 = h1.iter().map(|x| x + tau * rng.random_range(-1.0..1.0)).collect();
            SnapshotPair {
                traj_id: k,
                t1: 0.0,
                h1,
                h2,
            }
        })
        .collect();
    let refs: Vec<&SnapshotPair> = pairs.iter().collect();
    use onsager::VectorField;
    let heun = |h: &[f64]| {
        let k1 = net.eval(h);
        let mid: Vec<f64> = h.iter().zip(&k1).map(|(a, b)| a + tau * b).collect();
        let k2 = net.eval(&mid);
        h.iter()
            .zip(k1.iter().zip(&k2))
            .map(|(a, (p, q))| a + 0.5 * tau * (p + q))
            .collect::<Vec<f64>>()
    };
    let oracle: f64 = pairs
        .iter()
        .map(|p| {
            let pred = heun(&p.h1);
            p.h2.iter().zip(&pred).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (tau * tau)
        })
        .sum::<f64>()
        / pairs.len() as f64;
    let loss = ode_loss(&net, &refs, tau, 1).unwrap();
    assert!((loss - oracle).abs() < 1e-12 * oracle.max(1.0), "{loss} vs {oracle}");
    let via_eval = evaluate(&net, &refs, &LossConfig::ode(tau, 1)).unwrap();
    assert!((via_eval - oracle).abs() < 1e-12 * oracle.max(1.0));
}

#[test]
fn linear_decay_is_learned_to_high_precision() {
    // ḣ = −h; a width-1 OnsagerNet represents the data exactly, including
    // the one-step discretisation
    let sys = BenchmarkSystem::Linear {
        matrix: vec![vec![-1.0]],
    };
    let dcfg = DatasetConfig {
        n_traj: 10,
        snapshots_per_traj: 20,
        t_end: 2.0,
        tau: 0.01,
        ..Default::default()
    };
    let data = generate_dataset(&sys, &dcfg, 0).unwrap();
    assert_eq!(data.pairs.len(), 200);
    let mut ncfg = OnsagerConfig::small_unforced(1);
    ncfg.hidden_width = 1;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut net = OdeNet::Onsager(OnsagerNet::new(&ncfg, &mut rng));
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 10,
        seed: 1,
        ..Default::default()
    };
    let report = fit(&mut net, &data, &cfg).unwrap();
    let mse = report.mse_test.unwrap();
    assert!(mse < 1e-8, "MSE_test = {mse:e}");
}
