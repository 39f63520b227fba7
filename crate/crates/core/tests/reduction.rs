use nalgebra::DMatrix;
use onsager::nets::{OdeNet, OnsagerConfig, OnsagerNet};
use onsager::reduce::{isometric_loss, pca_fit, Autoencoder, AutoencoderConfig, ReduceError, Reducer};
use onsager::systems::SnapshotPair;
use onsager::tensor::Activation;
use onsager::train::{evaluate, ode_loss, EndToEnd, LossConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn orthonormal_columns(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DMatrix<f64> {
    let raw = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    raw.qr().q().columns(0, k).into_owned()
}

/// Samples `Σ cᵢ sᵢ qᵢ + shift` with decreasing scales `sᵢ`.
fn subspace_cloud(rng: &mut ChaCha8Rng, q: &DMatrix<f64>, scales: &[f64], n: usize) -> Vec<Vec<f64>> {
    let shift: Vec<f64> = (0..q.nrows()).map(|_| rng.random_range(-1.0..1.0)).collect();
    (0..n)
        .map(|_| {
            let mut u = shift.clone();
            for (j, s) in scales.iter().enumerate() {
                let c = s * rng.random_range(-1.0..1.0);
                for (i, ui) in u.iter_mut().enumerate() {
                    *ui += c * q[(i, j)];
                }
            }
            u
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pca_components_are_orthonormal_and_ordered(seed in 0u64..10_000, n in 4usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..n).map(|j| rng.random_range(-1.0..1.0) * (1.0 + j as f64)).collect())
            .collect();
        let m = 3;
        let pca = pca_fit(&data, m).unwrap();
        for a in 0..m {
            for b in 0..m {
                let dot: f64 = pca.components.row_slice(a).iter().zip(pca.components.row_slice(b)).map(|(x, y)| x * y).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                prop_assert!((dot - want).abs() < 1e-10);
            }
        }
        prop_assert!(pca.singular_values.windows(2).all(|w| w[0] >= w[1]));
        let total: f64 = pca.variance_fractions.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        let mean_code: Vec<f64> = (0..m)
            .map(|i| data.iter().map(|u| pca.encode(u).unwrap()[i]).sum::<f64>() / data.len() as f64)
            .collect();
        prop_assert!(mean_code.iter().all(|c| c.abs() < 1e-10));
    }

    #[test]
    fn pca_embedding_of_subspace_data_is_isometric(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = orthonormal_columns(&mut rng, 9, 3);
        let data = subspace_cloud(&mut rng, &q, &[3.0, 2.0, 1.0], 30);
        let pca = pca_fit(&data, 3).unwrap();
        for pair in data.windows(2) {
            let loss = isometric_loss(|u| pca.encode(u), &pair[0], &pair[1]).unwrap();
            prop_assert!(loss < 1e-10, "ℓ_iso = {}", loss);
            let back = pca.decode(&pca.encode(&pair[0]).unwrap()).unwrap();
            let err: f64 = back.iter().zip(&pair[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(err < 1e-10);
        }
    }
}

#[test]
fn orthogonal_maps_have_zero_isometric_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let q = orthonormal_columns(&mut rng, 6, 6);
    let rotate = |u: &[f64]| -> Result<Vec<f64>, ReduceError> {
        Ok((0..6).map(|i| (0..6).map(|j| q[(j, i)] * u[j]).sum()).collect())
    };
    for _ in 0..20 {
        let u1: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let u2: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        assert!(isometric_loss(rotate, &u1, &u2).unwrap() < 1e-10);
    }
}

#[test]
fn pca_rejects_more_components_than_rank() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let q = orthonormal_columns(&mut rng, 8, 2);
    let data = subspace_cloud(&mut rng, &q, &[1.0, 0.5], 25);
    assert!(matches!(
        pca_fit(&data, 3),
        Err(ReduceError::RankDeficient { requested: 3, rank: 2 })
    ));
}

fn e2e_fixture() -> (EndToEnd, Vec<SnapshotPair>) {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut ncfg = OnsagerConfig::small_unforced(2);
    ncfg.activation = Activation::Tanh;
    ncfg.a_init_scale = 1.0;
    let net = OdeNet::Onsager(OnsagerNet::new(&ncfg, &mut rng));
    let ae = Autoencoder::new(
        &AutoencoderConfig {
            ambient_dim: 6,
            latent_dim: 2,
            hidden: None,
            activation: Activation::Tanh,
        },
        &mut rng,
    );
    let pairs = (0..9)
        .map(|k| {
            let h1: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let h2 = h1.iter().map(|x| x + 0.05 * rng.random_range(-1.0..1.0)).collect();
            SnapshotPair {
                traj_id: k,
                t1: 0.0,
                h1,
                h2,
            }
        })
        .collect();
    (EndToEnd { net, autoencoder: ae }, pairs)
}

fn encoded(ae: &Autoencoder, pairs: &[SnapshotPair]) -> Vec<SnapshotPair> {
    pairs
        .iter()
        .map(|p| SnapshotPair {
            h1: ae.encode(&p.h1).unwrap(),
            h2: ae.encode(&p.h2).unwrap(),
            ..p.clone()
        })
        .collect()
}

#[test]
fn e2e_without_ae_terms_is_the_latent_ode_loss() {
    let (model, pairs) = e2e_fixture();
    let refs: Vec<&SnapshotPair> = pairs.iter().collect();
    let cfg = LossConfig {
        tau: 0.05,
        n_s: 2,
        beta_ae: 0.0,
        beta_iso: 0.0,
        alpha_iso: 0.3,
    };
    let e2e = evaluate(&model, &refs, &cfg).unwrap();
    let latent = encoded(&model.autoencoder, &pairs);
    let latent_refs: Vec<&SnapshotPair> = latent.iter().collect();
    let ode = ode_loss(&model.net, &latent_refs, 0.05, 2).unwrap();
    assert_eq!(e2e, ode);
}

#[test]
fn e2e_matches_term_by_term_oracle() {
    let (model, pairs) = e2e_fixture();
    let refs: Vec<&SnapshotPair> = pairs.iter().collect();
    let (tau, beta_ae, beta_iso, alpha_iso) = (0.05, 0.7, 0.4, 0.01);
    let cfg = LossConfig {
        tau,
        n_s: 1,
        beta_ae,
        beta_iso,
        alpha_iso,
    };
    let ae = &model.autoencoder;
    let latent = encoded(ae, &pairs);
    let oracle: f64 = pairs
        .iter()
        .zip(&latent)
        .map(|(p, z)| {
            let ode = ode_loss(&model.net, &[z], tau, 1).unwrap();
            let rec = ae.reconstruction_error(&p.h1).unwrap() + ae.reconstruction_error(&p.h2).unwrap();
            let iso = isometric_loss(|u| ae.encode(u), &p.h1, &p.h2).unwrap();
            ode + beta_ae * rec + beta_iso * (iso - alpha_iso).max(0.0)
        })
        .sum::<f64>()
        / pairs.len() as f64;
    let e2e = evaluate(&model, &refs, &cfg).unwrap();
    assert!(
        (e2e - oracle).abs() < 1e-12 * oracle.abs().max(1.0),
        "{e2e} vs {oracle}"
    );
}
