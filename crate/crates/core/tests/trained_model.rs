//! Integration checks on a single trained four-rooms model: reconstruction
//! quality, geodesic self-consistency, and variance-head behavior off the
//! data manifold. The bundle is trained once and shared across tests.

use std::sync::OnceLock;

use gelato_core::dataset::Dataset;
use gelato_core::geometry::{estimate_geodesic, DecoderField, GeodesicConfig};
use gelato_core::gridworld::{BehaviorPolicy, FourRooms};
use gelato_core::latent::{
    train, LatentModelBundle, ModelConfig, PhaseTwoMode, TrainConfig, SIGMA_MIN,
};
use gelato_core::rng::derive_rng;
use rand::Rng;

struct Artifacts {
    dataset: Dataset,
    bundle: LatentModelBundle,
    codes: Vec<Vec<f64>>,
}

fn artifacts() -> &'static Artifacts {
    static CELL: OnceLock<Artifacts> = OnceLock::new();
    CELL.get_or_init(|| {
        let env = FourRooms::default_layout();
        let dataset = env
            .generate_dataset(4000, BehaviorPolicy::UniformRandom, 100, 17)
            .unwrap();
        let model_cfg = ModelConfig {
            hidden: vec![64, 64],
            coupling_hidden: vec![64],
            ..ModelConfig::default()
        };
        let train_cfg = TrainConfig {
            seed: 17,
            batch_size: 64,
            steps_phase1: 2000,
            steps_phase2: 400,
            phase_two: PhaseTwoMode::Rbf,
            rbf_clusters: 64,
            ..TrainConfig::default()
        };
        let mut bundle = LatentModelBundle::new(model_cfg, 17).unwrap();
        train(&mut bundle, &dataset, &train_cfg).unwrap();
        let codes = dataset
            .transitions
            .iter()
            .map(|tr| bundle.embed_state(&tr.state).unwrap().mu)
            .collect();
        Artifacts {
            dataset,
            bundle,
            codes,
        }
    })
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Uniform probes in an expanded box around the codes, kept only when at
/// least `factor` median nearest-neighbor radii away from every code.
fn off_manifold_probes(codes: &[Vec<f64>], count: usize, factor: f64, seed: u64) -> Vec<Vec<f64>> {
    let d = codes[0].len();
    let mut nn = Vec::with_capacity(codes.len());
    for (i, a) in codes.iter().enumerate() {
        let mut best = f64::INFINITY;
        for (j, b) in codes.iter().enumerate() {
            if i != j {
                best = best.min(l2(a, b));
            }
        }
        nn.push(best);
    }
    nn.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let radius = factor * nn[nn.len() / 2];
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for c in codes {
        for k in 0..d {
            lo[k] = lo[k].min(c[k]);
            hi[k] = hi[k].max(c[k]);
        }
    }
    let mut rng = derive_rng(seed, "off-manifold-probes");
    let mut probes = Vec::with_capacity(count);
    while probes.len() < count {
        let z: Vec<f64> = (0..d)
            .map(|k| {
                let span = hi[k] - lo[k];
                rng.gen_range(lo[k] - span..hi[k] + span)
            })
            .collect();
        if codes.iter().all(|c| l2(c, &z) >= radius) {
            probes.push(z);
        }
    }
    probes
}

#[test]
fn reconstruction_rmse_is_below_grid_scale() {
    let art = artifacts();
    let mut sum_sq = 0.0;
    let mut count = 0;
    for tr in &art.dataset.transitions {
        let z = art.bundle.embed_state(&tr.state).unwrap().mu;
        let recon = art.bundle.decode(&z).unwrap().mu;
        for (a, b) in recon.iter().zip(&tr.state) {
            sum_sq += (a - b) * (a - b);
            count += 1;
        }
    }
    let rmse = (sum_sq / count as f64).sqrt();
    assert!(rmse < 0.05, "reconstruction RMSE {rmse}");
}

#[test]
fn geodesic_distance_is_approximately_symmetric() {
    let art = artifacts();
    let field = DecoderField::new(&art.bundle);
    // The right-rule quadrature includes t=1 but not t=0, so reversing a
    // curve shifts the sample set by O(1/grid); a finer grid keeps that
    // discretization bias well below the symmetry tolerance.
    let cfg = GeodesicConfig {
        grid: 40,
        ..GeodesicConfig::default()
    };
    let mut rng = derive_rng(23, "symmetry-pairs");
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let a = &art.codes[rng.gen_range(0..art.codes.len())];
        let b = &art.codes[rng.gen_range(0..art.codes.len())];
        let forward = estimate_geodesic(a, b, &field, &cfg).unwrap().distance;
        let backward = estimate_geodesic(b, a, &field, &cfg).unwrap().distance;
        if forward == 0.0 {
            assert_eq!(backward, 0.0);
            continue;
        }
        worst = worst.max((forward - backward).abs() / forward);
    }
    assert!(worst < 0.02, "worst relative asymmetry {worst}");
}

#[test]
fn rbf_sigma_grows_off_the_data_manifold() {
    let art = artifacts();
    let probes = off_manifold_probes(&art.codes, 200, 3.0, 29);
    let mean_sigma = |points: &[Vec<f64>]| {
        points
            .iter()
            .map(|z| {
                let s = art.bundle.decoder_sigma(z).unwrap();
                s.iter().sum::<f64>() / s.len() as f64
            })
            .sum::<f64>()
            / points.len() as f64
    };
    let on = mean_sigma(&art.codes);
    let off = mean_sigma(&probes);
    assert!(
        off > on,
        "off-manifold sigma {off} not above on-manifold {on}"
    );
}

#[test]
fn decoder_sigma_never_dips_below_the_floor() {
    let art = artifacts();
    let probes = off_manifold_probes(&art.codes, 100, 3.0, 31);
    for z in art.codes.iter().chain(&probes) {
        for s in art.bundle.decoder_sigma(z).unwrap() {
            assert!(s >= SIGMA_MIN - 1e-12);
        }
    }
}

#[test]
fn reward_samples_match_their_mean() {
    let art = artifacts();
    let tr = &art.dataset.transitions[0];
    let z = art.bundle.embed_state(&tr.state).unwrap().mu;
    let e = art.bundle.embed_state_action(&z, &tr.action).unwrap();
    let params = art.bundle.predict_reward(&e).unwrap();
    let n = 100_000;
    let mut rng = derive_rng(37, "reward-draws");
    let mut sum = 0.0;
    for _ in 0..n {
        sum += params.sample(&mut rng)[0];
    }
    let mean = sum / n as f64;
    let bound = 4.0 * params.sigma[0] / (n as f64).sqrt();
    assert!(
        (mean - params.mu[0]).abs() < bound,
        "empirical mean {mean} vs {} (bound {bound})",
        params.mu[0]
    );
}
