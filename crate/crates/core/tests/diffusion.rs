use poincare_opt::diffusion::{
    add_noise, energy_distance, generate_samples, train_epoch, DiffusionRun, LossKind, ToyDataset,
    TrainRunConfig,
};
use poincare_opt::geometry::ParamTensor;
use poincare_opt::nn::{Denoiser, NoiseModel, TimeEmbedding};
use poincare_opt::optim::{Optimizer, OptimizerConfig, OptimizerKind};
use poincare_opt::schedule::{DiffusionSchedule, SamplerKind};
use poincare_opt::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (m, xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64)
}

#[test]
fn add_noise_variance_monte_carlo() {
    let s = DiffusionSchedule::new(200, SamplerKind::Linear).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 100_000;
    for t in [5.0, 40.0, 150.0] {
        let noise = normals(&mut rng, n);
        let xt = add_noise(&vec![0.0; n], &vec![t; n], &s, &noise).unwrap();
        let expected = 1.0 - s.alpha_bar_at(t).unwrap();
        let (_, var) = mean_var(&xt);
        assert!((var / expected - 1.0).abs() < 0.02, "t={t}: {var} vs {expected}");
    }
}

/// Classic DDPM recursion with ε ≡ 0 at unit stride:
/// `x ← x/√α_t + σ_t z`, `σ_t² = β_t (1 − ᾱ_{t−1}) / (1 − ᾱ_t)`, no noise at t = 0.
fn zero_model_oracle(s: &DiffusionSchedule, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ab = s.alpha_bars();
    let mut x = normals(&mut rng, n);
    for t in (0..s.train_timesteps()).rev() {
        let beta = s.betas()[t];
        let alpha = 1.0 - beta;
        for v in x.iter_mut() {
            *v /= alpha.sqrt();
        }
        if t > 0 {
            let sigma = (beta * (1.0 - ab[t - 1]) / (1.0 - ab[t])).sqrt();
            for v in x.iter_mut() {
                *v += sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    x
}

#[test]
fn zero_predictor_moments_match_simulation() {
    let s = DiffusionSchedule::new(50, SamplerKind::Linear).unwrap();
    let model = Denoiser::zeros(2, &[4], TimeEmbedding::new(4, 1e4).unwrap()).unwrap();
    let n = 4000;
    let got = generate_samples(&model, &s, n, 50, 3).unwrap();
    let want = zero_model_oracle(&s, 2 * n, 99);
    let (gm, gv) = mean_var(&got);
    let (wm, wv) = mean_var(&want);
    assert!((gv / wv - 1.0).abs() < 0.05, "variance {gv} vs {wv}");
    assert!((gm - wm).abs() < 0.05 * wv.sqrt(), "mean {gm} vs {wm}");

    // exact variance of the same linear-Gaussian recursion, any stride
    for steps in [50, 10] {
        let grid = s.inference_timesteps(steps).unwrap();
        let mut var = 1.0;
        for (k, t) in grid.iter().enumerate() {
            let ab_t = s.alpha_bar_at(*t).unwrap();
            let ab_p = grid.get(k + 1).map_or(1.0, |p| s.alpha_bar_at(*p).unwrap());
            let alpha = ab_t / ab_p;
            var /= alpha;
            if k + 1 < grid.len() {
                var += (1.0 - alpha) * (1.0 - ab_p) / (1.0 - ab_t);
            }
        }
        let got = generate_samples(&model, &s, n, steps, 4).unwrap();
        let (_, gv) = mean_var(&got);
        assert!((gv / var - 1.0).abs() < 0.05, "steps {steps}: {gv} vs {var}");
    }
}

#[test]
fn energy_distance_separates_shifted_clouds() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = normals(&mut rng, 600);
    let shifted: Vec<f64> = a.iter().map(|x| x + 10.0).collect();
    let resampled = normals(&mut rng, 600);
    let far = energy_distance(&a, &shifted, 2).unwrap();
    let near = energy_distance(&a, &resampled, 2).unwrap();
    assert!(far > 10.0 && far > near, "{far} {near}");
    assert!(energy_distance(&a, &a, 2).unwrap() <= 1e-12);
}

#[test]
fn zero_model_epoch_loss_is_noise_power() {
    let cfg = TrainRunConfig {
        batch_size: 4000,
        n_points: 4000,
        ..TrainRunConfig::default()
    };
    let s = DiffusionSchedule::new(cfg.train_timesteps, cfg.t_sampler).unwrap();
    let data = ToyDataset::generate(cfg.dataset, cfg.n_points, 0).unwrap();
    let mut model = Denoiser::zeros(2, &[8], TimeEmbedding::new(8, 1e4).unwrap()).unwrap();
    let mut opt = Optimizer::new(OptimizerConfig::new(OptimizerKind::Sgd, 0.01)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let loss = train_epoch(&mut model, &data, &cfg, &s, &mut opt, &mut rng).unwrap();
    assert!((loss - 1.0).abs() < 0.1, "{loss}");
}

/// Knows the single training point, so it recovers the exact noise.
struct OracleModel {
    schedule: DiffusionSchedule,
    x0: [f64; 2],
    params: Vec<ParamTensor>,
    poison: bool,
}

impl NoiseModel for OracleModel {
    type Tape = ();

    fn data_dim(&self) -> usize {
        2
    }

    fn params(&self) -> &[ParamTensor] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [ParamTensor] {
        &mut self.params
    }

    fn forward_tape(&self, x: &[f64], t: &[f64]) -> Result<(Vec<f64>, ())> {
        if self.poison {
            return Ok((vec![f64::NAN; x.len()], ()));
        }
        let mut out = Vec::with_capacity(x.len());
        for (row, ti) in x.chunks(2).zip(t) {
            let ab = self.schedule.alpha_bar_at(*ti)?;
            for (v, c) in row.iter().zip(self.x0) {
                out.push((v - ab.sqrt() * c) / (1.0 - ab).sqrt());
            }
        }
        Ok((out, ()))
    }

    fn backward_tape(&self, _: &(), _: &[f64]) -> Result<Vec<ParamTensor>> {
        Ok(Vec::new())
    }
}

#[test]
fn exact_noise_predictor_has_zero_loss() {
    let s = DiffusionSchedule::new(100, SamplerKind::UnitHyperbola).unwrap();
    let x0 = [0.3, -0.2];
    let data = ToyDataset::from_points("single", x0.repeat(64), 0).unwrap();
    let mut model = OracleModel { schedule: s.clone(), x0, params: Vec::new(), poison: false };
    let mut opt = Optimizer::new(OptimizerConfig::new(OptimizerKind::HyperSgd, 0.1)).unwrap();
    for loss in [LossKind::Poincare, LossKind::Mse] {
        let cfg = TrainRunConfig {
            loss,
            batch_size: 16,
            train_timesteps: 100,
            ..TrainRunConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let l = train_epoch(&mut model, &data, &cfg, &s, &mut opt, &mut rng).unwrap();
        assert!(l.abs() < 1e-12, "{loss}: {l}");
    }
    model.poison = true;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = TrainRunConfig { batch_size: 16, train_timesteps: 100, ..TrainRunConfig::default() };
    let err = train_epoch(&mut model, &data, &cfg, &s, &mut opt, &mut rng).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { batch: 0, ref kind } if kind == "mse"));
    let err = generate_samples(&model, &s, 8, 10, 0).unwrap_err();
    assert!(matches!(err, Error::NonFiniteSample { step: 0 }));
}

fn small_run(seed: u64) -> TrainRunConfig {
    TrainRunConfig {
        epochs: 3,
        n_points: 256,
        hidden: vec![32, 32],
        embed_dim: 8,
        train_timesteps: 50,
        inference_steps: 25,
        metric_every: 1,
        metric_samples: 128,
        seed,
        ..TrainRunConfig::preset("HyperAdamW+HyperT+HyperLoss").unwrap()
    }
}

#[test]
fn runs_are_bit_reproducible() {
    let strip = |mut r: Vec<poincare_opt::RunRecord>| {
        r.iter_mut().for_each(|x| x.wall_ms = 0);
        r
    };
    let a = strip(DiffusionRun::new(small_run(4)).unwrap().run("x").unwrap());
    let b = strip(DiffusionRun::new(small_run(4)).unwrap().run("x").unwrap());
    let c = strip(DiffusionRun::new(small_run(5)).unwrap().run("x").unwrap());
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.len(), 4);
    assert!(a.iter().all(|r| r.loss.is_finite() && r.metric.is_some()));
}

#[test]
fn adamw_halves_the_loss_within_fifty_epochs() {
    let cfg = TrainRunConfig {
        epochs: 50,
        metric_every: 0,
        metric_samples: 64,
        inference_steps: 20,
        ..TrainRunConfig::preset("AdamW+LinearT").unwrap()
    };
    let recs = DiffusionRun::new(cfg).unwrap().run("sanity").unwrap();
    let (first, last) = (recs[0].loss, recs[50].loss);
    assert!(last < 0.5 * first, "{first} -> {last}");
}
