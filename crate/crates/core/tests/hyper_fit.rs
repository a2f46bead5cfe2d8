use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use wsbo::hyper::{log_posterior, map_estimate, HyperPrior, MapSettings, ParamLayout};
use wsbo::{JointHyperParams, KernelFamily, KernelParams, Observation, TaskPoint, TrainingSet};

fn truth() -> JointHyperParams {
    let base = KernelParams::new(KernelFamily::Matern52, 4.0, vec![0.8, 1.6]).unwrap();
    let delta = KernelParams::new(KernelFamily::Matern52, 0.3, vec![0.6, 0.6]).unwrap();
    JointHyperParams::new(1.5, base, vec![delta]).unwrap()
}

/// 30 points on the current task and 30 on one previous task, drawn from the
/// prior of `hp` with small observation noise.
fn sample(hp: &JointHyperParams, seed: u64) -> TrainingSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = Uniform::new(-2.0, 2.0).unwrap();
    let noise = 1e-3;
    let tps: Vec<TaskPoint> = (0..60).map(|i| TaskPoint::new(i / 30, vec![u.sample(&mut rng), u.sample(&mut rng)])).collect();
    let mut k = hp.gram(&tps).unwrap();
    for i in 0..60 {
        k[(i, i)] += noise;
    }
    let l = k.cholesky().unwrap().l();
    let z = DVector::from_iterator(60, (0..60).map(|_| StandardNormal.sample(&mut rng)));
    let y = &l * z;
    let obs = tps
        .into_iter()
        .zip(y.iter())
        .map(|(tp, v)| Observation::new(tp.task, tp.point, hp.mean_const + v, noise).unwrap())
        .collect();
    TrainingSet::new(obs)
}

#[test]
fn recovers_base_length_scales_from_synthetic_data() {
    let hp = truth();
    let settings = MapSettings {
        n_restarts: 5,
        ..MapSettings::default()
    };
    let mut good = 0;
    let mut report = Vec::new();
    for seed in 0..10 {
        let data = sample(&hp, seed);
        let fit = map_estimate(&HyperPrior::Flat, &data, &settings).unwrap().best_params;
        let ok = fit
            .base
            .length_scales()
            .iter()
            .zip(hp.base.length_scales())
            .all(|(a, b)| a / b < 2.0 && b / a < 2.0);
        good += ok as usize;
        report.push(format!("{:?}", fit.base.length_scales()));
    }
    assert!(good >= 8, "{good}/10 within a factor of 2: {report:?}");
}

#[test]
fn tight_prior_pins_the_positive_parameters() {
    let hp = truth();
    let data = sample(&hp, 99);
    let theta0 = {
        let base = KernelParams::new(KernelFamily::Matern52, 2.0, vec![0.5, 0.9]).unwrap();
        let delta = KernelParams::new(KernelFamily::Matern52, 0.7, vec![1.1, 0.4]).unwrap();
        JointHyperParams::new(0.0, base, vec![delta]).unwrap()
    };
    let prior = HyperPrior::centred_on(&theta0, 1e-6).unwrap();
    let fit = map_estimate(&prior, &data, &MapSettings::default()).unwrap().best_params;
    let layout = ParamLayout::of(&theta0);
    let (got, want) = (layout.to_vector(&fit), layout.to_vector(&theta0));
    // index 0 is the constant mean, which the prior leaves free
    for (g, w) in got[1..].iter().zip(&want[1..]) {
        let (g, w) = (g.exp(), w.exp());
        assert!(((g - w) / w).abs() < 1e-3, "{g} vs {w}");
    }
}

#[test]
fn best_objective_dominates_every_start() {
    let hp = truth();
    let data = sample(&hp, 5);
    let prior = HyperPrior::centred_on(&hp, 1.0).unwrap();
    let rep = map_estimate(&prior, &data, &MapSettings::default()).unwrap();
    assert!((log_posterior(&rep.best_params, &prior, &data).unwrap() - rep.best_objective).abs() < 1e-8);
    for r in &rep.restarts {
        if let Some(s) = r.start_objective {
            assert!(rep.best_objective >= s);
        }
        if let Some(o) = r.objective {
            assert!(rep.best_objective >= o);
        }
    }
}

#[test]
fn empirical_prior_from_fits_is_centred_on_their_log_mean() {
    let a = truth();
    let mut b = truth();
    b.base = KernelParams::new(KernelFamily::Matern52, 16.0, vec![0.2, 6.4]).unwrap();
    match HyperPrior::from_fits(&[a, b]).unwrap() {
        HyperPrior::LogNormal { means, .. } => {
            assert!((means[0] - 8f64.ln()).abs() < 1e-12);
            assert!((means[1] - 0.4f64.ln()).abs() < 1e-12);
            assert!((means[2] - 3.2f64.ln()).abs() < 1e-12);
        }
        HyperPrior::Flat => panic!("two fits give a proper prior"),
    }
}
