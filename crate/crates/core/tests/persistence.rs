use ualk_core::datagen::{make_gaussian_classes, make_sal_ood, make_subspace_mixture, make_wild_exact, toy_cov, toy_means};
use ualk_core::io::{load, save};
use ualk_core::model::{Detector, TrainConfig};
use ualk_core::subspace::{train_halo, HaloConfig, HaloModel};
use ualk_core::synthesis::{train_vos, SynthesisConfig, VosConfig, VosModel};
use ualk_core::vmf::{train_siren, vmf_score, SirenConfig, SirenModel};
use ualk_core::wildfilter::{train_sal, SalConfig, SalModel};
use ualk_core::{LabeledSet, RngState};

fn small() -> TrainConfig {
    TrainConfig {
        epochs: 5,
        hidden: vec![12, 12],
        ..TrainConfig::default()
    }
}

fn toy(per_class: usize, seed: u64) -> LabeledSet {
    make_gaussian_classes(&toy_means(), &toy_cov(), per_class, &mut RngState::new(seed)).unwrap()
}

#[test]
fn trained_vos_model_survives_a_file_round_trip() {
    let data = toy(60, 1);
    let cfg = VosConfig {
        train: small(),
        synthesis: SynthesisConfig {
            pool_size: 200,
            ..SynthesisConfig::default()
        },
        queue_capacity: 30,
        ..VosConfig::default()
    };
    let model = train_vos(&data, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("vos.ualk");
    save(&p, &model).unwrap();
    let back: VosModel = load(&p).unwrap();
    assert_eq!(back, model);
    assert_eq!(back.id_probabilities(&data.points).unwrap(), model.id_probabilities(&data.points).unwrap());
}

#[test]
fn trained_siren_model_scores_identically_after_reload() {
    let data = toy(40, 2);
    let cfg = SirenConfig {
        train: small(),
        ..SirenConfig::default()
    };
    let model = train_siren(&data, 3, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("siren.ualk");
    save(&p, &model).unwrap();
    let back: SirenModel = load(&p).unwrap();
    assert_eq!(back, model);
    for x in data.points.iter_rows().take(10) {
        let (a, b) = (model.embed(x).unwrap(), back.embed(x).unwrap());
        assert_eq!(vmf_score(&a, &model.mixture).unwrap(), vmf_score(&b, &back.mixture).unwrap());
    }
}

#[test]
fn sal_model_and_filter_round_trip() {
    let mut rng = RngState::new(3);
    let id = make_gaussian_classes(&toy_means(), &toy_cov(), 50, &mut rng).unwrap();
    let inliers = make_gaussian_classes(&toy_means(), &toy_cov(), 80, &mut rng).unwrap();
    let ood = make_sal_ood(2, &mut rng).unwrap();
    let wild = make_wild_exact(&inliers.points, &ood.select_rows(&(0..60).collect::<Vec<_>>()), &mut rng).unwrap();
    let mut cfg = SalConfig::toy(3);
    cfg.erm = TrainConfig { weight_decay: 0.2, ..small() };
    cfg.binary = small();
    let model = train_sal(&id, &wild, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("sal.ualk");
    save(&p, &model).unwrap();
    let back: SalModel = load(&p).unwrap();
    assert_eq!(back, model);
    assert!(!back.filter.candidates.is_empty());
}

#[test]
fn halo_model_round_trip() {
    let mix = make_subspace_mixture(300, 6, 0.2, 5.0, &mut RngState::new(4)).unwrap();
    let cfg = HaloConfig {
        classifier: TrainConfig {
            hidden: vec![8],
            ..small()
        },
        ..HaloConfig::default()
    };
    let model = train_halo(&mix.wild.points, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("halo.ualk");
    save(&p, &model).unwrap();
    let back: HaloModel = load(&p).unwrap();
    assert_eq!(back, model);
    assert_eq!(back.truthfulness(&mix.wild.points).unwrap(), model.truthfulness(&mix.wild.points).unwrap());
}

#[test]
fn loading_the_wrong_model_type_is_a_format_error() {
    let data = toy(20, 5);
    let cfg = SirenConfig {
        train: small(),
        ..SirenConfig::default()
    };
    let model = train_siren(&data, 3, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.ualk");
    save(&p, &model).unwrap();
    assert!(matches!(load::<HaloModel>(&p), Err(ualk_core::Error::Format(_))));
}
