use aevit_core::config::RunConfig;
use aevit_core::model::Toggles;
use proptest::prelude::*;

#[test]
fn default_and_desk_round_trip() {
    for cfg in [RunConfig::default(), RunConfig::desk()] {
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }
}

#[test]
fn empty_file_is_the_default() {
    assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
}

#[test]
fn unknown_keys_are_rejected() {
    for text in [
        "[trainer]\nlearning_rate = 0.1\n",
        "[model.toggles]\nfilm_everything = true\n",
        "[extra]\n",
        "[dataset.adr.solver]\nnode = 16\n",
    ] {
        let err = RunConfig::from_toml(text).unwrap_err();
        assert!(err.to_string().contains("unknown field"), "{text}: {err}");
    }
}

#[test]
fn invalid_values_are_rejected() {
    assert!(RunConfig::from_toml("[trainer]\nlr = -1.0\n").is_err());
    assert!(RunConfig::from_toml("[trainer]\nsteps = 3\n").is_err());
    assert!(RunConfig::from_toml("[model]\nheight = 30\n").is_err());
    assert!(RunConfig::from_toml("[eval]\nhorizons = [0]\n").is_err());
}

#[test]
fn save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("run.toml");
    let cfg = RunConfig::desk();
    cfg.save(&p).unwrap();
    assert_eq!(RunConfig::load(&p).unwrap(), cfg);
}

proptest! {
    #[test]
    fn round_trip_is_lossless(
        lr in 1e-6f64..1e-2,
        wd in 0.0f64..1e-1,
        steps in 10usize..100_000,
        seed in 0u64..(i64::MAX as u64),
        k in 0usize..6,
        bits in 0u8..16,
        horizon in proptest::option::of(1usize..500),
    ) {
        let mut cfg = RunConfig::desk();
        cfg.trainer.lr = lr;
        cfg.trainer.weight_decay = wd;
        cfg.trainer.steps = steps;
        cfg.trainer.seed = seed;
        cfg.trainer.valid_horizon = horizon;
        cfg.model.coords.k = k;
        cfg.model.toggles = Toggles {
            film_autoencoder: bits & 1 != 0,
            film_layernorm: bits & 2 != 0,
            param_token: bits & 4 != 0,
            film_qkv: bits & 8 != 0,
        };
        let text = cfg.to_toml().unwrap();
        prop_assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }
}
