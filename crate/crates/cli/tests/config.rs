use rgbd_gan::error::Error;
use rgbd_gan_cli::config::{parse_pairs, Preset, RunConfig, KEYS};

fn pairs(text: &str) -> Vec<(String, String)> {
    parse_pairs(text, "test").unwrap()
}

fn key_of(e: Error) -> String {
    match e {
        Error::Config { key, .. } => key,
        other => panic!("expected a config error, got {other}"),
    }
}

#[test]
fn every_key_but_the_data_directory_has_a_default() {
    let missing: Vec<&str> = KEYS.iter().filter(|k| k.default.is_none()).map(|k| k.key).collect();
    assert_eq!(missing, ["data.dir"]);
    let cfg = RunConfig::resolve(&[], &[]).unwrap();
    assert_eq!(cfg.preset(), Preset::Desk64);
    assert_eq!(key_of(cfg.data_dir().unwrap_err()), "data.dir");
}

#[test]
fn desk_defaults() {
    let cfg = RunConfig::resolve(&[], &[]).unwrap();
    let m = cfg.model_config().unwrap();
    let t = cfg.train_config().unwrap();
    assert_eq!(m.generator.resolution, 64);
    assert_eq!(t.batch, 8);
    assert_eq!((m.generator.latent_dim, m.generator.mapping_layers), (128, 2));
    assert_eq!(t.weights.r1, 0.3);
}

#[test]
fn paper_presets_switch_weights_with_resolution() {
    let get = |p: &str| RunConfig::resolve(&pairs(&format!("preset = {p}")), &[]).unwrap().train_config().unwrap();
    let w128 = get("128-paper").weights;
    assert_eq!((w128.lambda1, w128.lambda2, w128.lambda3, w128.lambda4, w128.r1), (50.0, 0.3, 1e-3, 0.8, 0.3));
    let bed = get("256-paper").weights;
    assert_eq!((bed.lambda2, bed.r1), (0.5, 0.5));
    let kitchen = get("256-paper-kitchen").weights;
    assert_eq!((kitchen.lambda1, kitchen.lambda2, kitchen.lambda3, kitchen.lambda4, kitchen.r1), (50.0, 0.4, 1e-3, 0.8, 0.5));
    assert_eq!(get("256-paper").batch, 64);
}

#[test]
fn precedence_is_preset_then_file_then_flags() {
    let file = pairs("preset = 128-paper\ntrain.batch = 16\nloss.lambda2 = 0.25");
    let flags = vec![("train.batch".to_string(), "4".to_string())];
    let cfg = RunConfig::resolve(&file, &flags).unwrap();
    let t = cfg.train_config().unwrap();
    assert_eq!(t.batch, 4);
    assert_eq!(t.weights.lambda2, 0.25);
    assert_eq!(cfg.model_config().unwrap().generator.resolution, 128);
    // A preset flag beats the file's preset.
    let cfg = RunConfig::resolve(&file, &[("preset".into(), "64-desk".into())]).unwrap();
    assert_eq!(cfg.model_config().unwrap().generator.resolution, 64);
}

#[test]
fn unknown_and_malformed_keys_name_the_key() {
    assert_eq!(key_of(RunConfig::resolve(&pairs("train.bach = 3"), &[]).unwrap_err()), "train.bach");
    assert_eq!(key_of(RunConfig::resolve(&pairs("train.batch = many"), &[]).unwrap_err()), "train.batch");
    assert_eq!(key_of(RunConfig::resolve(&pairs("train.batch = 1"), &[]).unwrap_err()), "train.batch");
    assert_eq!(key_of(RunConfig::resolve(&pairs("preset = 512-huge"), &[]).unwrap_err()), "preset");
    assert_eq!(key_of(RunConfig::resolve(&pairs("camera.theta_min = 20"), &[]).unwrap_err()), "camera.theta_min");
    assert!(parse_pairs("no equals sign", "x").is_err());
}

#[test]
fn comments_and_blank_lines_are_ignored() {
    let p = pairs("# header\n\ntrain.steps = 7   # trailing\n");
    assert_eq!(p, vec![("train.steps".to_string(), "7".to_string())]);
}

#[test]
fn echo_replays_to_the_same_configuration() {
    for p in Preset::ALL {
        let flags = vec![("data.dir".to_string(), "/tmp/data".to_string()), ("train.seed".to_string(), "9".to_string())];
        let cfg = RunConfig::resolve(&pairs(&format!("preset = {}", p.name())), &flags).unwrap();
        let replay = RunConfig::resolve(&pairs(&cfg.echo()), &[]).unwrap();
        assert_eq!(replay, cfg);
    }
}

#[test]
fn checkpoint_configs_round_trip_through_keys() {
    let cfg = RunConfig::resolve(&pairs("preset = 128-paper\ncamera.pivot_depth = 3.5"), &[]).unwrap();
    let (m, t) = (cfg.model_config().unwrap(), cfg.train_config().unwrap());
    let back = RunConfig::resolve(&[], &[]).unwrap().with_configs(&m, &t).unwrap();
    let (m2, t2) = (back.model_config().unwrap(), back.train_config().unwrap());
    assert_eq!(t2, t);
    assert_eq!(m2.generator.channels, m.generator.channels);
    assert_eq!(m2.pivot_depth, Some(3.5));
    assert!((m2.generator.theta_max - m.generator.theta_max).abs() < 1e-15);
}
