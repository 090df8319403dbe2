use dfconformer::model::{ModelConfig, PRESETS};
use dfconformer_cli::config::{known_keys, DataKind, Precision, RunConfig};
use dfconformer_cli::{CliError, EXIT_BAD_CONFIG};
use proptest::prelude::*;

#[test]
fn empty_file_gives_the_default_preset() {
    let cfg = RunConfig::parse("# nothing here\n\n").unwrap();
    assert_eq!(cfg, RunConfig::default());
    assert_eq!(cfg.model, ModelConfig::preset("df-conformer-8").unwrap());
}

#[test]
fn every_preset_is_expressible() {
    for name in PRESETS {
        let cfg = RunConfig::parse(&format!("preset = {name}  # base\n")).unwrap();
        assert_eq!(cfg.model, ModelConfig::preset(name).unwrap(), "{name}");
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg, "{name}");
    }
}

#[test]
fn overrides_apply_after_the_preset_in_any_order() {
    let cfg = RunConfig::parse("d_b = 32\nheads = 2\npreset = conformer-4\nsteps = 7\ndata = fixed\nprecision = f32\n").unwrap();
    assert_eq!(cfg.preset, "conformer-4");
    assert_eq!(cfg.model.block.d_b, 32);
    assert_eq!(cfg.model.block.attention.model_dim, 32);
    assert_eq!(cfg.model.block.attention.heads, 2);
    assert_eq!(cfg.model.num_blocks, 4);
    assert_eq!(cfg.train.steps, 7);
    assert_eq!((cfg.data, cfg.precision), (DataKind::Fixed, Precision::F32));
}

#[test]
fn unknown_key_is_named_with_its_line() {
    let err = RunConfig::parse("steps = 3\n# comment\nlearning_rate = 0.1\n").unwrap_err();
    assert!(matches!(&err, CliError::UnknownKey { key, line: 3 } if key == "learning_rate"));
    assert!(err.to_string().contains("learning_rate"));
    assert_eq!(err.exit_code(), EXIT_BAD_CONFIG);
}

#[test]
fn malformed_lines_and_values_are_rejected() {
    for (text, key) in [
        ("steps 3\n", None),
        ("steps =\n", None),
        ("steps = many\n", Some("steps")),
        ("steps = 3\nsteps = 4\n", Some("steps")),
        ("block = lstm\n", Some("block")),
        ("preset = conformer-99\n", Some("preset")),
        ("data = disk\n", Some("data")),
    ] {
        let err = RunConfig::parse(text).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_BAD_CONFIG, "{text}");
        if let Some(k) = key {
            assert!(err.to_string().contains(k), "{text}: {err}");
        }
    }
}

#[test]
fn invalid_combinations_fail_validation() {
    for text in ["heads = 5\n", "steps = 0\n", "ema_decay = 1\n", "snr_min_db = 20\nsnr_max_db = 10\n", "kernel_size = 4\n"] {
        let err = RunConfig::parse(text).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_BAD_CONFIG, "{text}");
    }
}

#[test]
fn rendered_text_lists_every_key_once() {
    let text = RunConfig::default().to_text();
    let keys: Vec<&str> = text.lines().map(|l| l.split(" = ").next().unwrap()).collect();
    assert_eq!(keys, known_keys());
}

proptest! {
    #[test]
    fn parse_inverts_to_text(
        preset in 0usize..PRESETS.len(),
        steps in 1u64..100_000,
        lr_scale in 1e-3f64..10.0,
        dropout in 0.0f64..0.9,
        seed in any::<u64>(),
        lo in -40.0f64..0.0,
        width in 0.0f64..45.0,
    ) {
        let mut cfg = RunConfig::from_preset(PRESETS[preset]).unwrap();
        cfg.train.steps = steps;
        cfg.train.lr_scale = lr_scale;
        cfg.train.seed = seed;
        cfg.train.snr_range = (lo, lo + width);
        cfg.model.block.dropout = dropout;
        prop_assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
}
