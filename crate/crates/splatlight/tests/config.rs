use std::path::Path;

use splatlight::config::{Config, ConfigError};
use splatlight_core::schedule::{ScheduleError, TrainSchedule, Variant};
use splatlight_core::shadow::RaySampling;

fn configs() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/configs"))
}

fn field_of(err: ConfigError) -> String {
    match err {
        ConfigError::Field { field, .. } => field,
        other => panic!("expected a field error, got {other}"),
    }
}

#[test]
fn documented_defaults_match_the_code() {
    let c = Config::load(&configs().join("default.toml")).unwrap();
    assert_eq!(c, Config::default());
    let tc = c.train_config().unwrap();
    assert_eq!(tc.schedule, TrainSchedule::default());
}

#[test]
fn shipped_configs_are_valid() {
    for name in ["smoke.toml", "desk.toml"] {
        let c = Config::load(&configs().join(name)).unwrap();
        c.train_config().unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn unknown_keys_report_their_path() {
    let err = Config::from_toml("[train.rates]\npositon = 0.1\n").unwrap_err();
    assert_eq!(field_of(err), "train.rates.positon");
    let err = Config::from_toml("[train]\niterations = \"many\"\n").unwrap_err();
    assert_eq!(field_of(err), "train.iterations");
    let err = Config::from_toml("[train.schedule]\nshadow_freeze = [1, 2, 3]\n").unwrap_err();
    assert!(field_of(err).starts_with("train.schedule.shadow_freeze"));
}

#[test]
fn scattering_before_shadow_is_rejected_before_the_run() {
    let c = Config::from_toml("[train.schedule]\nshadow_start = 5000\nsss_start = 4000\n").unwrap();
    let err = c.train_config().unwrap_err();
    assert!(
        matches!(err, ConfigError::Schedule(ScheduleError::BeforeShadow { field: "sss_start", .. })),
        "{err}"
    );
}

#[test]
fn bad_values_name_their_field() {
    let cases = [
        ("[train]\nvariant = \"Z\"\n", "train.variant"),
        ("[train]\ncomposition = \"Q\"\n", "train.composition"),
        ("[render]\nsampling = \"dense\"\n", "render.sampling"),
        ("[render]\neta = -1.0\n", "render.eta"),
        ("[model]\ngaussians = 0\n", "model.gaussians"),
        ("[model]\nf0 = 1.5\n", "model.f0"),
        ("[train]\ndssim_weight = 2.0\n", "train.dssim_weight"),
    ];
    for (text, field) in cases {
        let err = Config::from_toml(text).unwrap().train_config().unwrap_err();
        assert_eq!(field_of(err), field, "{text}");
    }
    let err = Config::from_toml("[serve]\naddr = \"nowhere\"\n").unwrap().serve_addr().unwrap_err();
    assert_eq!(field_of(err), "serve.addr");
}

#[test]
fn scale_schedule_rescales_and_overrides_apply_afterwards() {
    let c = Config::from_toml(
        "[train]\niterations = 5000\nscale_schedule = true\nvariant = \"J\"\n[train.schedule]\nlight_refine_start = 100\n",
    )
    .unwrap();
    let s = c.train_config().unwrap().schedule;
    let mut want = TrainSchedule::variant(Variant::J).scaled_to(5000);
    want.light_refine_start = 100;
    assert_eq!(s, want);
}

#[test]
fn render_section_maps_onto_options() {
    let c = Config::from_toml("[render]\nsampling = \"exact\"\nshadow_on_sss = true\n[train]\ncomposition = \"F\"\n").unwrap();
    let o = c.render_options().unwrap();
    assert_eq!(o.sampling, RaySampling::Exact);
    assert!(o.mask.shadow_on_sss && !o.mask.sss && o.mask.specular);
    let tc = c.train_config().unwrap();
    assert!(!tc.composition.sss);
}
