//! TOML run configuration. See `configs/default.toml` for every key with its
//! default and meaning.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use splatlight_core::dataset::SyntheticSpec;
use splatlight_core::optim::LearningRates;
use splatlight_core::render::RenderOptions;
use splatlight_core::schedule::{ScheduleError, TrainSchedule, Variant, Window};
use splatlight_core::shading::{Composition, DEFAULT_LOBES};
use splatlight_core::shadow::RaySampling;
use splatlight_core::sss::ETA;
use splatlight_core::trainer::TrainConfig;
use splatlight_core::geometry::EARLY_STOP_T;

use crate::imageio::ColorSpace;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error("config: {0}")]
    Schedule(#[from] ScheduleError),
}

impl ConfigError {
    fn field(field: &str, message: impl Into<String>) -> Self {
        ConfigError::Field {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub render: RenderSection,
    pub serve: ServeConfig,
}

/// `[start, end]`, rejecting any other length.
fn window_pair<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<[u32; 2]>, D::Error> {
    let v = Vec::<u32>::deserialize(d)?;
    match v[..] {
        [a, b] => Ok(Some([a, b])),
        _ => Err(serde::de::Error::invalid_length(v.len(), &"a [start, end] pair")),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset directory; when absent a synthetic scene is generated.
    pub dir: Option<PathBuf>,
    pub train_split: String,
    pub test_split: String,
    pub color: ColorSpace,
    pub synthetic: SyntheticSection,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dir: None,
            train_split: "train".into(),
            test_split: "test".into(),
            color: ColorSpace::Linear,
            synthetic: SyntheticSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub gaussians: usize,
    pub frames: usize,
    /// Held-out frames rendered from the same scene for the test split.
    pub test_frames: usize,
    pub image_size: u32,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        let s = SyntheticSpec::default();
        SyntheticSection {
            gaussians: s.gaussians,
            frames: s.frames,
            test_frames: 8,
            image_size: s.image_size,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub gaussians: usize,
    pub lobes: usize,
    pub embedding_noise: f64,
    /// Initial Fresnel reflectance at normal incidence.
    pub f0: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            gaussians: splatlight_core::scene::DEFAULT_COUNT,
            lobes: DEFAULT_LOBES,
            embedding_noise: 0.01,
            f0: splatlight_core::shading::DEFAULT_F0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub iterations: u32,
    /// Schedule variant: H, I, J or K.
    pub variant: String,
    /// Term composition: A to F.
    pub composition: String,
    /// Rescale every schedule threshold by `iterations / 100000`.
    pub scale_schedule: bool,
    pub dssim_weight: f64,
    /// Write a checkpoint every this many iterations (0 = only at phase
    /// boundaries and the end).
    pub checkpoint_every: u32,
    pub schedule: ScheduleOverrides,
    pub rates: RatesSection,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            iterations: splatlight_core::schedule::REFERENCE_ITERS,
            variant: "I".into(),
            composition: "D".into(),
            scale_schedule: false,
            dssim_weight: 0.0,
            checkpoint_every: 5_000,
            schedule: ScheduleOverrides::default(),
            rates: RatesSection::default(),
        }
    }
}

/// Thresholds that replace the variant's values after any rescaling.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleOverrides {
    pub shadow_start: Option<u32>,
    pub sss_start: Option<u32>,
    pub specular_start: Option<u32>,
    #[serde(deserialize_with = "window_pair")]
    pub shadow_freeze: Option<[u32; 2]>,
    #[serde(deserialize_with = "window_pair")]
    pub sss_freeze: Option<[u32; 2]>,
    #[serde(deserialize_with = "window_pair")]
    pub asg_freeze: Option<[u32; 2]>,
    pub camera_refine_start: Option<u32>,
    pub light_refine_start: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatesSection {
    pub position: f64,
    pub position_final: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub color: f64,
    pub embedding: f64,
    pub network: f64,
    pub asg: f64,
    pub fresnel: f64,
    pub camera: f64,
    pub light: f64,
}

impl Default for RatesSection {
    fn default() -> Self {
        let r = LearningRates::default();
        RatesSection {
            position: r.position,
            position_final: r.position_final,
            rotation: r.rotation,
            scale: r.scale,
            opacity: r.opacity,
            color: r.color,
            embedding: r.embedding,
            network: r.network,
            asg: r.asg,
            fresnel: r.fresnel,
            camera: r.camera,
            light: r.light,
        }
    }
}

impl From<&RatesSection> for LearningRates {
    fn from(r: &RatesSection) -> Self {
        LearningRates {
            position: r.position,
            position_final: r.position_final,
            rotation: r.rotation,
            scale: r.scale,
            opacity: r.opacity,
            color: r.color,
            embedding: r.embedding,
            network: r.network,
            asg: r.asg,
            fresnel: r.fresnel,
            camera: r.camera,
            light: r.light,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSection {
    /// `exact` or `stratified:N` (at most N×N shadow rays per splat).
    pub sampling: String,
    pub background: [f64; 3],
    /// Relative refractive index of the scattering medium.
    pub eta: f64,
    pub classical_dipole: bool,
    pub shadow_on_sss: bool,
    /// Stop compositing once transmittance falls below this.
    pub early_stop: f64,
}

impl Default for RenderSection {
    fn default() -> Self {
        RenderSection {
            sampling: "stratified:8".into(),
            background: [0.0; 3],
            eta: ETA,
            classical_dipole: false,
            shadow_on_sss: false,
            early_stop: EARLY_STOP_T,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub addr: String,
    /// Largest accepted image side.
    pub max_side: u32,
    /// Renders running at once.
    pub workers: usize,
    /// Requests allowed to wait for a worker before 429.
    pub queue: usize,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            addr: "127.0.0.1:8080".into(),
            max_side: 256,
            workers: 2,
            queue: 16,
        }
    }
}

pub fn parse_sampling(s: &str) -> Option<RaySampling> {
    let s = s.trim();
    if s.eq_ignore_ascii_case("exact") {
        return Some(RaySampling::Exact);
    }
    let rest = s.strip_prefix("stratified")?;
    if rest.is_empty() {
        return Some(RaySampling::default());
    }
    let n: usize = rest.strip_prefix(':')?.trim().parse().ok()?;
    (n > 0).then_some(RaySampling::Stratified(n))
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::field("<document>", e.message()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            ConfigError::Field {
                field,
                message: e.into_inner().message().to_owned(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        Config::from_toml(&text)
    }

    pub fn variant(&self) -> Result<Variant, ConfigError> {
        self.train
            .variant
            .parse()
            .map_err(|e: ScheduleError| ConfigError::field("train.variant", e.to_string()))
    }

    pub fn composition(&self) -> Result<Composition, ConfigError> {
        Composition::from_str(&self.train.composition)
            .map_err(|e| ConfigError::field("train.composition", e.to_string()))
    }

    pub fn schedule(&self) -> Result<TrainSchedule, ConfigError> {
        let t = &self.train;
        let base = TrainSchedule::variant(self.variant()?);
        let mut s = if t.scale_schedule {
            base.scaled_to(t.iterations)
        } else {
            base.with_total(t.iterations)
        };
        let o = &t.schedule;
        let window = |w: Option<[u32; 2]>| w.map(|[a, b]| Window::new(a, b));
        s.shadow_start = o.shadow_start.unwrap_or(s.shadow_start);
        s.sss_start = o.sss_start.unwrap_or(s.sss_start);
        s.specular_start = o.specular_start.unwrap_or(s.specular_start);
        s.shadow_freeze = window(o.shadow_freeze).or(s.shadow_freeze);
        s.sss_freeze = window(o.sss_freeze).or(s.sss_freeze);
        s.asg_freeze = window(o.asg_freeze).or(s.asg_freeze);
        s.camera_refine_start = o.camera_refine_start.unwrap_or(s.camera_refine_start);
        s.light_refine_start = o.light_refine_start.unwrap_or(s.light_refine_start);
        s.validate()?;
        Ok(s)
    }

    pub fn render_options(&self) -> Result<RenderOptions, ConfigError> {
        let r = &self.render;
        let sampling = parse_sampling(&r.sampling)
            .ok_or_else(|| ConfigError::field("render.sampling", format!("`{}` is not `exact` or `stratified:N`", r.sampling)))?;
        if !(r.eta.is_finite() && r.eta > 0.0) {
            return Err(ConfigError::field("render.eta", "must be positive"));
        }
        if !(0.0..1.0).contains(&r.early_stop) {
            return Err(ConfigError::field("render.early_stop", "must lie in [0, 1)"));
        }
        let mut mask = self.composition()?.mask();
        mask.shadow_on_sss = r.shadow_on_sss;
        Ok(RenderOptions {
            mask,
            background: r.background,
            eta: r.eta,
            classical_dipole: r.classical_dipole,
            sampling,
            early_stop: r.early_stop,
        })
    }

    /// Fully validated trainer settings.
    pub fn train_config(&self) -> Result<TrainConfig, ConfigError> {
        if self.model.gaussians == 0 {
            return Err(ConfigError::field("model.gaussians", "must be positive"));
        }
        if self.model.lobes == 0 {
            return Err(ConfigError::field("model.lobes", "must be positive"));
        }
        if !(self.model.f0 > 0.0 && self.model.f0 < 1.0) {
            return Err(ConfigError::field("model.f0", "must lie in (0, 1)"));
        }
        if !(self.train.dssim_weight >= 0.0 && self.train.dssim_weight <= 1.0) {
            return Err(ConfigError::field("train.dssim_weight", "must lie in [0, 1]"));
        }
        let render = self.render_options()?;
        Ok(TrainConfig {
            schedule: self.schedule()?,
            rates: (&self.train.rates).into(),
            composition: render.mask,
            render: RenderOptions {
                mask: splatlight_core::shading::TermMask::FULL,
                ..render
            },
            dssim_weight: self.train.dssim_weight,
            seed: self.seed,
        })
    }

    pub fn serve_addr(&self) -> Result<SocketAddr, ConfigError> {
        self.serve
            .addr
            .parse()
            .map_err(|e: std::net::AddrParseError| ConfigError::field("serve.addr", e.to_string()))
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        let s = &self.data.synthetic;
        SyntheticSpec {
            seed: self.seed,
            gaussians: s.gaussians,
            frames: s.frames,
            image_size: s.image_size,
            ..SyntheticSpec::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_strings() {
        assert_eq!(parse_sampling("exact"), Some(RaySampling::Exact));
        assert_eq!(parse_sampling("stratified:4"), Some(RaySampling::Stratified(4)));
        assert_eq!(parse_sampling("stratified"), Some(RaySampling::Stratified(8)));
        assert_eq!(parse_sampling("stratified:0"), None);
        assert_eq!(parse_sampling("dense"), None);
    }

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(Config::from_toml("").unwrap(), Config::default());
    }
}
