//! Progressive training schedule: when each shading term switches on, which
//! parameter blocks are held fixed, and when pose/light refinement starts.

use core::fmt;
use core::str::FromStr;

use crate::params::{BlockSet, ParamBlock};
use crate::shading::TermMask;

/// Half-open iteration range `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Window {
    pub start: u32,
    pub end: u32,
}

impl Window {
    pub const fn new(start: u32, end: u32) -> Self {
        Window { start, end }
    }

    pub fn contains(self, iter: u32) -> bool {
        self.start <= iter && iter < self.end
    }

    fn scaled(self, f: impl Fn(u32) -> u32) -> Self {
        Window::new(f(self.start), f(self.end))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TrainSchedule {
    pub total_iters: u32,
    pub shadow_start: u32,
    pub sss_start: u32,
    pub specular_start: u32,
    /// Shadow network held fixed.
    pub shadow_freeze: Option<Window>,
    /// Scattering network and scattering colors held fixed.
    pub sss_freeze: Option<Window>,
    /// ASG lobe frames and bandwidths held fixed.
    pub asg_freeze: Option<Window>,
    pub camera_refine_start: u32,
    pub light_refine_start: u32,
}

/// Iteration count the default thresholds are expressed for.
pub const REFERENCE_ITERS: u32 = 100_000;

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            total_iters: REFERENCE_ITERS,
            shadow_start: 5_000,
            sss_start: 9_000,
            specular_start: 16_000,
            shadow_freeze: Some(Window::new(9_000, 16_000)),
            sss_freeze: Some(Window::new(13_000, 20_000)),
            asg_freeze: Some(Window::new(16_000, 20_000)),
            camera_refine_start: 5_000,
            light_refine_start: 16_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScheduleError {
    #[error("unknown schedule variant `{0}` (expected H, I, J or K)")]
    UnknownVariant(alloc::string::String),
    #[error("{field} = {value} must not be earlier than shadow_start = {shadow_start}")]
    BeforeShadow {
        field: &'static str,
        value: u32,
        shadow_start: u32,
    },
    #[error("{field} = {value} exceeds total_iters = {total}")]
    PastEnd {
        field: &'static str,
        value: u32,
        total: u32,
    },
    #[error("{field} window [{start}, {end}) is empty or reversed")]
    BadWindow {
        field: &'static str,
        start: u32,
        end: u32,
    },
    #[error("total_iters must be positive")]
    NoIterations,
}

/// Named schedule variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Every term from the first iteration, no freezes.
    H,
    /// Diffuse, then shadow, scattering, specular, with freeze windows.
    I,
    /// Like I with scattering and specular swapped.
    J,
    /// Diffuse warm-up, then all remaining terms at once.
    K,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::H, Variant::I, Variant::J, Variant::K];

    pub fn label(self) -> &'static str {
        match self {
            Variant::H => "H",
            Variant::I => "I",
            Variant::J => "J",
            Variant::K => "K",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Variant {
    type Err = ScheduleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "H" | "h" => Ok(Variant::H),
            "I" | "i" => Ok(Variant::I),
            "J" | "j" => Ok(Variant::J),
            "K" | "k" => Ok(Variant::K),
            other => Err(ScheduleError::UnknownVariant(other.into())),
        }
    }
}

impl TrainSchedule {
    /// Variant schedule at the reference length.
    pub fn variant(v: Variant) -> Self {
        let i = TrainSchedule::default();
        match v {
            Variant::I => i,
            Variant::H => TrainSchedule {
                shadow_start: 0,
                sss_start: 0,
                specular_start: 0,
                shadow_freeze: None,
                sss_freeze: None,
                asg_freeze: None,
                camera_refine_start: 0,
                light_refine_start: 0,
                ..i
            },
            Variant::K => TrainSchedule {
                shadow_start: 5_000,
                sss_start: 5_000,
                specular_start: 5_000,
                shadow_freeze: None,
                sss_freeze: None,
                asg_freeze: None,
                camera_refine_start: 5_000,
                light_refine_start: 5_000,
                ..i
            },
            // Each freeze window keeps its offset from the start of its own term.
            Variant::J => TrainSchedule {
                sss_start: 16_000,
                specular_start: 9_000,
                shadow_freeze: Some(Window::new(9_000, 16_000)),
                sss_freeze: Some(Window::new(20_000, 27_000)),
                asg_freeze: Some(Window::new(9_000, 13_000)),
                light_refine_start: 9_000,
                ..i
            },
        }
    }

    /// Same schedule with a different run length and unchanged absolute thresholds.
    pub fn with_total(self, total_iters: u32) -> Self {
        TrainSchedule { total_iters, ..self }
    }

    /// Rescales every threshold by `total_iters / 100 000` (rounded to nearest).
    pub fn scaled_to(self, total_iters: u32) -> Self {
        let f = |v: u32| -> u32 {
            ((v as u64 * total_iters as u64 + REFERENCE_ITERS as u64 / 2) / REFERENCE_ITERS as u64) as u32
        };
        TrainSchedule {
            total_iters,
            shadow_start: f(self.shadow_start),
            sss_start: f(self.sss_start),
            specular_start: f(self.specular_start),
            shadow_freeze: self.shadow_freeze.map(|w| w.scaled(f)),
            sss_freeze: self.sss_freeze.map(|w| w.scaled(f)),
            asg_freeze: self.asg_freeze.map(|w| w.scaled(f)),
            camera_refine_start: f(self.camera_refine_start),
            light_refine_start: f(self.light_refine_start),
        }
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        if self.total_iters == 0 {
            return Err(ScheduleError::NoIterations);
        }
        for (field, value) in [("sss_start", self.sss_start), ("specular_start", self.specular_start)] {
            if value < self.shadow_start {
                return Err(ScheduleError::BeforeShadow {
                    field,
                    value,
                    shadow_start: self.shadow_start,
                });
            }
        }
        for (field, value) in [
            ("shadow_start", self.shadow_start),
            ("sss_start", self.sss_start),
            ("specular_start", self.specular_start),
            ("camera_refine_start", self.camera_refine_start),
            ("light_refine_start", self.light_refine_start),
        ] {
            if value > self.total_iters {
                return Err(ScheduleError::PastEnd {
                    field,
                    value,
                    total: self.total_iters,
                });
            }
        }
        for (field, w) in [
            ("shadow_freeze", self.shadow_freeze),
            ("sss_freeze", self.sss_freeze),
            ("asg_freeze", self.asg_freeze),
        ] {
            if let Some(w) = w {
                if w.start >= w.end {
                    return Err(ScheduleError::BadWindow {
                        field,
                        start: w.start,
                        end: w.end,
                    });
                }
            }
        }
        Ok(())
    }
}

/// What is switched on and what is frozen at one iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ActiveMask {
    pub terms: TermMask,
    pub frozen: BlockSet,
    pub camera_refine: bool,
    pub light_refine: bool,
}

/// Blocks that only matter when the given term is on.
pub fn term_blocks(mask: TermMask) -> BlockSet {
    let mut off = BlockSet::EMPTY;
    if !mask.specular {
        off = off
            .with(ParamBlock::SpecularColor)
            .with(ParamBlock::AsgLobes)
            .with(ParamBlock::AsgWeights)
            .with(ParamBlock::Fresnel);
    }
    if !mask.sss {
        off = off.with(ParamBlock::SssNet).with(ParamBlock::SssColor);
    }
    if !mask.shadow {
        off = off.with(ParamBlock::ShadowNet);
    }
    if !mask.sss && !mask.shadow {
        off = off.with(ParamBlock::Embedding);
    }
    if !mask.diffuse {
        off = off.with(ParamBlock::DiffuseColor);
    }
    off
}

/// Term switches and frozen blocks at `iter`.
pub fn active_mask(s: &TrainSchedule, iter: u32) -> ActiveMask {
    let terms = TermMask {
        diffuse: true,
        specular: iter >= s.specular_start,
        sss: iter >= s.sss_start,
        shadow: iter >= s.shadow_start,
        shadow_on_sss: false,
    };
    let mut frozen = term_blocks(terms);
    let inside = |w: Option<Window>| w.is_some_and(|w| w.contains(iter));
    if inside(s.shadow_freeze) {
        frozen.insert(ParamBlock::ShadowNet);
    }
    if inside(s.sss_freeze) {
        frozen.insert(ParamBlock::SssNet);
        frozen.insert(ParamBlock::SssColor);
    }
    if inside(s.asg_freeze) {
        frozen.insert(ParamBlock::AsgLobes);
    }
    let camera_refine = iter >= s.camera_refine_start;
    let light_refine = iter >= s.light_refine_start;
    if !camera_refine {
        frozen.insert(ParamBlock::CameraDelta);
    }
    if !light_refine {
        frozen.insert(ParamBlock::LightDelta);
    }
    ActiveMask {
        terms,
        frozen,
        camera_refine,
        light_refine,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_phase_examples() {
        let s = TrainSchedule::default();
        let m0 = active_mask(&s, 0);
        assert!(m0.terms.diffuse && !m0.terms.shadow && !m0.terms.sss && !m0.terms.specular);

        let m = active_mask(&s, 10_000);
        assert!(m.terms.shadow && m.terms.sss && !m.terms.specular);
        assert!(m.frozen.contains(ParamBlock::ShadowNet));

        let m = active_mask(&s, 17_000);
        assert!(m.terms.shadow && m.terms.sss && m.terms.specular);
        assert!(m.frozen.contains(ParamBlock::SssNet) && m.frozen.contains(ParamBlock::AsgLobes));
        assert!(m.light_refine && m.camera_refine);
        assert!(!m.frozen.contains(ParamBlock::AsgWeights));
    }

    #[test]
    fn variants() {
        let h = TrainSchedule::variant(Variant::H);
        let m = active_mask(&h, 0);
        assert!(m.terms.shadow && m.terms.sss && m.terms.specular);
        let k = TrainSchedule::variant(Variant::K);
        let m = active_mask(&k, 4_999);
        assert!(!m.terms.shadow && !m.terms.sss && !m.terms.specular);
        let m = active_mask(&k, 5_000);
        assert!(m.terms.shadow && m.terms.sss && m.terms.specular);
        assert_eq!(TrainSchedule::variant(Variant::I), TrainSchedule::default());
        for v in Variant::ALL {
            TrainSchedule::variant(v).validate().unwrap();
        }
        assert!("Q".parse::<Variant>().is_err());
    }

    #[test]
    fn scaling_to_five_thousand() {
        let s = TrainSchedule::default().scaled_to(5_000);
        assert_eq!((s.shadow_start, s.sss_start, s.specular_start), (250, 450, 800));
        assert_eq!(s.shadow_freeze, Some(Window::new(450, 800)));
        assert_eq!(s.sss_freeze, Some(Window::new(650, 1_000)));
        assert_eq!(s.asg_freeze, Some(Window::new(800, 1_000)));
    }

    #[test]
    fn rejects_scattering_before_shadow() {
        let s = TrainSchedule {
            sss_start: 4_000,
            ..TrainSchedule::default()
        };
        assert!(matches!(s.validate(), Err(ScheduleError::BeforeShadow { field: "sss_start", .. })));
    }
}
