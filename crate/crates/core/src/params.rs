//! Named parameter blocks: the unit of freezing, gradient bookkeeping and optimizer state.

use core::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum ParamBlock {
    Position,
    Rotation,
    Scale,
    Opacity,
    DiffuseColor,
    SpecularColor,
    SssColor,
    Embedding,
    SssNet,
    ShadowNet,
    /// ASG lobe frames and bandwidths (the lobe "shape").
    AsgLobes,
    /// ASG lobe mixing weights.
    AsgWeights,
    Fresnel,
    CameraDelta,
    LightDelta,
}

impl ParamBlock {
    pub const ALL: [ParamBlock; 15] = [
        ParamBlock::Position,
        ParamBlock::Rotation,
        ParamBlock::Scale,
        ParamBlock::Opacity,
        ParamBlock::DiffuseColor,
        ParamBlock::SpecularColor,
        ParamBlock::SssColor,
        ParamBlock::Embedding,
        ParamBlock::SssNet,
        ParamBlock::ShadowNet,
        ParamBlock::AsgLobes,
        ParamBlock::AsgWeights,
        ParamBlock::Fresnel,
        ParamBlock::CameraDelta,
        ParamBlock::LightDelta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamBlock::Position => "position",
            ParamBlock::Rotation => "rotation",
            ParamBlock::Scale => "scale",
            ParamBlock::Opacity => "opacity",
            ParamBlock::DiffuseColor => "diffuse_color",
            ParamBlock::SpecularColor => "specular_color",
            ParamBlock::SssColor => "sss_color",
            ParamBlock::Embedding => "embedding",
            ParamBlock::SssNet => "sss_net",
            ParamBlock::ShadowNet => "shadow_net",
            ParamBlock::AsgLobes => "asg_lobes",
            ParamBlock::AsgWeights => "asg_weights",
            ParamBlock::Fresnel => "fresnel",
            ParamBlock::CameraDelta => "camera_delta",
            ParamBlock::LightDelta => "light_delta",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.name() == name)
    }
}

impl fmt::Display for ParamBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Bit set over [`ParamBlock`].
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct BlockSet(u32);

impl BlockSet {
    pub const EMPTY: BlockSet = BlockSet(0);

    pub fn all() -> Self {
        ParamBlock::ALL.into_iter().collect()
    }

    pub fn contains(self, b: ParamBlock) -> bool {
        self.0 & (1 << b as u32) != 0
    }

    pub fn insert(&mut self, b: ParamBlock) {
        self.0 |= 1 << b as u32;
    }

    pub fn remove(&mut self, b: ParamBlock) {
        self.0 &= !(1 << b as u32);
    }

    pub fn with(mut self, b: ParamBlock) -> Self {
        self.insert(b);
        self
    }

    pub fn union(self, o: Self) -> Self {
        BlockSet(self.0 | o.0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = ParamBlock> {
        ParamBlock::ALL.into_iter().filter(move |b| self.contains(*b))
    }
}

impl FromIterator<ParamBlock> for BlockSet {
    fn from_iter<I: IntoIterator<Item = ParamBlock>>(iter: I) -> Self {
        let mut s = BlockSet::EMPTY;
        for b in iter {
            s.insert(b);
        }
        s
    }
}

impl fmt::Debug for BlockSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for b in ParamBlock::ALL {
            assert_eq!(ParamBlock::from_name(b.name()), Some(b));
        }
    }

    #[test]
    fn set_operations() {
        let s = BlockSet::EMPTY
            .with(ParamBlock::SssNet)
            .with(ParamBlock::Fresnel);
        assert!(s.contains(ParamBlock::SssNet));
        assert!(!s.contains(ParamBlock::ShadowNet));
        assert_eq!(s.iter().count(), 2);
        assert_eq!(BlockSet::all().iter().count(), ParamBlock::ALL.len());
    }
}
