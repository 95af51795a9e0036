use serde::{Deserialize, Serialize};

use crate::cfa::CfaSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum HeadActivation {
    /// Logistic sigmoid, lands in `[0, 1]`.
    #[default]
    Sigmoid,
    /// `0.5 * (tanh(x) + 1)`, also `[0, 1]`.
    Tanh,
    /// No squashing; used for analytic checks.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum UpsampleKind {
    /// 3x3 conv to four times the channels, then pixel shuffle.
    #[default]
    Subpixel,
    /// Bilinear 2x interpolation followed by a 3x3 conv.
    Bilinear,
}

/// Architecture knobs shared by the student and the teacher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Filters at level 1; level `L` uses `base_channels * 2^(L-1)`.
    pub base_channels: usize,
    /// Deepest pyramid level: 1 for PyNET-QxQ, 5 for the full pyramid.
    pub levels: usize,
    pub head_activation: HeadActivation,
    pub use_residual_gray: bool,
    pub upsample_kind: UpsampleKind,
    pub cfa: CfaSpec,
    /// Multi-convolution blocks at level 1.
    pub level1_blocks: usize,
    /// Parallel kernel sizes of each level-1 block.
    pub level1_kernels: Vec<usize>,
    /// Paired 3x3 blocks at each level below 1.
    pub lower_blocks: usize,
    pub bias: bool,
    /// Initialization seed.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::student_desk()
    }
}

impl ModelConfig {
    fn base(base_channels: usize, levels: usize) -> Self {
        Self {
            base_channels,
            levels,
            head_activation: HeadActivation::Sigmoid,
            use_residual_gray: true,
            upsample_kind: UpsampleKind::Subpixel,
            cfa: CfaSpec::qxq(),
            level1_blocks: 3,
            level1_kernels: vec![3, 5, 7, 9],
            lower_blocks: 2,
            bias: true,
            seed: 0,
        }
    }

    pub fn student_full() -> Self {
        Self::base(16, 1)
    }

    pub fn teacher_full() -> Self {
        Self::base(32, 5)
    }

    pub fn student_desk() -> Self {
        Self::base(4, 1)
    }

    pub fn teacher_desk() -> Self {
        Self::base(8, 5)
    }

    /// The student matching a teacher: same knobs, level 1 only, half the filters.
    pub fn student_of(teacher: &ModelConfig) -> Self {
        Self {
            base_channels: teacher.base_channels / 2,
            levels: 1,
            ..teacher.clone()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn channels_at(&self, level: usize) -> usize {
        self.base_channels << level.saturating_sub(1)
    }

    /// Input sides must be multiples of this.
    pub fn input_multiple(&self) -> usize {
        let pyramid = 1usize << self.levels;
        let period = self.cfa.period();
        lcm(pyramid, period)
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels < 2 {
            return Err(Error::Config(format!(
                "base_channels must be at least 2, got {}",
                self.base_channels
            )));
        }
        if !(1..=8).contains(&self.levels) {
            return Err(Error::Config(format!(
                "levels must be in 1..=8, got {}",
                self.levels
            )));
        }
        if self.level1_blocks == 0 {
            return Err(Error::Config("level1_blocks must be at least 1".into()));
        }
        if self.levels > 1 && self.lower_blocks == 0 {
            return Err(Error::Config("lower_blocks must be at least 1".into()));
        }
        check_kernel_set(self.base_channels, &self.level1_kernels)?;
        Ok(())
    }

    /// Student/teacher pairing: the student keeps level 1 only, at half width.
    pub fn validate_pair(student: &ModelConfig, teacher: &ModelConfig) -> Result<()> {
        student.validate()?;
        teacher.validate()?;
        if student.levels != 1 {
            return Err(Error::Config(format!(
                "student must stop at level 1, got {} levels",
                student.levels
            )));
        }
        if student.base_channels * 2 != teacher.base_channels {
            return Err(Error::Config(format!(
                "student filters ({}) must be half of the teacher's ({})",
                student.base_channels, teacher.base_channels
            )));
        }
        if student.cfa != teacher.cfa {
            return Err(Error::Config("student and teacher CFA differ".into()));
        }
        Ok(())
    }
}

pub(crate) fn check_kernel_set(channels: usize, kernels: &[usize]) -> Result<()> {
    if kernels.is_empty() {
        return Err(Error::Config("kernel set is empty".into()));
    }
    if let Some(k) = kernels.iter().find(|&&k| k % 2 == 0 || k == 0) {
        return Err(Error::Config(format!("kernel size {k} must be odd")));
    }
    if !channels.is_multiple_of(kernels.len()) {
        return Err(Error::Config(format!(
            "{channels} channels cannot be split evenly over kernels {kernels:?}"
        )));
    }
    Ok(())
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_pair_up() {
        ModelConfig::validate_pair(&ModelConfig::student_full(), &ModelConfig::teacher_full())
            .unwrap();
        ModelConfig::validate_pair(&ModelConfig::student_desk(), &ModelConfig::teacher_desk())
            .unwrap();
        assert_eq!(
            ModelConfig::student_of(&ModelConfig::teacher_full()),
            ModelConfig::student_full()
        );
    }

    #[test]
    fn rejects_bad_widths() {
        let mut c = ModelConfig::student_desk();
        c.base_channels = 6;
        assert_eq!(c.validate().unwrap_err().class(), "config");
        c.base_channels = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn input_multiples() {
        assert_eq!(ModelConfig::student_desk().input_multiple(), 8);
        assert_eq!(ModelConfig::teacher_desk().input_multiple(), 32);
    }

    #[test]
    fn toml_round_trip() {
        let c = ModelConfig::teacher_full();
        let s = toml::to_string(&c).unwrap();
        assert!(s.contains("macro_pattern = \"RGGB\""));
        assert_eq!(toml::from_str::<ModelConfig>(&s).unwrap(), c);
    }
}
