//! Declarative run configuration (TOML).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::distill::DistillConfig;
use crate::error::{Error, IoContext, Result};
use crate::models::{StudentConfig, TeacherArch, TeacherConfig};
use crate::nn::{Adam, Optimizer, Sgd};
use crate::synthgen::RenderSpec;

/// Environment variable that roots relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "KDHTR_OUTPUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimSettings {
    pub name: OptimizerKind,
    pub lr: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Global gradient-norm cap; absent means no clipping.
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

impl OptimSettings {
    pub fn teacher_default() -> Self {
        Self {
            name: OptimizerKind::Sgd,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 0.0,
            batch_size: 32,
            epochs: 20,
            clip_norm: None,
        }
    }

    pub fn student_default() -> Self {
        Self {
            name: OptimizerKind::Adam,
            lr: 1e-3,
            momentum: 0.0,
            weight_decay: 0.0,
            batch_size: 32,
            epochs: 30,
            clip_norm: Some(5.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.batch_size == 0 {
            return Err(Error::InvalidConfig(format!(
                "optimizer needs lr > 0 and batch_size > 0, got {self:?}"
            )));
        }
        if self.clip_norm.is_some_and(|c| c.is_nan() || c <= 0.0) {
            return Err(Error::InvalidConfig("clip_norm must be positive".into()));
        }
        Ok(())
    }

    pub fn build(&self) -> Box<dyn Optimizer<f32>> {
        match self.name {
            OptimizerKind::Sgd => Box::new(Sgd::new(self.lr, self.momentum, self.weight_decay)),
            OptimizerKind::Adam => Box::new(Adam::new(self.lr)),
        }
    }
}

/// Teacher architecture knobs; the class count comes from the inventory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherSettings {
    pub arch: TeacherArch,
    pub input_size: usize,
    pub conv2_width: usize,
    pub conv2_hidden: usize,
    pub resnet_width: usize,
}

impl Default for TeacherSettings {
    fn default() -> Self {
        Self {
            arch: TeacherArch::Conv2,
            input_size: 32,
            conv2_width: 32,
            conv2_hidden: 128,
            resnet_width: 64,
        }
    }
}

impl TeacherSettings {
    pub fn config(&self, arch: TeacherArch, num_classes: usize) -> TeacherConfig {
        let (width, hidden) = match arch {
            TeacherArch::Conv2 => (self.conv2_width, self.conv2_hidden),
            TeacherArch::Resnet18 => (self.resnet_width, 0),
        };
        TeacherConfig {
            arch,
            num_classes,
            input_size: self.input_size,
            width,
            hidden,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudentLayout {
    /// Five stages, 32x128 input, 31 frames.
    Crnn,
    /// Four stages, 16x64 input, 15 frames.
    Compact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudentSettings {
    pub layout: StudentLayout,
    /// Channels of the first stage.
    pub base_channels: usize,
    pub recurrent_hidden: usize,
}

impl Default for StudentSettings {
    fn default() -> Self {
        Self {
            layout: StudentLayout::Crnn,
            base_channels: 64,
            recurrent_hidden: 256,
        }
    }
}

impl StudentSettings {
    /// `num_graphemes` excludes blank.
    pub fn config(&self, num_graphemes: usize) -> StudentConfig {
        let classes = num_graphemes + 1;
        let mut cfg = match self.layout {
            StudentLayout::Crnn => StudentConfig::crnn(classes),
            StudentLayout::Compact => StudentConfig::compact(classes, self.base_channels, self.recurrent_hidden),
        };
        if self.layout == StudentLayout::Crnn {
            let b = self.base_channels;
            for (stage, mult) in cfg.backbone.iter_mut().zip([1, 2, 4, 4, 8]) {
                stage.channels = b * mult;
            }
            cfg.recurrent_hidden = self.recurrent_hidden;
        }
        cfg
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataPaths {
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    /// Directory of a generated glyph dataset.
    pub teacher_data: Option<PathBuf>,
    pub teacher_checkpoint: Option<PathBuf>,
    /// Sequence teacher for conventional distillation.
    pub conventional_teacher: Option<PathBuf>,
    pub student_checkpoint: Option<PathBuf>,
    /// Inventory the teacher is trained on; defaults to the training corpus.
    pub teacher_inventory: Option<PathBuf>,
    /// Flip word images so ink is bright on dark.
    pub invert_images: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSettings {
    pub a_name: String,
    pub a_manifest: PathBuf,
    pub b_name: String,
    pub b_manifest: PathBuf,
    /// Restrict to these table rows (by name); empty runs all six.
    #[serde(default)]
    pub only: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub val_fraction: f64,
    pub data: DataPaths,
    pub render: RenderSpec,
    pub distill: DistillConfig,
    pub teacher: TeacherSettings,
    pub student: StudentSettings,
    pub teacher_optim: OptimSettings,
    pub student_optim: OptimSettings,
    pub protocol: Option<ProtocolSettings>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs"),
            val_fraction: 0.1,
            data: DataPaths::default(),
            render: RenderSpec::default(),
            distill: DistillConfig::default(),
            teacher: TeacherSettings::default(),
            student: StudentSettings::default(),
            teacher_optim: OptimSettings::teacher_default(),
            student_optim: OptimSettings::student_default(),
            protocol: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path).at(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<()> {
        self.distill.validate()?;
        self.render.validate()?;
        self.teacher_optim.validate()?;
        self.student_optim.validate()?;
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidConfig(format!(
                "val_fraction {} outside [0, 1)",
                self.val_fraction
            )));
        }
        Ok(())
    }

    /// Fails on the first configured input path that does not exist.
    pub fn check_paths(&self) -> Result<()> {
        let d = &self.data;
        let paths = [
            &d.train_manifest,
            &d.test_manifest,
            &d.teacher_data,
            &d.teacher_checkpoint,
            &d.conventional_teacher,
            &d.student_checkpoint,
            &d.teacher_inventory,
        ];
        for p in paths.into_iter().flatten() {
            if !p.exists() {
                return Err(Error::Io {
                    path: p.clone(),
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "configured path does not exist"),
                });
            }
        }
        Ok(())
    }

    /// `output_dir`, placed under the output-root environment variable when
    /// that is set and the directory is relative.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() => PathBuf::from(root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }
}
