//! Flat `key=value` training configuration.

use std::fmt;
use std::str::FromStr;

use ddt_nn::NormPlacement;

use crate::ddt::Variant;
use crate::error::CoreError;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Ddt,
    Baseline,
}

/// Per-term norm used by the parameter loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossNorm {
    /// `sqrt(mean(r²))`
    Rms,
    /// `sqrt(sum(r²))`
    Sum,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub frames: usize,
    pub joints: usize,
    pub vertices: usize,
    pub d_feat: usize,
    pub d_model: usize,
    pub heads: usize,
    pub blocks: usize,
    pub enc_hidden: usize,
    pub max_step: usize,
    pub norm: NormPlacement,
    pub variant: Variant,
    pub augmentation: bool,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    pub loss_norm: LossNorm,
    pub reprojection: bool,
    pub w_reproj: f64,
    pub seed: u64,
    pub eval_seed: u64,
    pub val_fraction: f64,
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub fps_scaling: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelKind::Ddt,
            frames: 16,
            joints: 8,
            vertices: 24,
            d_feat: 64,
            d_model: 64,
            heads: 4,
            blocks: 3,
            enc_hidden: 64,
            max_step: 64,
            norm: NormPlacement::Pre,
            variant: Variant::TwoModes,
            augmentation: true,
            batch_size: 8,
            epochs: 60,
            lr: 1e-3,
            w1: 0.06,
            w2: 60.0,
            w3: 300.0,
            w4: 100.0,
            loss_norm: LossNorm::Rms,
            reprojection: false,
            w_reproj: 1.0,
            seed: 0,
            eval_seed: 20_240_601,
            val_fraction: 0.1,
            diffusion_steps: 200,
            beta_start: 1e-4,
            beta_end: 0.02,
            fps_scaling: true,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    v.parse().map_err(|e| CoreError::Config(format!("{key}={v}: {e}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "1" | "yes" => Ok(true),
        "false" | "off" | "0" | "no" => Ok(false),
        _ => Err(CoreError::Config(format!("{key}={v}: expected a boolean"))),
    }
}

impl TrainConfig {
    /// Apply one `key=value` assignment.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "model" => {
                self.model = match v {
                    "ddt" => ModelKind::Ddt,
                    "baseline" => ModelKind::Baseline,
                    _ => return Err(CoreError::Config(format!("model={v}: expected ddt or baseline"))),
                }
            }
            "frames" => self.frames = parse(key, v)?,
            "joints" => self.joints = parse(key, v)?,
            "vertices" => self.vertices = parse(key, v)?,
            "d_feat" => self.d_feat = parse(key, v)?,
            "d_model" => self.d_model = parse(key, v)?,
            "heads" => self.heads = parse(key, v)?,
            "blocks" => self.blocks = parse(key, v)?,
            "enc_hidden" => self.enc_hidden = parse(key, v)?,
            "max_step" => self.max_step = parse(key, v)?,
            "norm" => {
                self.norm = match v {
                    "pre" => NormPlacement::Pre,
                    "post" => NormPlacement::Post,
                    _ => return Err(CoreError::Config(format!("norm={v}: expected pre or post"))),
                }
            }
            "variant" => self.variant = v.parse()?,
            "augmentation" => self.augmentation = parse_bool(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "w1" => self.w1 = parse(key, v)?,
            "w2" => self.w2 = parse(key, v)?,
            "w3" => self.w3 = parse(key, v)?,
            "w4" => self.w4 = parse(key, v)?,
            "loss_norm" => {
                self.loss_norm = match v {
                    "rms" => LossNorm::Rms,
                    "sum" => LossNorm::Sum,
                    _ => return Err(CoreError::Config(format!("loss_norm={v}: expected rms or sum"))),
                }
            }
            "reprojection" => self.reprojection = parse_bool(key, v)?,
            "w_reproj" => self.w_reproj = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "eval_seed" => self.eval_seed = parse(key, v)?,
            "val_fraction" => self.val_fraction = parse(key, v)?,
            "diffusion_steps" => self.diffusion_steps = parse(key, v)?,
            "beta_start" => self.beta_start = parse(key, v)?,
            "beta_end" => self.beta_end = parse(key, v)?,
            "fps_scaling" => self.fps_scaling = parse_bool(key, v)?,
            "precision" => {
                if v != "f64" {
                    return Err(CoreError::Config(format!("precision={v}: only f64 is supported")));
                }
            }
            _ => return Err(CoreError::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("frames", self.frames),
            ("joints", self.joints),
            ("vertices", self.vertices),
            ("d_feat", self.d_feat),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("blocks", self.blocks),
            ("enc_hidden", self.enc_hidden),
            ("batch_size", self.batch_size),
            ("diffusion_steps", self.diffusion_steps),
        ];
        if let Some((k, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(CoreError::Config(format!("{k} must be positive")));
        }
        if self.frames < 3 {
            return Err(CoreError::Config(format!("frames={} is below the 3 needed for acceleration", self.frames)));
        }
        if self.joints < 2 {
            return Err(CoreError::Config("joints must be at least 2".into()));
        }
        if self.max_step < self.frames {
            return Err(CoreError::Config(format!("max_step={} is below frames={}", self.max_step, self.frames)));
        }
        for (k, w) in [("w1", self.w1), ("w2", self.w2), ("w3", self.w3), ("w4", self.w4), ("w_reproj", self.w_reproj)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(CoreError::Config(format!("{k}={w} must be a finite nonnegative weight")));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(CoreError::Config(format!("lr={} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(CoreError::Config(format!("val_fraction={} must lie in [0, 1)", self.val_fraction)));
        }
        if self.d_model % self.heads != 0 {
            return Err(CoreError::Config(format!(
                "d_model={} is not divisible by heads={}",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }

    /// Whether the run averages two decoding directions with a consistency loss.
    pub fn bidirectional(&self) -> bool {
        self.augmentation && self.variant.directions() == crate::ddt::Directions::Both
    }
}

impl FromStr for TrainConfig {
    type Err = CoreError;

    /// Blank lines and `#` comments are ignored; unspecified keys keep their defaults.
    fn from_str(s: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (n, line) in s.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CoreError::Config(format!("line {}: expected key=value", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let model = match self.model {
            ModelKind::Ddt => "ddt",
            ModelKind::Baseline => "baseline",
        };
        let norm = match self.norm {
            NormPlacement::Pre => "pre",
            NormPlacement::Post => "post",
        };
        let loss_norm = match self.loss_norm {
            LossNorm::Rms => "rms",
            LossNorm::Sum => "sum",
        };
        writeln!(f, "model={model}")?;
        writeln!(f, "frames={}", self.frames)?;
        writeln!(f, "joints={}", self.joints)?;
        writeln!(f, "vertices={}", self.vertices)?;
        writeln!(f, "d_feat={}", self.d_feat)?;
        writeln!(f, "d_model={}", self.d_model)?;
        writeln!(f, "heads={}", self.heads)?;
        writeln!(f, "blocks={}", self.blocks)?;
        writeln!(f, "enc_hidden={}", self.enc_hidden)?;
        writeln!(f, "max_step={}", self.max_step)?;
        writeln!(f, "norm={norm}")?;
        writeln!(f, "variant={}", self.variant)?;
        writeln!(f, "augmentation={}", self.augmentation)?;
        writeln!(f, "batch_size={}", self.batch_size)?;
        writeln!(f, "epochs={}", self.epochs)?;
        writeln!(f, "lr={}", self.lr)?;
        writeln!(f, "w1={}", self.w1)?;
        writeln!(f, "w2={}", self.w2)?;
        writeln!(f, "w3={}", self.w3)?;
        writeln!(f, "w4={}", self.w4)?;
        writeln!(f, "loss_norm={loss_norm}")?;
        writeln!(f, "reprojection={}", self.reprojection)?;
        writeln!(f, "w_reproj={}", self.w_reproj)?;
        writeln!(f, "seed={}", self.seed)?;
        writeln!(f, "eval_seed={}", self.eval_seed)?;
        writeln!(f, "val_fraction={}", self.val_fraction)?;
        writeln!(f, "diffusion_steps={}", self.diffusion_steps)?;
        writeln!(f, "beta_start={}", self.beta_start)?;
        writeln!(f, "beta_end={}", self.beta_end)?;
        writeln!(f, "fps_scaling={}", self.fps_scaling)?;
        writeln!(f, "precision=f64")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip() {
        let mut cfg = TrainConfig::default();
        cfg.lr = 3.3e-4;
        cfg.variant = Variant::OnePhase;
        cfg.model = ModelKind::Baseline;
        cfg.norm = NormPlacement::Post;
        let back: TrainConfig = cfg.to_string().parse().unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_input() {
        assert!("nonsense=1".parse::<TrainConfig>().is_err());
        assert!("precision=f32".parse::<TrainConfig>().is_err());
        assert!("d_model=30\nheads=4".parse::<TrainConfig>().is_err());
        assert!("w3=-1".parse::<TrainConfig>().is_err());
        assert!("lr".parse::<TrainConfig>().is_err());
        let cfg: TrainConfig = "# comment\n\nepochs = 3 # trailing\n".parse().unwrap();
        assert_eq!(cfg.epochs, 3);
    }
}
