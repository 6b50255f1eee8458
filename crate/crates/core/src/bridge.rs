//! Multi-level feature fusion: the deepest selected pyramid level is
//! upsampled and summed with the next one until everything lands on the
//! 16x16 top-level grid at C1 channels.
//!
//! With all three levels selected this is
//! `out = s_max + up2(s_mid + up1(s_min))`, where each `up` is a 2x2
//! stride-2 transpose convolution that also steps the channel width down.
//! Any subset of levels can be selected instead; when the top level is
//! absent the upsampled result is brought to C1 by a 1x1 projection.

use crate::backbone::{FeaturePyramid, ModelConfig};
use crate::error::{HitError, Result};
use crate::init::TensorSource;
use crate::tensor::{add, transpose_conv2d, Conv2d, Tensor};

/// Which pyramid levels contribute to the fused map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BridgeConfig {
    pub use_max: bool,
    pub use_mid: bool,
    pub use_min: bool,
}

impl BridgeConfig {
    pub const ALL: BridgeConfig = BridgeConfig {
        use_max: true,
        use_mid: true,
        use_min: true,
    };

    pub fn new(use_max: bool, use_mid: bool, use_min: bool) -> Result<Self> {
        if !(use_max || use_mid || use_min) {
            return Err(HitError::Config(
                "bridge needs at least one pyramid level".into(),
            ));
        }
        Ok(Self {
            use_max,
            use_mid,
            use_min,
        })
    }

    /// Parse a comma-separated level list, e.g. "max,mid,min" or "mid".
    pub fn parse(s: &str) -> Result<Self> {
        let (mut max, mut mid, mut min) = (false, false, false);
        for part in s.split(',') {
            match part.trim().to_ascii_lowercase().as_str() {
                "max" => max = true,
                "mid" => mid = true,
                "min" => min = true,
                other => {
                    return Err(HitError::Config(format!(
                        "unknown bridge level `{other}` (expected max, mid, min)"
                    )))
                }
            }
        }
        Self::new(max, mid, min)
    }

    pub fn name(&self) -> String {
        let mut parts = Vec::new();
        if self.use_max {
            parts.push("max");
        }
        if self.use_mid {
            parts.push("mid");
        }
        if self.use_min {
            parts.push("min");
        }
        parts.join(",")
    }

    /// All seven non-empty level subsets, deepest-inclusive first.
    pub fn enumerate() -> Vec<BridgeConfig> {
        let mut out = Vec::new();
        for bits in 1u8..8 {
            out.push(BridgeConfig {
                use_max: bits & 4 != 0,
                use_mid: bits & 2 != 0,
                use_min: bits & 1 != 0,
            });
        }
        out
    }
}

/// 2x2 stride-2 transpose convolution.
#[derive(Debug, Clone)]
pub struct Upsample {
    /// [2,2,Cin,Cout]
    pub w: Tensor,
    pub b: Tensor,
}

impl Upsample {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        transpose_conv2d(x, &self.w, &self.b, 2)
    }
}

#[derive(Debug, Clone)]
pub struct Bridge {
    pub cfg: BridgeConfig,
    channels: [usize; 3],
    grid: usize,
    /// min-level upsample, [2,2,C3,C2]; present when the min level is used.
    pub up1: Option<Upsample>,
    /// 8x8 -> 16x16 upsample; lands on C1 when the max level is present,
    /// stays at C2 otherwise.
    pub up2: Option<Upsample>,
    /// 1x1 projection C2 -> C1 for configs without the max level.
    pub proj: Option<Conv2d>,
}

impl Bridge {
    pub fn build(cfg: &ModelConfig, bcfg: BridgeConfig, src: &mut TensorSource) -> Result<Self> {
        let [c1, c2, c3] = cfg.channels;
        let deeper = bcfg.use_mid || bcfg.use_min;
        let up1 = if bcfg.use_min {
            Some(Upsample {
                w: src.fan_in("bridge.up1.w", &[2, 2, c3, c2], 4 * c3)?,
                b: src.fan_in("bridge.up1.b", &[c2], 4 * c3)?,
            })
        } else {
            None
        };
        let up2 = if deeper {
            let cout = if bcfg.use_max { c1 } else { c2 };
            Some(Upsample {
                w: src.fan_in("bridge.up2.w", &[2, 2, c2, cout], 4 * c2)?,
                b: src.fan_in("bridge.up2.b", &[cout], 4 * c2)?,
            })
        } else {
            None
        };
        let proj = if deeper && !bcfg.use_max {
            Some(Conv2d::new(
                src.fan_in("bridge.proj.w", &[1, 1, c2, c1], c2)?,
                src.fan_in("bridge.proj.b", &[c1], c2)?,
                1,
                0,
            )?)
        } else {
            None
        };
        Ok(Self {
            cfg: bcfg,
            channels: cfg.channels,
            grid: cfg.search_grid(0),
            up1,
            up2,
            proj,
        })
    }

    pub fn visit<'a>(&'a self, out: &mut Vec<(String, &'a Tensor)>) {
        if let Some(u) = &self.up1 {
            out.push(("bridge.up1.w".into(), &u.w));
            out.push(("bridge.up1.b".into(), &u.b));
        }
        if let Some(u) = &self.up2 {
            out.push(("bridge.up2.w".into(), &u.w));
            out.push(("bridge.up2.b".into(), &u.b));
        }
        if let Some(p) = &self.proj {
            out.push(("bridge.proj.w".into(), &p.w));
            out.push(("bridge.proj.b".into(), &p.b));
        }
    }

    fn check_level(&self, t: &Tensor, level: usize, what: &'static str) -> Result<()> {
        let side = self.grid >> level;
        let want = [side, side, self.channels[level]];
        if t.shape() != want {
            return Err(HitError::Config(format!(
                "{what} must be {want:?}, got {:?}",
                t.shape()
            )));
        }
        Ok(())
    }

    /// Fuse the selected pyramid levels to a [16,16,C1] map.
    pub fn forward(&self, fp: &FeaturePyramid) -> Result<Tensor> {
        self.check_level(&fp.s_max, 0, "s_max")?;
        self.check_level(&fp.s_mid, 1, "s_mid")?;
        self.check_level(&fp.s_min, 2, "s_min")?;

        let mut acc8: Option<Tensor> = None;
        if self.cfg.use_min {
            acc8 = Some(self.up1.as_ref().expect("up1").forward(&fp.s_min)?);
        }
        if self.cfg.use_mid {
            acc8 = Some(match acc8 {
                Some(a) => add(&a, &fp.s_mid)?,
                None => fp.s_mid.clone(),
            });
        }
        match acc8 {
            Some(a8) => {
                let u16 = self.up2.as_ref().expect("up2").forward(&a8)?;
                if self.cfg.use_max {
                    add(&fp.s_max, &u16)
                } else {
                    self.proj.as_ref().expect("proj").forward(&u16)
                }
            }
            None => Ok(fp.s_max.clone()),
        }
    }
}
