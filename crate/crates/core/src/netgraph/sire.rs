use std::fmt;

use super::graph::LayerGraph;
use super::passes::{add_residual_connections, add_skip_connections, attach_autoencoders};
use crate::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 0.2;
pub const FULL_MASK: [usize; 4] = [1, 2, 3, 4];

/// Which SIRe components to apply to a baseline graph.
#[derive(Debug, Clone, PartialEq)]
pub struct SIReConfig {
    pub enable_s: bool,
    pub enable_i: bool,
    pub enable_re: bool,
    /// Auto-encoder indices, ascending and unique, each in `1..=4`.
    pub ae_mask: Vec<usize>,
    pub lambda: f64,
}

impl Default for SIReConfig {
    fn default() -> Self {
        Self::baseline()
    }
}

impl SIReConfig {
    pub fn baseline() -> Self {
        Self {
            enable_s: false,
            enable_i: false,
            enable_re: false,
            ae_mask: Vec::new(),
            lambda: DEFAULT_LAMBDA,
        }
    }

    pub fn full(lambda: f64) -> Self {
        Self {
            enable_s: true,
            enable_i: true,
            enable_re: true,
            ae_mask: FULL_MASK.to_vec(),
            lambda,
        }
    }

    /// Full SIRe with a restricted auto-encoder set.
    pub fn with_mask(mask: &[usize], lambda: f64) -> Result<Self> {
        let cfg = Self {
            ae_mask: normalize_mask(mask),
            ..Self::full(lambda)
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses a component list such as `S,I,Re` (case-insensitive; empty or
    /// `none` selects the baseline). Enabling I uses the full mask.
    pub fn from_components(spec: &str, lambda: f64) -> Result<Self> {
        let mut cfg = Self {
            lambda,
            ..Self::baseline()
        };
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "s" => cfg.enable_s = true,
                "i" => cfg.enable_i = true,
                "re" => cfg.enable_re = true,
                "none" | "baseline" => {}
                other => return Err(Error::Config(format!("unknown component {other:?}; expected S, I or Re"))),
            }
        }
        if cfg.enable_i {
            cfg.ae_mask = FULL_MASK.to_vec();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.enable_s && !self.enable_i {
            return Err(Error::Config(
                "skip connections (S) terminate in the auto-encoders, so S requires I".into(),
            ));
        }
        if self.enable_i == self.ae_mask.is_empty() {
            return Err(Error::Config(if self.enable_i {
                "I is enabled but the auto-encoder mask is empty".into()
            } else {
                format!("auto-encoder mask {:?} given without I", self.ae_mask)
            }));
        }
        if self.ae_mask.iter().any(|i| !(1..=4).contains(i)) || normalize_mask(&self.ae_mask) != self.ae_mask {
            return Err(Error::Config(format!(
                "auto-encoder mask {:?} must be ascending unique values in 1..=4",
                self.ae_mask
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        Ok(())
    }

    /// Applies Re, then I, then S.
    pub fn apply(&self, baseline: &LayerGraph) -> Result<LayerGraph> {
        self.validate()?;
        let mut g = baseline.clone();
        if self.enable_re {
            g = add_residual_connections(&g)?;
        }
        if self.enable_i {
            g = attach_autoencoders(&g, &self.ae_mask)?;
        }
        if self.enable_s {
            g = add_skip_connections(&g)?;
        }
        Ok(g)
    }

    /// Component label: `Baseline`, `Re-CNN`, `SI-CNN`, `SIRe-CNN`, ...
    /// Restricted masks read `SIRe-AE_{1,2}`.
    pub fn label(&self) -> String {
        let mut s = String::new();
        if self.enable_s {
            s.push('S');
        }
        if self.enable_i {
            s.push('I');
        }
        if self.enable_re {
            s.push_str("Re");
        }
        if s.is_empty() {
            return "Baseline".into();
        }
        if self.enable_i && self.ae_mask != FULL_MASK {
            format!("{s}-AE_{{{}}}", mask_text(&self.ae_mask))
        } else {
            format!("{s}-CNN")
        }
    }

    pub fn components_text(&self) -> String {
        let mut parts = Vec::new();
        if self.enable_s {
            parts.push("S");
        }
        if self.enable_i {
            parts.push("I");
        }
        if self.enable_re {
            parts.push("Re");
        }
        parts.join(",")
    }
}

impl fmt::Display for SIReConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (mask [{}], lambda {})", self.label(), mask_text(&self.ae_mask), self.lambda)
    }
}

pub fn mask_text(mask: &[usize]) -> String {
    mask.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
}

/// Parses `1,2,4` (whitespace tolerated) into a sorted, de-duplicated mask.
pub fn parse_mask(text: &str) -> Result<Vec<usize>> {
    let mut mask = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let i: usize = part
            .parse()
            .map_err(|_| Error::Config(format!("bad auto-encoder index {part:?}")))?;
        mask.push(i);
    }
    Ok(normalize_mask(&mask))
}

fn normalize_mask(mask: &[usize]) -> Vec<usize> {
    let mut m = mask.to_vec();
    m.sort_unstable();
    m.dedup();
    m
}

/// Every non-empty subset of `{1,2,3,4}`, ordered by size then
/// lexicographically.
pub fn all_masks() -> Vec<Vec<usize>> {
    let mut masks: Vec<Vec<usize>> = (1u32..16)
        .map(|bits| FULL_MASK.iter().copied().filter(|i| bits & (1 << (i - 1)) != 0).collect())
        .collect();
    masks.sort_by(|a: &Vec<usize>, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    masks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn s_without_i_is_rejected() {
        let err = SIReConfig::from_components("S", 0.2).unwrap_err();
        assert!(err.to_string().contains("requires I"));
        assert!(SIReConfig::from_components("S,Re", 0.2).is_err());
    }

    #[test]
    fn labels() {
        assert_eq!(SIReConfig::baseline().label(), "Baseline");
        assert_eq!(SIReConfig::from_components("Re", 0.2).unwrap().label(), "Re-CNN");
        assert_eq!(SIReConfig::from_components("i,re", 0.2).unwrap().label(), "IRe-CNN");
        assert_eq!(SIReConfig::full(0.2).label(), "SIRe-CNN");
        assert_eq!(SIReConfig::with_mask(&[2, 1], 0.2).unwrap().label(), "SIRe-AE_{1,2}");
    }

    #[test]
    fn fifteen_masks() {
        let m = all_masks();
        assert_eq!(m.len(), 15);
        assert_eq!(m[0], vec![1]);
        assert_eq!(m[4], vec![1, 2]);
        assert_eq!(m[14], vec![1, 2, 3, 4]);
    }

    #[test]
    fn mask_validation() {
        assert!(SIReConfig::with_mask(&[5], 0.2).is_err());
        assert!(SIReConfig::with_mask(&[], 0.2).is_err());
        assert_eq!(parse_mask(" 3, 1 ,3").unwrap(), vec![1, 3]);
    }
}
