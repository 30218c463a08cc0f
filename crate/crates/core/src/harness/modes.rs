//! Sampling modes, looked up by name.
//!
//! A mode decides which sample databases a run uses. The four built-ins are
//! the ablation arms: no sampling, GT only, FP only, and both.

use crate::augmentor::AugmentationPlan;
use crate::error::{Error, Result};

pub trait SamplingMode: Send + Sync {
    fn name(&self) -> &str;
    fn uses_gt(&self) -> bool;
    fn uses_fp(&self) -> bool;

    /// The plan actually applied under this mode.
    fn effective_plan(&self, plan: &AugmentationPlan) -> AugmentationPlan {
        plan.masked(self.uses_gt(), self.uses_fp())
    }
}

/// A mode defined by which of the two databases it draws from.
#[derive(Debug, Clone, Copy)]
pub struct Flags {
    pub name: &'static str,
    pub gt: bool,
    pub fp: bool,
}

impl SamplingMode for Flags {
    fn name(&self) -> &str {
        self.name
    }
    fn uses_gt(&self) -> bool {
        self.gt
    }
    fn uses_fp(&self) -> bool {
        self.fp
    }
}

pub const NONE: Flags = Flags { name: "none", gt: false, fp: false };
pub const GT_ONLY: Flags = Flags { name: "gt_only", gt: true, fp: false };
pub const FP_ONLY: Flags = Flags { name: "fp_only", gt: false, fp: true };
pub const GT_AND_FP: Flags = Flags { name: "gt_and_fp", gt: true, fp: true };

pub struct ModeRegistry {
    modes: Vec<Box<dyn SamplingMode>>,
}

impl Default for ModeRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl ModeRegistry {
    pub fn builtin() -> Self {
        let mut r = Self { modes: Vec::new() };
        for m in [NONE, GT_ONLY, FP_ONLY, GT_AND_FP] {
            r.register(Box::new(m)).expect("built-in names are distinct");
        }
        r
    }

    pub fn register(&mut self, mode: Box<dyn SamplingMode>) -> Result<()> {
        if self.modes.iter().any(|m| m.name() == mode.name()) {
            return Err(Error::Config(format!("mode `{}` registered twice", mode.name())));
        }
        self.modes.push(mode);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&dyn SamplingMode> {
        self.modes
            .iter()
            .find(|m| m.name() == name)
            .map(|m| m.as_ref())
            .ok_or_else(|| Error::Config(format!("unknown mode `{name}` (known: {})", self.names().join(", "))))
    }

    /// Names in registration order.
    pub fn names(&self) -> Vec<&str> {
        self.modes.iter().map(|m| m.name()).collect()
    }
}
