use crate::error::{Error, Result};

/// Privacy level and domain size shared by every mechanism and formula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyParams {
    epsilon: f64,
    d: usize,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, d: usize) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidParams(format!(
                "epsilon must be finite and > 0, got {epsilon}"
            )));
        }
        if d < 2 {
            return Err(Error::InvalidParams(format!(
                "domain size must be >= 2, got {d}"
            )));
        }
        Ok(Self { epsilon, d })
    }

    #[inline]
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    /// e^ε.
    #[inline]
    pub fn exp_eps(&self) -> f64 {
        self.epsilon.exp()
    }

    /// Checks `1 <= k <= d - 1`, the range where the k-subset estimator is defined.
    pub fn check_subset_size(&self, k: usize) -> Result<()> {
        if k == 0 || k >= self.d {
            return Err(Error::SubsetSizeOutOfRange {
                k,
                min: 1,
                max: self.d - 1,
            });
        }
        Ok(())
    }

    pub fn check_symbol(&self, x: usize) -> Result<()> {
        if x >= self.d {
            return Err(Error::SymbolOutOfRange { x, d: self.d });
        }
        Ok(())
    }
}
