use crate::error::{Error, Result};

/// Per-patch information scores on the patch grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoScoreMap {
    pub rows: usize,
    pub cols: usize,
    pub scores: Vec<f64>,
}

impl InfoScoreMap {
    pub fn new(rows: usize, cols: usize, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != rows * cols {
            return Err(Error::shape(rows * cols, scores.len()));
        }
        if let Some(s) = scores.iter().find(|s| !s.is_finite() || **s < 0.0) {
            return Err(Error::invalid(format!("information score {s} is not a finite nonnegative value")));
        }
        Ok(Self { rows, cols, scores })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Masking probabilities per patch plus the batch quantiles that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskProbabilityMap {
    pub rows: usize,
    pub cols: usize,
    pub probs: Vec<f64>,
    pub q20: f64,
    pub q80: f64,
}

impl MaskProbabilityMap {
    pub fn mean(&self) -> f64 {
        self.probs.iter().sum::<f64>() / self.probs.len() as f64
    }
}

/// `true` marks a patch hidden from the student.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskMap {
    pub rows: usize,
    pub cols: usize,
    pub masked: Vec<bool>,
}

impl MaskMap {
    pub fn new(rows: usize, cols: usize, masked: Vec<bool>) -> Result<Self> {
        if masked.len() != rows * cols {
            return Err(Error::shape(rows * cols, masked.len()));
        }
        Ok(Self { rows, cols, masked })
    }

    pub fn none(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            masked: vec![false; rows * cols],
        }
    }

    pub fn from_masked_positions(rows: usize, cols: usize, positions: &[usize]) -> Result<Self> {
        let mut masked = vec![false; rows * cols];
        for &p in positions {
            *masked
                .get_mut(p)
                .ok_or_else(|| Error::invalid(format!("position {p} outside a {rows}x{cols} grid")))? = true;
        }
        Ok(Self { rows, cols, masked })
    }

    pub fn len(&self) -> usize {
        self.masked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masked.is_empty()
    }

    pub fn masked_count(&self) -> usize {
        self.masked.iter().filter(|m| **m).count()
    }

    pub fn masked_fraction(&self) -> f64 {
        self.masked_count() as f64 / self.len() as f64
    }

    pub fn masked_positions(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.masked[i]).collect()
    }

    pub fn visible_positions(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.masked[i]).collect()
    }

    pub(crate) fn check_same_shape(&self, other: &MaskMap) -> Result<()> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::shape((self.rows, self.cols), (other.rows, other.cols)));
        }
        Ok(())
    }
}
