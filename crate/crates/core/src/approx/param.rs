use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Named contiguous range of a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub start: usize,
    pub shape: Vec<usize>,
}

impl Block {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub blocks: Vec<Block>,
}

impl Layout {
    pub fn builder() -> LayoutBuilder {
        LayoutBuilder::default()
    }

    pub fn len(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.start + b.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }
}

#[derive(Debug, Default)]
pub struct LayoutBuilder {
    blocks: Vec<Block>,
    next: usize,
}

impl LayoutBuilder {
    pub fn block(mut self, name: impl Into<String>, shape: &[usize]) -> Self {
        let block = Block {
            name: name.into(),
            start: self.next,
            shape: shape.to_vec(),
        };
        self.next += block.len();
        self.blocks.push(block);
        self
    }

    pub fn build(self) -> Arc<Layout> {
        Arc::new(Layout { blocks: self.blocks })
    }
}

/// Flat parameter (or gradient) vector with a shared layout descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: Arc<Layout>,
}

impl ParamVector {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        Self {
            values: vec![0.0; layout.len()],
            layout,
        }
    }

    pub fn from_values(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::Shape(format!(
                "{} values for a layout of {}",
                values.len(),
                layout.len()
            )));
        }
        Ok(Self { values, layout })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(Arc::clone(&self.layout))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.layout.block(name).map(|b| &self.values[b.range()])
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layout.block(name)?.range();
        Some(&mut self.values[range])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_ranges_are_contiguous() {
        let layout = Layout::builder().block("w", &[2, 3]).block("b", &[2]).build();
        assert_eq!(layout.len(), 8);
        assert_eq!(layout.block("b").unwrap().range(), 6..8);
        let mut p = ParamVector::zeros(layout);
        p.block_mut("b").unwrap()[1] = 4.0;
        assert_eq!(p.values[7], 4.0);
        assert!(ParamVector::from_values(p.layout.clone(), vec![0.0; 3]).is_err());
    }
}
