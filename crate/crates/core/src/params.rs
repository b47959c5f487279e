//! Flat parameter storage.
//!
//! All trainable tensors of a model live in one contiguous buffer. A
//! [`ParamLayout`] names every tensor, records its shape and which part of
//! the network it belongs to, and hands out [`Slot`]s the layers use to view
//! their weights. Gradients and optimizer moments are buffers of the same
//! length, so clipping and Adam are plain loops over slices.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::tensor::Float;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    #[inline]
    pub fn of<'a, T>(&self, buf: &'a [T]) -> &'a [T] {
        &buf[self.range()]
    }

    #[inline]
    pub fn of_mut<'a, T>(&self, buf: &'a mut [T]) -> &'a mut [T] {
        &mut buf[self.range()]
    }
}

/// Which side of the PHi layer a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Embedding,
    /// Backbone layers below the PHi layer.
    Bottom,
    Phi,
    /// Backbone layers above the PHi layer.
    Top,
    Head,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Normal(f64),
    Zeros,
    Const(f64),
    Values(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub slot: Slot,
    pub group: Group,
    pub init: Init,
}

#[derive(Debug, Clone, Default)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    total: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, rows: usize, cols: usize, group: Group, init: Init) -> Slot {
        let slot = Slot {
            offset: self.total,
            rows,
            cols,
        };
        self.total += slot.len();
        self.entries.push(ParamEntry {
            name: name.into(),
            slot,
            group,
            init,
        });
        slot
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn find(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn group_len(&self, group: Group) -> usize {
        self.entries.iter().filter(|e| e.group == group).map(|e| e.slot.len()).sum()
    }

    /// Draws initial values in layout order. Normal draws are made in `f64`
    /// and rounded, so `f32` and `f64` models start from the same point.
    pub fn init<T: Float>(&self, rng: &mut Rng) -> Vec<T> {
        let mut out = vec![T::ZERO; self.total];
        for e in &self.entries {
            let dst = e.slot.of_mut(&mut out);
            match &e.init {
                Init::Normal(std) => {
                    let dist = Normal::new(0.0, *std).expect("positive std");
                    for v in dst.iter_mut() {
                        *v = T::from_f64(dist.sample(rng));
                    }
                }
                Init::Zeros => {}
                Init::Const(c) => dst.iter_mut().for_each(|v| *v = T::from_f64(*c)),
                Init::Values(vals) => {
                    assert_eq!(vals.len(), dst.len(), "init values for {}", e.name);
                    for (d, &s) in dst.iter_mut().zip(vals) {
                        *d = T::from_f64(s);
                    }
                }
            }
        }
        out
    }
}

pub fn global_norm<T: Float>(grads: &[T]) -> f64 {
    grads.iter().map(|g| {
        let g = g.to_f64();
        g * g
    }).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    #[test]
    fn layout_is_contiguous_and_grouped() {
        let mut l = ParamLayout::new();
        let a = l.push("a", 2, 3, Group::Bottom, Init::Normal(0.02));
        let b = l.push("b", 1, 3, Group::Top, Init::Const(1.0));
        assert_eq!(a.range(), 0..6);
        assert_eq!(b.range(), 6..9);
        assert_eq!(l.group_len(Group::Bottom), 6);
        let p: Vec<f32> = l.init(&mut stream(1, Purpose::Init, 0));
        let q: Vec<f64> = l.init(&mut stream(1, Purpose::Init, 0));
        assert_eq!(b.of(&p), &[1.0, 1.0, 1.0]);
        for (x, y) in p.iter().zip(&q) {
            assert_eq!(*x, *y as f32);
        }
    }
}
