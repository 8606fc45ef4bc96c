//! Flat parameter storage with named, shaped blocks.

use crate::container::{Tensor, TensorInfo};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// All model parameters live in one contiguous buffer so optimizers and
/// gradient buffers can treat them as a single flat vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    data: Vec<f64>,
    blocks: Vec<Block>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: impl FnMut() -> f64) -> BlockId {
        let len: usize = shape.iter().product();
        let offset = self.data.len();
        self.data.extend(std::iter::repeat_with(init).take(len));
        self.blocks.push(Block {
            name: name.into(),
            shape: shape.to_vec(),
            offset,
            len,
        });
        BlockId(self.blocks.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, id: BlockId) -> &Block {
        &self.blocks[id.0]
    }

    pub fn get(&self, id: BlockId) -> &[f64] {
        let b = &self.blocks[id.0];
        &self.data[b.offset..b.offset + b.len]
    }

    pub fn get_mut(&mut self, id: BlockId) -> &mut [f64] {
        let b = &self.blocks[id.0];
        &mut self.data[b.offset..b.offset + b.len]
    }

    pub fn to_tensors(&self) -> Vec<Tensor> {
        self.blocks
            .iter()
            .map(|b| Tensor {
                info: TensorInfo {
                    name: b.name.clone(),
                    shape: b.shape.clone(),
                },
                data: self.data[b.offset..b.offset + b.len].to_vec(),
            })
            .collect()
    }

    /// Overwrite values from tensors whose names and shapes must match this
    /// store's block table exactly, in order.
    pub fn load_tensors(&mut self, tensors: &[Tensor]) -> Result<()> {
        if tensors.len() != self.blocks.len() {
            return Err(Error::validation(format!(
                "expected {} parameter tensors, found {}",
                self.blocks.len(),
                tensors.len()
            )));
        }
        for (b, t) in self.blocks.iter().zip(tensors) {
            if b.name != t.info.name || b.shape != t.info.shape {
                return Err(Error::validation(format!(
                    "parameter {} {:?} does not match stored {} {:?}",
                    b.name, b.shape, t.info.name, t.info.shape
                )));
            }
            self.data[b.offset..b.offset + b.len].copy_from_slice(&t.data);
        }
        Ok(())
    }
}
