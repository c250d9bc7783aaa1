use ndarray::{Array2, Ix2};

use super::{join, normal, Module, NnRng, Param, ParamsMut, ParamsRef, Scalar};
use crate::{Error, Result};

/// Token embedding table `[vocab, dim]`. With `mask_zero`, positions
/// holding `pad_id` produce zero rows and receive no gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<F: Scalar> {
    pub table: Param<F, Ix2>,
    pub pad_id: u32,
    pub mask_zero: bool,
}

#[derive(Debug, Clone)]
pub struct EmbeddingCache {
    ids: Vec<u32>,
}

impl<F: Scalar> Embedding<F> {
    /// Normal(0, dim^-1/2) initialization.
    pub fn new(vocab: usize, dim: usize, pad_id: u32, rng: &mut NnRng) -> Self {
        let table = normal(Ix2(vocab, dim), (dim as f64).powf(-0.5), rng);
        Self { table: Param::new(table, true), pad_id, mask_zero: true }
    }

    pub fn from_table(table: Array2<F>, pad_id: u32, mask_zero: bool) -> Self {
        Self { table: Param::new(table, true), pad_id, mask_zero }
    }

    pub fn vocab_size(&self) -> usize {
        self.table.value.nrows()
    }

    pub fn dim(&self) -> usize {
        self.table.value.ncols()
    }

    fn masked(&self, id: u32) -> bool {
        self.mask_zero && id == self.pad_id
    }

    pub fn forward(&self, ids: &[u32]) -> Result<(Array2<F>, EmbeddingCache)> {
        let vocab = self.vocab_size();
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= vocab) {
            return Err(Error::Index(format!("token id {bad} >= vocabulary size {vocab}")));
        }
        let mut out = Array2::zeros((ids.len(), self.dim()));
        for (mut row, &id) in out.rows_mut().into_iter().zip(ids) {
            if !self.masked(id) {
                row.assign(&self.table.value.row(id as usize));
            }
        }
        Ok((out, EmbeddingCache { ids: ids.to_vec() }))
    }

    pub fn backward(&mut self, cache: &EmbeddingCache, dy: &Array2<F>) {
        for (row, &id) in dy.rows().into_iter().zip(&cache.ids) {
            if !self.masked(id) {
                let mut g = self.table.grad.row_mut(id as usize);
                g += &row;
            }
        }
    }
}

impl<F: Scalar> Module<F> for Embedding<F> {
    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamsMut<'a, F>) {
        self.table.push_mut(join(prefix, "table"), out);
    }

    fn collect_params<'a>(&'a self, prefix: &str, out: &mut ParamsRef<'a, F>) {
        self.table.push_ref(join(prefix, "table"), out);
    }
}
