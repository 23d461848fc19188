use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Index of a parameter inside its [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
}

/// Named dense parameters in insertion order. The order is part of the
/// checkpoint format and of every [`GradSet`] built against this set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamSet {
    pub seed: u64,
    pub params: Vec<Param>,
    #[serde(skip)]
    rng: Option<ChaCha8Rng>,
}

impl PartialEq for ParamSet {
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed && self.params == other.params
    }
}

impl ParamSet {
    pub fn new(seed: u64) -> Self {
        ParamSet {
            seed,
            params: Vec::new(),
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    fn push(&mut self, name: &str, value: Matrix) -> ParamId {
        assert!(self.id(name).is_none(), "duplicate parameter `{name}`");
        self.params.push(Param {
            name: name.to_string(),
            value,
        });
        ParamId(self.params.len() - 1)
    }

    /// Glorot-uniform weights, bounds `±sqrt(6 / (fan_in + fan_out))`.
    pub fn add_glorot(&mut self, name: &str, fan_in: usize, fan_out: usize) -> ParamId {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let rng = self
            .rng
            .get_or_insert_with(|| ChaCha8Rng::seed_from_u64(self.seed));
        let data = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        self.push(name, Matrix::from_vec(fan_in, fan_out, data))
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.push(name, Matrix::zeros(rows, cols))
    }

    pub fn add_value(&mut self, name: &str, value: Matrix) -> ParamId {
        self.push(name, value)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Matrix> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn entry_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.all_finite())
    }

    pub fn zeros_like(&self) -> GradSet {
        GradSet {
            grads: self
                .params
                .iter()
                .map(|p| Matrix::zeros(p.value.rows, p.value.cols))
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("params serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut set: ParamSet =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("checkpoint: {e}")))?;
        for p in &set.params {
            if p.value.data.len() != p.value.rows * p.value.cols {
                return Err(Error::Format(format!(
                    "parameter `{}` has {} entries for shape {}x{}",
                    p.name,
                    p.value.data.len(),
                    p.value.rows,
                    p.value.cols
                )));
            }
        }
        set.rng = None;
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Gradients aligned index-for-index with a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradSet {
    pub grads: Vec<Matrix>,
}

impl GradSet {
    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.grads[id.0]
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().all(Matrix::all_finite)
    }

    pub fn congruent_with(&self, params: &ParamSet) -> bool {
        self.grads.len() == params.len()
            && self
                .grads
                .iter()
                .zip(&params.params)
                .all(|(g, p)| g.shape() == p.value.shape())
    }
}
