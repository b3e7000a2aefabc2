use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::NormalVector;

/// Dense normal raster with validity mask, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    width: usize,
    height: usize,
    normals: Vec<NormalVector>,
    valid: Vec<bool>,
}

impl NormalMap {
    /// A map with every pixel invalid.
    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            normals: vec![NormalVector::default(); width * height],
            valid: vec![false; width * height],
        }
    }

    pub fn from_parts(
        width: usize,
        height: usize,
        normals: Vec<NormalVector>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        let n = width
            .checked_mul(height)
            .ok_or_else(|| Error::Dimension(format!("{width}x{height} overflows")))?;
        if normals.len() != n || valid.len() != n {
            return Err(Error::Dimension(format!(
                "{width}x{height} normal map needs {n} samples, got {} normals and {} mask entries",
                normals.len(),
                valid.len()
            )));
        }
        Ok(Self {
            width,
            height,
            normals,
            valid,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn normals(&self) -> &[NormalVector] {
        &self.normals
    }

    pub fn mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn get(&self, u: usize, v: usize) -> Option<NormalVector> {
        let i = v * self.width + u;
        self.valid[i].then_some(self.normals[i])
    }

    pub fn set(&mut self, u: usize, v: usize, n: Option<NormalVector>) {
        let i = v * self.width + u;
        match n {
            Some(n) => {
                self.normals[i] = n;
                self.valid[i] = true;
            }
            None => {
                self.normals[i] = NormalVector::default();
                self.valid[i] = false;
            }
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&b| b).count()
    }

    /// Runs `row` once per image row, either inline or on a dedicated pool.
    /// Each invocation writes only its own row, so the result does not depend
    /// on how rows are scheduled.
    pub(crate) fn fill_rows<F>(&mut self, exec: Execution, row: F) -> Result<()>
    where
        F: Fn(usize, &mut [NormalVector], &mut [bool]) + Sync,
    {
        let w = self.width.max(1);
        match exec {
            Execution::Sequential => {
                for (v, (n, m)) in self
                    .normals
                    .chunks_mut(w)
                    .zip(self.valid.chunks_mut(w))
                    .enumerate()
                {
                    row(v, n, m);
                }
            }
            Execution::Parallel { threads } => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads.max(1))
                    .build()
                    .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
                let normals = &mut self.normals;
                let valid = &mut self.valid;
                pool.install(|| {
                    normals
                        .par_chunks_mut(w)
                        .zip(valid.par_chunks_mut(w))
                        .enumerate()
                        .for_each(|(v, (n, m))| row(v, n, m));
                });
            }
        }
        Ok(())
    }
}

/// How row-parallel kernels are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Execution {
    #[default]
    Sequential,
    Parallel { threads: usize },
}

impl Execution {
    /// `1` (or `0`) maps to sequential execution.
    pub fn with_threads(threads: usize) -> Self {
        if threads <= 1 {
            Execution::Sequential
        } else {
            Execution::Parallel { threads }
        }
    }

    pub fn threads(&self) -> usize {
        match *self {
            Execution::Sequential => 1,
            Execution::Parallel { threads } => threads,
        }
    }
}
