//! Multi-granularity patching.
//!
//! A feature sequence of length `n` is zero-padded at the end to a multiple
//! of the patch size `S` and reshaped so that patch `r` is the concatenation
//! of elements `rS .. rS + S`. Each granularity therefore yields
//! `ceil(n / S)` tokens of width `S * d`. All five sequences of a bundle use
//! the same padding, so element `e` always lands in patch `e / S`, slot
//! `e % S`.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureBundle;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchPlan {
    pub patch_sizes: Vec<usize>,
    pub max_len: usize,
}

impl Default for PatchPlan {
    fn default() -> Self {
        Self {
            patch_sizes: vec![2, 4, 8],
            max_len: 32,
        }
    }
}

impl PatchPlan {
    pub fn new(patch_sizes: Vec<usize>, max_len: usize) -> Result<Self> {
        let plan = Self {
            patch_sizes,
            max_len,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_sizes.is_empty() {
            return Err(Error::Config("patch_sizes must not be empty".into()));
        }
        if self.patch_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "patch_sizes must be strictly increasing, got {:?}",
                self.patch_sizes
            )));
        }
        if let Some(&bad) = self
            .patch_sizes
            .iter()
            .find(|&&s| s == 0 || s > self.max_len)
        {
            return Err(Error::Config(format!(
                "patch size {bad} outside [1, max_len = {}]",
                self.max_len
            )));
        }
        Ok(())
    }

    /// Tokens produced for a sequence of `len` elements at patch size `size`.
    pub fn num_patches(len: usize, size: usize) -> usize {
        len.div_ceil(size)
    }

    /// Upper bound on the stacked pair length at the finest granularity.
    pub fn max_pair_tokens(&self) -> usize {
        let smallest = self.patch_sizes[0];
        2 * self.max_len.div_ceil(smallest)
    }
}

/// One granularity: five `[num_patches, size * d]` tensors.
#[derive(Clone, Debug)]
pub struct PatchGroup {
    pub size: usize,
    pub num_patches: usize,
    pub node: Tensor,
    pub edge: Tensor,
    pub pos: Tensor,
    pub occ: Tensor,
    pub int: Tensor,
}

impl PatchGroup {
    pub fn tensors(&self) -> [&Tensor; 5] {
        [&self.node, &self.edge, &self.pos, &self.occ, &self.int]
    }
}

#[derive(Clone, Debug)]
pub struct PatchedBundle {
    pub groups: Vec<PatchGroup>,
    pub original_len: usize,
}

impl PatchedBundle {
    pub fn group(&self, size: usize) -> Option<&PatchGroup> {
        self.groups.iter().find(|g| g.size == size)
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.size).collect()
    }

    /// Non-padding patch count per granularity.
    pub fn true_lengths(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.num_patches).collect()
    }
}

/// `[len, d]` to `[ceil(len / size), size * d]`.
pub fn patch_sequence(x: &Tensor, size: usize) -> Result<Tensor> {
    let (len, d) = x.dims2()?;
    let lambda = PatchPlan::num_patches(len, size);
    let padded = x.pad_with_zeros(0, 0, lambda * size - len)?;
    Ok(padded.reshape((lambda, size * d))?)
}

pub fn patch(b: &FeatureBundle, plan: &PatchPlan) -> Result<PatchedBundle> {
    if b.length == 0 {
        return Err(Error::Shape("cannot patch an empty bundle".into()));
    }
    let groups = plan
        .patch_sizes
        .iter()
        .map(|&size| {
            Ok(PatchGroup {
                size,
                num_patches: PatchPlan::num_patches(b.length, size),
                node: patch_sequence(&b.node, size)?,
                edge: patch_sequence(&b.edge, size)?,
                pos: patch_sequence(&b.pos, size)?,
                occ: patch_sequence(&b.occ, size)?,
                int: patch_sequence(&b.int, size)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(PatchedBundle {
        groups,
        original_len: b.length,
    })
}

/// Inverse of [`patch`] at one granularity.
pub fn unpatch(p: &PatchedBundle, size: usize) -> Result<FeatureBundle> {
    let g = p
        .group(size)
        .ok_or_else(|| Error::Shape(format!("no granularity with patch size {size}")))?;
    if g.num_patches * size < p.original_len {
        return Err(Error::Shape(format!(
            "{} patches of size {size} cannot hold {} elements",
            g.num_patches, p.original_len
        )));
    }
    let undo = |t: &Tensor| -> Result<Tensor> {
        let (lambda, width) = t.dims2()?;
        if lambda != g.num_patches || width % size != 0 {
            return Err(Error::Shape(format!(
                "patched tensor {:?} inconsistent with {} patches of size {size}",
                t.dims(),
                g.num_patches
            )));
        }
        Ok(t
            .reshape((lambda * size, width / size))?
            .narrow(0, 0, p.original_len)?)
    };
    Ok(FeatureBundle {
        node: undo(&g.node)?,
        edge: undo(&g.edge)?,
        pos: undo(&g.pos)?,
        occ: undo(&g.occ)?,
        int: undo(&g.int)?,
        length: p.original_len,
    })
}
