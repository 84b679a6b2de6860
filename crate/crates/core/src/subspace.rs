//! Subspace specifications `{i, K, direction}` and removal of their
//! contribution from embeddings.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::embeddings::{Embedding, EmbeddingSet};
use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::space::VariabilitySpace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// `i, i+1, ..., i+K-1`
    Forward,
    /// `i-K+1, ..., i`
    Backward,
}

impl Direction {
    pub fn symbol(self) -> char {
        match self {
            Direction::Forward => '+',
            Direction::Backward => '-',
        }
    }
}

/// Label carried by a spec. It does not influence which indices are
/// resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Family {
    Primary,
    Secondary,
    Residual,
    #[default]
    Custom,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Primary => "primary",
            Family::Secondary => "secondary",
            Family::Residual => "residual",
            Family::Custom => "custom",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "primary" => Ok(Family::Primary),
            "secondary" => Ok(Family::Secondary),
            "residual" => Ok(Family::Residual),
            "custom" => Ok(Family::Custom),
            other => Err(Error::Invalid(format!(
                "unknown subspace family '{other}' (expected primary, secondary, residual or custom)"
            ))),
        }
    }
}

/// A contiguous block of eigen-dimensions: `size` dimensions starting at the
/// 1-based `start` and running in `direction`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SubspaceSpec {
    pub start: usize,
    pub size: usize,
    pub direction: Direction,
    pub family: Family,
}

impl SubspaceSpec {
    pub fn new(start: usize, size: usize, direction: Direction) -> Self {
        SubspaceSpec {
            start,
            size,
            direction,
            family: Family::Custom,
        }
    }

    /// The top-variance block `{1, K, +}`.
    pub fn primary(size: usize) -> Self {
        SubspaceSpec {
            family: Family::Primary,
            ..SubspaceSpec::new(1, size, Direction::Forward)
        }
    }

    /// The block ending at the turning dimension, `{i_s, K, -}`.
    pub fn secondary(turning: usize, size: usize) -> Self {
        SubspaceSpec {
            family: Family::Secondary,
            ..SubspaceSpec::new(turning, size, Direction::Backward)
        }
    }

    /// The bottom block `{D, K, -}`.
    pub fn residual(dim: usize, size: usize) -> Self {
        SubspaceSpec {
            family: Family::Residual,
            ..SubspaceSpec::new(dim, size, Direction::Backward)
        }
    }

    /// Resolves the spec to 1-based ascending indices within `[1, dim]`.
    pub fn resolve(&self, dim: usize) -> Result<Vec<usize>> {
        let out_of_bounds = |endpoint: i64| Error::OutOfBounds { endpoint, dim };
        if self.start < 1 || self.start > dim {
            return Err(out_of_bounds(self.start as i64));
        }
        if self.size == 0 {
            return Ok(Vec::new());
        }
        let (lo, hi) = match self.direction {
            Direction::Forward => (self.start as i64, self.start as i64 + self.size as i64 - 1),
            Direction::Backward => (self.start as i64 - self.size as i64 + 1, self.start as i64),
        };
        if lo < 1 {
            return Err(out_of_bounds(lo));
        }
        if hi > dim as i64 {
            return Err(out_of_bounds(hi));
        }
        Ok((lo as usize..=hi as usize).collect())
    }
}

impl fmt::Display for SubspaceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}:{}",
            self.family,
            self.start,
            self.size,
            self.direction.symbol()
        )
    }
}

pub const SPEC_GRAMMAR: &str = "[<family>:]<start>:<size>:<+|->, e.g. secondary:200:45:-";

impl FromStr for SubspaceSpec {
    type Err = Error;

    /// Parses `[<family>:]<i>:<K>:<+|->`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| Error::Invalid(format!("bad subspace spec '{s}': {why}; expected {SPEC_GRAMMAR}"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        let (family, rest) = match parts.len() {
            4 => (parts[0].parse::<Family>().map_err(|_| bad("unknown family"))?, &parts[1..]),
            3 => (Family::Custom, &parts[..]),
            _ => return Err(bad("wrong number of fields")),
        };
        let start = rest[0].parse::<usize>().map_err(|_| bad("start is not a positive integer"))?;
        let size = rest[1].parse::<usize>().map_err(|_| bad("size is not a non-negative integer"))?;
        let direction = match rest[2] {
            "+" => Direction::Forward,
            "-" => Direction::Backward,
            _ => return Err(bad("direction must be + or -")),
        };
        Ok(SubspaceSpec {
            start,
            size,
            direction,
            family,
        })
    }
}

/// How a modification maps an embedding into and out of the space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ModifyOptions {
    /// Project `x - μ` instead of `x`, adding `μ` back afterwards.
    pub centered: bool,
    /// Rescale the modified embedding to unit length.
    pub renormalize: bool,
}

/// What a single modification removed.
#[derive(Debug, Clone, PartialEq)]
pub struct ModificationReport {
    /// 1-based indices whose coefficients were zeroed.
    pub zeroed: Vec<usize>,
    /// Sum of the squared zeroed coefficients.
    pub removed_energy: f64,
    /// Norm of the projected vector (`x`, or `x - μ` when centered).
    pub original_norm: f64,
    /// Norm of its modified counterpart, before any renormalization.
    pub modified_norm: f64,
}

/// Removes the contribution of `spec` from `x`: project, zero the
/// coefficients of the resolved dimensions, reconstruct.
pub fn modify(
    space: &VariabilitySpace,
    x: &[f64],
    spec: &SubspaceSpec,
) -> Result<(Vec<f64>, ModificationReport)> {
    modify_with(space, x, spec, ModifyOptions::default())
}

pub fn modify_with(
    space: &VariabilitySpace,
    x: &[f64],
    spec: &SubspaceSpec,
    options: ModifyOptions,
) -> Result<(Vec<f64>, ModificationReport)> {
    let zeroed = spec.resolve(space.dim())?;
    modify_resolved(space, x, &zeroed, options)
}

fn modify_resolved(
    space: &VariabilitySpace,
    x: &[f64],
    zeroed: &[usize],
    options: ModifyOptions,
) -> Result<(Vec<f64>, ModificationReport)> {
    if zeroed.is_empty() {
        if x.len() != space.dim() {
            return Err(Error::DimensionMismatch {
                expected: space.dim(),
                got: x.len(),
            });
        }
        // Nothing removed: hand back the input itself rather than V Vᵀ x.
        let n = norm(x);
        let mut out = x.to_vec();
        if options.renormalize && n > 0.0 {
            out.iter_mut().for_each(|v| *v /= n);
        }
        let original_norm = if options.centered {
            norm(&x.iter().zip(space.mean()).map(|(a, m)| a - m).collect::<Vec<_>>())
        } else {
            n
        };
        return Ok((
            out,
            ModificationReport {
                zeroed: Vec::new(),
                removed_energy: 0.0,
                original_norm,
                modified_norm: original_norm,
            },
        ));
    }
    let mut c = if options.centered {
        space.project_centered(x)?
    } else {
        space.project(x)?
    };
    let original_norm = if options.centered {
        norm(&x.iter().zip(space.mean()).map(|(a, m)| a - m).collect::<Vec<_>>())
    } else {
        norm(x)
    };
    let mut removed_energy = 0.0;
    for &j in zeroed {
        removed_energy += c[j - 1] * c[j - 1];
        c[j - 1] = 0.0;
    }
    let modified_norm = norm(&c);
    let mut out = if options.centered {
        space.reconstruct_centered(&c)?
    } else {
        space.reconstruct(&c)?
    };
    if options.renormalize {
        let n = norm(&out);
        if n > 0.0 {
            out.iter_mut().for_each(|v| *v /= n);
        }
    }
    Ok((
        out,
        ModificationReport {
            zeroed: zeroed.to_vec(),
            removed_energy,
            original_norm,
            modified_norm,
        },
    ))
}

/// Applies [`modify_with`] to every record, preserving ids and order.
///
/// Records are processed in parallel; the result does not depend on the
/// number of threads.
pub fn modify_batch(
    space: &VariabilitySpace,
    embeddings: &EmbeddingSet,
    spec: &SubspaceSpec,
    options: ModifyOptions,
) -> Result<(EmbeddingSet, Vec<ModificationReport>)> {
    if embeddings.dim() != space.dim() {
        return Err(Error::DimensionMismatch {
            expected: space.dim(),
            got: embeddings.dim(),
        });
    }
    let zeroed = spec.resolve(space.dim())?;
    let results: Vec<Result<(Vec<f64>, ModificationReport)>> = embeddings
        .records()
        .par_iter()
        .map(|r| modify_resolved(space, &r.vector, &zeroed, options))
        .collect();

    let mut out = EmbeddingSet::new(embeddings.dim())?;
    let mut reports = Vec::with_capacity(embeddings.len());
    for (r, res) in embeddings.iter().zip(results) {
        let (vector, report) = res?;
        out.push(Embedding {
            utt_id: r.utt_id.clone(),
            spk_id: r.spk_id.clone(),
            vector,
        })?;
        reports.push(report);
    }
    Ok((out, reports))
}
