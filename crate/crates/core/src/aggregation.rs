//! Fusion of the local features of an n-tuple into one global feature.
//!
//! All three methods work per feature dimension over the union of the
//! `n·L²` positions of the tuple:
//!
//! * average (AA): mean of every value,
//! * max (MA): the largest value,
//! * top-K average (KMA): mean of the K largest values.
//!
//! Values are summed in a canonical order (descending value, then member,
//! row, column) so the result does not depend on the order of the tuple
//! members, bit for bit. The same order breaks ties when routing gradients.

use crate::error::{Error, Result};
use crate::models::LocalFeatureMap;
use crate::tensor::Tensor;
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Aggregation {
    Average,
    Max,
    TopKAverage(usize),
}

impl Aggregation {
    /// Short method name: `aa`, `ma` or `kma`.
    pub fn name(&self) -> &'static str {
        match self {
            Aggregation::Average => "aa",
            Aggregation::Max => "ma",
            Aggregation::TopKAverage(_) => "kma",
        }
    }

    /// K for KMA, 0 otherwise.
    pub fn k(&self) -> usize {
        match self {
            Aggregation::TopKAverage(k) => *k,
            _ => 0,
        }
    }

    /// Builds a method from its short name and K (ignored unless `kma`).
    pub fn from_parts(name: &str, k: usize) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "aa" | "average" => Ok(Aggregation::Average),
            "ma" | "max" => Ok(Aggregation::Max),
            "kma" | "topk" => {
                if k == 0 {
                    Err(Error::param("KMA needs K >= 1"))
                } else {
                    Ok(Aggregation::TopKAverage(k))
                }
            }
            other => Err(Error::param(format!("unknown aggregation `{other}`"))),
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Aggregation::TopKAverage(k) => write!(f, "kma:{k}"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some((name, k)) => {
                let k = k.parse().map_err(|_| Error::param(format!("bad K in aggregation `{s}`")))?;
                Aggregation::from_parts(name, k)
            }
            None => Aggregation::from_parts(s, 0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalFeature {
    pub values: Tensor,
    pub method: Aggregation,
}

impl GlobalFeature {
    pub fn depth(&self) -> usize {
        self.values.len()
    }
}

/// Which positions contributed to each dimension, for gradient routing.
///
/// Positions are indexed `member·L² + i·L + j`; each selected position of a
/// dimension receives an equal share of that dimension's gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregationContext {
    members: usize,
    side: usize,
    depth: usize,
    selected: Selection,
}

#[derive(Clone, Debug, PartialEq)]
enum Selection {
    All,
    PerDim(Vec<Vec<usize>>),
}

impl AggregationContext {
    /// Contributing positions and per-position weight for dimension `d`.
    pub fn contributors(&self, d: usize) -> (Vec<usize>, f64) {
        let total = self.members * self.side * self.side;
        match &self.selected {
            Selection::All => ((0..total).collect(), 1.0 / total as f64),
            Selection::PerDim(sel) => (sel[d].clone(), 1.0 / sel[d].len() as f64),
        }
    }

    /// Routes a cotangent on the global feature back to each member's map.
    pub fn backward(&self, d_global: &Tensor) -> Result<Vec<Tensor>> {
        if d_global.len() != self.depth {
            return Err(Error::shape(format!(
                "global cotangent has {} values, aggregation produced {}",
                d_global.len(),
                self.depth
            )));
        }
        let (l, depth) = (self.side, self.depth);
        let positions = l * l;
        let mut out = vec![vec![0.0; positions * depth]; self.members];
        let g = d_global.data();
        match &self.selected {
            Selection::All => {
                let w = 1.0 / (self.members * positions) as f64;
                for member in &mut out {
                    for p in 0..positions {
                        for d in 0..depth {
                            member[p * depth + d] = g[d] * w;
                        }
                    }
                }
            }
            Selection::PerDim(sel) => {
                for (d, picks) in sel.iter().enumerate() {
                    let share = g[d] / picks.len() as f64;
                    for &q in picks {
                        let (m, p) = (q / positions, q % positions);
                        out[m][p * depth + d] += share;
                    }
                }
            }
        }
        out.into_iter().map(|v| Tensor::new(&[l, l, depth], v)).collect()
    }
}

fn check_members(locals: &[LocalFeatureMap]) -> Result<(usize, usize)> {
    let first = locals.first().ok_or_else(|| Error::shape("cannot aggregate an empty tuple"))?;
    for m in locals {
        if m.side != first.side || m.depth != first.depth {
            return Err(Error::shape(format!(
                "tuple mixes {0}x{0}x{1} and {2}x{2}x{3} maps",
                first.side, first.depth, m.side, m.depth
            )));
        }
    }
    Ok((first.side, first.depth))
}

/// Per dimension: sum of the `k` largest values (canonical order), their
/// positions, and the mean clamped to the selected values' range.
fn fuse(locals: &[LocalFeatureMap], k: usize, keep: bool) -> Result<(Vec<f64>, Vec<Vec<usize>>)> {
    let (side, depth) = check_members(locals)?;
    let positions = side * side;
    let total = locals.len() * positions;
    if k == 0 || k > total {
        return Err(Error::param(format!("K = {k} outside 1..={total}")));
    }
    let mut values = Vec::with_capacity(depth);
    let mut picks = Vec::with_capacity(if keep { depth } else { 0 });
    let mut column: Vec<(f64, usize)> = Vec::with_capacity(total);
    for d in 0..depth {
        column.clear();
        for (m, map) in locals.iter().enumerate() {
            let data = map.values.data();
            for p in 0..positions {
                column.push((data[p * depth + d], m * positions + p));
            }
        }
        let by_rank = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
        if k < total {
            column.select_nth_unstable_by(k - 1, by_rank);
            column[..k].sort_unstable_by(by_rank);
        } else {
            column.sort_unstable_by(by_rank);
        }
        let top = &column[..k];
        let sum: f64 = top.iter().map(|v| v.0).sum();
        let (hi, lo) = (top[0].0, top[k - 1].0);
        values.push((sum / k as f64).clamp(lo, hi));
        if keep {
            picks.push(top.iter().map(|v| v.1).collect());
        }
    }
    Ok((values, picks))
}

pub fn aggregate_aa(locals: &[LocalFeatureMap]) -> Result<(GlobalFeature, AggregationContext)> {
    let (side, depth) = check_members(locals)?;
    let total = locals.len() * side * side;
    let (values, _) = fuse(locals, total, false)?;
    Ok((
        GlobalFeature { values: Tensor::from_vec(values), method: Aggregation::Average },
        AggregationContext { members: locals.len(), side, depth, selected: Selection::All },
    ))
}

pub fn aggregate_ma(locals: &[LocalFeatureMap]) -> Result<(GlobalFeature, AggregationContext)> {
    let (g, ctx) = aggregate_kma(locals, 1)?;
    Ok((GlobalFeature { method: Aggregation::Max, ..g }, ctx))
}

pub fn aggregate_kma(locals: &[LocalFeatureMap], k: usize) -> Result<(GlobalFeature, AggregationContext)> {
    let (side, depth) = check_members(locals)?;
    let (values, picks) = fuse(locals, k, true)?;
    Ok((
        GlobalFeature { values: Tensor::from_vec(values), method: Aggregation::TopKAverage(k) },
        AggregationContext { members: locals.len(), side, depth, selected: Selection::PerDim(picks) },
    ))
}

pub fn aggregate(locals: &[LocalFeatureMap], method: Aggregation) -> Result<(GlobalFeature, AggregationContext)> {
    match method {
        Aggregation::Average => aggregate_aa(locals),
        Aggregation::Max => aggregate_ma(locals),
        Aggregation::TopKAverage(k) => aggregate_kma(locals, k),
    }
}

/// Global feature only.
pub fn aggregate_values(locals: &[LocalFeatureMap], method: Aggregation) -> Result<Tensor> {
    let (side, _) = check_members(locals)?;
    let k = match method {
        Aggregation::Average => locals.len() * side * side,
        Aggregation::Max => 1,
        Aggregation::TopKAverage(k) => k,
    };
    Ok(Tensor::from_vec(fuse(locals, k, false)?.0))
}
