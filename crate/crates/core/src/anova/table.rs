use serde::Serialize;

use super::design::{validate_factors, FactorKind, FactorSpec, RunRecord};
use super::fdist::f_pvalue;
use crate::error::{Error, Result};

/// Residual sums of squares below this fraction of the total are treated as
/// exact zeros (noise-free data).
const ZERO_RESIDUAL_REL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnovaTerm {
    /// Factor names of the term, in factor order.
    pub factors: Vec<String>,
    pub ss: f64,
    pub df: usize,
    pub ms: f64,
    pub f: Option<f64>,
    pub p: Option<f64>,
    pub eta_sq: f64,
}

impl AnovaTerm {
    /// `a:b:c` style label.
    pub fn name(&self) -> String {
        self.factors.join(":")
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualRow {
    pub ss: f64,
    pub df: usize,
    pub ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnovaTable {
    pub factors: Vec<String>,
    pub terms: Vec<AnovaTerm>,
    pub residual: ResidualRow,
    pub total_ss: f64,
    pub total_df: usize,
    pub n: usize,
    pub replicates: usize,
    pub max_order: usize,
}

impl AnovaTable {
    pub fn term(&self, name: &str) -> Option<&AnovaTerm> {
        self.terms.iter().find(|t| t.name() == name)
    }
}

/// Runs mapped onto the full cross product of factor levels.
struct Layout {
    levels: Vec<usize>,
    /// Mean outcome per cell, mixed-radix index with the first factor slowest.
    cell_means: Vec<f64>,
    replicates: usize,
    outcomes: Vec<f64>,
    within_ss: f64,
}

fn cell_index(run: &RunRecord, factors: &[FactorSpec]) -> Result<usize> {
    let mut idx = 0;
    for f in factors {
        let level = run
            .level(&f.name)
            .ok_or_else(|| Error::Design(format!("run is missing factor `{}`", f.name)))?;
        let li = f.level_index(level).ok_or_else(|| {
            Error::Design(format!("unknown level `{level}` for factor `{}`", f.name))
        })?;
        idx = idx * f.levels.len() + li;
    }
    Ok(idx)
}

fn layout(runs: &[RunRecord], factors: &[FactorSpec]) -> Result<Layout> {
    validate_factors(factors)?;
    let levels: Vec<usize> = factors.iter().map(|f| f.levels.len()).collect();
    let n_cells: usize = levels.iter().product();
    let mut cells: Vec<Vec<f64>> = vec![Vec::new(); n_cells];
    let mut outcomes = Vec::with_capacity(runs.len());
    // Sums of squares are shift invariant; centring on the first outcome
    // keeps a constant table exactly zero and limits cancellation.
    let offset = runs.first().and_then(|r| r.outcome).unwrap_or(0.0);
    for (i, run) in runs.iter().enumerate() {
        let y = run
            .outcome
            .ok_or_else(|| Error::Design(format!("run {} has no outcome", i + 1)))?;
        if !y.is_finite() {
            return Err(Error::Design(format!(
                "run {} has a non-finite outcome",
                i + 1
            )));
        }
        cells[cell_index(run, factors)?].push(y - offset);
        outcomes.push(y - offset);
    }
    let replicates = cells[0].len();
    if replicates == 0 || cells.iter().any(|c| c.len() != replicates) {
        let min = cells.iter().map(Vec::len).min().unwrap_or(0);
        let max = cells.iter().map(Vec::len).max().unwrap_or(0);
        return Err(Error::Design(format!(
            "unbalanced design: cells hold between {min} and {max} runs"
        )));
    }
    let mut within_ss = 0.0;
    let cell_means = cells
        .iter()
        .map(|c| {
            let m = c.iter().sum::<f64>() / replicates as f64;
            within_ss += c.iter().map(|y| (y - m).powi(2)).sum::<f64>();
            m
        })
        .collect();
    Ok(Layout {
        levels,
        cell_means,
        replicates,
        outcomes,
        within_ss,
    })
}

/// Per-factor level indices of a full cell index.
fn decode(mut idx: usize, levels: &[usize]) -> Vec<usize> {
    let mut out = vec![0; levels.len()];
    for k in (0..levels.len()).rev() {
        out[k] = idx % levels[k];
        idx /= levels[k];
    }
    out
}

/// Index of the projection of a cell onto the factors in `subset`.
fn project(cell: &[usize], levels: &[usize], subset: u32) -> usize {
    let mut idx = 0;
    for k in 0..levels.len() {
        if subset & (1 << k) != 0 {
            idx = idx * levels[k] + cell[k];
        }
    }
    idx
}

fn subset_size(subset: u32, levels: &[usize]) -> usize {
    (0..levels.len())
        .filter(|k| subset & (1 << k) != 0)
        .map(|k| levels[k])
        .product()
}

/// Marginal mean tables for every subset of factors (index = bitmask).
fn marginal_means(lay: &Layout) -> Vec<Vec<f64>> {
    let k = lay.levels.len();
    let n_cells = lay.cell_means.len();
    let decoded: Vec<Vec<usize>> = (0..n_cells).map(|c| decode(c, &lay.levels)).collect();
    (0..1u32 << k)
        .map(|subset| {
            let size = subset_size(subset, &lay.levels);
            let mut sums = vec![0.0; size];
            for (cell, mean) in decoded.iter().zip(&lay.cell_means) {
                sums[project(cell, &lay.levels, subset)] += mean;
            }
            let per = (n_cells / size) as f64;
            sums.iter_mut().for_each(|s| *s /= per);
            sums
        })
        .collect()
}

/// Sum of squares of one effect: replicate count times the cells collapsed
/// into each marginal cell of `subset`, times the sum of squared
/// inclusion-exclusion contrasts of marginal means.
fn effect_ss(lay: &Layout, marginals: &[Vec<f64>], subset: u32) -> f64 {
    let levels = &lay.levels;
    let k = levels.len();
    let members: Vec<usize> = (0..k).filter(|&i| subset & (1 << i) != 0).collect();
    let sub_levels: Vec<usize> = members.iter().map(|&i| levels[i]).collect();
    let size = subset_size(subset, levels);
    let mut full = vec![0usize; k];
    let mut sum_sq = 0.0;
    for c in 0..size {
        let local = decode(c, &sub_levels);
        for (&i, &l) in members.iter().zip(&local) {
            full[i] = l;
        }
        // Iterate over all sub-subsets T of S.
        let mut effect = 0.0;
        let mut t = subset;
        loop {
            let sign = if (subset.count_ones() - t.count_ones()).is_multiple_of(2) {
                1.0
            } else {
                -1.0
            };
            effect += sign * marginals[t as usize][project(&full, levels, t)];
            if t == 0 {
                break;
            }
            t = (t - 1) & subset;
        }
        sum_sq += effect * effect;
    }
    let collapsed = lay.cell_means.len() / size;
    (lay.replicates * collapsed) as f64 * sum_sq
}

fn effect_df(subset: u32, levels: &[usize]) -> usize {
    (0..levels.len())
        .filter(|k| subset & (1 << k) != 0)
        .map(|k| levels[k] - 1)
        .product()
}

/// Non-empty factor subsets of size at most `max_order`, ordered by size
/// and then lexicographically by factor position.
fn terms_up_to(k: usize, max_order: usize) -> Vec<u32> {
    let mut subsets: Vec<u32> = (1..1u32 << k)
        .filter(|s| s.count_ones() as usize <= max_order)
        .collect();
    let key = |s: &u32| -> (u32, Vec<usize>) {
        (
            s.count_ones(),
            (0..k).filter(|i| s & (1 << i) != 0).collect(),
        )
    };
    subsets.sort_by_key(key);
    subsets
}

/// Full factorial ANOVA of a balanced design with terms up to `max_order`.
///
/// Interactions above `max_order` are pooled with the replicate error into
/// the residual. F and p are absent when the residual has no degrees of
/// freedom or no variance, and when the outcomes have no variance at all.
pub fn anova_table(
    runs: &[RunRecord],
    factors: &[FactorSpec],
    max_order: usize,
) -> Result<AnovaTable> {
    if max_order == 0 {
        return Err(Error::Design("max_order must be at least 1".into()));
    }
    if factors.len() > 16 {
        return Err(Error::Design("at most 16 factors are supported".into()));
    }
    let lay = layout(runs, factors)?;
    let marginals = marginal_means(&lay);
    let n = lay.outcomes.len();
    let grand = lay.outcomes.iter().sum::<f64>() / n as f64;
    let total_ss: f64 = lay.outcomes.iter().map(|y| (y - grand).powi(2)).sum();
    let total_df = n - 1;

    let k = factors.len();
    let included = terms_up_to(k, max_order);
    let mut residual_ss = lay.within_ss;
    for subset in terms_up_to(k, k) {
        if subset.count_ones() as usize > max_order {
            residual_ss += effect_ss(&lay, &marginals, subset);
        }
    }

    let raw_terms: Vec<(u32, f64, usize)> = included
        .iter()
        .map(|&s| (s, effect_ss(&lay, &marginals, s), effect_df(s, &lay.levels)))
        .collect();
    let term_df: usize = raw_terms.iter().map(|t| t.2).sum();
    let residual_df = total_df - term_df;
    if residual_ss.abs() <= ZERO_RESIDUAL_REL * total_ss {
        residual_ss = 0.0;
    }
    let residual_ms = (residual_df > 0).then(|| residual_ss / residual_df as f64);
    let testable = total_ss > 0.0 && residual_ms.is_some_and(|ms| ms > 0.0);

    let terms = raw_terms
        .into_iter()
        .map(|(subset, ss, df)| {
            let ms = ss / df as f64;
            let (f, p) = if testable {
                let f = ms / residual_ms.expect("testable");
                (Some(f), Some(f_pvalue(f, df, residual_df)?))
            } else {
                (None, None)
            };
            Ok(AnovaTerm {
                factors: (0..k)
                    .filter(|i| subset & (1 << i) != 0)
                    .map(|i| factors[i].name.clone())
                    .collect(),
                ss,
                df,
                ms,
                f,
                p,
                eta_sq: if total_ss > 0.0 { ss / total_ss } else { 0.0 },
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(AnovaTable {
        factors: factors.iter().map(|f| f.name.clone()).collect(),
        terms,
        residual: ResidualRow {
            ss: residual_ss,
            df: residual_df,
            ms: residual_ms,
        },
        total_ss,
        total_df,
        n,
        replicates: lay.replicates,
        max_order,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermShare {
    pub term: String,
    pub share: f64,
}

/// Shares of the "designable" variation: terms made only of design factors,
/// each as a fraction of the summed SS of those terms.
pub fn designable_shares(table: &AnovaTable, design_factors: &[&str]) -> Result<Vec<TermShare>> {
    for name in design_factors {
        if !table.factors.iter().any(|f| f == name) {
            return Err(Error::Design(format!("unknown design factor `{name}`")));
        }
    }
    let restricted: Vec<&AnovaTerm> = table
        .terms
        .iter()
        .filter(|t| {
            t.factors
                .iter()
                .all(|f| design_factors.contains(&f.as_str()))
        })
        .collect();
    if restricted.is_empty() {
        return Err(Error::Design(
            "no terms consist solely of design factors".into(),
        ));
    }
    let total: f64 = restricted.iter().map(|t| t.ss).sum();
    if total <= 0.0 {
        return Err(Error::Design("design terms explain no variation".into()));
    }
    Ok(restricted
        .into_iter()
        .map(|t| TermShare {
            term: t.name(),
            share: t.ss / total,
        })
        .collect())
}

/// Names of the [`FactorKind::Design`] factors.
pub(crate) fn design_factor_names(factors: &[FactorSpec]) -> Vec<&str> {
    factors
        .iter()
        .filter(|f| f.kind == FactorKind::Design)
        .map(|f| f.name.as_str())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellMean {
    pub levels: Vec<String>,
    pub mean: f64,
    pub n: usize,
}

/// Mean outcome per combination of levels of the named factors (interaction
/// plot data). Combinations are in level order, first factor slowest.
pub fn interaction_means(
    runs: &[RunRecord],
    factors: &[FactorSpec],
    names: &[&str],
) -> Result<Vec<CellMean>> {
    let chosen = names
        .iter()
        .map(|n| {
            factors
                .iter()
                .find(|f| f.name == *n)
                .ok_or_else(|| Error::Design(format!("unknown factor `{n}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let sizes: Vec<usize> = chosen.iter().map(|f| f.levels.len()).collect();
    let n_cells: usize = sizes.iter().product();
    let mut sums = vec![0.0; n_cells];
    let mut counts = vec![0usize; n_cells];
    for run in runs {
        let Some(y) = run.outcome else { continue };
        let mut idx = 0;
        for f in &chosen {
            let li = run
                .level(&f.name)
                .and_then(|l| f.level_index(l))
                .ok_or_else(|| Error::Design(format!("run lacks a valid `{}` level", f.name)))?;
            idx = idx * f.levels.len() + li;
        }
        sums[idx] += y;
        counts[idx] += 1;
    }
    Ok((0..n_cells)
        .filter(|&c| counts[c] > 0)
        .map(|c| {
            let local = decode(c, &sizes);
            CellMean {
                levels: chosen
                    .iter()
                    .zip(&local)
                    .map(|(f, &l)| f.levels[l].clone())
                    .collect(),
                mean: sums[c] / counts[c] as f64,
                n: counts[c],
            }
        })
        .collect())
}

impl AnovaTable {
    /// [`designable_shares`] using the factor kinds of `factors`.
    pub fn designable_shares(&self, factors: &[FactorSpec]) -> Result<Vec<TermShare>> {
        designable_shares(self, &design_factor_names(factors))
    }
}
