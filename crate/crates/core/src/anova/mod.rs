//! Factorial experiment design and balanced full-factorial ANOVA.

mod design;
mod fdist;
mod table;

pub use design::{
    build_design, default_factors, load_runs, write_runs, FactorKind, FactorSpec, RunRecord,
    OUTCOME_COLUMN, REPLICATE_COLUMN,
};
pub use fdist::{f_pvalue, ln_gamma, regularized_incomplete_beta};
pub use table::{
    anova_table, designable_shares, interaction_means, AnovaTable, AnovaTerm, CellMean,
    ResidualRow, TermShare,
};
