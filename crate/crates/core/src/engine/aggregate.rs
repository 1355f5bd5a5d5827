use serde::{Deserialize, Serialize};

use super::{ConditionalSecondStage, Dataset, FirstStageResult};
use crate::diagnostics::DiagnosticsReport;
use crate::error::{Error, Result};
use crate::model_space::ModelSet;

/// Evidence categories for inclusion probabilities, closed on the left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Evidence {
    #[serde(rename = "against")]
    Against,
    #[serde(rename = "weak")]
    Weak,
    #[serde(rename = "positive")]
    Positive,
    #[serde(rename = "strong")]
    Strong,
    #[serde(rename = "very strong")]
    VeryStrong,
}

impl Evidence {
    pub fn as_str(self) -> &'static str {
        match self {
            Evidence::Against => "against",
            Evidence::Weak => "weak",
            Evidence::Positive => "positive",
            Evidence::Strong => "strong",
            Evidence::VeryStrong => "very strong",
        }
    }
}

impl std::fmt::Display for Evidence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn evidence_label(mu: f64) -> Evidence {
    if mu >= 0.99 {
        Evidence::VeryStrong
    } else if mu >= 0.95 {
        Evidence::Strong
    } else if mu >= 0.75 {
        Evidence::Positive
    } else if mu >= 0.5 {
        Evidence::Weak
    } else {
        Evidence::Against
    }
}

/// Posterior summary of one coefficient.
///
/// Conditional moments renormalize over the models containing the variable
/// and are `None` when no retained model does.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSummary {
    pub label: String,
    pub inclusion_probability: f64,
    pub unconditional_mean: f64,
    pub unconditional_sd: f64,
    pub conditional_mean: Option<f64>,
    pub conditional_sd: Option<f64>,
    pub evidence: Evidence,
}

/// Mixture over weighted `(weight, included, mean, variance)` draws.
pub(crate) fn summarize<I>(label: &str, entries: I) -> VariableSummary
where
    I: IntoIterator<Item = (f64, bool, f64, f64)>,
{
    let (mut w_in, mut m1, mut m2, mut total) = (0.0, 0.0, 0.0, 0.0);
    for (w, included, mean, var) in entries {
        total += w;
        if included {
            w_in += w;
            m1 += w * mean;
            m2 += w * (var + mean * mean);
        }
    }
    let mu = (w_in / total).clamp(0.0, 1.0);
    let unconditional_mean = m1 / total;
    let unconditional_sd = (m2 / total - unconditional_mean * unconditional_mean).max(0.0).sqrt();
    let (conditional_mean, conditional_sd) = if w_in > 0.0 {
        let mean = m1 / w_in;
        (Some(mean), Some((m2 / w_in - mean * mean).max(0.0).sqrt()))
    } else {
        (None, None)
    };
    VariableSummary {
        label: label.to_string(),
        inclusion_probability: mu,
        unconditional_mean,
        unconditional_sd,
        conditional_mean,
        conditional_sd,
        evidence: evidence_label(mu),
    }
}

/// First-stage posterior for one endogenous regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub response: String,
    pub variables: Vec<VariableSummary>,
    pub retained_models: usize,
    pub best_bic: f64,
    pub best_r_squared: f64,
    pub rank_exclusions: u64,
}

pub(crate) fn stage_summary(response: &str, set: &ModelSet) -> StageSummary {
    let variables = set
        .labels
        .iter()
        .enumerate()
        .map(|(k, label)| {
            summarize(
                label,
                set.models.iter().map(|m| {
                    (m.weight, m.spec.included.contains(k), m.coefficient(k), m.coefficient_variance(k))
                }),
            )
        })
        .collect();
    let best = set.best();
    StageSummary {
        response: response.to_string(),
        variables,
        retained_models: set.models.len(),
        best_bic: best.bic,
        best_r_squared: best.fit.r_squared,
        rank_exclusions: set.rank_exclusions,
    }
}

/// Two-level variance decomposition per structural coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceDecomposition {
    /// `sum_i pi_i Var(beta | M_i)`.
    pub within: Vec<f64>,
    /// `sum_i pi_i (beta_i - beta)^2`.
    pub between: Vec<f64>,
    pub total: Vec<f64>,
    /// `sum_ij pi_i nu_ij (Var_ij + (beta_ij - beta)^2)`.
    pub flat: Vec<f64>,
}

/// One retained `(M_i, L_j)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub combo: usize,
    pub first_stage: Vec<Vec<String>>,
    pub second_stage: Vec<String>,
    pub weight: f64,
    pub bic: f64,
    pub generalized_r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInventory {
    pub combos: usize,
    pub pairs: usize,
    /// Pairs by descending joint weight, truncated to the report limit.
    pub top_pairs: Vec<PairSummary>,
    pub best_bic: f64,
    pub best_generalized_r_squared: f64,
    pub first_stage_rank_exclusions: u64,
    pub second_stage_rank_exclusions: u64,
}

pub const INVENTORY_LIMIT: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStageResult {
    pub n: usize,
    /// Labels of the structural coefficients `(W X)`.
    pub labels: Vec<String>,
    pub point_estimate: Vec<f64>,
    pub intercept: f64,
    pub variables: Vec<VariableSummary>,
    pub variance: VarianceDecomposition,
    pub first_stage: Vec<StageSummary>,
    pub inventory: ModelInventory,
    pub diagnostics: Option<DiagnosticsReport>,
}

impl TwoStageResult {
    pub fn variable(&self, label: &str) -> Option<&VariableSummary> {
        self.variables.iter().find(|v| v.label == label)
    }

    pub fn first_stage_variable(&self, response: &str, label: &str) -> Option<&VariableSummary> {
        self.first_stage
            .iter()
            .find(|s| s.response == response)?
            .variables
            .iter()
            .find(|v| v.label == label)
    }
}

/// Iterates `(combo, model, joint weight)` over the retained grid.
pub(crate) fn grid<'a>(
    first: &'a FirstStageResult,
    conditionals: &'a [ConditionalSecondStage],
) -> impl Iterator<Item = (usize, usize, f64)> + 'a {
    conditionals.iter().flat_map(move |c| {
        let pi = first.combos[c.combo_index].weight;
        c.retained.models.iter().enumerate().map(move |(j, m)| (c.combo_index, j, pi * m.weight))
    })
}

fn check_coverage(first: &FirstStageResult, conditionals: &[ConditionalSecondStage]) -> Result<()> {
    if first.combos.is_empty() || conditionals.is_empty() {
        return Err(Error::EmptyModelSet);
    }
    let mut seen = vec![false; first.combos.len()];
    for c in conditionals {
        match seen.get_mut(c.combo_index) {
            Some(s) if !*s => *s = true,
            Some(_) => {
                return Err(Error::InvalidArgument(format!("combination {} appears twice", c.combo_index)))
            }
            None => return Err(Error::IndexOutOfRange { index: c.combo_index, len: first.combos.len() }),
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::InvalidArgument(format!("combination {missing} has no second stage")));
    }
    Ok(())
}

/// Moments of one coefficient under a two-level mixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureMoments {
    pub mean: f64,
    /// Weighted conditional variance around each group's own mean.
    pub within: f64,
    /// Weighted spread of the group means around the overall mean.
    pub between: f64,
    /// Variance of the flattened single-level mixture.
    pub flat: f64,
}

/// `groups` holds each group's weight and the `(weight, mean, variance)` of
/// its members. Weights at both levels are assumed to sum to one.
pub fn mixture_moments(groups: &[(f64, Vec<(f64, f64, f64)>)]) -> MixtureMoments {
    let group_means: Vec<f64> =
        groups.iter().map(|(_, cells)| cells.iter().map(|&(w, b, _)| w * b).sum()).collect();
    let mean: f64 = groups.iter().zip(&group_means).map(|((pi, _), m)| pi * m).sum();
    let (mut within, mut between, mut flat) = (0.0, 0.0, 0.0);
    for ((pi, cells), gm) in groups.iter().zip(&group_means) {
        within += pi * cells.iter().map(|&(w, b, v)| w * (v + (b - gm).powi(2))).sum::<f64>();
        between += pi * (gm - mean).powi(2);
        flat += pi * cells.iter().map(|&(w, b, v)| w * (v + (b - mean).powi(2))).sum::<f64>();
    }
    MixtureMoments { mean, within, between, flat }
}

/// Combines the conditional second stages into the 2SBMA posterior.
pub fn aggregate(
    first: &FirstStageResult,
    conditionals: &[ConditionalSecondStage],
    data: &Dataset,
) -> Result<TwoStageResult> {
    check_coverage(first, conditionals)?;
    let labels = data.structural_regressors().labels().to_vec();
    let q = labels.len();

    let mut point = vec![0.0; q];
    let mut intercept = 0.0;
    for c in conditionals {
        let pi = first.combos[c.combo_index].weight;
        for (j, m) in c.retained.models.iter().enumerate() {
            let w = pi * m.weight;
            intercept += w * c.per_model_intercept[j];
            for k in 0..q {
                point[k] += w * c.per_model_beta[j][k];
            }
        }
    }

    let mut variance = VarianceDecomposition {
        within: vec![0.0; q],
        between: vec![0.0; q],
        total: vec![0.0; q],
        flat: vec![0.0; q],
    };
    for k in 0..q {
        let groups: Vec<(f64, Vec<(f64, f64, f64)>)> = conditionals
            .iter()
            .map(|c| {
                let cells = c
                    .retained
                    .models
                    .iter()
                    .enumerate()
                    .map(|(j, m)| (m.weight, c.per_model_beta[j][k], c.per_model_variance[j][k]))
                    .collect();
                (first.combos[c.combo_index].weight, cells)
            })
            .collect();
        let m = mixture_moments(&groups);
        variance.within[k] = m.within;
        variance.between[k] = m.between;
        variance.total[k] = m.within + m.between;
        variance.flat[k] = m.flat;
    }

    let by_combo: Vec<&ConditionalSecondStage> = {
        let mut v: Vec<_> = conditionals.iter().collect();
        v.sort_by_key(|c| c.combo_index);
        v
    };
    let variables = labels
        .iter()
        .enumerate()
        .map(|(k, label)| {
            summarize(
                label,
                grid(first, conditionals).map(|(i, j, w)| {
                    let c = by_combo[i];
                    (
                        w,
                        c.retained.models[j].spec.included.contains(k),
                        c.per_model_beta[j][k],
                        c.per_model_variance[j][k],
                    )
                }),
            )
        })
        .collect();

    let first_stage = first
        .per_endogenous
        .iter()
        .zip(data.endogenous.labels())
        .map(|(set, label)| stage_summary(label, set))
        .collect();

    let mut pairs: Vec<(usize, usize, f64)> = grid(first, conditionals).collect();
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let describe = |&(i, j, w): &(usize, usize, f64)| {
        let c = by_combo[i];
        let m = &c.retained.models[j];
        PairSummary {
            combo: i,
            first_stage: first
                .first_stage_masks(i)
                .iter()
                .map(|mask| mask.indices().iter().map(|&k| first.candidate_labels[k].clone()).collect())
                .collect(),
            second_stage: m.spec.included.indices().iter().map(|&k| labels[k].clone()).collect(),
            weight: w,
            bic: m.bic,
            generalized_r_squared: m.fit.r_squared,
        }
    };
    let top_pairs: Vec<PairSummary> = pairs.iter().take(INVENTORY_LIMIT).map(describe).collect();
    let best = &top_pairs[0];
    let inventory = ModelInventory {
        combos: first.combos.len(),
        pairs: pairs.len(),
        best_bic: best.bic,
        best_generalized_r_squared: best.generalized_r_squared,
        top_pairs: top_pairs.clone(),
        first_stage_rank_exclusions: first.per_endogenous.iter().map(|s| s.rank_exclusions).sum(),
        second_stage_rank_exclusions: conditionals.iter().map(|c| c.retained.rank_exclusions).sum(),
    };

    Ok(TwoStageResult {
        n: data.n(),
        labels,
        point_estimate: point,
        intercept,
        variables,
        variance,
        first_stage,
        inventory,
        diagnostics: None,
    })
}
