//! Group-vs-marginal decompositions of conditional prediction parity.

use serde::{Deserialize, Serialize};

use super::distance::emd_1d;
use crate::error::{Error, Result};
use crate::penalty::Stratum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParityForm {
    /// `M_k = EMD(group k, stratum)`, aggregate `sum_k M_k`.
    Emd,
    /// `M_k = mean(group k) - mean(stratum)`, aggregate `sum_k M_k^2`.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityDecomposition {
    /// One entry per group; `None` when the group has no records in the stratum.
    pub per_group: Vec<Option<f64>>,
    /// `None` when the stratum is empty.
    pub aggregate: Option<f64>,
}

/// Compares each group's predictions in `stratum` with all predictions in `stratum`.
pub fn parity_decomposition(
    predictions: &[f64],
    outcomes: &[u8],
    groups: &[usize],
    num_groups: usize,
    stratum: Stratum,
    form: ParityForm,
) -> Result<ParityDecomposition> {
    if predictions.len() != outcomes.len() || predictions.len() != groups.len() {
        return Err(Error::Shape {
            expected: predictions.len(),
            got: outcomes.len().min(groups.len()),
        });
    }
    let mut marginal = Vec::new();
    let mut cells = vec![Vec::new(); num_groups];
    for ((&f, &y), &g) in predictions.iter().zip(outcomes).zip(groups) {
        if stratum.contains(y) {
            if g >= num_groups {
                return Err(Error::Parameter(format!("group index {g} out of range")));
            }
            marginal.push(f);
            cells[g].push(f);
        }
    }
    if marginal.is_empty() {
        return Ok(ParityDecomposition {
            per_group: vec![None; num_groups],
            aggregate: None,
        });
    }
    let marginal_mean = crate::util::mean(&marginal);
    let per_group = cells
        .iter()
        .map(|cell| {
            if cell.is_empty() {
                return Ok(None);
            }
            Ok(Some(match form {
                ParityForm::Emd => emd_1d(cell, &marginal)?,
                ParityForm::Mean => crate::util::mean(cell) - marginal_mean,
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    let aggregate = per_group
        .iter()
        .flatten()
        .map(|&m| match form {
            ParityForm::Emd => m,
            ParityForm::Mean => m * m,
        })
        .sum();
    Ok(ParityDecomposition {
        per_group,
        aggregate: Some(aggregate),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_group_matches_marginal() {
        let f = [0.1, 0.5, 0.9, 0.3];
        let y = [1, 0, 1, 0];
        for form in [ParityForm::Emd, ParityForm::Mean] {
            let d = parity_decomposition(&f, &y, &[0; 4], 1, Stratum::All, form).unwrap();
            assert_eq!(d.per_group, vec![Some(0.0)]);
            assert_eq!(d.aggregate, Some(0.0));
        }
    }

    #[test]
    fn mean_form_two_groups() {
        let f = [0.2, 0.2, 0.4, 0.4];
        let d = parity_decomposition(&f, &[0; 4], &[0, 0, 1, 1], 2, Stratum::All, ParityForm::Mean).unwrap();
        let m = d.per_group.iter().map(|v| v.unwrap()).collect::<Vec<_>>();
        assert!((m[0] + 0.1).abs() < 1e-15 && (m[1] - 0.1).abs() < 1e-15);
        assert!((d.aggregate.unwrap() - 0.02).abs() < 1e-15);
    }

    #[test]
    fn empty_cells_and_strata_are_undefined() {
        let f = [0.2, 0.6, 0.4];
        let y = [1, 1, 0];
        let a = [0, 0, 1];
        let d = parity_decomposition(&f, &y, &a, 2, Stratum::Positive, ParityForm::Emd).unwrap();
        assert_eq!(d.per_group, vec![Some(0.0), None]);
        assert_eq!(d.aggregate, Some(0.0));
        let none = parity_decomposition(&f, &[0; 3], &a, 2, Stratum::Positive, ParityForm::Emd).unwrap();
        assert_eq!(none.aggregate, None);
    }
}
