//! Convex decomposition of a fractional recommendation matrix into
//! deterministic 0/1 menus that each respect proposer capacities.
//!
//! The loop keeps a residual matrix `R` and remaining mass `W` with two
//! invariants per row: every entry is at most `W` and the row sum is at most
//! `c_i·W`. Each step takes the `c_i` largest residuals of every row, and the
//! step weight is the largest that keeps both invariants. A step either
//! empties an entry or makes one equal to `W` (after which it is selected
//! until the end), which bounds the number of components by `nnz + 1`.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::integrators::{Entry, MatrixError, RecommendationMatrix};
use crate::market::MarketInstance;

const RESIDUAL_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum DecomposeError {
    #[error("matrix is not feasible: {0}")]
    Infeasible(#[from] MatrixError),
    #[error("extraction stalled with {remaining} mass left")]
    Stalled { remaining: f64 },
}

/// A deterministic menu: proposer `i` is shown receiver `j` iff `(i, j)` is
/// listed.
#[derive(Clone, Debug, PartialEq)]
pub struct MenuComponent {
    pub weight: f64,
    pub entries: Vec<(u32, u32)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MenuDecomposition {
    pub n_proposers: usize,
    pub n_receivers: usize,
    pub components: Vec<MenuComponent>,
}

impl MenuDecomposition {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    /// `Σ_k w_k·D_k` as sorted sparse entries.
    pub fn reconstruct(&self) -> Vec<Entry> {
        let mut acc: BTreeMap<(u32, u32), f64> = BTreeMap::new();
        for c in &self.components {
            for &key in &c.entries {
                *acc.entry(key).or_insert(0.0) += c.weight;
            }
        }
        acc.into_iter()
            .map(|((proposer, receiver), value)| Entry { proposer, receiver, value })
            .collect()
    }
}

struct Row {
    receivers: Vec<u32>,
    residual: Vec<f64>,
    capacity: usize,
}

impl Row {
    /// Positions of the largest positive residuals, ties to the lower receiver.
    fn select(&self) -> Vec<usize> {
        let mut pos: Vec<usize> = (0..self.residual.len()).filter(|&k| self.residual[k] > 0.0).collect();
        pos.sort_by(|&a, &b| {
            self.residual[b]
                .total_cmp(&self.residual[a])
                .then(self.receivers[a].cmp(&self.receivers[b]))
        });
        pos.truncate(self.capacity);
        pos
    }
}

pub fn birkhoff_decompose(
    m: &RecommendationMatrix,
    market: &MarketInstance,
) -> Result<MenuDecomposition, DecomposeError> {
    m.check_feasible(market, 1e-9)?;
    let mut rows: Vec<Row> = market
        .capacity()
        .iter()
        .map(|&c| Row { receivers: Vec::new(), residual: Vec::new(), capacity: c as usize })
        .collect();
    for e in m.entries() {
        let row = &mut rows[e.proposer as usize];
        row.receivers.push(e.receiver);
        row.residual.push(e.value);
    }
    rows.retain(|r| !r.receivers.is_empty());
    let active: Vec<u32> = m
        .entries()
        .iter()
        .map(|e| e.proposer)
        .fold(Vec::new(), |mut v, i| {
            if v.last() != Some(&i) {
                v.push(i);
            }
            v
        });

    let limit = m.nnz() + 1;
    let mut remaining = 1.0f64;
    let mut components = Vec::new();
    loop {
        let selections: Vec<Vec<usize>> = rows.iter().map(Row::select).collect();
        if selections.iter().all(|s| s.is_empty()) {
            break;
        }
        if components.len() >= limit {
            return Err(DecomposeError::Stalled { remaining });
        }
        let mut theta = remaining;
        for (row, sel) in rows.iter().zip(&selections) {
            for &k in sel {
                theta = theta.min(row.residual[k]);
            }
            let outside = (0..row.residual.len())
                .filter(|k| !sel.contains(k))
                .map(|k| row.residual[k])
                .fold(0.0f64, f64::max);
            if outside > 0.0 {
                let slack = remaining - outside;
                if slack > RESIDUAL_EPS {
                    theta = theta.min(slack);
                }
            }
        }

        let mut entries = Vec::new();
        remaining -= theta;
        for ((row, sel), &i) in rows.iter_mut().zip(&selections).zip(&active) {
            for &k in sel {
                entries.push((i, row.receivers[k]));
                let r = &mut row.residual[k];
                *r -= theta;
                if *r < RESIDUAL_EPS {
                    *r = 0.0;
                }
            }
            for r in &mut row.residual {
                *r = r.min(remaining);
            }
        }
        entries.sort_unstable();
        components.push(MenuComponent { weight: theta, entries });
    }
    if remaining > RESIDUAL_EPS {
        components.push(MenuComponent { weight: remaining, entries: Vec::new() });
    }
    Ok(MenuDecomposition { n_proposers: m.n_proposers(), n_receivers: m.n_receivers(), components })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::tests::pair;
    use crate::market::{validate_market, RawMarket};

    fn dense(n_prop: u32, n_recv: u32, capacity: u32) -> MarketInstance {
        let pairs = (0..n_prop)
            .flat_map(|i| (0..n_recv).map(move |j| pair(i, j, 0.5, 0.5)))
            .collect();
        validate_market(RawMarket {
            proposer_login: vec![1.0; n_prop as usize],
            receiver_login: vec![1.0; n_recv as usize],
            pairs,
            capacity: vec![capacity; n_prop as usize],
        })
        .unwrap()
    }

    fn matrix(n_prop: usize, n_recv: usize, e: &[(u32, u32, f64)]) -> RecommendationMatrix {
        RecommendationMatrix::from_entries(
            n_prop,
            n_recv,
            e.iter().map(|&(proposer, receiver, value)| Entry { proposer, receiver, value }).collect(),
        )
        .unwrap()
    }

    #[test]
    fn deterministic_matrix_is_one_component() {
        let mk = dense(2, 3, 2);
        let m = matrix(2, 3, &[(0, 0, 1.0), (0, 2, 1.0), (1, 1, 1.0)]);
        let d = birkhoff_decompose(&m, &mk).unwrap();
        assert_eq!(d.components, vec![MenuComponent { weight: 1.0, entries: vec![(0, 0), (0, 2), (1, 1)] }]);
    }

    #[test]
    fn half_half_splits() {
        let mk = dense(1, 2, 1);
        let m = matrix(1, 2, &[(0, 0, 0.5), (0, 1, 0.5)]);
        let d = birkhoff_decompose(&m, &mk).unwrap();
        assert_eq!(
            d.components,
            vec![
                MenuComponent { weight: 0.5, entries: vec![(0, 0)] },
                MenuComponent { weight: 0.5, entries: vec![(0, 1)] },
            ]
        );
    }

    #[test]
    fn fractional_column() {
        let mk = dense(2, 1, 1);
        let m = matrix(2, 1, &[(0, 0, 1.0), (1, 0, 1.0 / 3.0)]);
        let d = birkhoff_decompose(&m, &mk).unwrap();
        assert_eq!(d.len(), 2);
        assert!((d.components[0].weight - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(d.components[0].entries, vec![(0, 0), (1, 0)]);
        assert!((d.components[1].weight - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(d.components[1].entries, vec![(0, 0)]);
    }

    #[test]
    fn zero_matrix_is_empty_menu() {
        let mk = dense(2, 2, 1);
        let d = birkhoff_decompose(&RecommendationMatrix::zeros(2, 2), &mk).unwrap();
        assert_eq!(d.components, vec![MenuComponent { weight: 1.0, entries: vec![] }]);
    }

    #[test]
    fn overfull_row_rejected() {
        let mk = dense(1, 3, 1);
        let m = matrix(1, 3, &[(0, 0, 0.6), (0, 1, 0.6)]);
        assert!(matches!(
            birkhoff_decompose(&m, &mk),
            Err(DecomposeError::Infeasible(MatrixError::RowCapacity { .. }))
        ));
    }

    #[test]
    fn slack_forces_tight_entry() {
        // row capacity 2 with residuals (0.9, 0.6, 0.5): the third entry must
        // be picked up before the first two run out
        let mk = dense(1, 3, 2);
        let m = matrix(1, 3, &[(0, 0, 0.9), (0, 1, 0.6), (0, 2, 0.5)]);
        let d = birkhoff_decompose(&m, &mk).unwrap();
        assert!(d.len() <= 4);
        assert!((d.total_weight() - 1.0).abs() < 1e-12);
        for c in &d.components {
            assert!(c.entries.len() <= 2);
        }
        for (e, want) in d.reconstruct().iter().zip([0.9, 0.6, 0.5]) {
            assert!((e.value - want).abs() < 1e-12);
        }
    }
}
