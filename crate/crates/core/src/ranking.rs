use nalgebra::DMatrix;
use std::cmp::Ordering;

/// Scores of every (probe, gallery) pair and the per-probe gallery order.
///
/// `scores` is `l_p × l_g`; higher is better. `NaN` marks a pair with no
/// usable score, which sorts after every finite score.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub scores: DMatrix<f64>,
    pub order: Vec<Vec<usize>>,
}

impl Ranking {
    pub fn from_scores(scores: DMatrix<f64>) -> Self {
        let order = (0..scores.nrows())
            .map(|j| order_descending(scores.row(j).iter().copied()))
            .collect();
        Ranking { scores, order }
    }

    pub fn n_probes(&self) -> usize {
        self.scores.nrows()
    }

    pub fn n_gallery(&self) -> usize {
        self.scores.ncols()
    }
}

fn cmp_desc(a: f64, b: f64) -> Ordering {
    match (a.is_nan(), b.is_nan()) {
        (true, true) => Ordering::Equal,
        (true, false) => Ordering::Greater,
        (false, true) => Ordering::Less,
        // -0.0 and 0.0 compare equal here so ties stay in index order.
        (false, false) => b.partial_cmp(&a).unwrap_or(Ordering::Equal),
    }
}

/// Indices sorted by descending score; equal scores keep ascending index
/// order, `NaN` goes last.
pub fn order_descending(scores: impl IntoIterator<Item = f64>) -> Vec<usize> {
    let s: Vec<f64> = scores.into_iter().collect();
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&a, &b| cmp_desc(s[a], s[b]));
    idx
}
