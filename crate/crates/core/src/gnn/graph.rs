use ndarray::Array2;

use super::{ConvKind, GnnError};
use crate::features::GraphSample;

/// A sample with its propagation operator precomputed for one conv kind.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    pub x: Array2<f64>,
    /// GCN: normalized `D^-1/2 (S + I) D^-1/2`. SAGE: row-normalized
    /// in-adjacency. GIN: `I + A_in`. GENERAL: `A_in`. AGNN: the `S + I`
    /// neighbourhood mask as 0/1.
    pub op: Array2<f64>,
    pub kind: ConvKind,
    pub target: Option<f64>,
}

impl PreparedGraph {
    pub fn new(sample: &GraphSample, kind: ConvKind) -> Result<Self, GnnError> {
        sample.validate().map_err(|e| GnnError::ShapeMismatch(e.to_string()))?;
        let n = sample.n;
        let x = Array2::from_shape_vec((n, sample.dim), sample.x.clone())
            .map_err(|e| GnnError::ShapeMismatch(e.to_string()))?;

        // in_adj[v][u] = 1 when u -> v.
        let mut in_adj = Array2::<f64>::zeros((n, n));
        for &(from, to) in &sample.edges {
            in_adj[[to, from]] = 1.0;
        }
        let symmetric_with_self = || {
            let mut s = Array2::<f64>::eye(n);
            for &(a, b) in &sample.edges {
                s[[a, b]] = 1.0;
                s[[b, a]] = 1.0;
            }
            s
        };

        let op = match kind {
            ConvKind::Gcn => {
                let s = symmetric_with_self();
                let inv_sqrt: Vec<f64> = s.rows().into_iter().map(|r| 1.0 / r.sum().sqrt()).collect();
                Array2::from_shape_fn((n, n), |(i, j)| s[[i, j]] * inv_sqrt[i] * inv_sqrt[j])
            }
            ConvKind::Sage => {
                let mut m = in_adj;
                for mut row in m.rows_mut() {
                    let deg = row.sum();
                    if deg > 0.0 {
                        row /= deg;
                    }
                }
                m
            }
            ConvKind::Gin => in_adj + Array2::<f64>::eye(n),
            ConvKind::General => in_adj,
            ConvKind::Agnn => symmetric_with_self(),
        };
        Ok(PreparedGraph { x, op, kind, target: sample.label.map(|l| l.as_target()) })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }
}
