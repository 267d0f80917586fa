//! L2-regularized hinge-loss linear SVM trained by dual coordinate descent.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Sparse row: (column, value), columns ascending.
pub(crate) type Row = Vec<(u32, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BinarySvm {
    /// Weights over `dim` columns followed by the bias weight.
    pub w: Vec<f64>,
}

#[cfg(test)]
impl BinarySvm {
    pub fn score(&self, row: &[(u32, f64)]) -> f64 {
        let dim = self.w.len() - 1;
        row.iter().map(|&(c, v)| self.w[c as usize] * v).sum::<f64>() + self.w[dim]
    }
}

pub(crate) struct SvmParams {
    pub c: f64,
    pub max_epochs: usize,
    pub tolerance: f64,
    pub seed: u64,
}

/// Trains one binary problem. `positive[i]` selects the +1 class.
pub(crate) fn train_binary(rows: &[Row], positive: &[bool], dim: usize, p: &SvmParams) -> BinarySvm {
    let n = rows.len();
    let mut w = vec![0.0; dim + 1];
    let mut alpha = vec![0.0; n];
    let qii: Vec<f64> = rows
        .iter()
        .map(|r| r.iter().map(|&(_, v)| v * v).sum::<f64>() + 1.0)
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    for _ in 0..p.max_epochs {
        order.shuffle(&mut rng);
        let mut pg_max = f64::NEG_INFINITY;
        let mut pg_min = f64::INFINITY;
        for &i in &order {
            let y = if positive[i] { 1.0 } else { -1.0 };
            let row = &rows[i];
            let margin = row.iter().map(|&(c, v)| w[c as usize] * v).sum::<f64>() + w[dim];
            let g = y * margin - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == p.c {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg.abs() > 1e-12 {
                let old = alpha[i];
                alpha[i] = (old - g / qii[i]).clamp(0.0, p.c);
                let step = (alpha[i] - old) * y;
                if step != 0.0 {
                    for &(c, v) in row {
                        w[c as usize] += step * v;
                    }
                    w[dim] += step;
                }
            }
        }
        if pg_max - pg_min < p.tolerance {
            break;
        }
    }
    BinarySvm { w }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> SvmParams {
        SvmParams {
            c: 1.0,
            max_epochs: 500,
            tolerance: 1e-3,
            seed: 7,
        }
    }

    #[test]
    fn separates_two_points_per_side() {
        let rows: Vec<Row> = vec![
            vec![(0, 1.0)],
            vec![(0, 0.9), (1, 0.1)],
            vec![(1, 1.0)],
            vec![(0, 0.1), (1, 0.9)],
        ];
        let y = [true, true, false, false];
        let m = train_binary(&rows, &y, 2, &params());
        for (r, &pos) in rows.iter().zip(&y) {
            assert_eq!(m.score(r) > 0.0, pos);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let rows: Vec<Row> = (0..20)
            .map(|i| vec![(i % 3, 1.0 + i as f64 * 0.1), (3, 0.5)])
            .collect();
        let y: Vec<bool> = (0..20).map(|i| i % 3 == 0).collect();
        let a = train_binary(&rows, &y, 4, &params());
        let b = train_binary(&rows, &y, 4, &params());
        assert_eq!(a, b);
    }
}
