use crate::error::{Error, Result};

/// Two equally long series of observations.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSeries {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl PairedSeries {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::LengthMismatch(xs.len(), ys.len()));
        }
        if xs.len() < 2 {
            return Err(Error::DegenerateSeries(format!(
                "{} paired observations, need at least 2",
                xs.len()
            )));
        }
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(Error::DegenerateSeries("non-finite observation".into()));
        }
        Ok(Self { xs, ys })
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn product_moment(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateSeries("zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson's product-moment correlation, computed in two passes.
pub fn pearson(paired: &PairedSeries) -> Result<f64> {
    product_moment(&paired.xs, &paired.ys)
}

/// 1-based ranks; tied values share the average of their ranks.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rank correlation: Pearson correlation of average ranks.
pub fn spearman(paired: &PairedSeries) -> Result<f64> {
    product_moment(&average_ranks(&paired.xs), &average_ranks(&paired.ys))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn paired(xs: &[f64], ys: &[f64]) -> PairedSeries {
        PairedSeries::new(xs.to_vec(), ys.to_vec()).unwrap()
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&paired(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0])).unwrap(), 1.0);
        assert_eq!(spearman(&paired(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0])).unwrap(), -1.0);
    }

    #[test]
    fn spearman_with_ties_matches_hand_ranks() {
        // Ranks: xs -> (1, 2.5, 2.5, 4), ys -> (1, 3, 2, 4).
        // Centered: (-1.5, 0, 0, 1.5) and (-1.5, 0.5, -0.5, 1.5); dot 4.5, norms² 4.5 and 5.
        let r = spearman(&paired(&[1.0, 2.0, 2.0, 3.0], &[1.0, 3.0, 2.0, 4.0])).unwrap();
        assert_abs_diff_eq!(r, 4.5 / (4.5f64 * 5.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn pearson_examples() {
        let xs = [0.5, -1.0, 2.0, 3.5];
        let affine: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert_abs_diff_eq!(pearson(&paired(&xs, &affine)).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(pearson(&paired(&xs, &neg)).unwrap(), -1.0, epsilon = 1e-15);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(
            spearman(&paired(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0])),
            Err(Error::DegenerateSeries(_))
        ));
        assert!(matches!(PairedSeries::new(vec![1.0], vec![2.0]), Err(Error::DegenerateSeries(_))));
        assert!(matches!(PairedSeries::new(vec![1.0, 2.0], vec![2.0]), Err(Error::LengthMismatch(2, 1))));
        assert!(PairedSeries::new(vec![1.0, f64::NAN], vec![2.0, 3.0]).is_err());
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    proptest! {
        #[test]
        fn spearman_ignores_monotone_maps(
            xs in proptest::collection::vec(-100.0f64..100.0, 3..30),
            seed in 0u64..1000,
        ) {
            let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| x * 0.3 + ((i as u64 * 7 + seed) % 13) as f64).collect();
            let p = PairedSeries::new(xs.clone(), ys.clone());
            prop_assume!(p.is_ok());
            let Ok(base) = spearman(&p.unwrap()) else { return Ok(()); };
            let mapped_x: Vec<f64> = xs.iter().map(|x| (x / 50.0).exp() * 3.0 - 1.0).collect();
            let mapped_y: Vec<f64> = ys.iter().map(|y| y * y * y + 2.0 * y).collect();
            let r = spearman(&PairedSeries::new(mapped_x, mapped_y).unwrap()).unwrap();
            prop_assert!((r - base).abs() <= 1e-12);
        }
    }
}
