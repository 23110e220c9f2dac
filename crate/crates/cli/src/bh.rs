//! Benjamini-Hochberg step-up adjustment.

/// Adjusted p-values (q-values) and rejections at false discovery rate `fdr`.
#[derive(Debug, Clone, PartialEq)]
pub struct BhResult {
    pub adjusted: Vec<f64>,
    pub rejected: Vec<bool>,
}

pub fn benjamini_hochberg(p: &[f64], fdr: f64) -> BhResult {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));

    let mut adjusted = vec![1.0; m];
    let mut running = 1.0f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        running = running.min(p[i] * m as f64 / (rank + 1) as f64);
        adjusted[i] = running.min(1.0);
    }
    let cutoff = order
        .iter()
        .enumerate()
        .filter(|&(rank, &i)| p[i] <= fdr * (rank + 1) as f64 / m as f64)
        .map(|(rank, _)| rank + 1)
        .max()
        .unwrap_or(0);
    let mut rejected = vec![false; m];
    for &i in &order[..cutoff] {
        rejected[i] = true;
    }
    BhResult { adjusted, rejected }
}

/// True when even the smallest attainable p-value `1/(B+1)` exceeds the
/// first BH threshold `fdr/m`, so a lone signal can never be declared.
pub fn granularity_limited(permutations: usize, features: usize, fdr: f64) -> bool {
    features > 0 && 1.0 / (permutations as f64 + 1.0) > fdr / features as f64
}
