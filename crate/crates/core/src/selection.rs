//! Max-scaled softmax with a probability threshold and a length cap.
//!
//! Shared by the gold labeler (over click counts) and the score-based
//! explainers (over arbitrary relevance scores).

/// Softmax over `values / max|values|`. All-zero input gives the uniform
/// distribution.
pub fn max_scaled_softmax(values: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let xs: Vec<f64> = if scale > 0.0 {
        values.iter().map(|v| v / scale).collect()
    } else {
        vec![0.0; values.len()]
    };
    let top = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - top).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Largest selection size allowed for `n` candidates.
pub fn cap_limit(cap_fraction: f64, n: usize) -> usize {
    // epsilon guards products like 0.4 * 10 landing a hair under an integer
    ((cap_fraction * n as f64) + 1e-9).floor().max(0.0) as usize
}

/// One candidate: its raw value and its first title position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub raw: f64,
    pub position: usize,
    /// Candidates that are not eligible still take part in the softmax.
    pub eligible: bool,
}

/// Returns indices into `candidates` whose softmax score reaches `p`. When
/// more than `cap_limit(cap_fraction, n)` pass, keeps the best by score, then
/// raw value, then earlier position. Output is in candidate order.
pub fn threshold_with_cap(candidates: &[Candidate], p: f64, cap_fraction: f64) -> Vec<usize> {
    let raws: Vec<f64> = candidates.iter().map(|c| c.raw).collect();
    let scores = max_scaled_softmax(&raws);
    let mut passing: Vec<usize> = (0..candidates.len())
        .filter(|&i| candidates[i].eligible && scores[i] >= p)
        .collect();
    let limit = cap_limit(cap_fraction, candidates.len());
    if passing.len() > limit {
        passing.sort_by(|&a, &b| {
            scores[b]
                .total_cmp(&scores[a])
                .then(candidates[b].raw.total_cmp(&candidates[a].raw))
                .then(candidates[a].position.cmp(&candidates[b].position))
        });
        passing.truncate(limit);
        passing.sort_unstable();
    }
    passing
}
