/// Weighted least-squares monotone regression:
/// `argmin Σ w_j (β_j − y_j)²` over nondecreasing `β`, by pool adjacent
/// violators, then clipped below at 0.
pub fn isotonic_ls(weights: &[f64], targets: &[f64]) -> Vec<f64> {
    let mut out = pava(weights, targets);
    out.iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// As [`isotonic_ls`] over the box `[lo, hi]`; clipping the unconstrained
/// solution is exact for box constraints.
pub fn isotonic_ls_bounded(weights: &[f64], targets: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let mut out = pava(weights, targets);
    out.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
    out
}

/// Pooled run: singletons keep their target exactly.
struct Block {
    wy: f64,
    w: f64,
    len: usize,
    value: f64,
}

fn pava(weights: &[f64], targets: &[f64]) -> Vec<f64> {
    assert_eq!(weights.len(), targets.len());
    debug_assert!(weights.iter().all(|&w| w > 0.0));
    let mut blocks: Vec<Block> = Vec::with_capacity(targets.len());
    for (&w, &y) in weights.iter().zip(targets) {
        let mut cur = Block { wy: w * y, w, len: 1, value: y };
        while let Some(prev) = blocks.last() {
            if prev.value <= cur.value {
                break;
            }
            let wy = cur.wy + prev.wy;
            let w = cur.w + prev.w;
            cur = Block { wy, w, len: cur.len + prev.len, value: wy / w };
            blocks.pop();
        }
        blocks.push(cur);
    }
    let mut out = Vec::with_capacity(targets.len());
    for b in blocks {
        out.extend(std::iter::repeat_n(b.value, b.len));
    }
    out
}
