/// Nearest-rank percentile (`q` in `[0, 1]`) of the finite values; 0 for an
/// empty input.
pub fn percentile(values: impl IntoIterator<Item = f64>, q: f64) -> f64 {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let rank = (q.clamp(0.0, 1.0) * v.len() as f64).ceil() as usize;
    v[rank.saturating_sub(1).min(v.len() - 1)]
}

/// Scale used to bring magnitude stacks to unit range: the 99th percentile,
/// falling back to the maximum and then to 1 for all-zero data.
pub fn robust_scale(values: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let p = percentile(values.clone(), 0.99);
    if p > 0.0 {
        return p;
    }
    let m = values.into_iter().fold(0.0_f64, |a, b| if b.is_finite() { a.max(b) } else { a });
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(v.iter().copied(), 0.99), 99.0);
        assert_eq!(percentile(v.iter().copied(), 1.0), 100.0);
        assert_eq!(percentile(v.iter().copied(), 0.0), 1.0);
        assert_eq!(percentile([3.0, f64::NAN, 1.0], 0.5), 1.0);
        assert_eq!(percentile(std::iter::empty(), 0.5), 0.0);
    }

    #[test]
    fn robust_scale_fallbacks() {
        let mut v = vec![0.0; 200];
        v[0] = 4.0;
        assert_eq!(robust_scale(v.iter().copied()), 4.0);
        assert_eq!(robust_scale([0.0, 0.0].iter().copied()), 1.0);
    }
}
