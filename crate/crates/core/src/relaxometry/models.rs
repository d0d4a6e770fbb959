use ndarray::{Array2, Zip};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RelaxKind {
    /// MOLLI-style inversion recovery, `|A − B·exp(−t/T1*)|`.
    T1,
    /// T2-prepared decay, `A·exp(−t/T2)`.
    T2,
}

impl RelaxKind {
    /// Parameters of the signal model: 3 for T1, 2 for T2.
    pub fn n_params(self) -> usize {
        match self {
            RelaxKind::T1 => 3,
            RelaxKind::T2 => 2,
        }
    }

    /// Default relaxation times in ms.
    pub fn default_times(self) -> Vec<f64> {
        match self {
            RelaxKind::T1 => vec![100.0, 180.0, 260.0, 1000.0, 1080.0, 1160.0, 1900.0, 1980.0, 2060.0],
            RelaxKind::T2 => vec![0.0, 35.0, 55.0],
        }
    }

    pub fn code(self) -> u8 {
        match self {
            RelaxKind::T1 => 1,
            RelaxKind::T2 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(RelaxKind::T1),
            2 => Some(RelaxKind::T2),
            _ => None,
        }
    }
}

impl std::fmt::Display for RelaxKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RelaxKind::T1 => "T1",
            RelaxKind::T2 => "T2",
        })
    }
}

impl std::str::FromStr for RelaxKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "T1" => Ok(RelaxKind::T1),
            "T2" => Ok(RelaxKind::T2),
            other => Err(Error::InvalidArgument(format!("unknown relaxation kind `{other}`"))),
        }
    }
}

/// Inversion times (T1) or echo times (T2) in ms, one per baseline image.
#[derive(Clone, Debug, PartialEq)]
pub struct RelaxTimes {
    kind: RelaxKind,
    times: Vec<f64>,
}

impl RelaxTimes {
    /// Times must be finite, nonnegative and pairwise distinct, and there must
    /// be at least as many as the model has parameters.
    pub fn new(kind: RelaxKind, times: Vec<f64>) -> Result<Self> {
        if times.len() < kind.n_params() {
            return Err(Error::InvalidArgument(format!(
                "{kind} model needs at least {} times, got {}",
                kind.n_params(),
                times.len()
            )));
        }
        if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::InvalidArgument(format!("relaxation times must be finite and ≥ 0: {times:?}")));
        }
        for (i, a) in times.iter().enumerate() {
            if times[..i].contains(a) {
                return Err(Error::InvalidArgument(format!("duplicate relaxation time {a}")));
            }
        }
        Ok(Self { kind, times })
    }

    pub fn default_for(kind: RelaxKind) -> Self {
        Self { kind, times: kind.default_times() }
    }

    pub fn kind(&self) -> RelaxKind {
        self.kind
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// `|A − B·exp(−t/T1*)|`.
pub fn signal_t1(a: f64, b: f64, t1_star: f64, t: f64) -> Result<f64> {
    if !(t1_star > 0.0) {
        return Err(Error::InvalidArgument(format!("T1* must be positive, got {t1_star}")));
    }
    Ok((a - b * (-t / t1_star).exp()).abs())
}

/// `A·exp(−t/T2)`.
pub fn signal_t2(a: f64, t2: f64, t: f64) -> Result<f64> {
    if !(t2 > 0.0) {
        return Err(Error::InvalidArgument(format!("T2 must be positive, got {t2}")));
    }
    if a < 0.0 {
        return Err(Error::InvalidArgument(format!("A must be nonnegative, got {a}")));
    }
    Ok(a * (-t / t2).exp())
}

/// Voxels with `A` at or below this are flagged by [`derive_t1`].
pub const DERIVE_T1_EPS: f64 = 1e-9;

/// `T1 = (B/A − 1)·T1*` voxelwise. Voxels with `A ≤ DERIVE_T1_EPS` map to 0
/// and are flagged in the returned mask.
pub fn derive_t1(a: &Array2<f64>, b: &Array2<f64>, t1_star: &Array2<f64>) -> Result<(Array2<f64>, Array2<bool>)> {
    if a.dim() != b.dim() || a.dim() != t1_star.dim() {
        return Err(Error::Shape(format!("derive_t1: A {:?}, B {:?}, T1* {:?}", a.dim(), b.dim(), t1_star.dim())));
    }
    let mut t1 = Array2::zeros(a.dim());
    let mut flagged = Array2::from_elem(a.dim(), false);
    Zip::from(&mut t1).and(&mut flagged).and(a).and(b).and(t1_star).for_each(|t1, flag, &a, &b, &ts| {
        if a > DERIVE_T1_EPS {
            *t1 = derive_t1_voxel(a, b, ts);
        } else {
            *flag = true;
        }
    });
    Ok((t1, flagged))
}

pub fn derive_t1_voxel(a: f64, b: f64, t1_star: f64) -> f64 {
    (b / a - 1.0) * t1_star
}

/// Voxelwise relaxometry parameters. Times are in ms.
#[derive(Clone, Debug, PartialEq)]
pub enum ParameterMap {
    T1 {
        a: Array2<f64>,
        b: Array2<f64>,
        t1_star: Array2<f64>,
        /// Derived `(B/A − 1)·T1*`.
        t1: Array2<f64>,
    },
    T2 {
        a: Array2<f64>,
        t2: Array2<f64>,
    },
}

impl ParameterMap {
    /// Builds a T1 map, deriving T1 from the other three.
    pub fn t1(a: Array2<f64>, b: Array2<f64>, t1_star: Array2<f64>) -> Result<Self> {
        let (t1, _) = derive_t1(&a, &b, &t1_star)?;
        Ok(ParameterMap::T1 { a, b, t1_star, t1 })
    }

    pub fn t2(a: Array2<f64>, t2: Array2<f64>) -> Result<Self> {
        if a.dim() != t2.dim() {
            return Err(Error::Shape(format!("A {:?} vs T2 {:?}", a.dim(), t2.dim())));
        }
        Ok(ParameterMap::T2 { a, t2 })
    }

    pub fn kind(&self) -> RelaxKind {
        match self {
            ParameterMap::T1 { .. } => RelaxKind::T1,
            ParameterMap::T2 { .. } => RelaxKind::T2,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            ParameterMap::T1 { a, .. } | ParameterMap::T2 { a, .. } => a.dim(),
        }
    }

    /// Named channels in storage order.
    pub fn channels(&self) -> Vec<(&'static str, &Array2<f64>)> {
        match self {
            ParameterMap::T1 { a, b, t1_star, t1 } => vec![("A", a), ("B", b), ("T1star", t1_star), ("T1", t1)],
            ParameterMap::T2 { a, t2 } => vec![("A", a), ("T2", t2)],
        }
    }

    /// The clinically reported channel: T1 or T2.
    pub fn primary(&self) -> &Array2<f64> {
        match self {
            ParameterMap::T1 { t1, .. } => t1,
            ParameterMap::T2 { t2, .. } => t2,
        }
    }

    /// Model signal at each of `times`, voxelwise.
    pub fn render(&self, times: &[f64]) -> Vec<Array2<f64>> {
        times
            .iter()
            .map(|&t| match self {
                ParameterMap::T1 { a, b, t1_star, .. } => {
                    let mut out = Array2::zeros(a.dim());
                    Zip::from(&mut out).and(a).and(b).and(t1_star).for_each(|o, &a, &b, &ts| {
                        *o = if ts > 0.0 { (a - b * (-t / ts).exp()).abs() } else { 0.0 };
                    });
                    out
                }
                ParameterMap::T2 { a, t2 } => {
                    let mut out = Array2::zeros(a.dim());
                    Zip::from(&mut out).and(a).and(t2).for_each(|o, &a, &t2| {
                        *o = if t2 > 0.0 { a * (-t / t2).exp() } else { 0.0 };
                    });
                    out
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t1_signal_values() {
        assert_eq!(signal_t1(2.0, 3.0, 1.0, 0.0).unwrap(), 1.0);
        assert!((signal_t1(2.0, 3.0, 1.0, 100.0).unwrap() - 2.0).abs() < 1e-10);
        let t0 = 800.0 * std::f64::consts::LN_2;
        assert!(signal_t1(1.0, 2.0, 800.0, t0).unwrap() < 1e-15);
        assert!(signal_t1(1.0, 2.0, 0.0, 1.0).is_err());
        assert!(signal_t1(1.0, 2.0, -5.0, 1.0).is_err());
    }

    #[test]
    fn t1_with_zero_b_is_constant() {
        for t in [0.0, 10.0, 500.0, 5000.0] {
            assert_eq!(signal_t1(1.7, 0.0, 900.0, t).unwrap(), 1.7);
            assert_eq!(signal_t1(-1.7, 0.0, 900.0, t).unwrap(), 1.7);
        }
    }

    #[test]
    fn t2_signal_values() {
        assert_eq!(signal_t2(1.0, 50.0, 0.0).unwrap(), 1.0);
        assert!((signal_t2(1.0, 50.0, 50.0).unwrap() - 0.367879).abs() < 1e-6);
        assert!((signal_t2(1.0, 50.0, 50.0).unwrap() - (-1f64).exp()).abs() < 1e-15);
        assert_eq!(signal_t2(3.0, 40.0, 80.0).unwrap(), 3.0 * (-80.0f64 / 40.0).exp());
        assert!(signal_t2(1.0, 0.0, 1.0).is_err());
        assert!(signal_t2(-1.0, 10.0, 1.0).is_err());
    }

    #[test]
    fn derive_t1_values_and_flags() {
        let a = Array2::from_shape_vec((1, 3), vec![2.0, 1.5, 0.0]).unwrap();
        let b = Array2::from_shape_vec((1, 3), vec![3.0, 1.5, 2.0]).unwrap();
        let ts = Array2::from_elem((1, 3), 1000.0);
        let (t1, flags) = derive_t1(&a, &b, &ts).unwrap();
        assert_eq!(t1[[0, 0]], 500.0);
        assert_eq!(t1[[0, 1]], 0.0);
        assert_eq!(t1[[0, 2]], 0.0);
        assert_eq!(flags.as_slice().unwrap(), &[false, false, true]);
    }

    #[test]
    fn times_validation() {
        assert!(RelaxTimes::new(RelaxKind::T2, vec![0.0, 35.0, 55.0]).is_ok());
        assert!(RelaxTimes::new(RelaxKind::T2, vec![0.0, 35.0, 35.0]).is_err());
        assert!(RelaxTimes::new(RelaxKind::T1, vec![100.0, 200.0]).is_err());
        assert!(RelaxTimes::new(RelaxKind::T2, vec![-1.0, 35.0]).is_err());
        assert_eq!(RelaxTimes::default_for(RelaxKind::T1).len(), 9);
        assert_eq!(RelaxTimes::default_for(RelaxKind::T2).len(), 3);
    }
}
