//! Small dense Levenberg–Marquardt solver for models with at most three parameters.

pub(crate) const MAX_P: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmOptions {
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    pub max_iterations: usize,
    /// Stop once an accepted step changes the SSR by less than this, relatively.
    pub rel_tolerance: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self { initial_damping: 1e-3, damping_up: 10.0, damping_down: 10.0, max_iterations: 200, rel_tolerance: 1e-10 }
    }
}

/// A least-squares model `f(p, t)` with its gradient in `p`.
pub trait LmModel {
    fn n_params(&self) -> usize;
    /// Returns `f(p, t)` and writes `∂f/∂p` into `grad[..n_params]`.
    fn eval(&self, p: &[f64; MAX_P], t: f64, grad: &mut [f64; MAX_P]) -> f64;
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmOutcome {
    pub params: [f64; MAX_P],
    pub ssr: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn ssr_of(model: &impl LmModel, p: &[f64; MAX_P], t: &[f64], y: &[f64]) -> f64 {
    let mut g = [0.0; MAX_P];
    t.iter().zip(y).map(|(&t, &y)| (model.eval(p, t, &mut g) - y).powi(2)).sum()
}

/// Solves the `n×n` system in place by Gaussian elimination with partial pivoting.
fn solve(mut a: [[f64; MAX_P]; MAX_P], mut b: [f64; MAX_P], n: usize) -> Option<[f64; MAX_P]> {
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if !(a[piv][col].abs() > 0.0) {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; MAX_P];
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in row + 1..n {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Minimizes `Σ (f(p, t_j) − y_j)²` from `p0`. If `trace` is given, the SSR
/// after every accepted step is pushed onto it (starting with the initial SSR).
pub fn minimize(
    model: &impl LmModel,
    p0: [f64; MAX_P],
    t: &[f64],
    y: &[f64],
    opts: &LmOptions,
    mut trace: Option<&mut Vec<f64>>,
) -> LmOutcome {
    let n = model.n_params();
    let mut p = p0;
    let mut ssr = ssr_of(model, &p, t, y);
    let scale: f64 = y.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    if let Some(tr) = trace.as_deref_mut() {
        tr.push(ssr);
    }
    let mut lambda = opts.initial_damping;
    let mut converged = false;
    let mut it = 0;
    let mut grad = [0.0; MAX_P];
    while it < opts.max_iterations {
        it += 1;
        if !ssr.is_finite() {
            break;
        }
        if ssr <= 1e-28 * scale {
            converged = true;
            break;
        }
        let mut jtj = [[0.0; MAX_P]; MAX_P];
        let mut jtr = [0.0; MAX_P];
        for (&tj, &yj) in t.iter().zip(y) {
            let r = model.eval(&p, tj, &mut grad) - yj;
            for a in 0..n {
                jtr[a] += grad[a] * r;
                for b in 0..n {
                    jtj[a][b] += grad[a] * grad[b];
                }
            }
        }
        let mut accepted = false;
        while lambda <= 1e20 {
            let mut m = jtj;
            for (a, row) in m.iter_mut().enumerate().take(n) {
                row[a] += lambda * jtj[a][a].max(1e-12);
            }
            let neg = jtr.map(|v| -v);
            if let Some(delta) = solve(m, neg, n) {
                let mut cand = p;
                for a in 0..n {
                    cand[a] += delta[a];
                }
                let s = ssr_of(model, &cand, t, y);
                if s.is_finite() && s < ssr {
                    let rel = (ssr - s) / ssr;
                    p = cand;
                    ssr = s;
                    lambda = (lambda / opts.damping_down).max(1e-15);
                    accepted = true;
                    if let Some(tr) = trace.as_deref_mut() {
                        tr.push(ssr);
                    }
                    if rel < opts.rel_tolerance {
                        converged = true;
                    }
                    break;
                }
            }
            lambda *= opts.damping_up;
        }
        if !accepted {
            // no descent direction left at any damping: a stationary point
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    LmOutcome { params: p, ssr, iterations: it, converged }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Line;
    impl LmModel for Line {
        fn n_params(&self) -> usize {
            2
        }
        fn eval(&self, p: &[f64; MAX_P], t: f64, g: &mut [f64; MAX_P]) -> f64 {
            g[0] = 1.0;
            g[1] = t;
            p[0] + p[1] * t
        }
    }

    #[test]
    fn fits_a_line_exactly() {
        let t = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = t.iter().map(|t| 2.0 - 0.5 * t).collect();
        let mut tr = Vec::new();
        let out = minimize(&Line, [0.0; 3], &t, &y, &LmOptions::default(), Some(&mut tr));
        assert!(out.converged);
        assert!((out.params[0] - 2.0).abs() < 1e-9);
        assert!((out.params[1] + 0.5).abs() < 1e-9);
        assert!(tr.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn solver_handles_pivoting() {
        let a = [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 2.0]];
        let x = solve(a, [3.0, 4.0, 8.0], 3).unwrap();
        assert_eq!(x, [4.0, 3.0, 4.0]);
        assert!(solve([[0.0; 3]; 3], [1.0, 0.0, 0.0], 2).is_none());
    }
}
