//! Box-constrained Nelder–Mead minimizer with dimension-adaptive coefficients
//! and restart-on-convergence.

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    /// Initial simplex edge per coordinate.
    pub initial_step: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Converged once every vertex lies within this distance of the best one.
    pub diameter_tol: f64,
    pub max_evaluations: usize,
    /// Fresh simplices built around the incumbent after convergence; the run
    /// stops once a restart no longer improves the value by `restart_gain`.
    pub max_restarts: usize,
    pub restart_gain: f64,
}

impl NelderMeadOptions {
    pub fn unbounded(dim: usize) -> Self {
        NelderMeadOptions {
            initial_step: vec![0.1; dim],
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
            diameter_tol: 1e-10,
            max_evaluations: 20_000,
            max_restarts: 3,
            restart_gain: 1e-13,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evaluations: usize,
    pub converged: bool,
}

struct Counted<'a, F: FnMut(&[f64]) -> f64> {
    f: &'a mut F,
    lower: &'a [f64],
    upper: &'a [f64],
    evaluations: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counted<'_, F> {
    fn project(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }

    fn eval(&mut self, x: &mut [f64]) -> f64 {
        self.project(x);
        self.evaluations += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

fn diameter(simplex: &[Vec<f64>], best: usize) -> f64 {
    simplex
        .iter()
        .map(|v| {
            v.iter().zip(&simplex[best]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// One simplex descent from `x0`; returns `(x, f, converged)`.
fn descend<F: FnMut(&[f64]) -> f64>(
    obj: &mut Counted<'_, F>,
    x0: &[f64],
    step: &[f64],
    opts: &NelderMeadOptions,
) -> (Vec<f64>, f64, bool) {
    let n = x0.len();
    let nf = n as f64;
    // adaptive coefficients (Gao & Han)
    let (alpha, gamma, rho, sigma) = (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf);

    let mut simplex = Vec::with_capacity(n + 1);
    let mut start = x0.to_vec();
    obj.project(&mut start);
    simplex.push(start.clone());
    for i in 0..n {
        let mut v = start.clone();
        v[i] += step[i];
        if v[i] > obj.upper[i] {
            v[i] = start[i] - step[i];
        }
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter_mut().map(|v| obj.eval(v)).collect();

    loop {
        // order: best first, ties by vertex coordinates for determinism
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| {
            values[a].total_cmp(&values[b]).then_with(|| {
                simplex[a]
                    .iter()
                    .zip(&simplex[b])
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
        });
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        if diameter(&simplex, 0) < opts.diameter_tol {
            return (simplex[0].clone(), values[0], true);
        }
        if obj.evaluations >= opts.max_evaluations {
            return (simplex[0].clone(), values[0], false);
        }

        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / nf;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (c - w)).collect()
        };

        let mut xr = along(alpha);
        let fr = obj.eval(&mut xr);
        if fr < values[0] {
            let mut xe = along(alpha * gamma);
            let fe = obj.eval(&mut xe);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (mut xc, fc_bound) = if fr < values[n] {
            (along(alpha * rho), fr)
        } else {
            (along(-rho), values[n])
        };
        let fc = obj.eval(&mut xc);
        if fc < fc_bound {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        // shrink toward the best vertex
        let best = simplex[0].clone();
        for i in 1..=n {
            let mut v: Vec<f64> =
                best.iter().zip(&simplex[i]).map(|(b, x)| b + sigma * (x - b)).collect();
            values[i] = obj.eval(&mut v);
            simplex[i] = v;
        }
    }
}

/// Minimize `f` from `x0`.
pub fn minimize<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    opts: &NelderMeadOptions,
) -> NelderMeadResult {
    assert_eq!(x0.len(), opts.initial_step.len());
    let mut obj = Counted { f: &mut f, lower: &opts.lower, upper: &opts.upper, evaluations: 0 };
    let (mut x, mut fx, mut converged) = descend(&mut obj, x0, &opts.initial_step, opts);
    let mut step: Vec<f64> = opts.initial_step.clone();
    for _ in 0..opts.max_restarts {
        if obj.evaluations >= opts.max_evaluations {
            break;
        }
        step.iter_mut().for_each(|s| *s *= 0.1);
        let (x2, f2, c2) = descend(&mut obj, &x, &step, opts);
        let gain = fx - f2;
        if f2 <= fx {
            x = x2;
            fx = f2;
            converged = c2;
        }
        if gain <= opts.restart_gain {
            break;
        }
    }
    NelderMeadResult { x, f: fx, evaluations: obj.evaluations, converged }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        x.windows(2).map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2)).sum()
    }

    #[test]
    fn finds_rosenbrock_minimum() {
        let mut opts = NelderMeadOptions::unbounded(4);
        opts.initial_step = vec![0.5; 4];
        opts.max_evaluations = 50_000;
        let r = minimize(rosenbrock, &[-1.2, 1.0, -0.5, 0.8], &opts);
        assert!(r.converged);
        for v in &r.x {
            assert!((v - 1.0).abs() < 1e-6, "{:?}", r.x);
        }
    }

    #[test]
    fn respects_bounds() {
        let mut opts = NelderMeadOptions::unbounded(2);
        opts.lower = vec![2.0, -1.0];
        opts.upper = vec![5.0, 1.0];
        let r = minimize(|x| x[0] * x[0] + (x[1] - 0.3).powi(2), &[4.0, 0.0], &opts);
        assert!((r.x[0] - 2.0).abs() < 1e-9);
        assert!((r.x[1] - 0.3).abs() < 1e-6);
    }

    #[test]
    fn deterministic() {
        let opts = NelderMeadOptions::unbounded(3);
        let a = minimize(rosenbrock, &[0.0, 0.0, 0.0], &opts);
        let b = minimize(rosenbrock, &[0.0, 0.0, 0.0], &opts);
        assert_eq!(a, b);
    }

    #[test]
    fn stops_at_the_evaluation_budget() {
        let mut opts = NelderMeadOptions::unbounded(5);
        opts.max_evaluations = 50;
        let r = minimize(rosenbrock, &[3.0; 5], &opts);
        assert!(!r.converged);
        assert!(r.evaluations < 70);
    }
}
