//! Bounded Nelder–Mead simplex minimization.

#[derive(Debug, Clone)]
pub struct NelderMeadConfig {
    pub max_evals: usize,
    /// Stop once every vertex lies within this distance (max-norm) of the best one.
    pub diameter_tol: f64,
    /// Edge length of the initial simplex along each axis.
    pub initial_step: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn unbounded(dim: usize) -> Self {
        Bounds {
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
        }
    }

    pub fn clip(&self, x: &mut [f64]) {
        for ((xi, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *xi = xi.clamp(*lo, *hi);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn call(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        // NaN would break the vertex ordering
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

fn diameter(simplex: &[Vec<f64>]) -> f64 {
    let best = &simplex[0];
    simplex[1..]
        .iter()
        .flat_map(|v| v.iter().zip(best).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max)
}

/// Minimizes `f` from `x0` with the standard coefficients (reflection 1,
/// expansion 2, contraction ½, shrink ½). Trial points are clipped into
/// `bounds`.
pub fn nelder_mead<F>(f: F, x0: &[f64], bounds: &Bounds, cfg: &NelderMeadConfig) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    assert_eq!(cfg.initial_step.len(), n, "one step per coordinate");
    let mut f = Counted { f, evals: 0 };

    let mut start = x0.to_vec();
    bounds.clip(&mut start);
    let mut simplex = vec![start.clone()];
    for i in 0..n {
        let mut v = start.clone();
        v[i] += cfg.initial_step[i];
        if v[i] > bounds.upper[i] {
            v[i] = start[i] - cfg.initial_step[i];
        }
        bounds.clip(&mut v);
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f.call(v)).collect();

    let mut iterations = 0;
    let mut converged = false;
    loop {
        // order vertices, best first; stable so ties keep their age order
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
        values = idx.iter().map(|&i| values[i]).collect();

        if diameter(&simplex) < cfg.diameter_tol {
            converged = true;
            break;
        }
        if f.evals >= cfg.max_evals {
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |coef: f64| -> Vec<f64> {
            let mut p: Vec<f64> = centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + coef * (c - w))
                .collect();
            bounds.clip(&mut p);
            p
        };

        let xr = along(1.0);
        let fr = f.call(&xr);
        if fr < values[0] {
            let xe = along(2.0);
            let fe = f.call(&xe);
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
        let (xc, fc) = if fr < values[n] {
            let xc = along(0.5);
            let fc = f.call(&xc);
            (xc, fc)
        } else {
            let xc = along(-0.5);
            let fc = f.call(&xc);
            (xc, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        // shrink toward the best vertex
        let best = simplex[0].clone();
        for i in 1..=n {
            for j in 0..n {
                simplex[i][j] = best[j] + 0.5 * (simplex[i][j] - best[j]);
            }
            values[i] = f.call(&simplex[i]);
        }
    }

    Minimum {
        x: simplex[0].clone(),
        value: values[0],
        iterations,
        evaluations: f.evals,
        converged,
    }
}
