//! Box-constrained quasi-Newton (projected L-BFGS) and Nelder-Mead.

#[derive(Debug, Clone, Copy)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when the projected gradient's infinity norm drops below this.
    pub grad_tol: f64,
    /// Stop when the relative decrease of one iteration drops below this.
    pub f_tol: f64,
    /// Length scale of the first trial step while no curvature pairs are stored.
    pub step: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 10,
            max_iter: 200,
            grad_tol: 1e-10,
            f_tol: 1e-14,
            step: 1.0,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStatus {
    Progress,
    Converged,
    Stalled,
}

#[derive(Debug, Clone)]
pub struct OptResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iters: usize,
    pub converged: bool,
}

/// Projected L-BFGS state; call [`Lbfgs::step`] repeatedly so callers can
/// interleave validation checks between iterations.
pub struct Lbfgs {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    s_hist: Vec<Vec<f64>>,
    y_hist: Vec<Vec<f64>>,
    cfg: LbfgsConfig,
    iters: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Lbfgs {
    pub fn new<F>(f: &mut F, x0: &[f64], lower: &[f64], upper: &[f64], cfg: LbfgsConfig) -> Self
    where
        F: FnMut(&[f64], &mut [f64]) -> f64,
    {
        let x: Vec<f64> = x0
            .iter()
            .zip(lower.iter().zip(upper))
            .map(|(&v, (&l, &u))| v.clamp(l, u))
            .collect();
        let mut g = vec![0.0; x.len()];
        let fx = f(&x, &mut g);
        Lbfgs {
            x,
            f: fx,
            g,
            lower: lower.to_vec(),
            upper: upper.to_vec(),
            s_hist: Vec::new(),
            y_hist: Vec::new(),
            cfg,
            iters: 0,
        }
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn f(&self) -> f64 {
        self.f
    }

    pub fn iters(&self) -> usize {
        self.iters
    }

    fn project(&self, v: &mut [f64]) {
        for i in 0..v.len() {
            v[i] = v[i].clamp(self.lower[i], self.upper[i]);
        }
    }

    fn active(&self, i: usize) -> bool {
        (self.x[i] <= self.lower[i] && self.g[i] > 0.0)
            || (self.x[i] >= self.upper[i] && self.g[i] < 0.0)
    }

    fn direction(&self) -> Vec<f64> {
        let n = self.x.len();
        let mut q: Vec<f64> = (0..n)
            .map(|i| if self.active(i) { 0.0 } else { self.g[i] })
            .collect();
        let k = self.s_hist.len();
        let mut alpha = vec![0.0; k];
        for j in (0..k).rev() {
            let rho = 1.0 / dot(&self.y_hist[j], &self.s_hist[j]);
            alpha[j] = rho * dot(&self.s_hist[j], &q);
            for i in 0..n {
                q[i] -= alpha[j] * self.y_hist[j][i];
            }
        }
        if k > 0 {
            let gamma = dot(&self.s_hist[k - 1], &self.y_hist[k - 1])
                / dot(&self.y_hist[k - 1], &self.y_hist[k - 1]);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for j in 0..k {
            let rho = 1.0 / dot(&self.y_hist[j], &self.s_hist[j]);
            let beta = rho * dot(&self.y_hist[j], &q);
            for i in 0..n {
                q[i] += (alpha[j] - beta) * self.s_hist[j][i];
            }
        }
        (0..n)
            .map(|i| if self.active(i) { 0.0 } else { -q[i] })
            .collect()
    }

    pub fn projected_grad_norm(&self) -> f64 {
        (0..self.x.len())
            .map(|i| if self.active(i) { 0.0 } else { self.g[i].abs() })
            .fold(0.0, f64::max)
    }

    pub fn step<F>(&mut self, f: &mut F) -> StepStatus
    where
        F: FnMut(&[f64], &mut [f64]) -> f64,
    {
        if !self.f.is_finite() {
            return StepStatus::Stalled;
        }
        if self.projected_grad_norm() <= self.cfg.grad_tol {
            return StepStatus::Converged;
        }
        let mut d = self.direction();
        if dot(&d, &self.g) >= 0.0 || d.iter().any(|v| !v.is_finite()) {
            self.s_hist.clear();
            self.y_hist.clear();
            d = self.direction();
        }
        let mut alpha = 1.0;
        if self.s_hist.is_empty() {
            let norm = dot(&d, &d).sqrt();
            alpha = self.cfg.step * (1.0 / norm).min(1.0);
        }
        let n = self.x.len();
        let mut g_new = vec![0.0; n];
        for _ in 0..self.cfg.max_backtracks {
            let mut x_new: Vec<f64> = (0..n).map(|i| self.x[i] + alpha * d[i]).collect();
            self.project(&mut x_new);
            let dx: Vec<f64> = (0..n).map(|i| x_new[i] - self.x[i]).collect();
            let decrease = dot(&self.g, &dx);
            if decrease >= 0.0 {
                alpha *= 0.5;
                continue;
            }
            let f_new = f(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= self.f + 1e-4 * decrease {
                let y: Vec<f64> = (0..n).map(|i| g_new[i] - self.g[i]).collect();
                let sy = dot(&dx, &y);
                if sy > 1e-12 * dot(&dx, &dx).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
                    if self.s_hist.len() == self.cfg.memory {
                        self.s_hist.remove(0);
                        self.y_hist.remove(0);
                    }
                    self.s_hist.push(dx);
                    self.y_hist.push(y);
                }
                let rel = (self.f - f_new) / self.f.abs().max(1e-300);
                self.x = x_new;
                self.f = f_new;
                std::mem::swap(&mut self.g, &mut g_new);
                self.iters += 1;
                if rel <= self.cfg.f_tol {
                    return StepStatus::Converged;
                }
                return StepStatus::Progress;
            }
            alpha *= 0.5;
        }
        if !self.s_hist.is_empty() {
            self.s_hist.clear();
            self.y_hist.clear();
            return StepStatus::Progress;
        }
        StepStatus::Stalled
    }

    pub fn run<F>(&mut self, f: &mut F) -> bool
    where
        F: FnMut(&[f64], &mut [f64]) -> f64,
    {
        let mut stalls = 0;
        while self.iters < self.cfg.max_iter {
            match self.step(f) {
                StepStatus::Converged => return true,
                StepStatus::Stalled => return false,
                StepStatus::Progress => {}
            }
            stalls += 1;
            if stalls > 10 * self.cfg.max_iter.max(1) {
                break;
            }
        }
        false
    }
}

/// Minimizes `f` (value and gradient) inside the box `[lower, upper]`.
pub fn minimize_box<F>(f: &mut F, x0: &[f64], lower: &[f64], upper: &[f64], cfg: LbfgsConfig) -> OptResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let mut opt = Lbfgs::new(f, x0, lower, upper, cfg);
    let converged = opt.run(f);
    OptResult {
        x: opt.x.clone(),
        f: opt.f,
        iters: opt.iters,
        converged,
    }
}

/// Derivative-free Nelder-Mead; bounds are honoured by projecting every
/// trial point.
pub fn nelder_mead<F>(
    f: &mut F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    initial_step: f64,
    max_evals: usize,
    f_tol: f64,
) -> OptResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let proj = |v: &mut Vec<f64>| {
        for i in 0..n {
            v[i] = v[i].clamp(lower[i], upper[i]);
        }
    };
    let mut evals = 0;
    let mut eval = |v: &[f64], evals: &mut usize| {
        *evals += 1;
        let r = f(v);
        if r.is_finite() {
            r
        } else {
            f64::INFINITY
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let mut start = x0.to_vec();
    proj(&mut start);
    let f0 = eval(&start, &mut evals);
    simplex.push((start.clone(), f0));
    for i in 0..n {
        let mut v = start.clone();
        let step = if v[i] + initial_step <= upper[i] {
            initial_step
        } else {
            -initial_step
        };
        v[i] += step;
        proj(&mut v);
        let fv = eval(&v, &mut evals);
        simplex.push((v, fv));
    }
    let nf = n as f64;
    let (alpha, gamma, rho, sigma) = (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf);
    let mut iters = 0;
    while evals < max_evals {
        iters += 1;
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[n].1);
        if (worst - best).abs() <= f_tol * (best.abs() + f_tol) {
            break;
        }
        let mut centroid = vec![0.0; n];
        for (v, _) in &simplex[..n] {
            for i in 0..n {
                centroid[i] += v[i] / nf;
            }
        }
        let along = |c: f64| {
            let mut v: Vec<f64> = (0..n)
                .map(|i| centroid[i] + c * (simplex[n].0[i] - centroid[i]))
                .collect();
            proj(&mut v);
            v
        };
        let xr = along(-alpha);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(-gamma);
            let fe = eval(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst {
                let xc = along(-rho);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = along(rho);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < fr.min(worst) {
                simplex[n] = (xc, fc);
            } else {
                let x_best = simplex[0].0.clone();
                for (v, fv) in simplex.iter_mut().skip(1) {
                    for i in 0..n {
                        v[i] = x_best[i] + sigma * (v[i] - x_best[i]);
                    }
                    proj(v);
                    *fv = eval(v, &mut evals);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fx) = simplex.swap_remove(0);
    OptResult {
        x,
        f: fx,
        iters,
        converged: evals < max_evals,
    }
}
