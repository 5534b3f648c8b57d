//! Small derivative-free optimizers: a bounded Nelder–Mead simplex for the
//! 2-D marginal fits and a grid-plus-golden-section search for 1-D
//! likelihood maximization. Both are deterministic.

/// Result of a simplex search.
#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Maximize `f` over the box `bounds` with a Nelder–Mead simplex.
///
/// Points are projected onto the box before evaluation, so `f` is never
/// called outside it. `f` may return -inf for infeasible regions.
pub fn nelder_mead_max<F>(
    f: F,
    start: &[f64],
    step: &[f64],
    bounds: &[(f64, f64)],
    tol: f64,
    max_iter: usize,
) -> SimplexResult
where
    F: Fn(&[f64]) -> f64,
{
    let n = start.len();
    debug_assert!(n >= 1 && step.len() == n && bounds.len() == n);
    let clamp = |x: &mut Vec<f64>| {
        for (xi, &(lo, hi)) in x.iter_mut().zip(bounds) {
            *xi = xi.clamp(lo, hi);
        }
    };
    // minimize -f
    let eval = |x: &[f64]| -f(x);

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut start = start.to_vec();
    clamp(&mut start);
    simplex.push(start.clone());
    for i in 0..n {
        let mut v = start.clone();
        v[i] += step[i];
        clamp(&mut v);
        if (v[i] - start[i]).abs() < 1e-12 {
            v[i] = start[i] - step[i];
            clamp(&mut v);
        }
        simplex.push(v);
    }
    let mut fv: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        // order ascending by objective (best first)
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| fv[a].partial_cmp(&fv[b]).unwrap_or(std::cmp::Ordering::Equal));
        let reordered: Vec<Vec<f64>> = idx.iter().map(|&i| simplex[i].clone()).collect();
        let refv: Vec<f64> = idx.iter().map(|&i| fv[i]).collect();
        simplex = reordered;
        fv = refv;

        let spread = (fv[n] - fv[0]).abs();
        if spread.is_finite() && spread < tol * (1.0 + fv[0].abs()) {
            converged = true;
            break;
        }

        // centroid of all but worst
        let mut cen = vec![0.0; n];
        for v in simplex.iter().take(n) {
            for (c, x) in cen.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        let point = |coef: f64| -> Vec<f64> {
            let mut p: Vec<f64> = cen
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + coef * (c - w))
                .collect();
            clamp(&mut p);
            p
        };

        let xr = point(alpha);
        let fr = eval(&xr);
        if fr < fv[0] {
            let xe = point(gamma);
            let fe = eval(&xe);
            if fe < fr {
                simplex[n] = xe;
                fv[n] = fe;
            } else {
                simplex[n] = xr;
                fv[n] = fr;
            }
        } else if fr < fv[n - 1] {
            simplex[n] = xr;
            fv[n] = fr;
        } else {
            let xc = point(-rho);
            let fc = eval(&xc);
            if fc < fv[n] {
                simplex[n] = xc;
                fv[n] = fc;
            } else {
                // shrink toward best
                for i in 1..=n {
                    let best = simplex[0].clone();
                    for (x, b) in simplex[i].iter_mut().zip(&best) {
                        *x = b + sigma * (*x - b);
                    }
                    fv[i] = eval(&simplex[i]);
                }
            }
        }
    }

    let mut best = 0;
    for i in 1..=n {
        if fv[i] < fv[best] {
            best = i;
        }
    }
    SimplexResult {
        x: simplex[best].clone(),
        f: -fv[best],
        iterations,
        converged,
    }
}

/// Maximize a scalar function on [lo, hi] by a coarse grid followed by
/// golden-section refinement of the best bracket. Also evaluates `extra`
/// candidate points (e.g. a data-driven starting value). Returns (x, f(x)).
pub fn grid_golden_max<F>(f: F, lo: f64, hi: f64, grid: usize, extra: &[f64], tol: f64) -> (f64, f64)
where
    F: Fn(f64) -> f64,
{
    debug_assert!(hi > lo && grid >= 3);
    let mut xs: Vec<f64> = (0..grid)
        .map(|i| lo + (hi - lo) * i as f64 / (grid - 1) as f64)
        .collect();
    xs.extend(extra.iter().copied().filter(|x| *x > lo && *x < hi));
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let fs: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let mut best = 0;
    for i in 1..xs.len() {
        if fs[i] > fs[best] {
            best = i;
        }
    }
    let a = if best == 0 { xs[0] } else { xs[best - 1] };
    let b = if best + 1 == xs.len() { xs[best] } else { xs[best + 1] };
    let (x, fx) = golden_max(&f, a, b, tol);
    if fx >= fs[best] {
        (x, fx)
    } else {
        (xs[best], fs[best])
    }
}

fn golden_max<F>(f: &F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64)
where
    F: Fn(f64) -> f64,
{
    const INV_PHI: f64 = 0.618033988749894848;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}
