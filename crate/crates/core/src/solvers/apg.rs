//! Accelerated proximal gradient for `smooth quadratic + α‖X‖₁`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::Serialize;

use crate::error::{Error, Result};

const POWER_ITERATIONS: usize = 30;
const POWER_PADDING: f64 = 1.01;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApgReport {
    pub iterations: usize,
    pub objective: f64,
    pub relative_change: f64,
    pub converged: bool,
}

/// Gram matrices of a column-separable least-squares term.
#[derive(Debug, Clone)]
pub(crate) enum Grams {
    /// One Gram matrix shared by every column.
    Shared(DMatrix<f64>),
    /// One Gram matrix per column.
    PerColumn(Vec<DMatrix<f64>>),
}

impl Grams {
    fn get(&self, t: usize) -> &DMatrix<f64> {
        match self {
            Grams::Shared(g) => g,
            Grams::PerColumn(gs) => &gs[t],
        }
    }

    /// Power-iteration estimate of the largest Gram eigenvalue, padded slightly.
    /// An underestimate is safe: the line search doubles the constant until the
    /// quadratic model majorizes.
    fn max_eigenvalue(&self) -> f64 {
        let lmax = |g: &DMatrix<f64>| {
            let k = g.nrows();
            if k == 0 {
                return 0.0;
            }
            let mut v = DVector::from_element(k, 1.0 / (k as f64).sqrt());
            let mut gv = DVector::zeros(k);
            let mut estimate: f64 = 0.0;
            for _ in 0..POWER_ITERATIONS {
                gv.gemv(1.0, g, &v, 0.0);
                estimate = estimate.max(v.dot(&gv));
                let norm = gv.norm();
                if norm == 0.0 {
                    break;
                }
                v.copy_from(&gv);
                v /= norm;
            }
            estimate * POWER_PADDING
        };
        match self {
            Grams::Shared(g) => lmax(g),
            Grams::PerColumn(gs) => gs.iter().map(lmax).fold(0.0, f64::max),
        }
    }
}

/// `f(X) = (w/2) Σ_t (x_tᵀ G_t x_t − 2 b_tᵀ x_t + y_t) + (β/2) Σ_t ‖x_{t+1} − x_t‖²`.
///
/// The second term is the forward-difference smoothness over columns.
#[derive(Debug, Clone)]
pub(crate) struct SeparableQuadratic {
    pub grams: Grams,
    /// `k × n`, column `t` is `b_t`.
    pub linear: DMatrix<f64>,
    /// `y_t = ‖target_t‖²`, makes the value equal the residual norm.
    pub constants: Vec<f64>,
    pub weight: f64,
    pub smoothness: f64,
}

impl SeparableQuadratic {
    /// Value and, when `grad` is given, the gradient written into it.
    ///
    /// `scratch` holds one column of `G_t x_t`; both buffers are reused across calls.
    fn evaluate(
        &self,
        x: &DMatrix<f64>,
        grad: Option<&mut DMatrix<f64>>,
        scratch: &mut DVector<f64>,
    ) -> f64 {
        let (k, n) = x.shape();
        let xs = x.as_slice();
        let bs = self.linear.as_slice();
        let gx = scratch.as_mut_slice();
        let mut grad = grad.map(|g| g.as_mut_slice());
        let mut data = 0.0;
        for t in 0..n {
            let xt = &xs[t * k..(t + 1) * k];
            let bt = &bs[t * k..(t + 1) * k];
            let gram = self.grams.get(t).as_slice();
            gx.fill(0.0);
            for (l, xl) in xt.iter().enumerate() {
                for (o, g) in gx.iter_mut().zip(&gram[l * k..(l + 1) * k]) {
                    *o += g * xl;
                }
            }
            let mut quad = 0.0;
            let mut lin = 0.0;
            for i in 0..k {
                quad += xt[i] * gx[i];
                lin += bt[i] * xt[i];
            }
            data += quad - 2.0 * lin + self.constants[t];
            if let Some(g) = grad.as_deref_mut() {
                for ((o, gv), b) in g[t * k..(t + 1) * k].iter_mut().zip(gx.iter()).zip(bt) {
                    *o = self.weight * (gv - b);
                }
            }
        }
        let mut smooth = 0.0;
        if self.smoothness != 0.0 {
            for t in 1..n {
                for i in 0..k {
                    let d = xs[t * k + i] - xs[(t - 1) * k + i];
                    smooth += d * d;
                    if let Some(g) = grad.as_deref_mut() {
                        g[t * k + i] += self.smoothness * d;
                        g[(t - 1) * k + i] -= self.smoothness * d;
                    }
                }
            }
        }
        0.5 * self.weight * data + 0.5 * self.smoothness * smooth
    }

    #[cfg(test)]
    pub fn value(&self, x: &DMatrix<f64>) -> f64 {
        self.evaluate(x, None, &mut DVector::zeros(x.nrows()))
    }

    #[cfg(test)]
    pub fn gradient(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(x.nrows(), x.ncols());
        self.evaluate(x, Some(&mut g), &mut DVector::zeros(x.nrows()));
        g
    }

    /// `w·max_t λ_max(G_t) + 4β`; the path-graph Laplacian has spectral radius below 4.
    pub fn lipschitz_bound(&self) -> f64 {
        self.weight * self.grams.max_eigenvalue() + 4.0 * self.smoothness
    }
}

/// Proximal operator of `τ‖·‖₁`; values with `|v| ≤ τ` map to exactly zero.
pub fn soft_threshold(v: f64, tau: f64) -> f64 {
    if v > tau {
        v - tau
    } else if v < -tau {
        v + tau
    } else {
        0.0
    }
}

fn l1(x: &DMatrix<f64>) -> f64 {
    x.as_slice().iter().map(|v| v.abs()).sum()
}

/// Minimizes `f + α‖X‖₁`: monotone FISTA followed by exact refinement on the
/// support it finds.
///
/// After each accelerated run the stationarity system restricted to the
/// current support and signs is solved exactly; the iterate moves toward that
/// solution until the first coefficient reaches zero and the move is kept only
/// if the objective does not increase. When the refined point violates the
/// optimality conditions, acceleration resumes from it.
pub(crate) fn minimize_l1_composite(
    f: &SeparableQuadratic,
    alpha: f64,
    x0: &DMatrix<f64>,
    max_iter: usize,
    tol: f64,
) -> Result<(DMatrix<f64>, ApgReport)> {
    let (mut x, mut report) = accelerated(f, alpha, x0, max_iter, tol)?;
    for _ in 0..REFINE_ROUNDS {
        let Some((next, value, exact)) = refine_on_support(f, alpha, &x, report.objective) else {
            break;
        };
        x = next;
        report.objective = value;
        if exact && satisfies_optimality(f, alpha, &x) {
            report.converged = true;
            break;
        }
        let budget = max_iter.saturating_sub(report.iterations);
        if budget == 0 {
            break;
        }
        let (resumed, more) = accelerated(f, alpha, &x, budget, tol)?;
        x = resumed;
        report = ApgReport {
            iterations: report.iterations + more.iterations,
            ..more
        };
    }
    Ok((x, report))
}

const REFINE_ROUNDS: usize = 4;

/// Moves `x` toward the minimizer of `f(X) + α⟨sign X, X⟩` over the support of
/// `x`, stopping where the first coefficient reaches zero. Returns the new point,
/// its objective, and whether the full restricted minimizer was reached; `None`
/// when the restricted system is singular or the move would not help.
fn refine_on_support(
    f: &SeparableQuadratic,
    alpha: f64,
    x: &DMatrix<f64>,
    fx: f64,
) -> Option<(DMatrix<f64>, f64, bool)> {
    let target = solve_on_support(f, alpha, x)?;
    let mut tau = 1.0_f64;
    for (xv, tv) in x.iter().zip(target.iter()) {
        if *xv != 0.0 && tv.signum() != xv.signum() {
            tau = tau.min(xv / (xv - tv));
        }
    }
    let mut next = x + (&target - x) * tau;
    for ((nv, xv), tv) in next.iter_mut().zip(x.iter()).zip(target.iter()) {
        if *xv == 0.0 || (tv.signum() != xv.signum() && xv / (xv - tv) <= tau) {
            *nv = 0.0;
        }
    }
    if next.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let value = f.evaluate(&next, None, &mut DVector::zeros(x.nrows())) + alpha * l1(&next);
    (value <= fx).then_some((next, value, tau == 1.0))
}

/// Zero entries need `|∂f| ≤ α`, nonzero ones `∂f = −α sign`, both up to rounding.
fn satisfies_optimality(f: &SeparableQuadratic, alpha: f64, x: &DMatrix<f64>) -> bool {
    let mut g = DMatrix::zeros(x.nrows(), x.ncols());
    f.evaluate(x, Some(&mut g), &mut DVector::zeros(x.nrows()));
    let scale = g.amax().max(alpha).max(1.0);
    x.iter().zip(g.iter()).all(|(xv, gv)| {
        if *xv == 0.0 {
            gv.abs() <= alpha + 1e-9 * scale
        } else {
            (gv + alpha * xv.signum()).abs() <= 1e-9 * scale
        }
    })
}

/// Block-tridiagonal elimination for `w G_S x + β L_S x = w b_S − α s` on the
/// support `S` of `x`; column blocks couple through the smoothness term only
/// where consecutive supports share an atom.
fn solve_on_support(f: &SeparableQuadratic, alpha: f64, x: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let (k, n) = x.shape();
    let supports: Vec<Vec<usize>> = (0..n)
        .map(|t| (0..k).filter(|&i| x[(i, t)] != 0.0).collect())
        .collect();
    let beta = f.smoothness;
    let coupling = |t: usize| {
        let (a, b) = (&supports[t - 1], &supports[t]);
        DMatrix::from_fn(
            a.len(),
            b.len(),
            |r, c| if a[r] == b[c] { -beta } else { 0.0 },
        )
    };
    let solve = |c: &Option<Cholesky<f64, Dyn>>, m: &DMatrix<f64>| match c {
        Some(c) => c.solve(m),
        None => DMatrix::zeros(0, m.ncols()),
    };
    let mut factors: Vec<Option<Cholesky<f64, Dyn>>> = Vec::with_capacity(n);
    let mut rhs: Vec<DMatrix<f64>> = Vec::with_capacity(n);
    for t in 0..n {
        let s = &supports[t];
        let gram = f.grams.get(t);
        let degree = (t > 0) as usize + (t + 1 < n) as usize;
        let mut a = DMatrix::from_fn(s.len(), s.len(), |r, c| f.weight * gram[(s[r], s[c])]);
        for d in 0..s.len() {
            a[(d, d)] += beta * degree as f64;
        }
        let mut r = DMatrix::from_fn(s.len(), 1, |i, _| {
            f.weight * f.linear[(s[i], t)] - alpha * x[(s[i], t)].signum()
        });
        if t > 0 && beta != 0.0 {
            let b = coupling(t);
            a -= b.transpose() * solve(&factors[t - 1], &b);
            r -= b.transpose() * solve(&factors[t - 1], &rhs[t - 1]);
        }
        factors.push(if s.is_empty() {
            None
        } else {
            Some(Cholesky::new(a)?)
        });
        rhs.push(r);
    }
    let mut out = DMatrix::zeros(k, n);
    let mut later: Option<DMatrix<f64>> = None;
    for t in (0..n).rev() {
        let mut r = rhs[t].clone();
        if let Some(xn) = &later {
            if beta != 0.0 {
                r -= coupling(t + 1) * xn;
            }
        }
        let xt = solve(&factors[t], &r);
        for (i, &atom) in supports[t].iter().enumerate() {
            out[(atom, t)] = xt[(i, 0)];
        }
        later = Some(xt);
    }
    Some(out)
}

/// Monotone FISTA with function-value and gradient restarts.
///
/// Convergence is declared when a momentum-free step changes the objective by
/// less than `tol` relative to its magnitude.
///
/// An iterate is only accepted if it does not increase the composite objective;
/// a rejected candidate resets the momentum and the next step is a plain proximal
/// gradient step from the current iterate. If that step also fails to decrease
/// the objective the current iterate is returned as converged. Momentum is also
/// reset whenever it points against the latest proximal step.
fn accelerated(
    f: &SeparableQuadratic,
    alpha: f64,
    x0: &DMatrix<f64>,
    max_iter: usize,
    tol: f64,
) -> Result<(DMatrix<f64>, ApgReport)> {
    let (k, n) = x0.shape();
    let mut scratch = DVector::zeros(k);
    let mut g = DMatrix::zeros(k, n);
    let mut z = DMatrix::zeros(k, n);
    let mut x = x0.clone();
    let mut fx = f.evaluate(&x, None, &mut scratch) + alpha * l1(&x);
    if !fx.is_finite() {
        return Err(Error::NonFinite("APG starting objective".into()));
    }
    let mut lip = f.lipschitz_bound().max(f64::MIN_POSITIVE);
    let mut y = x.clone();
    let mut y_is_x = true;
    let mut theta = 1.0_f64;
    let mut report = ApgReport {
        iterations: 0,
        objective: fx,
        relative_change: f64::INFINITY,
        converged: false,
    };

    for it in 1..=max_iter {
        report.iterations = it;
        let fy = f.evaluate(&y, Some(&mut g), &mut scratch);
        if !fy.is_finite() || g.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("APG gradient".into()));
        }
        let fz_smooth = loop {
            let step = 1.0 / lip;
            let mut lin = 0.0;
            let mut dist = 0.0;
            let zs = z.as_mut_slice();
            for ((zv, yv), gv) in zs.iter_mut().zip(y.as_slice()).zip(g.as_slice()) {
                *zv = soft_threshold(yv - step * gv, alpha * step);
                let d = *zv - yv;
                lin += gv * d;
                dist += d * d;
            }
            let model = fy + lin + 0.5 * lip * dist;
            let value = f.evaluate(&z, None, &mut scratch);
            if value <= model + 1e-12 * fy.abs().max(1.0) {
                break value;
            }
            lip *= 2.0;
            if !lip.is_finite() {
                return Err(Error::NonFinite("APG step size".into()));
            }
        };
        let fz = fz_smooth + alpha * l1(&z);
        if fz <= fx {
            let rel = (fx - fz) / fx.abs().max(1.0);
            // momentum agrees with the step when (y − z)·(z − x) ≤ 0
            let mut agree = 0.0;
            for ((yv, zv), xv) in y.as_slice().iter().zip(z.as_slice()).zip(x.as_slice()) {
                agree += (yv - zv) * (zv - xv);
            }
            std::mem::swap(&mut x, &mut z);
            fx = fz;
            report.relative_change = rel;
            // a small accelerated step can stall far from the optimum; only a
            // small plain proximal step from the current iterate counts
            if rel < tol && y_is_x {
                report.converged = true;
                break;
            }
            if agree > 0.0 || rel < tol {
                y.copy_from(&x);
                y_is_x = true;
                theta = 1.0;
            } else {
                let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
                let beta = (theta - 1.0) / theta_next;
                // z holds the previous iterate after the swap
                let ys = y.as_mut_slice();
                for ((yv, xv), pv) in ys.iter_mut().zip(x.as_slice()).zip(z.as_slice()) {
                    *yv = xv + beta * (xv - pv);
                }
                y_is_x = beta == 0.0;
                theta = theta_next;
            }
        } else if y_is_x {
            // a plain prox-gradient step from x cannot decrease F: x is optimal to rounding
            report.relative_change = 0.0;
            report.converged = true;
            break;
        } else {
            y.copy_from(&x);
            y_is_x = true;
            theta = 1.0;
        }
    }
    report.objective = fx;
    Ok((x, report))
}
