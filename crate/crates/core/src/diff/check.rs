use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor of the relative error, so that gradients which are
/// zero up to rounding do not produce spurious failures.
pub const REL_FLOOR: f64 = 1e-5;

/// Relative discrepancy between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Per-input outcome of [`check_gradients`].
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
    /// Worst relative error for each input.
    pub max_relative_error: Vec<f64>,
}

impl GradCheck {
    pub fn worst(&self) -> f64 {
        self.max_relative_error.iter().copied().fold(0.0, f64::max)
    }
}

fn evaluate<F>(f: &F, points: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = points.iter().map(|p| g.constant(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    let v = g.value(out);
    if v.len() != 1 {
        return Err(Error::shape("gradient_check", v.shape(), &[]));
    }
    let y = v.item();
    if !y.is_finite() {
        return Err(Error::Numerical(format!("function value {y} is not finite")));
    }
    Ok(y)
}

/// Compares backward gradients of the scalar function `f` with central
/// finite differences at `points`, one tensor per differentiable input.
pub fn check_gradients<F>(f: F, points: &[Tensor]) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = points.iter().map(|p| g.leaf(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| g.grad_or_zeros(v)).collect();
    if analytic.iter().any(|t| !t.all_finite()) {
        return Err(Error::Numerical("analytic gradient is not finite".into()));
    }

    let mut numeric = Vec::with_capacity(points.len());
    let mut max_rel = Vec::with_capacity(points.len());
    let mut work: Vec<Tensor> = points.to_vec();
    for (p, a) in points.iter().zip(&analytic) {
        let idx = numeric.len();
        let mut n = Tensor::zeros(p.shape());
        let mut worst: f64 = 0.0;
        for k in 0..p.len() {
            let x0 = p.data()[k];
            work[idx].data_mut()[k] = x0 + FD_STEP;
            let fp = evaluate(&f, &work)?;
            work[idx].data_mut()[k] = x0 - FD_STEP;
            let fm = evaluate(&f, &work)?;
            work[idx].data_mut()[k] = x0;
            let d = (fp - fm) / (2.0 * FD_STEP);
            n.data_mut()[k] = d;
            worst = worst.max(relative_error(a.data()[k], d));
        }
        numeric.push(n);
        max_rel.push(worst);
    }
    Ok(GradCheck {
        analytic,
        numeric,
        max_relative_error: max_rel,
    })
}

/// Single-input form of [`check_gradients`]; returns the worst relative error.
pub fn gradient_check<F>(f: F, point: &Tensor) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let report = check_gradients(|g, v| f(g, v[0]), std::slice::from_ref(point))?;
    Ok(report.worst())
}
