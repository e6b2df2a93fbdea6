//! Composite Gauss–Legendre quadrature with panel doubling.

use crate::error::{ensure, Error, Result};
use crate::exec::Exec;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Rule of the given order, nodes found by Newton iteration on `P_n`.
    pub fn new(order: usize) -> Result<Self> {
        ensure!(
            (1..=256).contains(&order),
            Error::Param(format!("quadrature order must be in 1..=256, got {order}"))
        );
        let n = order;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let step = p / d;
                x -= step;
                if step.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d.is_finite() {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Ok(Self { nodes, weights })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Integrate `f` over `[a, b]` split into `panels` equal panels.
    pub fn composite<F>(&self, f: &F, a: f64, b: f64, panels: usize, exec: Exec) -> f64
    where
        F: Fn(f64) -> f64 + Sync,
    {
        let h = (b - a) / panels as f64;
        let half = 0.5 * h;
        let sums = exec.map(panels, |p| {
            let mid = a + (p as f64 + 0.5) * h;
            self.nodes
                .iter()
                .zip(&self.weights)
                .map(|(x, w)| w * f(mid + half * x))
                .sum::<f64>()
        });
        half * sums.iter().sum::<f64>()
    }
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Outcome of a refined integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refined {
    pub value: f64,
    /// Difference between the last two estimates.
    pub change: f64,
    pub points: usize,
}

/// Double the panel count, starting from at least `min_points` nodes, until
/// successive estimates differ by less than `tol` or `max_points` is hit.
#[allow(clippy::too_many_arguments)]
pub fn integrate_refined<F>(
    rule: &GaussLegendre,
    f: &F,
    a: f64,
    b: f64,
    min_points: usize,
    max_points: usize,
    tol: f64,
    exec: Exec,
) -> Result<Refined>
where
    F: Fn(f64) -> f64 + Sync,
{
    ensure!(
        a.is_finite() && b.is_finite() && a < b,
        Error::Param(format!("invalid integration interval [{a}, {b}]"))
    );
    ensure!(tol > 0.0, Error::Param("tolerance must be positive".into()));
    let mut panels = min_points.div_ceil(rule.order()).max(1);
    let mut prev = rule.composite(f, a, b, panels, exec);
    loop {
        panels *= 2;
        let cur = rule.composite(f, a, b, panels, exec);
        let change = (cur - prev).abs();
        let points = panels * rule.order();
        if change < tol || points * 2 > max_points {
            return Ok(Refined {
                value: cur,
                change,
                points,
            });
        }
        prev = cur;
    }
}
