//! Adaptive Gauss–Legendre quadrature.

use std::sync::OnceLock;

const ORDER: usize = 10;
const MAX_DEPTH: u32 = 48;

struct Rule {
    nodes: [f64; ORDER],
    weights: [f64; ORDER],
}

fn rule() -> &'static Rule {
    static RULE: OnceLock<Rule> = OnceLock::new();
    RULE.get_or_init(|| legendre_rule(ORDER))
}

/// Nodes and weights on `[−1, 1]` by Newton iteration on `P_n`.
fn legendre_rule(n: usize) -> Rule {
    let mut nodes = [0.0; ORDER];
    let mut weights = [0.0; ORDER];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    Rule { nodes, weights }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

fn fixed<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let r = rule();
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    half * r
        .nodes
        .iter()
        .zip(&r.weights)
        .map(|(x, w)| w * f(mid + half * x))
        .sum::<f64>()
}

/// Integrates `f` over `[a, b]` to absolute tolerance `tol` by interval bisection.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let whole = fixed(f, a, b);
    refine(f, a, b, whole, tol, 0)
}

fn refine<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (left, right) = (fixed(f, a, m), fixed(f, m, b));
    if (left + right - whole).abs() <= tol || depth >= MAX_DEPTH {
        return left + right;
    }
    refine(f, a, m, left, 0.5 * tol, depth + 1) + refine(f, m, b, right, 0.5 * tol, depth + 1)
}
