//! Basis systems for functional data: B-splines (Cox–de Boor), Fourier,
//! and a piecewise-frequency Fourier variant, together with second
//! derivatives and the roughness penalty matrix R = ∫ D²Φ D²Φᵀ.

use nalgebra::DMatrix;

use crate::error::{FasmError, Result};

/// Evaluation matrix Φ with Φ[(j, k)] = φ_k(u_j), shape p×K.
pub type BasisMatrix = DMatrix<f64>;

/// Roughness penalty matrix R[(k, l)] = ∫ φ_k'' φ_l'', shape K×K.
pub type PenaltyMatrix = DMatrix<f64>;

/// A compact interval [lower, upper].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    lower: f64,
    upper: f64,
}

impl Interval {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !lower.is_finite() || !upper.is_finite() {
            return Err(FasmError::InvalidArgument(
                "interval endpoints must be finite".into(),
            ));
        }
        if lower >= upper {
            return Err(FasmError::InvalidArgument(format!(
                "interval requires lower < upper, got [{lower}, {upper}]"
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, u: f64) -> bool {
        u >= self.lower && u <= self.upper
    }
}

/// Ordered observation sites u_1 < … < u_p.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    points: Vec<f64>,
}

impl Grid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(FasmError::InvalidArgument(format!(
                "grid needs at least 2 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|u| !u.is_finite()) {
            return Err(FasmError::NonFinite("grid contains a non-finite point".into()));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(FasmError::InvalidArgument(
                "grid points must be strictly increasing".into(),
            ));
        }
        Ok(Self { points })
    }

    /// p equispaced points covering the interval, endpoints included.
    pub fn equispaced(domain: Interval, p: usize) -> Result<Self> {
        if p < 2 {
            return Err(FasmError::InvalidArgument(format!(
                "grid needs at least 2 points, got {p}"
            )));
        }
        let h = domain.length() / (p - 1) as f64;
        let mut points: Vec<f64> = (0..p).map(|j| domain.lower() + j as f64 * h).collect();
        points[p - 1] = domain.upper();
        Self::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Scaling convention for the plain Fourier system.
///
/// `Orthonormal` uses 1/√(b−a) for the constant and √(2/(b−a)) for the
/// sin/cos pairs, i.e. the system is orthonormal in L² when the domain
/// length equals the period. `Amplitude(a)` uses the constant 1 and
/// plain a·sin / a·cos terms, which is what the simulated data
/// generators in this crate use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FourierScale {
    Orthonormal,
    Amplitude(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum BasisKind {
    /// Clamped B-splines over the stored full knot vector (boundary knots
    /// replicated `order` times). K = knots.len() − order.
    BSpline { order: usize, knots: Vec<f64> },
    /// Constant plus `pairs` sin/cos pairs at integer multiples of the
    /// base frequency 2π/period.
    Fourier {
        pairs: usize,
        period: f64,
        scale: FourierScale,
    },
    /// Fourier system whose frequencies switch at `changepoint`: every
    /// pair frequency is scaled by `pre_multiplier` on
    /// [lower, changepoint] and by `post_multiplier` on
    /// (changepoint, upper]. Segments are evaluated independently; no
    /// continuity is enforced at the changepoint.
    FourierPiecewise {
        pairs: usize,
        period: f64,
        amplitude: f64,
        changepoint: f64,
        pre_multiplier: f64,
        post_multiplier: f64,
    },
}

/// A family of K basis functions on an interval, evaluable together with
/// second derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSystem {
    kind: BasisKind,
    domain: Interval,
    k: usize,
}

impl BasisSystem {
    pub fn kind(&self) -> &BasisKind {
        &self.kind
    }

    pub fn domain(&self) -> Interval {
        self.domain
    }

    /// Number of basis functions K.
    pub fn num_functions(&self) -> usize {
        self.k
    }

    pub fn fourier(
        domain: Interval,
        pairs: usize,
        period: f64,
        scale: FourierScale,
    ) -> Result<Self> {
        if period <= 0.0 || !period.is_finite() {
            return Err(FasmError::InvalidArgument(format!(
                "fourier period must be positive, got {period}"
            )));
        }
        Ok(Self {
            kind: BasisKind::Fourier {
                pairs,
                period,
                scale,
            },
            domain,
            k: 1 + 2 * pairs,
        })
    }

    pub fn fourier_piecewise(
        domain: Interval,
        pairs: usize,
        period: f64,
        amplitude: f64,
        changepoint: f64,
        pre_multiplier: f64,
        post_multiplier: f64,
    ) -> Result<Self> {
        if period <= 0.0 || !period.is_finite() {
            return Err(FasmError::InvalidArgument(format!(
                "fourier period must be positive, got {period}"
            )));
        }
        if changepoint <= domain.lower() || changepoint >= domain.upper() {
            return Err(FasmError::Domain(format!(
                "changepoint {changepoint} must lie strictly inside [{}, {}]",
                domain.lower(),
                domain.upper()
            )));
        }
        Ok(Self {
            kind: BasisKind::FourierPiecewise {
                pairs,
                period,
                amplitude,
                changepoint,
                pre_multiplier,
                post_multiplier,
            },
            domain,
            k: 1 + 2 * pairs,
        })
    }
}

/// Build a clamped B-spline system with the given interior knots.
///
/// K = #interior + order. Boundary knots are replicated `order` times, so
/// with no interior knots the system is the Bernstein basis of degree
/// order−1.
pub fn build_bspline_system(
    domain: Interval,
    interior_knots: &[f64],
    order: usize,
) -> Result<BasisSystem> {
    if order < 1 {
        return Err(FasmError::InvalidArgument(format!(
            "B-spline order must be at least 1, got {order}"
        )));
    }
    for &t in interior_knots {
        if !(t > domain.lower() && t < domain.upper()) {
            return Err(FasmError::Domain(format!(
                "interior knot {t} is not strictly inside [{}, {}]",
                domain.lower(),
                domain.upper()
            )));
        }
    }
    if interior_knots.windows(2).any(|w| w[0] > w[1]) {
        return Err(FasmError::InvalidArgument(
            "interior knots must be nondecreasing".into(),
        ));
    }
    let mut knots = Vec::with_capacity(interior_knots.len() + 2 * order);
    knots.extend(std::iter::repeat(domain.lower()).take(order));
    knots.extend_from_slice(interior_knots);
    knots.extend(std::iter::repeat(domain.upper()).take(order));
    let k = interior_knots.len() + order;
    Ok(BasisSystem {
        kind: BasisKind::BSpline { order, knots },
        domain,
        k,
    })
}

/// Cubic B-spline system with knots at every grid point (the smoothing
/// spline layout): interior knots at each interior grid point, so
/// K = p + 2 for a grid of p points.
pub fn smoothing_spline_system(grid: &Grid) -> Result<BasisSystem> {
    let pts = grid.points();
    let domain = Interval::new(pts[0], pts[pts.len() - 1])?;
    build_bspline_system(domain, &pts[1..pts.len() - 1], 4)
}

/// Evaluate the basis matrix Φ[(j, k)] = φ_k(u_j) on a grid.
pub fn evaluate_basis(system: &BasisSystem, grid: &Grid) -> Result<BasisMatrix> {
    evaluate_derivative(system, grid, 0)
}

/// Evaluate φ_k''(u_j) on a grid. For B-splines of order < 3 the result
/// is the all-zero matrix (the pieces are at most linear).
pub fn evaluate_second_derivative(system: &BasisSystem, grid: &Grid) -> Result<DMatrix<f64>> {
    evaluate_derivative(system, grid, 2)
}

fn evaluate_derivative(system: &BasisSystem, grid: &Grid, deriv: usize) -> Result<DMatrix<f64>> {
    let p = grid.len();
    let k = system.num_functions();
    let mut out = DMatrix::zeros(p, k);
    let mut row = vec![0.0; k];
    for (j, &u) in grid.points().iter().enumerate() {
        if !system.domain().contains(u) {
            return Err(FasmError::Domain(format!(
                "evaluation point {u} outside basis domain [{}, {}]",
                system.domain().lower(),
                system.domain().upper()
            )));
        }
        eval_row(system, u, deriv, &mut row);
        for (kk, &v) in row.iter().enumerate() {
            out[(j, kk)] = v;
        }
    }
    Ok(out)
}

fn eval_row(system: &BasisSystem, u: f64, deriv: usize, out: &mut [f64]) {
    match system.kind() {
        BasisKind::BSpline { order, knots } => bspline_row(knots, *order, u, deriv, out),
        BasisKind::Fourier {
            pairs,
            period,
            scale,
        } => {
            let (c0, amp) = match scale {
                FourierScale::Orthonormal => {
                    let len = system.domain().length();
                    (1.0 / len.sqrt(), (2.0 / len).sqrt())
                }
                FourierScale::Amplitude(a) => (1.0, *a),
            };
            fourier_row(
                system.domain().lower(),
                *pairs,
                *period,
                c0,
                amp,
                1.0,
                u,
                deriv,
                out,
            );
        }
        BasisKind::FourierPiecewise {
            pairs,
            period,
            amplitude,
            changepoint,
            pre_multiplier,
            post_multiplier,
        } => {
            let mult = if u <= *changepoint {
                *pre_multiplier
            } else {
                *post_multiplier
            };
            fourier_row(
                system.domain().lower(),
                *pairs,
                *period,
                1.0,
                *amplitude,
                mult,
                u,
                deriv,
                out,
            );
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn fourier_row(
    origin: f64,
    pairs: usize,
    period: f64,
    constant: f64,
    amplitude: f64,
    freq_multiplier: f64,
    u: f64,
    deriv: usize,
    out: &mut [f64],
) {
    let x = u - origin;
    out[0] = if deriv == 0 { constant } else { 0.0 };
    for j in 1..=pairs {
        let omega = freq_multiplier * 2.0 * std::f64::consts::PI * j as f64 / period;
        let (s, c) = (omega * x).sin_cos();
        let (sv, cv) = match deriv {
            0 => (s, c),
            1 => (omega * c, -omega * s),
            2 => (-omega * omega * s, -omega * omega * c),
            _ => unreachable!("only derivatives 0..=2 are supported"),
        };
        out[2 * j - 1] = amplitude * sv;
        out[2 * j] = amplitude * cv;
    }
}

/// All K values of the d-th derivative of an order-`order` B-spline
/// basis at u, by the Cox–de Boor recurrence followed by d
/// divided-difference steps.
fn bspline_row(knots: &[f64], order: usize, u: f64, deriv: usize, out: &mut [f64]) {
    let nk = knots.len();
    let k = nk - order;
    out.iter_mut().for_each(|v| *v = 0.0);
    if deriv >= order {
        return; // pieces of degree order-1 vanish under the deriv-th derivative
    }
    let base_order = order - deriv;

    // Order-1 values: indicator of the span containing u (right boundary
    // closed on the last nonempty span).
    let mut cur = vec![0.0; nk - 1];
    cur[span_index(knots, u)] = 1.0;

    for o in 2..=base_order {
        let len = nk - o;
        for j in 0..len {
            let d1 = knots[j + o - 1] - knots[j];
            let d2 = knots[j + o] - knots[j + 1];
            let left = if d1 > 0.0 {
                (u - knots[j]) / d1 * cur[j]
            } else {
                0.0
            };
            let right = if d2 > 0.0 {
                (knots[j + o] - u) / d2 * cur[j + 1]
            } else {
                0.0
            };
            cur[j] = left + right;
        }
        cur.truncate(len);
    }

    // Differentiation ladder: order o-1 values -> derivative of order o.
    for o in (base_order + 1)..=order {
        let len = nk - o;
        let scale = (o - 1) as f64;
        for j in 0..len {
            let d1 = knots[j + o - 1] - knots[j];
            let d2 = knots[j + o] - knots[j + 1];
            let left = if d1 > 0.0 { cur[j] / d1 } else { 0.0 };
            let right = if d2 > 0.0 { cur[j + 1] / d2 } else { 0.0 };
            cur[j] = scale * (left - right);
        }
        cur.truncate(len);
    }

    out[..k].copy_from_slice(&cur[..k]);
}

/// Rightmost index j with knots[j] <= u < knots[j+1]; at or beyond the
/// last knot, the last nonempty span.
fn span_index(knots: &[f64], u: f64) -> usize {
    let nk = knots.len();
    let last_nonempty = (0..nk - 1)
        .rev()
        .find(|&j| knots[j] < knots[j + 1])
        .expect("knot vector must span a nondegenerate interval");
    if u >= knots[last_nonempty + 1] {
        return last_nonempty;
    }
    let mut j = match knots.partition_point(|&t| t <= u) {
        0 => 0,
        idx => idx - 1,
    };
    if j > last_nonempty {
        j = last_nonempty;
    }
    j
}

/// Roughness penalty R[(k, l)] = ∫ φ_k''(s) φ_l''(s) ds over the domain.
///
/// B-spline systems integrate exactly: per knot span the integrand is a
/// polynomial of degree 2(order−3), handled by Gauss–Legendre with
/// max(1, order−2) nodes. Fourier systems use 8-node Gauss–Legendre on
/// at least four panels per cycle of the highest frequency present.
pub fn penalty_matrix(system: &BasisSystem) -> Result<PenaltyMatrix> {
    let k = system.num_functions();
    let mut r = DMatrix::zeros(k, k);
    let mut row = vec![0.0; k];
    for panel in quadrature_panels(system) {
        let half = 0.5 * (panel.1 - panel.0);
        let mid = 0.5 * (panel.0 + panel.1);
        if half <= 0.0 {
            continue;
        }
        for (node, weight) in gauss_legendre(panel.2) {
            let x = mid + half * node;
            eval_row(system, x, 2, &mut row);
            let w = weight * half;
            for a in 0..k {
                if row[a] == 0.0 {
                    continue;
                }
                let wa = w * row[a];
                for b in a..k {
                    r[(a, b)] += wa * row[b];
                }
            }
        }
    }
    // mirror the upper triangle
    for a in 0..k {
        for b in 0..a {
            r[(a, b)] = r[(b, a)];
        }
    }
    Ok(r)
}

/// (start, end, nodes) triples covering the domain.
fn quadrature_panels(system: &BasisSystem) -> Vec<(f64, f64, usize)> {
    match system.kind() {
        BasisKind::BSpline { order, knots } => {
            let nodes = (*order).saturating_sub(2).max(1);
            let mut panels = Vec::new();
            for j in 0..knots.len() - 1 {
                if knots[j] < knots[j + 1] {
                    panels.push((knots[j], knots[j + 1], nodes));
                }
            }
            panels
        }
        BasisKind::Fourier { pairs, period, .. } => fourier_panels(
            system.domain().lower(),
            system.domain().upper(),
            *pairs,
            *period,
            1.0,
        ),
        BasisKind::FourierPiecewise {
            pairs,
            period,
            changepoint,
            pre_multiplier,
            post_multiplier,
            ..
        } => {
            let mut panels = fourier_panels(
                system.domain().lower(),
                *changepoint,
                *pairs,
                *period,
                *pre_multiplier,
            );
            panels.extend(fourier_panels(
                *changepoint,
                system.domain().upper(),
                *pairs,
                *period,
                *post_multiplier,
            ));
            panels
        }
    }
}

fn fourier_panels(
    start: f64,
    end: f64,
    pairs: usize,
    period: f64,
    freq_multiplier: f64,
) -> Vec<(f64, f64, usize)> {
    let cycles = (pairs as f64).max(1.0) * freq_multiplier.abs() * (end - start) / period;
    let n_panels = (4.0 * cycles).ceil().max(2.0) as usize;
    let h = (end - start) / n_panels as f64;
    (0..n_panels)
        .map(|i| (start + i as f64 * h, start + (i + 1) as f64 * h, 8))
        .collect()
}

/// Gauss–Legendre nodes and weights on [−1, 1], by Newton iteration on
/// the Legendre polynomial.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut rules = Vec::with_capacity(n);
    for i in 0..n {
        // Chebyshev-based initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let step = p / d;
            x -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        rules.push((x, w));
    }
    rules
}

/// Legendre polynomial P_n and its derivative at x.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
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
