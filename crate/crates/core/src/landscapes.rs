//! Analytic test landscapes with closed-form gradients and Hessians, plus a
//! validated catalog of minima and saddles.
//!
//! All landscapes with minima are separable, so `diag(H) = H` and the
//! diagonal-Hessian eigenvalue along the escape direction equals the full
//! Hessian eigenvalue there.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{LeapError, Result};
use crate::linalg::{dot, norm, symmetric_eigen};

const ROOT_TOL: f64 = 1e-12;

/// Per-side polynomial of the curvature family, in the outward coordinate
/// `u >= 0`: `p(u) = c2 u^2 + c3 u^3 + c4 u^4`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct SidePoly {
    c2: f64,
    c3: f64,
    c4: f64,
}

impl SidePoly {
    fn value(&self, u: f64) -> f64 {
        u * u * (self.c2 + u * (self.c3 + u * self.c4))
    }
    fn d1(&self, u: f64) -> f64 {
        u * (2.0 * self.c2 + u * (3.0 * self.c3 + 4.0 * self.c4 * u))
    }
    fn d2(&self, u: f64) -> f64 {
        2.0 * self.c2 + u * (6.0 * self.c3 + 12.0 * self.c4 * u)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Shape {
    /// `x^4 / c - 2 x^2 + tilt x (+ kappa/2 y^2)`.
    Quartic {
        barrier_scale: f64,
        tilt: f64,
        kappa_transverse: Option<f64>,
    },
    /// Flat basin for `x < 0`, sharp basin for `x > 0`, saddle at 0.
    Curvature { flat: SidePoly, sharp: SidePoly },
    /// `1/2 sum d_i x_i^2`.
    Bowl { diag: Vec<f64> },
}

/// A smooth loss on `R^dim` with exact derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Landscape {
    shape: Shape,
    dim: usize,
    /// Upper bound on the Hessian spectral norm over [`Landscape::region`].
    pub smoothness_beta: f64,
    region: Vec<(f64, f64)>,
    label: String,
}

impl Landscape {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Axis-aligned box the experiments operate in.
    pub fn region(&self) -> &[(f64, f64)] {
        &self.region
    }

    pub fn loss(&self, theta: &[f64]) -> f64 {
        debug_assert_eq!(theta.len(), self.dim);
        match &self.shape {
            Shape::Quartic {
                barrier_scale: c,
                tilt,
                kappa_transverse,
            } => {
                let x = theta[0];
                let x2 = x * x;
                let mut v = x2 * x2 / c - 2.0 * x2 + tilt * x;
                if let Some(k) = kappa_transverse {
                    v += 0.5 * k * theta[1] * theta[1];
                }
                v
            }
            Shape::Curvature { flat, sharp } => {
                let x = theta[0];
                if x < 0.0 {
                    flat.value(-x)
                } else {
                    sharp.value(x)
                }
            }
            Shape::Bowl { diag } => 0.5 * diag.iter().zip(theta).map(|(d, x)| d * x * x).sum::<f64>(),
        }
    }

    pub fn grad_into(&self, theta: &[f64], out: &mut [f64]) {
        match &self.shape {
            Shape::Quartic {
                barrier_scale: c,
                tilt,
                kappa_transverse,
            } => {
                let x = theta[0];
                out[0] = 4.0 * x * x * x / c - 4.0 * x + tilt;
                if let Some(k) = kappa_transverse {
                    out[1] = k * theta[1];
                }
            }
            Shape::Curvature { flat, sharp } => {
                let x = theta[0];
                out[0] = if x < 0.0 { -flat.d1(-x) } else { sharp.d1(x) };
            }
            Shape::Bowl { diag } => {
                for ((o, d), x) in out.iter_mut().zip(diag).zip(theta) {
                    *o = d * x;
                }
            }
        }
    }

    pub fn grad(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        self.grad_into(theta, &mut g);
        g
    }

    /// Diagonal of the Hessian.
    pub fn hessian_diag_into(&self, theta: &[f64], out: &mut [f64]) {
        match &self.shape {
            Shape::Quartic {
                barrier_scale: c,
                kappa_transverse,
                ..
            } => {
                let x = theta[0];
                out[0] = 12.0 * x * x / c - 4.0;
                if let Some(k) = kappa_transverse {
                    out[1] = *k;
                }
            }
            Shape::Curvature { flat, sharp } => {
                let x = theta[0];
                out[0] = if x < 0.0 { flat.d2(-x) } else { sharp.d2(x) };
            }
            Shape::Bowl { diag } => out.copy_from_slice(diag),
        }
    }

    /// Dense Hessian; every landscape here is separable, so it is diagonal.
    pub fn hessian(&self, theta: &[f64]) -> Array2<f64> {
        let mut d = vec![0.0; self.dim];
        self.hessian_diag_into(theta, &mut d);
        Array2::from_diag(&ndarray::Array1::from(d))
    }

    fn with_region(shape: Shape, dim: usize, region: Vec<(f64, f64)>, label: String) -> Self {
        let mut l = Landscape {
            shape,
            dim,
            smoothness_beta: 0.0,
            region,
            label,
        };
        l.smoothness_beta = l.scan_spectral_bound();
        l
    }

    /// Max |diag H| over a grid of the region (exact for separable shapes
    /// whose curvature extremes sit on grid points or region corners).
    fn scan_spectral_bound(&self) -> f64 {
        const N: usize = 2001;
        let mut best: f64 = 0.0;
        let mut theta: Vec<f64> = self.region.iter().map(|r| 0.5 * (r.0 + r.1)).collect();
        let mut h = vec![0.0; self.dim];
        for axis in 0..self.dim {
            let (lo, hi) = self.region[axis];
            for k in 0..N {
                theta[axis] = lo + (hi - lo) * k as f64 / (N - 1) as f64;
                self.hessian_diag_into(&theta, &mut h);
                best = best.max(h[axis].abs());
            }
            theta[axis] = 0.5 * (lo + hi);
        }
        best
    }
}

/// Which side of the saddle a point lies on, along the escape axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasinPredicate {
    pub axis: usize,
    pub saddle: f64,
    /// +1 when the minimum is above the saddle coordinate, -1 below.
    pub side: f64,
}

impl BasinPredicate {
    /// True while `theta` is strictly on the minimum's side of the saddle.
    #[inline]
    pub fn contains(&self, theta: &[f64]) -> bool {
        (theta[self.axis] - self.saddle) * self.side > 0.0
    }
}

/// A minimum `a`, the saddle `b` on its escape path and the curvature data
/// the escape-time law depends on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinimaCatalogEntry {
    pub location_a: Vec<f64>,
    pub location_b: Vec<f64>,
    pub escape_direction_e: Vec<f64>,
    pub delta_l: f64,
    /// diag(H) eigenvalue at `a` along `e`.
    pub a_ae: f64,
    /// diag(H) eigenvalue at `b` along `e`.
    pub a_be: f64,
    /// Full-Hessian eigenvalue at `b` along `e`.
    pub h_be: f64,
    #[serde(skip)]
    pub basin: BasinPredicate,
}

impl MinimaCatalogEntry {
    pub fn in_basin(&self, theta: &[f64]) -> bool {
        self.basin.contains(theta)
    }

    /// Check the entry against `landscape`: critical points, definiteness,
    /// saddle index one aligned with the escape direction, and signs.
    pub fn validate(&self, landscape: &Landscape) -> Result<()> {
        let fail = |msg: String| Err(LeapError::Catalog(msg));
        let ga = norm(&landscape.grad(&self.location_a));
        let gb = norm(&landscape.grad(&self.location_b));
        if !(ga < 1e-10) {
            return fail(format!("|grad(a)| = {ga:e} is not < 1e-10"));
        }
        if !(gb < 1e-10) {
            return fail(format!("|grad(b)| = {gb:e} is not < 1e-10"));
        }
        let (va, _) = symmetric_eigen(&landscape.hessian(&self.location_a));
        if !(va[0] > 0.0) {
            return fail(format!("H(a) is not positive definite (min eigenvalue {})", va[0]));
        }
        let (vb, vecs) = symmetric_eigen(&landscape.hessian(&self.location_b));
        let negatives = vb.iter().filter(|&&v| v < 0.0).count();
        if negatives != 1 {
            return fail(format!("H(b) has {negatives} negative eigenvalues, expected 1"));
        }
        let unstable = vecs.column(0).to_vec();
        let cos = dot(&unstable, &self.escape_direction_e).abs() / norm(&self.escape_direction_e);
        if !(cos > 1.0 - 1e-8) {
            return fail(format!("unstable direction at b is not aligned with e (|cos| = {cos})"));
        }
        if !(self.delta_l > 0.0) {
            return fail(format!("delta_L = {} must be > 0", self.delta_l));
        }
        if !(self.a_ae > 0.0 && self.a_be < 0.0 && self.h_be < 0.0) {
            return fail(format!("curvature signs wrong: A_ae {}, A_be {}, H_be {}", self.a_ae, self.a_be, self.h_be));
        }
        if !self.in_basin(&self.location_a) {
            return fail("minimum lies outside its own basin".into());
        }
        Ok(())
    }
}

/// A landscape together with its validated catalog.
#[derive(Debug, Clone)]
pub struct CatalogedLandscape {
    pub landscape: Landscape,
    pub catalog: Vec<MinimaCatalogEntry>,
}

impl CatalogedLandscape {
    fn validated(landscape: Landscape, catalog: Vec<MinimaCatalogEntry>) -> Result<Self> {
        for entry in &catalog {
            entry.validate(&landscape)?;
        }
        Ok(CatalogedLandscape { landscape, catalog })
    }
}

/// Build an entry on a separable landscape with escape axis 0.
fn entry_on_axis(landscape: &Landscape, a: f64, b: f64) -> MinimaCatalogEntry {
    let mut la = vec![0.0; landscape.dim];
    let mut lb = vec![0.0; landscape.dim];
    la[0] = a;
    lb[0] = b;
    let mut e = vec![0.0; landscape.dim];
    e[0] = 1.0;
    let mut ha = vec![0.0; landscape.dim];
    let mut hb = vec![0.0; landscape.dim];
    landscape.hessian_diag_into(&la, &mut ha);
    landscape.hessian_diag_into(&lb, &mut hb);
    MinimaCatalogEntry {
        delta_l: landscape.loss(&lb) - landscape.loss(&la),
        a_ae: ha[0],
        a_be: hb[0],
        h_be: hb[0],
        basin: BasinPredicate {
            axis: 0,
            saddle: b,
            side: (a - b).signum(),
        },
        location_a: la,
        location_b: lb,
        escape_direction_e: e,
    }
}

/// Root of `f` in `[lo, hi]` (sign change required): bisection to the
/// tolerance, then Newton polish.
fn safeguarded_root(f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> Option<f64> {
    let (mut flo, fhi) = (f(lo), f(hi));
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if flo.signum() == fhi.signum() {
        return None;
    }
    while hi - lo > ROOT_TOL * (1.0 + lo.abs().max(hi.abs())) {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return Some(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..3 {
        let d = df(x);
        if d == 0.0 {
            break;
        }
        let next = x - f(x) / d;
        if (next - x).abs() > 10.0 * ROOT_TOL * (1.0 + x.abs()) {
            break;
        }
        x = next;
    }
    Some(x)
}

/// `f(x, y) = x^4 / c - 2 x^2 + tilt x + (kappa/2) y^2`, with `c` the
/// barrier scale (1 for the classic double well).
///
/// With `tilt = 0` the minima are `x = ±sqrt(c)` at `f = -c`, the saddle is
/// `x = 0`, so `delta_L = c` while the curvatures stay `f'' = 8` at the
/// minima and `-4` at the saddle for every `c`. The returned catalog lists
/// the right minimum first, then the left one.
pub fn quartic_double_well(kappa_transverse: Option<f64>, tilt: f64, barrier_scale: f64) -> Result<CatalogedLandscape> {
    if let Some(k) = kappa_transverse {
        if !(k.is_finite() && k >= 0.0) {
            return Err(LeapError::config("landscape.kappa_transverse", format!("must be >= 0, got {k}")));
        }
    }
    if !(barrier_scale.is_finite() && barrier_scale > 0.0) {
        return Err(LeapError::config("landscape.barrier_scale", format!("must be > 0, got {barrier_scale}")));
    }
    if !tilt.is_finite() {
        return Err(LeapError::config("landscape.tilt", "must be finite"));
    }
    let c = barrier_scale;
    let dim = if kappa_transverse.is_some() { 2 } else { 1 };
    let reach = 2.0 * c.sqrt();
    let mut region = vec![(-reach, reach)];
    if dim == 2 {
        region.push((-reach, reach));
    }
    let label = format!("quartic(c={c}, tilt={tilt}, kappa={kappa_transverse:?})");
    let landscape = Landscape::with_region(
        Shape::Quartic {
            barrier_scale: c,
            tilt,
            kappa_transverse,
        },
        dim,
        region,
        label,
    );

    let (left, saddle, right) = if tilt == 0.0 {
        (-c.sqrt(), 0.0, c.sqrt())
    } else {
        let fp = |x: f64| 4.0 * x * x * x / c - 4.0 * x + tilt;
        let fpp = |x: f64| 12.0 * x * x / c - 4.0;
        // f' has its local max at -x_c and local min at +x_c.
        let x_c = (c / 3.0).sqrt();
        if !(fp(-x_c) > 0.0 && fp(x_c) < 0.0) {
            return Err(LeapError::Catalog(format!("basin vanished: tilt {tilt} leaves f' without three sign changes")));
        }
        let mut far = reach;
        while fp(-far) >= 0.0 || fp(far) <= 0.0 {
            far *= 2.0;
        }
        let vanished = || LeapError::Catalog(format!("basin vanished: no sign change of f' for tilt {tilt}"));
        let left = safeguarded_root(fp, fpp, -far, -x_c).ok_or_else(vanished)?;
        let saddle = safeguarded_root(fp, fpp, -x_c, x_c).ok_or_else(vanished)?;
        let right = safeguarded_root(fp, fpp, x_c, far).ok_or_else(vanished)?;
        (left, saddle, right)
    };
    let catalog = vec![entry_on_axis(&landscape, right, saddle), entry_on_axis(&landscape, left, saddle)];
    CatalogedLandscape::validated(landscape, catalog)
}

/// A 1-D two-basin landscape with prescribed minimum curvatures and a common
/// barrier height.
///
/// The flat basin sits at `x < 0`, the sharp one at `x > 0`, the saddle at
/// `x = 0` with curvature `-saddle_curvature` (default `min(k_flat,
/// k_sharp) / 2`). Each side is the quartic `p(u) = c2 u^2 + c3 u^3 + c4 u^4`
/// in the outward coordinate `u`, with `c2 = -kb/2`, minimum at
/// `m = sqrt(12 dL / (k + kb))`, `c4 = (k - kb) / (4 m^2)`,
/// `c3 = (2 kb - k) / (3 m)`. Both sides share `p(0) = p'(0) = 0` and
/// `p''(0) = -kb`, so the join at the saddle is C². Requires `k > kb` on each
/// side. Catalog order: flat entry, then sharp entry.
pub fn curvature_family(k_flat: f64, k_sharp: f64, delta_l: f64, saddle_curvature: Option<f64>) -> Result<CatalogedLandscape> {
    if !(k_flat > 0.0 && k_flat.is_finite()) {
        return Err(LeapError::config("landscape.k_flat", format!("must be > 0, got {k_flat}")));
    }
    if !(k_sharp >= k_flat && k_sharp.is_finite()) {
        return Err(LeapError::config("landscape.k_sharp", format!("must be >= k_flat = {k_flat}, got {k_sharp}")));
    }
    if !(delta_l > 0.0 && delta_l.is_finite()) {
        return Err(LeapError::config("landscape.delta_l", format!("must be > 0, got {delta_l}")));
    }
    let kb = saddle_curvature.unwrap_or(0.5 * k_flat);
    if !(kb > 0.0) {
        return Err(LeapError::config("landscape.saddle_curvature", format!("must be > 0, got {kb}")));
    }
    if !(k_flat > kb) {
        return Err(LeapError::Catalog(format!(
            "construction infeasible: join condition k_flat > saddle curvature violated ({k_flat} <= {kb})"
        )));
    }
    let side = |k: f64| {
        let m = (12.0 * delta_l / (k + kb)).sqrt();
        (
            SidePoly {
                c2: -0.5 * kb,
                c3: (2.0 * kb - k) / (3.0 * m),
                c4: (k - kb) / (4.0 * m * m),
            },
            m,
        )
    };
    let (flat, m_flat) = side(k_flat);
    let (sharp, m_sharp) = side(k_sharp);
    let landscape = Landscape::with_region(
        Shape::Curvature { flat, sharp },
        1,
        vec![(-2.0 * m_flat, 2.0 * m_sharp)],
        format!("curvature(k_flat={k_flat}, k_sharp={k_sharp}, dL={delta_l}, kb={kb})"),
    );
    let catalog = vec![entry_on_axis(&landscape, -m_flat, 0.0), entry_on_axis(&landscape, m_sharp, 0.0)];
    CatalogedLandscape::validated(landscape, catalog)
}

/// `L = 1/2 theta^T diag(d) theta`, minimum at 0, `smoothness_beta = max(d)`.
pub fn quadratic_bowl(diag_d: &[f64]) -> Result<Landscape> {
    if diag_d.is_empty() {
        return Err(LeapError::config("landscape.diag", "need at least one entry"));
    }
    if let Some(i) = diag_d.iter().position(|&d| !(d > 0.0 && d.is_finite())) {
        return Err(LeapError::config("landscape.diag", format!("entry {i} = {} must be > 0", diag_d[i])));
    }
    let dim = diag_d.len();
    let mut l = Landscape::with_region(Shape::Bowl { diag: diag_d.to_vec() }, dim, vec![(-2.0, 2.0); dim], format!("bowl({diag_d:?})"));
    l.smoothness_beta = diag_d.iter().cloned().fold(0.0, f64::max);
    Ok(l)
}

/// Config-file description of a landscape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LandscapeSpec {
    QuarticDoubleWell {
        #[serde(default)]
        tilt: f64,
        #[serde(default)]
        kappa_transverse: Option<f64>,
        #[serde(default = "one")]
        barrier_scale: f64,
    },
    CurvatureFamily {
        k_flat: f64,
        k_sharp: f64,
        delta_l: f64,
        #[serde(default)]
        saddle_curvature: Option<f64>,
    },
}

fn one() -> f64 {
    1.0
}

impl LandscapeSpec {
    pub fn build(&self) -> Result<CatalogedLandscape> {
        match *self {
            LandscapeSpec::QuarticDoubleWell {
                tilt,
                kappa_transverse,
                barrier_scale,
            } => quartic_double_well(kappa_transverse, tilt, barrier_scale),
            LandscapeSpec::CurvatureFamily {
                k_flat,
                k_sharp,
                delta_l,
                saddle_curvature,
            } => curvature_family(k_flat, k_sharp, delta_l, saddle_curvature),
        }
    }
}
