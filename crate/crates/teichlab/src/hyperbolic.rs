//! Punctured-torus model of Teichmüller space.
//!
//! Points live in the upper half-plane with the Teichmüller metric
//! `d_T = ½·d_hyp`. A measured foliation is a real pair `(v1, v2)`; its
//! extremal length at `τ` is `|v1 + v2·τ|² / Im τ`. The foliation is centred
//! at the real boundary point `ξ = −v1/v2` (so `(1,0)` sits at `∞` and
//! `(0,1)` at `0`). The label `slope = v2/v1` is kept for reporting; all
//! boundary geometry (geodesics, projections, arcs) is done in `ξ`.

use std::f64::consts::PI;
use std::fmt;

use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("imaginary part must be positive, got {0}")]
    NotInUpperHalfPlane(f64),
    #[error("foliation must be a nonzero pair")]
    ZeroFoliation,
    #[error("foliations do not fill (intersection number is zero)")]
    NotFilling,
    #[error("cross-ratio denominator vanishes")]
    VanishingDenominator,
    #[error("determinant must be 1, got {0}")]
    BadDeterminant(BigInt),
    #[error("|trace| = {0} is at most 2; element is not pseudo-Anosov")]
    NotHyperbolic(BigInt),
    #[error("points too close for a shadow: distance {distance} <= 2r = {two_r}")]
    ShadowTooClose { distance: f64, two_r: f64 },
    #[error("arc endpoints must differ")]
    DegenerateArc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeichPoint {
    re: f64,
    im: f64,
}

impl TeichPoint {
    pub fn new(re: f64, im: f64) -> Result<Self, GeometryError> {
        if im > 0.0 && im.is_finite() && re.is_finite() {
            Ok(Self { re, im })
        } else {
            Err(GeometryError::NotInUpperHalfPlane(im))
        }
    }

    /// The square torus `i`.
    pub fn i() -> Self {
        Self { re: 0.0, im: 1.0 }
    }

    pub fn re(&self) -> f64 {
        self.re
    }

    pub fn im(&self) -> f64 {
        self.im
    }

    pub fn to_complex(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }

    pub(crate) fn from_complex(z: Complex64) -> Self {
        Self {
            re: z.re,
            im: z.im.max(f64::MIN_POSITIVE),
        }
    }
}

/// A point of `ℝ ∪ {∞}`, the boundary circle of the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BoundaryPoint {
    Finite(f64),
    Infinity,
}

impl BoundaryPoint {
    /// Angle on the circle: `2·atan(ξ)`, with `∞ ↦ π`.
    pub fn angle(&self) -> f64 {
        match *self {
            BoundaryPoint::Finite(x) => 2.0 * x.atan(),
            BoundaryPoint::Infinity => PI,
        }
    }

    pub fn from_angle(theta: f64) -> Self {
        let t = wrap_angle(theta);
        if (t - PI).abs() < 1e-15 {
            BoundaryPoint::Infinity
        } else {
            BoundaryPoint::Finite((t / 2.0).tan())
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, BoundaryPoint::Infinity)
    }

    /// Reporting value; `∞` is `f64::INFINITY`.
    pub fn value(&self) -> f64 {
        match *self {
            BoundaryPoint::Finite(x) => x,
            BoundaryPoint::Infinity => f64::INFINITY,
        }
    }

    pub fn from_value(x: f64) -> Self {
        if x.is_finite() {
            BoundaryPoint::Finite(x)
        } else {
            BoundaryPoint::Infinity
        }
    }

    /// Circular distance between two boundary points measured in angle.
    pub fn angular_gap(&self, other: &BoundaryPoint) -> f64 {
        let d = wrap_angle(self.angle() - other.angle()).abs();
        d.min(2.0 * PI - d)
    }
}

impl fmt::Display for BoundaryPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundaryPoint::Finite(x) => write!(f, "{x}"),
            BoundaryPoint::Infinity => write!(f, "inf"),
        }
    }
}

/// Wrap into `(−π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta % (2.0 * PI);
    if t <= -PI {
        t += 2.0 * PI;
    } else if t > PI {
        t -= 2.0 * PI;
    }
    t
}

/// Wrap into `[0, 2π)`.
fn wrap_positive(theta: f64) -> f64 {
    let t = theta % (2.0 * PI);
    if t < 0.0 {
        t + 2.0 * PI
    } else {
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Foliation {
    v1: f64,
    v2: f64,
}

impl Foliation {
    pub fn new(v1: f64, v2: f64) -> Result<Self, GeometryError> {
        if (v1 == 0.0 && v2 == 0.0) || !v1.is_finite() || !v2.is_finite() {
            Err(GeometryError::ZeroFoliation)
        } else {
            Ok(Self { v1, v2 })
        }
    }

    pub fn v1(&self) -> f64 {
        self.v1
    }

    pub fn v2(&self) -> f64 {
        self.v2
    }

    /// Reporting label `v2/v1`; `(0, v2)` has slope `∞`.
    pub fn slope(&self) -> BoundaryPoint {
        if self.v1 == 0.0 {
            BoundaryPoint::Infinity
        } else {
            BoundaryPoint::Finite(self.v2 / self.v1)
        }
    }

    /// The boundary point `ξ = −v1/v2` at which the Busemann function of this
    /// foliation is centred.
    pub fn boundary_point(&self) -> BoundaryPoint {
        if self.v2 == 0.0 {
            BoundaryPoint::Infinity
        } else {
            BoundaryPoint::Finite(-self.v1 / self.v2)
        }
    }

    /// A representative foliation centred at `p`.
    pub fn at_boundary(p: BoundaryPoint) -> Self {
        match p {
            BoundaryPoint::Infinity => Self { v1: 1.0, v2: 0.0 },
            BoundaryPoint::Finite(x) => Self { v1: -x, v2: 1.0 },
        }
    }

    pub fn scale(&self, k: f64) -> Self {
        Self {
            v1: self.v1 * k,
            v2: self.v2 * k,
        }
    }

    /// Unit-norm representative with a sign fixed so that projectively equal
    /// foliations compare equal.
    pub fn normalized(&self) -> Self {
        let n = self.v1.hypot(self.v2);
        let s = if self.v2 < 0.0 || (self.v2 == 0.0 && self.v1 < 0.0) {
            -1.0
        } else {
            1.0
        };
        self.scale(s / n)
    }
}

pub fn ext_length(x: &TeichPoint, f: &Foliation) -> f64 {
    let re = f.v1 + f.v2 * x.re;
    let im = f.v2 * x.im;
    (re * re + im * im) / x.im
}

pub fn intersection_number(f: &Foliation, g: &Foliation) -> f64 {
    (f.v1 * g.v2 - f.v2 * g.v1).abs()
}

/// Teichmüller distance, `asinh(|x − y| / (2√(Im x·Im y)))`.
pub fn distance(x: &TeichPoint, y: &TeichPoint) -> f64 {
    let dr = x.re - y.re;
    let di = x.im - y.im;
    let chord = (dr * dr + di * di).sqrt();
    (chord / (2.0 * (x.im * y.im).sqrt())).asinh()
}

pub fn busemann(f: &Foliation, x: &TeichPoint, y: &TeichPoint) -> f64 {
    0.5 * (ext_length(x, f) / ext_length(y, f)).ln()
}

/// Busemann cocycle centred at a boundary point.
pub fn busemann_at(p: BoundaryPoint, x: &TeichPoint, y: &TeichPoint) -> f64 {
    busemann(&Foliation::at_boundary(p), x, y)
}

pub fn gromov_product(x: &TeichPoint, f: &Foliation, g: &Foliation) -> Result<f64, GeometryError> {
    let i = intersection_number(f, g);
    if i == 0.0 {
        return Err(GeometryError::NotFilling);
    }
    Ok(0.5 * (ext_length(x, f) * ext_length(x, g) / (i * i)).ln())
}

/// Gromov product of two boundary points seen from `x`.
pub fn gromov_product_at(
    x: &TeichPoint,
    p: BoundaryPoint,
    q: BoundaryPoint,
) -> Result<f64, GeometryError> {
    gromov_product(x, &Foliation::at_boundary(p), &Foliation::at_boundary(q))
}

/// `ρ_x(z, ξ) = d(x, z) + β_ξ(x, z)`, the limit of
/// `d(x,z) + d(x,w) − d(z,w)` as `w → ξ`.
pub fn gromov_product_mixed(x: &TeichPoint, z: &TeichPoint, p: BoundaryPoint) -> f64 {
    distance(x, z) + busemann_at(p, x, z)
}

pub fn cross_ratio(
    a1: &Foliation,
    a2: &Foliation,
    b1: &Foliation,
    b2: &Foliation,
) -> Result<f64, GeometryError> {
    let n1 = intersection_number(a1, b1);
    let n2 = intersection_number(a2, b2);
    let d1 = intersection_number(a1, b2);
    let d2 = intersection_number(a2, b1);
    if d1 == 0.0 || d2 == 0.0 || n1 == 0.0 || n2 == 0.0 {
        return Err(GeometryError::VanishingDenominator);
    }
    Ok(0.5 * ((n1 * n2) / (d1 * d2)).ln())
}

/// Integer foliation, used where intersection numbers must stay exact.
pub type IntFoliation = [BigInt; 2];

pub fn intersection_number_exact(f: &IntFoliation, g: &IntFoliation) -> BigInt {
    (&f[0] * &g[1] - &f[1] * &g[0]).abs()
}

/// The ratio inside the logarithm of [`cross_ratio`], computed exactly.
pub fn cross_ratio_argument(
    a1: &IntFoliation,
    a2: &IntFoliation,
    b1: &IntFoliation,
    b2: &IntFoliation,
) -> Result<BigRational, GeometryError> {
    let num = intersection_number_exact(a1, b1) * intersection_number_exact(a2, b2);
    let den = intersection_number_exact(a1, b2) * intersection_number_exact(a2, b1);
    if den.is_zero() || num.is_zero() {
        return Err(GeometryError::VanishingDenominator);
    }
    Ok(BigRational::new(num, den))
}

/// An element of `SL(2,ℤ)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MappingClass {
    a: BigInt,
    b: BigInt,
    c: BigInt,
    d: BigInt,
}

impl MappingClass {
    pub fn new(a: BigInt, b: BigInt, c: BigInt, d: BigInt) -> Result<Self, GeometryError> {
        let det = &a * &d - &b * &c;
        if det != BigInt::one() {
            return Err(GeometryError::BadDeterminant(det));
        }
        Ok(Self { a, b, c, d })
    }

    pub fn from_i64(a: i64, b: i64, c: i64, d: i64) -> Result<Self, GeometryError> {
        Self::new(a.into(), b.into(), c.into(), d.into())
    }

    pub fn identity() -> Self {
        Self {
            a: BigInt::one(),
            b: BigInt::zero(),
            c: BigInt::zero(),
            d: BigInt::one(),
        }
    }

    pub fn entries(&self) -> [&BigInt; 4] {
        [&self.a, &self.b, &self.c, &self.d]
    }

    pub fn entries_f64(&self) -> [f64; 4] {
        let f = |v: &BigInt| v.to_f64().unwrap_or(f64::NAN);
        [f(&self.a), f(&self.b), f(&self.c), f(&self.d)]
    }

    pub fn entries_i128(&self) -> Option<[i128; 4]> {
        Some([
            self.a.to_i128()?,
            self.b.to_i128()?,
            self.c.to_i128()?,
            self.d.to_i128()?,
        ])
    }

    pub fn mul(&self, o: &MappingClass) -> MappingClass {
        MappingClass {
            a: &self.a * &o.a + &self.b * &o.c,
            b: &self.a * &o.b + &self.b * &o.d,
            c: &self.c * &o.a + &self.d * &o.c,
            d: &self.c * &o.b + &self.d * &o.d,
        }
    }

    pub fn inverse(&self) -> MappingClass {
        MappingClass {
            a: self.d.clone(),
            b: -&self.b,
            c: -&self.c,
            d: self.a.clone(),
        }
    }

    pub fn pow(&self, n: i64) -> MappingClass {
        let base = if n < 0 { self.inverse() } else { self.clone() };
        let mut e = n.unsigned_abs();
        let mut acc = MappingClass::identity();
        let mut sq = base;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(&sq);
            }
            sq = sq.mul(&sq);
            e >>= 1;
        }
        acc
    }

    pub fn trace(&self) -> BigInt {
        &self.a + &self.d
    }

    pub fn is_hyperbolic(&self) -> bool {
        self.trace().abs() > BigInt::from(2)
    }

    pub fn apply_point(&self, x: &TeichPoint) -> TeichPoint {
        mobius_f64(self.entries_f64()).apply_point(x)
    }

    /// Linear action on foliations that makes extremal length equivariant:
    /// `(v1, v2) ↦ (a·v1 − b·v2, −c·v1 + d·v2)`.
    pub fn apply_foliation(&self, f: &Foliation) -> Foliation {
        let [a, b, c, d] = self.entries_f64();
        Foliation {
            v1: a * f.v1 - b * f.v2,
            v2: -c * f.v1 + d * f.v2,
        }
    }

    pub fn apply_int_foliation(&self, f: &IntFoliation) -> IntFoliation {
        [
            &self.a * &f[0] - &self.b * &f[1],
            -&self.c * &f[0] + &self.d * &f[1],
        ]
    }

    /// Fractional-linear action on a boundary point.
    pub fn apply_boundary(&self, p: BoundaryPoint) -> BoundaryPoint {
        mobius_f64(self.entries_f64()).apply_boundary(p)
    }

    /// Exact action on a rational boundary point (`None` is `∞`).
    pub fn apply_boundary_exact(&self, p: &Option<BigRational>) -> Option<BigRational> {
        match p {
            None => {
                if self.c.is_zero() {
                    None
                } else {
                    Some(BigRational::new(self.a.clone(), self.c.clone()))
                }
            }
            Some(x) => {
                let num = BigRational::from(self.a.clone()) * x + BigRational::from(self.b.clone());
                let den = BigRational::from(self.c.clone()) * x + BigRational::from(self.d.clone());
                if den.is_zero() {
                    None
                } else {
                    Some(num / den)
                }
            }
        }
    }

    /// `log λ` with `λ = (|tr| + √(tr² − 4))/2`.
    pub fn translation_length(&self) -> Result<f64, GeometryError> {
        if !self.is_hyperbolic() {
            return Err(GeometryError::NotHyperbolic(self.trace()));
        }
        Ok(translation_length_from_trace(self.trace().abs().to_f64().unwrap_or(f64::INFINITY)))
    }

    /// Translation length together with the attracting and repelling
    /// axis endpoints, as foliations.
    pub fn axis(&self) -> Result<Axis, GeometryError> {
        let length = self.translation_length()?;
        let (plus, minus) = mobius_f64(self.entries_f64()).fixed_points();
        Ok(Axis {
            length,
            attracting: Foliation::at_boundary(plus),
            repelling: Foliation::at_boundary(minus),
        })
    }
}

impl fmt::Display for MappingClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[[{},{}],[{},{}]]", self.a, self.b, self.c, self.d)
    }
}

/// `arccosh(t/2)`, computed without cancellation for large `t`.
pub fn translation_length_from_trace(abs_trace: f64) -> f64 {
    let disc = ((abs_trace - 2.0) * (abs_trace + 2.0)).sqrt();
    ((abs_trace + disc) / 2.0).ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub length: f64,
    pub attracting: Foliation,
    pub repelling: Foliation,
}

/// Real Möbius map with positive determinant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mobius {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

pub fn mobius_f64(e: [f64; 4]) -> Mobius {
    Mobius {
        a: e[0],
        b: e[1],
        c: e[2],
        d: e[3],
    }
}

impl Mobius {
    pub fn apply(&self, z: Complex64) -> Complex64 {
        (z * self.a + self.b) / (z * self.c + self.d)
    }

    pub fn apply_point(&self, x: &TeichPoint) -> TeichPoint {
        let z = x.to_complex();
        let den = z * self.c + self.d;
        let im = (self.a * self.d - self.b * self.c) * x.im / den.norm_sqr();
        let w = (z * self.a + self.b) / den;
        TeichPoint::from_complex(Complex64::new(w.re, im))
    }

    pub fn apply_boundary(&self, p: BoundaryPoint) -> BoundaryPoint {
        match p {
            BoundaryPoint::Infinity => {
                if self.c == 0.0 {
                    BoundaryPoint::Infinity
                } else {
                    BoundaryPoint::Finite(self.a / self.c)
                }
            }
            BoundaryPoint::Finite(x) => {
                let den = self.c * x + self.d;
                if den == 0.0 {
                    BoundaryPoint::Infinity
                } else {
                    BoundaryPoint::Finite((self.a * x + self.b) / den)
                }
            }
        }
    }

    pub fn inverse(&self) -> Mobius {
        Mobius {
            a: self.d,
            b: -self.b,
            c: -self.c,
            d: self.a,
        }
    }

    /// (attracting, repelling) fixed points of a hyperbolic map.
    pub fn fixed_points(&self) -> (BoundaryPoint, BoundaryPoint) {
        let tr = self.a + self.d;
        let disc = (tr * tr - 4.0 * (self.a * self.d - self.b * self.c)).max(0.0).sqrt();
        if self.c == 0.0 {
            let other = BoundaryPoint::Finite(self.b / (self.d - self.a));
            if self.a.abs() > self.d.abs() {
                (BoundaryPoint::Infinity, other)
            } else {
                (other, BoundaryPoint::Infinity)
            }
        } else {
            let r1 = (self.a - self.d + disc) / (2.0 * self.c);
            let r2 = (self.a - self.d - disc) / (2.0 * self.c);
            // attracting iff |c·ξ + d| > 1
            if (self.c * r1 + self.d).abs() > (self.c * r2 + self.d).abs() {
                (BoundaryPoint::Finite(r1), BoundaryPoint::Finite(r2))
            } else {
                (BoundaryPoint::Finite(r2), BoundaryPoint::Finite(r1))
            }
        }
    }
}

/// Bi-infinite geodesic from `backward` to `forward`, parametrized by
/// Teichmüller arclength with `t = 0` at the point closest to a chosen origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geodesic {
    backward: BoundaryPoint,
    forward: BoundaryPoint,
    frame: Mobius,
    offset: f64,
}

impl Geodesic {
    pub fn new(
        backward: BoundaryPoint,
        forward: BoundaryPoint,
        origin: &TeichPoint,
    ) -> Result<Self, GeometryError> {
        if backward.angular_gap(&forward) < 1e-15 {
            return Err(GeometryError::NotFilling);
        }
        // frame maps 0 ↦ backward, ∞ ↦ forward, with positive determinant
        let frame = match (backward, forward) {
            (BoundaryPoint::Infinity, BoundaryPoint::Finite(q)) => Mobius {
                a: q,
                b: -1.0,
                c: 1.0,
                d: 0.0,
            },
            (BoundaryPoint::Finite(p), BoundaryPoint::Infinity) => Mobius {
                a: 1.0,
                b: p,
                c: 0.0,
                d: 1.0,
            },
            (BoundaryPoint::Finite(p), BoundaryPoint::Finite(q)) => {
                let s = (q - p).abs().sqrt();
                if q > p {
                    Mobius {
                        a: q / s,
                        b: p / s,
                        c: 1.0 / s,
                        d: 1.0 / s,
                    }
                } else {
                    Mobius {
                        a: q / s,
                        b: -p / s,
                        c: 1.0 / s,
                        d: -1.0 / s,
                    }
                }
            }
            (BoundaryPoint::Infinity, BoundaryPoint::Infinity) => unreachable!(),
        };
        let z0 = frame.inverse().apply(origin.to_complex());
        let offset = 0.5 * z0.norm().ln();
        Ok(Self {
            backward,
            forward,
            frame,
            offset,
        })
    }

    pub fn backward(&self) -> BoundaryPoint {
        self.backward
    }

    pub fn forward(&self) -> BoundaryPoint {
        self.forward
    }

    pub fn point_at(&self, t: f64) -> TeichPoint {
        let z = Complex64::new(0.0, (2.0 * (t + self.offset)).exp());
        TeichPoint::from_complex(self.frame.apply(z))
    }

    /// Arclength coordinate of the foot of the perpendicular from `p`.
    pub fn time_of(&self, p: &TeichPoint) -> f64 {
        let z = self.frame.inverse().apply(p.to_complex());
        0.5 * z.norm().ln() - self.offset
    }

    /// Distance from `p` to the geodesic.
    pub fn distance_to(&self, p: &TeichPoint) -> f64 {
        let t = self.time_of(p);
        distance(p, &self.point_at(t))
    }
}

/// Disk chart centred at `w`: `z ↦ (z − w)/(z − w̄)`.
fn to_disk(w: &TeichPoint, z: Complex64) -> Complex64 {
    let wc = w.to_complex();
    (z - wc) / (z - wc.conj())
}

fn from_disk(w: &TeichPoint, u: Complex64) -> Complex64 {
    let wc = w.to_complex();
    (wc - wc.conj() * u) / (Complex64::new(1.0, 0.0) - u)
}

/// Direction in which `p` is seen from `w`.
pub fn visual_angle(w: &TeichPoint, p: BoundaryPoint) -> f64 {
    match p {
        BoundaryPoint::Infinity => 0.0,
        BoundaryPoint::Finite(x) => to_disk(w, Complex64::new(x, 0.0)).arg(),
    }
}

/// Boundary point seen from `w` in direction `phi`.
pub fn boundary_from_visual(w: &TeichPoint, phi: f64) -> BoundaryPoint {
    let u = Complex64::from_polar(1.0, phi);
    if (u - 1.0).norm() < 1e-300 {
        return BoundaryPoint::Infinity;
    }
    let z = from_disk(w, u);
    if !z.re.is_finite() {
        BoundaryPoint::Infinity
    } else {
        BoundaryPoint::Finite(z.re)
    }
}

/// Forward endpoint of the ray from `x` through `y`.
pub fn pr(x: &TeichPoint, y: &TeichPoint) -> BoundaryPoint {
    let phi = to_disk(x, y.to_complex()).arg();
    boundary_from_visual(x, phi)
}

/// Point at Teichmüller distance `r` from `center` in visual direction `phi`.
pub fn point_on_sphere(center: &TeichPoint, r: f64, phi: f64) -> TeichPoint {
    let u = Complex64::from_polar(r.tanh(), phi);
    TeichPoint::from_complex(from_disk(center, u))
}

/// Closed arc of the boundary circle, running counterclockwise from `lo`
/// to `hi` (increasing `ξ`, through `∞`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryArc {
    lo: BoundaryPoint,
    hi: BoundaryPoint,
    full: bool,
}

impl BoundaryArc {
    pub fn new(lo: BoundaryPoint, hi: BoundaryPoint) -> Result<Self, GeometryError> {
        if lo.angular_gap(&hi) == 0.0 {
            return Err(GeometryError::DegenerateArc);
        }
        Ok(Self {
            lo,
            hi,
            full: false,
        })
    }

    pub fn full() -> Self {
        Self {
            lo: BoundaryPoint::Infinity,
            hi: BoundaryPoint::Infinity,
            full: true,
        }
    }

    /// Arc starting at angle `start` with angular length `len`.
    pub fn from_angles(start: f64, len: f64) -> Self {
        if len >= 2.0 * PI {
            return Self::full();
        }
        Self {
            lo: BoundaryPoint::from_angle(start),
            hi: BoundaryPoint::from_angle(start + len),
            full: false,
        }
    }

    /// Arc of angular half-width `half` around `p`.
    pub fn around(p: BoundaryPoint, half: f64) -> Self {
        Self::from_angles(p.angle() - half, 2.0 * half)
    }

    pub fn lo(&self) -> BoundaryPoint {
        self.lo
    }

    pub fn hi(&self) -> BoundaryPoint {
        self.hi
    }

    pub fn is_full(&self) -> bool {
        self.full
    }

    pub fn start_angle(&self) -> f64 {
        self.lo.angle()
    }

    pub fn angular_length(&self) -> f64 {
        if self.full {
            2.0 * PI
        } else {
            let l = wrap_positive(self.hi.angle() - self.lo.angle());
            if l == 0.0 {
                2.0 * PI
            } else {
                l
            }
        }
    }

    pub fn contains(&self, p: BoundaryPoint) -> bool {
        self.full || wrap_positive(p.angle() - self.start_angle()) <= self.angular_length()
    }

    pub fn midpoint(&self) -> BoundaryPoint {
        BoundaryPoint::from_angle(self.start_angle() + 0.5 * self.angular_length())
    }

    pub fn contains_arc(&self, other: &BoundaryArc) -> bool {
        if self.full {
            return true;
        }
        if other.full {
            return false;
        }
        wrap_positive(other.start_angle() - self.start_angle()) + other.angular_length()
            <= self.angular_length() + 1e-15
    }

    pub fn intersects(&self, other: &BoundaryArc) -> bool {
        self.full || other.full || self.contains(other.lo) || other.contains(self.lo)
    }

    /// Split into `n` arcs of equal angle.
    pub fn subdivide(&self, n: usize) -> Vec<BoundaryArc> {
        let len = self.angular_length() / n as f64;
        let start = self.start_angle();
        (0..n)
            .map(|k| BoundaryArc::from_angles(start + k as f64 * len, len))
            .collect()
    }
}

/// Partition of the full circle into `n` equal-angle arcs.
pub fn uniform_partition(n: usize) -> Vec<BoundaryArc> {
    let len = 2.0 * PI / n as f64;
    (0..n)
        .map(|k| BoundaryArc::from_angles(-PI + k as f64 * len, len))
        .collect()
}

/// Visual arc subtended by the ball `B(b, r)` as seen from `w`, returned as
/// angular offsets `(lo, hi)` relative to `reference`.
fn ball_shadow_offsets(w: &TeichPoint, b: &TeichPoint, r: f64, reference: f64) -> (f64, f64) {
    let dist = distance(w, b);
    let phi_b = to_disk(w, b.to_complex()).arg();
    let half = ((2.0 * r).sinh() / (2.0 * dist).sinh()).clamp(-1.0, 1.0).asin();
    let p1 = boundary_from_visual(w, phi_b - half).angle();
    let p2 = boundary_from_visual(w, phi_b + half).angle();
    let o1 = wrap_angle(p1 - reference);
    let o2 = wrap_angle(p2 - reference);
    (o1.min(o2), o1.max(o2))
}

/// Sample of `B(a, r)`: centre plus concentric rings.
fn ball_sample(a: &TeichPoint, r: f64, rings: usize, per_ring: usize) -> Vec<TeichPoint> {
    let mut out = vec![*a];
    for k in 1..=rings {
        let rr = r * k as f64 / rings as f64;
        for j in 0..per_ring {
            let phi = 2.0 * PI * j as f64 / per_ring as f64;
            out.push(point_on_sphere(a, rr, phi));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shadow {
    pub outer: BoundaryArc,
    pub inner: BoundaryArc,
}

/// `Θ⁺ = ⋃_{w∈B(a,r)} pr_w(B(b,r))` and `Θ⁻ = ⋂_{w∈B(a,r)} pr_w(B(b,r))`.
pub fn shadow_arc(a: &TeichPoint, b: &TeichPoint, r: f64) -> Result<Shadow, GeometryError> {
    let d = distance(a, b);
    if d <= 2.0 * r {
        return Err(GeometryError::ShadowTooClose {
            distance: d,
            two_r: 2.0 * r,
        });
    }
    let reference = pr(a, b).angle();
    let (mut olo, mut ohi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut ilo, mut ihi) = (f64::NEG_INFINITY, f64::INFINITY);
    for w in ball_sample(a, r, 4, 256) {
        let (lo, hi) = ball_shadow_offsets(&w, b, r, reference);
        olo = olo.min(lo);
        ohi = ohi.max(hi);
        ilo = ilo.max(lo);
        ihi = ihi.min(hi);
    }
    Ok(Shadow {
        outer: BoundaryArc::from_angles(reference + olo, ohi - olo),
        inner: BoundaryArc::from_angles(reference + ilo, (ihi - ilo).max(0.0)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SectorFlags {
    pub sect: bool,
    pub c_plus: bool,
    pub c_minus: bool,
}

/// Membership of `y` in `Sect_x(U)`, `C⁺_r(x,U)` and `C⁻_r(x,U)`.
pub fn sector_membership(x: &TeichPoint, u: &BoundaryArc, y: &TeichPoint, r: f64) -> SectorFlags {
    let sect = distance(x, y) > 0.0 && u.contains(pr(x, y));
    let outer = if distance(x, y) > 2.0 * r {
        shadow_arc(x, y, r).map(|s| s.outer).ok()
    } else {
        None
    };
    let (c_plus, c_minus) = match outer {
        Some(o) => (o.intersects(u), u.contains_arc(&o)),
        None => (true, u.is_full()),
    };
    SectorFlags {
        sect: sect || u.is_full(),
        c_plus,
        c_minus,
    }
}

/// Time the geodesic `(p, q)` spends inside `Sect_x(U)`, by sampling
/// arclength at step `dt` over `[−t_max, t_max]` around the foot of `x`.
pub fn sector_dwell_time(
    x: &TeichPoint,
    u: &BoundaryArc,
    p: BoundaryPoint,
    q: BoundaryPoint,
    t_max: f64,
    dt: f64,
) -> Result<f64, GeometryError> {
    let g = Geodesic::new(p, q, x)?;
    let steps = (2.0 * t_max / dt).ceil() as usize;
    let mut inside = 0usize;
    for k in 0..=steps {
        let t = -t_max + k as f64 * dt;
        if u.contains(pr(x, &g.point_at(t))) {
            inside += 1;
        }
    }
    Ok(inside as f64 * dt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn pt(re: f64, im: f64) -> TeichPoint {
        TeichPoint::new(re, im).unwrap()
    }

    fn fol(a: f64, b: f64) -> Foliation {
        Foliation::new(a, b).unwrap()
    }

    #[test]
    fn ext_length_examples() {
        assert!(close(ext_length(&pt(0.0, 1.0), &fol(1.0, 0.0)), 1.0, 1e-15));
        assert!(close(ext_length(&pt(1.0, 2.0), &fol(1.0, 1.0)), 4.0, 1e-15));
        assert!(close(ext_length(&pt(0.0, 2.0), &fol(0.0, 1.0)), 2.0, 1e-15));
        assert!(close(ext_length(&pt(0.3, 0.7), &fol(2.0, -1.0)), 4.0 * ext_length(&pt(0.3, 0.7), &fol(1.0, -0.5)), 1e-12));
    }

    #[test]
    fn intersection_examples() {
        assert_eq!(intersection_number(&fol(1.0, 0.0), &fol(0.0, 1.0)), 1.0);
        assert_eq!(intersection_number(&fol(1.0, 0.0), &fol(2.0, 0.0)), 0.0);
        assert_eq!(intersection_number(&fol(1.0, 1.0), &fol(1.0, -1.0)), 2.0);
    }

    #[test]
    fn distance_examples() {
        assert_eq!(distance(&TeichPoint::i(), &TeichPoint::i()), 0.0);
        assert!(close(distance(&TeichPoint::i(), &pt(0.0, 2.0)), 0.5 * 2f64.ln(), 1e-15));
        assert!(close(
            distance(&TeichPoint::i(), &pt(1.0, 1.0)),
            distance(&TeichPoint::i(), &pt(-1.0, 1.0)),
            1e-15
        ));
    }

    #[test]
    fn distance_matches_arccosh_form() {
        let (x, y) = (pt(0.2, 0.5), pt(-1.3, 3.0));
        let dr = x.re() - y.re();
        let di = x.im() - y.im();
        let c = 1.0 + (dr * dr + di * di) / (2.0 * x.im() * y.im());
        assert!(close(distance(&x, &y), 0.5 * c.acosh(), 1e-13));
    }

    #[test]
    fn busemann_examples() {
        let b = busemann(&fol(0.0, 1.0), &TeichPoint::i(), &pt(0.0, 2.0));
        assert!(close(b, -0.5 * 2f64.ln(), 1e-15));
        assert!(close(b, -distance(&TeichPoint::i(), &pt(0.0, 2.0)), 1e-15));
        assert_eq!(busemann(&fol(0.4, 1.0), &pt(0.1, 2.0), &pt(0.1, 2.0)), 0.0);
        // i and 1+i lie on a common horocycle at ∞, the centre of (1,0)
        assert!(close(busemann(&fol(1.0, 0.0), &TeichPoint::i(), &pt(1.0, 1.0)), 0.0, 1e-15));
        // (0,1) is centred at 0, where the two points are not cohoricyclic
        assert!(close(busemann(&fol(0.0, 1.0), &TeichPoint::i(), &pt(1.0, 1.0)), -0.5 * 2f64.ln(), 1e-15));
    }

    #[test]
    fn gromov_examples() {
        let (h, v) = (fol(1.0, 0.0), fol(0.0, 1.0));
        assert!(close(gromov_product(&TeichPoint::i(), &h, &v).unwrap(), 0.0, 1e-15));
        assert!(close(gromov_product(&pt(0.0, 2.0), &h, &v).unwrap(), 0.0, 1e-15));
        assert!(close(gromov_product(&pt(1.0, 1.0), &h, &v).unwrap(), 0.5 * 2f64.ln(), 1e-15));
        assert_eq!(
            gromov_product(&TeichPoint::i(), &h, &fol(3.0, 0.0)),
            Err(GeometryError::NotFilling)
        );
    }

    #[test]
    fn gromov_at_closest_point_is_distance_to_geodesic_free() {
        // 1+i against the geodesic (0, ∞): the β-sum at the foot i·√2
        let x = pt(1.0, 1.0);
        let (h, v) = (fol(1.0, 0.0), fol(0.0, 1.0));
        let u = pt(0.0, 2f64.sqrt());
        let sum = busemann(&h, &x, &u) + busemann(&v, &x, &u);
        assert!(close(sum, gromov_product(&x, &h, &v).unwrap(), 1e-14));
    }

    #[test]
    fn cross_ratio_examples() {
        let (h, v) = (fol(1.0, 0.0), fol(0.0, 1.0));
        assert!(close(cross_ratio(&h, &v, &fol(1.0, 1.0), &fol(1.0, -1.0)).unwrap(), 0.0, 1e-15));
        assert!(close(
            cross_ratio(&h, &v, &fol(1.0, 1.0), &fol(1.0, 2.0)).unwrap(),
            -0.5 * 2f64.ln(),
            1e-15
        ));
        let b = fol(2.0, 3.0);
        assert!(close(cross_ratio(&h, &v, &b, &b.scale(4.0)).unwrap(), 0.0, 1e-15));
        assert_eq!(
            cross_ratio(&h, &v, &h, &fol(1.0, 1.0)),
            Err(GeometryError::VanishingDenominator)
        );
    }

    #[test]
    fn translation_length_examples() {
        let a = MappingClass::from_i64(2, 1, 1, 1).unwrap();
        let l = a.translation_length().unwrap();
        assert!(close(l, ((3.0 + 5f64.sqrt()) / 2.0).ln(), 1e-15));
        assert!(close(l, 0.962424, 1e-6));
        assert!(close(a.inverse().translation_length().unwrap(), l, 1e-15));
        assert!(close(a.pow(2).translation_length().unwrap(), 2.0 * l, 1e-14));
        let par = MappingClass::from_i64(1, 1, 0, 1).unwrap();
        assert!(matches!(par.translation_length(), Err(GeometryError::NotHyperbolic(_))));
    }

    #[test]
    fn axis_endpoints_are_fixed_points() {
        let a = MappingClass::from_i64(2, 1, 1, 1).unwrap();
        let ax = a.axis().unwrap();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!(close(ax.attracting.boundary_point().value(), phi, 1e-14));
        assert!(close(ax.repelling.boundary_point().value(), 1.0 - phi, 1e-14));
        // eigen-directions of the foliation action
        let g = a.apply_foliation(&ax.attracting);
        assert!(intersection_number(&g, &ax.attracting) < 1e-12);
    }

    #[test]
    fn apply_examples() {
        let a = MappingClass::from_i64(2, 1, 1, 1).unwrap();
        let y = a.apply_point(&TeichPoint::i());
        assert!(close(y.re(), 1.5, 1e-15) && close(y.im(), 0.5, 1e-15));
        let id = MappingClass::identity();
        assert_eq!(id.apply_point(&pt(0.3, 0.4)), pt(0.3, 0.4));
        assert_eq!(id.apply_foliation(&fol(0.3, 0.4)), fol(0.3, 0.4));
        assert_eq!(a.apply_boundary(BoundaryPoint::Finite(1.0)), BoundaryPoint::Finite(1.5));
    }

    #[test]
    fn foliation_action_moves_centre_by_mobius() {
        let g = MappingClass::from_i64(3, 2, 1, 1).unwrap();
        let f = fol(0.7, -1.9);
        let moved = g.apply_foliation(&f).boundary_point().value();
        let expect = g.apply_boundary(f.boundary_point()).value();
        assert!(close(moved, expect, 1e-12));
    }

    #[test]
    fn geodesic_parametrization() {
        let g = Geodesic::new(BoundaryPoint::Finite(0.0), BoundaryPoint::Infinity, &TeichPoint::i()).unwrap();
        let p = g.point_at(0.5 * 2f64.ln());
        assert!(close(p.im(), 2.0, 1e-14) && close(p.re(), 0.0, 1e-14));
        let h = Geodesic::new(BoundaryPoint::Finite(3.0), BoundaryPoint::Finite(-1.0), &pt(0.3, 0.2)).unwrap();
        let (a, b) = (h.point_at(0.7), h.point_at(2.2));
        assert!(close(distance(&a, &b), 1.5, 1e-12));
        assert!(close(h.time_of(&b), 2.2, 1e-10));
        // approaches the forward endpoint
        assert!(close(h.point_at(25.0).re(), -1.0, 1e-8));
        let foot = h.point_at(0.0);
        for t in [-0.3, 0.2, 0.9] {
            assert!(distance(&pt(0.3, 0.2), &h.point_at(t)) >= distance(&pt(0.3, 0.2), &foot));
        }
    }

    #[test]
    fn pr_and_visual_angles() {
        assert_eq!(pr(&TeichPoint::i(), &pt(0.0, 2.0)), BoundaryPoint::Infinity);
        assert!(close(pr(&TeichPoint::i(), &pt(0.0, 0.5)).value(), 0.0, 1e-12));
        let w = pt(0.4, 1.3);
        for p in [-3.0, -0.2, 0.0, 1.7, 40.0] {
            let back = boundary_from_visual(&w, visual_angle(&w, BoundaryPoint::Finite(p)));
            assert!(close(back.value(), p, 1e-9 * (1.0 + p.abs())));
        }
        let s = point_on_sphere(&w, 0.8, 1.1);
        assert!(close(distance(&w, &s), 0.8, 1e-12));
    }

    #[test]
    fn arcs() {
        let u = BoundaryArc::around(BoundaryPoint::Infinity, 0.2);
        assert!(u.contains(BoundaryPoint::Infinity));
        assert!(u.contains(BoundaryPoint::Finite(1e6)));
        assert!(!u.contains(BoundaryPoint::Finite(0.0)));
        let w = BoundaryArc::new(BoundaryPoint::Finite(1.0), BoundaryPoint::Finite(-1.0)).unwrap();
        assert!(w.contains(BoundaryPoint::Infinity) && w.contains(BoundaryPoint::Finite(5.0)));
        assert!(!w.contains(BoundaryPoint::Finite(0.0)));
        assert!(w.contains_arc(&u));
        assert!(!u.contains_arc(&w));
        let parts = uniform_partition(8);
        let total: f64 = parts.iter().map(|a| a.angular_length()).sum();
        assert!(close(total, 2.0 * PI, 1e-12));
        assert!(BoundaryArc::new(BoundaryPoint::Infinity, BoundaryPoint::Infinity).is_err());
    }

    #[test]
    fn shadow_examples() {
        let a = TeichPoint::i();
        let far = shadow_arc(&a, &pt(0.0, 10f64.exp()), 0.1).unwrap();
        assert!(far.outer.contains(BoundaryPoint::Infinity));
        assert!(far.inner.contains(BoundaryPoint::Infinity));
        let near = shadow_arc(&a, &pt(0.0, 2f64.exp()), 0.1).unwrap();
        assert!(far.outer.angular_length() < near.outer.angular_length());
        assert!(near.outer.contains_arc(&near.inner));
        let small = shadow_arc(&a, &pt(0.0, 2f64.exp()), 0.1).unwrap();
        let big = shadow_arc(&a, &pt(0.0, 2f64.exp()), 0.2).unwrap();
        assert!(big.inner.contains_arc(&small.inner));
        assert!(shadow_arc(&a, &pt(0.0, 1.1), 0.1).is_err());
    }

    #[test]
    fn sector_examples() {
        let x = TeichPoint::i();
        let u = BoundaryArc::around(BoundaryPoint::Infinity, 0.5);
        let f = sector_membership(&x, &u, &pt(0.0, 2.0), 0.01);
        assert!(f.sect && f.c_plus && f.c_minus);
        let full = BoundaryArc::full();
        for y in [pt(0.0, 1.0), pt(3.0, 0.1), pt(-2.0, 9.0)] {
            assert!(sector_membership(&x, &full, &y, 0.3).c_minus);
        }
        let tiny = BoundaryArc::around(BoundaryPoint::Infinity, 0.05);
        assert!(!sector_membership(&x, &tiny, &pt(1.0, 1.0), 0.01).sect);
    }
}
