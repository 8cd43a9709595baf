//! Train-track weight spaces, the Thurston form, carried integer actions,
//! certified Perron roots and bounded-height non-arithmeticity.

use std::fmt;
use std::str::FromStr;

use dashu_float::DBig;
use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type IMat = Vec<Vec<BigInt>>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackError {
    #[error("inconsistent track: {0}")]
    Inconsistent(String),
    #[error("vector violates the switch condition at switch {0}")]
    SwitchViolation(usize),
    #[error("matrix has shape {0}×{1}, expected {2}×{2}")]
    Shape(usize, usize, usize),
    #[error("branch-image matrix has a negative entry")]
    Negative,
    #[error("action does not preserve the switch conditions")]
    NotPreserved,
    #[error("induced matrix is not integral in the lattice basis")]
    NotIntegral,
    #[error("matrix is not primitive up to power {0}")]
    NotPrimitive(usize),
    #[error("element {word} is not proximal: moduli {moduli:?}")]
    NonProximal { word: String, moduli: Vec<f64> },
    #[error("need at least {0} actions")]
    TooFewActions(usize),
    #[error("dilatation enclosure does not lie above 1")]
    NotExpanding,
    #[error("enclosures too wide to decide height {0}; refine them")]
    EnclosureTooWide(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Switch {
    pub incoming: Vec<usize>,
    pub outgoing: Vec<usize>,
}

/// Branch `k` has half-branches `2k` and `2k + 1`. Incoming and outgoing
/// lists run left to right facing the direction of travel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainTrack {
    pub branches: usize,
    pub switches: Vec<Switch>,
}

impl TrainTrack {
    pub fn new(branches: usize, switches: Vec<Switch>) -> Result<Self, TrackError> {
        if branches < 2 {
            return Err(TrackError::Inconsistent(format!("{branches} branches")));
        }
        let mut seen = vec![false; 2 * branches];
        for (k, s) in switches.iter().enumerate() {
            if s.incoming.is_empty() || s.outgoing.is_empty() {
                return Err(TrackError::Inconsistent(format!("switch {k} has an empty side")));
            }
            for &h in s.incoming.iter().chain(&s.outgoing) {
                if h >= 2 * branches {
                    return Err(TrackError::Inconsistent(format!("half-branch {h} out of range")));
                }
                if std::mem::replace(&mut seen[h], true) {
                    return Err(TrackError::Inconsistent(format!("half-branch {h} reused")));
                }
            }
        }
        if let Some(h) = seen.iter().position(|s| !s) {
            return Err(TrackError::Inconsistent(format!("half-branch {h} unattached")));
        }
        Ok(Self { branches, switches })
    }

    pub fn from_json(s: &str) -> Result<Self, TrackError> {
        let t: TrainTrack = serde_json::from_str(s).map_err(|e| TrackError::Inconsistent(e.to_string()))?;
        Self::new(t.branches, t.switches)
    }

    /// One switch, two branches, on the once-punctured torus.
    pub fn torus() -> Self {
        Self::new(
            2,
            vec![Switch {
                incoming: vec![2, 0],
                outgoing: vec![1, 3],
            }],
        )
        .unwrap()
    }

    /// Trivalent track on the closed genus-2 surface with four trigon
    /// complementary regions.
    pub fn genus_two_complete() -> Self {
        let sw = [
            (14, 8, 22),
            (19, 34, 24),
            (11, 17, 27),
            (15, 4, 23),
            (7, 10, 5),
            (30, 3, 35),
            (29, 16, 20),
            (12, 25, 2),
            (26, 21, 0),
            (6, 32, 18),
            (33, 31, 9),
            (28, 1, 13),
        ];
        let switches = sw
            .iter()
            .map(|&(i, a, b)| Switch {
                incoming: vec![i],
                outgoing: vec![a, b],
            })
            .collect();
        Self::new(18, switches).unwrap()
    }

    /// Rows `Σ_in w − Σ_out w`, one per switch.
    pub fn switch_matrix(&self) -> IMat {
        self.switches
            .iter()
            .map(|s| {
                let mut row = vec![BigInt::zero(); self.branches];
                for h in &s.incoming {
                    row[h / 2] += 1;
                }
                for h in &s.outgoing {
                    row[h / 2] -= 1;
                }
                row
            })
            .collect()
    }

    /// Cusp count of every complementary region of the fattened track.
    pub fn complementary_regions(&self) -> Vec<usize> {
        let n = 2 * self.branches;
        let mut next = vec![0; n];
        let mut cusp = vec![false; n];
        for s in &self.switches {
            // counterclockwise: outgoing right to left, then incoming left to right
            let cyc: Vec<(usize, bool)> = s
                .outgoing
                .iter()
                .rev()
                .map(|h| (*h, true))
                .chain(s.incoming.iter().map(|h| (*h, false)))
                .collect();
            for k in 0..cyc.len() {
                let (a, sa) = cyc[k];
                let (b, sb) = cyc[(k + 1) % cyc.len()];
                next[a] = b;
                cusp[a] = sa == sb;
            }
        }
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for h in 0..n {
            if seen[h] {
                continue;
            }
            let (mut x, mut c) = (h, 0);
            while !seen[x] {
                seen[x] = true;
                let y = x ^ 1;
                c += cusp[y] as usize;
                x = next[y];
            }
            out.push(c);
        }
        out
    }

    /// Genus of the surface the fattened track fills.
    pub fn genus(&self) -> usize {
        let chi = self.switches.len() as i64 - self.branches as i64 + self.complementary_regions().len() as i64;
        ((2 - chi) / 2) as usize
    }

    pub fn check(&self, v: &WeightVector) -> Result<(), TrackError> {
        if v.weights.len() != self.branches {
            return Err(TrackError::Shape(v.weights.len(), 1, self.branches));
        }
        for (k, s) in self.switches.iter().enumerate() {
            let side = |hs: &[usize]| hs.iter().map(|h| v.weights[h / 2].clone()).sum::<BigRational>();
            if side(&s.incoming) != side(&s.outgoing) {
                return Err(TrackError::SwitchViolation(k));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightVector {
    pub weights: Vec<BigRational>,
}

impl WeightVector {
    pub fn from_ints(w: &[i64]) -> Self {
        Self {
            weights: w.iter().map(|v| BigRational::from_integer((*v).into())).collect(),
        }
    }

    pub fn is_positive(&self) -> bool {
        self.weights.iter().all(|w| w.is_positive())
    }
}

/// Integer basis of `W_τ ∩ ℤ^b`, one column per basis vector.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSpace {
    pub basis: Vec<Vec<BigInt>>,
}

impl WeightSpace {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn vector(&self, coords: &[BigInt]) -> WeightVector {
        let b = self.basis.first().map_or(0, |v| v.len());
        let mut w = vec![BigRational::zero(); b];
        for (c, v) in coords.iter().zip(&self.basis) {
            for (wi, vi) in w.iter_mut().zip(v) {
                *wi += BigRational::from_integer(c * vi);
            }
        }
        WeightVector { weights: w }
    }

    /// Coordinates of `y` in the basis, if it lies in the span.
    pub fn coordinates(&self, y: &[BigRational]) -> Option<Vec<BigRational>> {
        let d = self.dim();
        let b = y.len();
        let mut rows: Vec<Vec<BigRational>> = (0..b)
            .map(|i| {
                let mut r: Vec<BigRational> = self.basis.iter().map(|v| BigRational::from_integer(v[i].clone())).collect();
                r.push(y[i].clone());
                r
            })
            .collect();
        let mut pivots = Vec::new();
        let mut r = 0;
        for c in 0..d {
            let Some(p) = (r..b).find(|i| !rows[*i][c].is_zero()) else {
                return None;
            };
            rows.swap(r, p);
            let inv = rows[r][c].recip();
            rows[r].iter_mut().for_each(|v| *v *= &inv);
            for i in 0..b {
                if i != r && !rows[i][c].is_zero() {
                    let f = rows[i][c].clone();
                    for j in 0..=d {
                        let t = &rows[r][j] * &f;
                        rows[i][j] -= t;
                    }
                }
            }
            pivots.push(c);
            r += 1;
        }
        if rows[r..].iter().any(|row| !row[d].is_zero()) {
            return None;
        }
        Some((0..d).map(|c| rows[c][d].clone()).collect())
    }
}

/// Lattice basis of the switch-condition kernel by unimodular column
/// reduction of the switch matrix.
pub fn weight_space_basis(t: &TrainTrack) -> WeightSpace {
    let s = t.switch_matrix();
    let b = t.branches;
    // columns of [S; I]
    let mut cols: Vec<Vec<BigInt>> = (0..b)
        .map(|j| {
            let mut c: Vec<BigInt> = s.iter().map(|row| row[j].clone()).collect();
            c.extend((0..b).map(|i| if i == j { BigInt::one() } else { BigInt::zero() }));
            c
        })
        .collect();
    let m = s.len();
    let mut lead = 0;
    for r in 0..m {
        loop {
            let nz: Vec<usize> = (lead..b).filter(|j| !cols[*j][r].is_zero()).collect();
            if nz.len() <= 1 {
                if let Some(&j) = nz.first() {
                    cols.swap(lead, j);
                    lead += 1;
                }
                break;
            }
            let p = *nz.iter().min_by_key(|j| cols[**j][r].abs()).unwrap();
            for &j in nz.iter().filter(|j| **j != p) {
                let q = cols[j][r].div_floor(&cols[p][r]);
                let pc = cols[p].clone();
                for (x, y) in cols[j].iter_mut().zip(&pc) {
                    *x -= &q * y;
                }
            }
        }
    }
    let basis = cols[lead..].iter().map(|c| c[m..].to_vec()).collect();
    WeightSpace { basis }
}

/// Thurston form `½ Σ_switches [Σ_{j<k} out-pairs − Σ_{j<k} in-pairs]`
/// of `v_a w_b − v_b w_a`, with pairs ordered left to right.
pub fn symplectic_form(t: &TrainTrack, v: &WeightVector, w: &WeightVector) -> Result<BigRational, TrackError> {
    t.check(v)?;
    t.check(w)?;
    let half = BigRational::new(1.into(), 2.into());
    let mut total = BigRational::zero();
    for s in &t.switches {
        for (side, sign) in [(&s.outgoing, 1), (&s.incoming, -1)] {
            for j in 0..side.len() {
                for k in j + 1..side.len() {
                    let (a, b) = (side[j] / 2, side[k] / 2);
                    let term = &v.weights[a] * &w.weights[b] - &v.weights[b] * &w.weights[a];
                    if sign > 0 {
                        total += term;
                    } else {
                        total -= term;
                    }
                }
            }
        }
    }
    Ok(total * half)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CarriedAction {
    pub branch_matrix: IMat,
    pub induced: IMat,
    /// Least `k ≤ (d−1)² + 1` with every entry of `induced^k` positive.
    pub positivity_power: Option<usize>,
}

pub fn to_imat(m: &[Vec<i64>]) -> IMat {
    m.iter().map(|r| r.iter().map(|v| BigInt::from(*v)).collect()).collect()
}

pub fn mat_mul(a: &IMat, b: &IMat) -> IMat {
    let (n, k, m) = (a.len(), b.len(), b.first().map_or(0, |r| r.len()));
    (0..n)
        .map(|i| (0..m).map(|j| (0..k).map(|l| &a[i][l] * &b[l][j]).sum()).collect())
        .collect()
}

pub fn mat_pow(a: &IMat, n: usize) -> IMat {
    let d = a.len();
    let mut out: IMat = (0..d)
        .map(|i| (0..d).map(|j| if i == j { BigInt::one() } else { BigInt::zero() }).collect())
        .collect();
    let mut base = a.clone();
    let mut e = n;
    while e > 0 {
        if e & 1 == 1 {
            out = mat_mul(&out, &base);
        }
        base = mat_mul(&base, &base);
        e >>= 1;
    }
    out
}

fn positivity_power(a: &IMat) -> Option<usize> {
    let d = a.len();
    let bound = (d - 1) * (d - 1) + 1;
    let mut p = a.clone();
    for k in 1..=bound {
        if p.iter().flatten().all(|v| v.is_positive()) {
            return Some(k);
        }
        p = mat_mul(&p, a);
    }
    None
}

/// Induced action of a branch-image matrix `M` (`w ↦ Mw`) on the lattice
/// basis of `W_τ`.
pub fn action_matrix(t: &TrainTrack, m: &IMat) -> Result<CarriedAction, TrackError> {
    let b = t.branches;
    if m.len() != b || m.iter().any(|r| r.len() != b) {
        return Err(TrackError::Shape(m.len(), m.first().map_or(0, |r| r.len()), b));
    }
    if m.iter().flatten().any(|v| v.is_negative()) {
        return Err(TrackError::Negative);
    }
    let space = weight_space_basis(t);
    let d = space.dim();
    let mut induced = vec![vec![BigInt::zero(); d]; d];
    for (j, v) in space.basis.iter().enumerate() {
        let image: Vec<BigRational> = m
            .iter()
            .map(|row| BigRational::from_integer(row.iter().zip(v).map(|(a, b)| a * b).sum()))
            .collect();
        t.check(&WeightVector { weights: image.clone() }).map_err(|_| TrackError::NotPreserved)?;
        let c = space.coordinates(&image).ok_or(TrackError::NotPreserved)?;
        for (i, ci) in c.into_iter().enumerate() {
            if !ci.is_integer() {
                return Err(TrackError::NotIntegral);
            }
            induced[i][j] = ci.to_integer();
        }
    }
    let positivity_power = positivity_power(&induced);
    Ok(CarriedAction {
        branch_matrix: m.clone(),
        induced,
        positivity_power,
    })
}

/// Polynomial over `ℚ`, coefficients from the constant term up.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Poly(pub Vec<BigRational>);

impl Poly {
    fn trim(mut self) -> Self {
        while self.0.last().is_some_and(|c| c.is_zero()) {
            self.0.pop();
        }
        self
    }

    pub fn degree(&self) -> Option<usize> {
        self.0.len().checked_sub(1)
    }

    pub fn eval(&self, x: &BigRational) -> BigRational {
        self.0.iter().rev().fold(BigRational::zero(), |acc, c| acc * x + c)
    }

    pub fn derivative(&self) -> Self {
        Poly(
            self.0
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, c)| c * BigRational::from_integer(k.into()))
                .collect(),
        )
        .trim()
    }

    pub fn rem(&self, d: &Poly) -> Poly {
        let mut r = self.0.clone();
        let dd = d.0.len() - 1;
        let lead = d.0[dd].clone();
        while r.len() > dd && !r.is_empty() {
            let k = r.len() - 1;
            let f = &r[k] / &lead;
            for (i, c) in d.0.iter().enumerate() {
                r[k - dd + i] -= &f * c;
            }
            r.pop();
            while r.last().is_some_and(|c| c.is_zero()) {
                r.pop();
            }
        }
        Poly(r).trim()
    }

    pub fn gcd(&self, other: &Poly) -> Poly {
        let (mut a, mut b) = (self.clone().trim(), other.clone().trim());
        while !b.0.is_empty() {
            let r = a.rem(&b);
            a = b;
            b = r;
        }
        let lead = a.0.last().cloned().unwrap_or_else(BigRational::one);
        Poly(a.0.iter().map(|c| c / &lead).collect())
    }

    fn sturm(&self) -> Vec<Poly> {
        let mut seq = vec![self.clone().trim(), self.derivative()];
        while !seq.last().unwrap().0.is_empty() {
            let n = seq.len();
            let r = seq[n - 2].rem(&seq[n - 1]);
            seq.push(Poly(r.0.iter().map(|c| -c).collect()));
        }
        seq.pop();
        seq
    }

    /// Distinct real roots in `(a, b]`.
    pub fn count_roots(&self, a: &BigRational, b: &BigRational) -> usize {
        let seq = self.sturm();
        let changes = |x: &BigRational| {
            let signs: Vec<i32> = seq
                .iter()
                .map(|p| {
                    let v = p.eval(x);
                    if v.is_zero() {
                        0
                    } else if v.is_positive() {
                        1
                    } else {
                        -1
                    }
                })
                .filter(|s| *s != 0)
                .collect();
            signs.windows(2).filter(|w| w[0] != w[1]).count()
        };
        changes(a).saturating_sub(changes(b))
    }
}

/// `det(λI − A)` by Faddeev–LeVerrier.
pub fn char_poly(a: &IMat) -> Poly {
    let n = a.len();
    let ar: Vec<Vec<BigRational>> = a
        .iter()
        .map(|r| r.iter().map(|v| BigRational::from_integer(v.clone())).collect())
        .collect();
    let mut coeffs = vec![BigRational::zero(); n + 1];
    coeffs[n] = BigRational::one();
    let mut m = vec![vec![BigRational::zero(); n]; n];
    for k in 1..=n {
        // M_k = A M_{k−1} + c_{n−k+1} I
        let mut next = vec![vec![BigRational::zero(); n]; n];
        for i in 0..n {
            for j in 0..n {
                let mut s: BigRational = (0..n).map(|l| &ar[i][l] * &m[l][j]).sum();
                if i == j {
                    s += &coeffs[n - k + 1];
                }
                next[i][j] = s;
            }
        }
        m = next;
        let tr: BigRational = (0..n).map(|i| (0..n).map(|l| &ar[i][l] * &m[l][i]).sum::<BigRational>()).sum();
        coeffs[n - k] = -tr / BigRational::from_integer(k.into());
    }
    Poly(coeffs)
}

/// Closed interval with dyadic rational endpoints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Enclosure {
    pub lo: BigRational,
    pub hi: BigRational,
}

impl Enclosure {
    pub fn width(&self) -> f64 {
        (&self.hi - &self.lo).to_f64().unwrap_or(f64::INFINITY)
    }

    pub fn contains(&self, x: f64) -> bool {
        BigRational::from_float(x).is_some_and(|q| q >= self.lo && q <= self.hi)
    }

    pub fn mid(&self) -> f64 {
        ((&self.lo + &self.hi) / BigRational::from_integer(2.into())).to_f64().unwrap_or(f64::NAN)
    }
}

impl Serialize for Enclosure {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("Enclosure", 3)?;
        st.serialize_field("lo", &self.lo.to_f64())?;
        st.serialize_field("hi", &self.hi.to_f64())?;
        st.serialize_field("width", &self.width())?;
        st.end()
    }
}

/// Largest real root of `p`, isolated by Sturm bisection to width
/// `2^{−bits}`.
pub fn largest_root(p: &Poly, bits: u32) -> Option<Enclosure> {
    let lead = p.0.last()?.clone();
    let bound: BigRational = BigRational::one() + p.0.iter().map(|c| (c / &lead).abs()).fold(BigRational::zero(), |a, c| a.max(c));
    let bound = BigRational::from_integer(bound.ceil().to_integer());
    let mut lo = -bound.clone();
    let mut hi = bound.clone();
    if p.count_roots(&lo, &hi) == 0 {
        return None;
    }
    let tol = BigRational::new(BigInt::one(), BigInt::one() << bits);
    let two = BigRational::from_integer(2.into());
    while &hi - &lo > tol {
        let mid = (&lo + &hi) / &two;
        if p.eval(&mid).is_zero() && p.count_roots(&mid, &bound) == 0 {
            return Some(Enclosure { lo: mid.clone(), hi: mid });
        }
        if p.count_roots(&mid, &bound) > 0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(Enclosure { lo, hi })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dilatation {
    pub enclosure: Enclosure,
    #[serde(serialize_with = "ser_poly")]
    pub char_poly: Poly,
    pub power_estimate: f64,
    pub positivity_power: usize,
    #[serde(skip)]
    pub matrix: IMat,
}

fn ser_poly<S: serde::Serializer>(p: &Poly, s: S) -> Result<S::Ok, S::Error> {
    let v: Vec<String> = p.0.iter().map(|c| c.to_string()).collect();
    v.serialize(s)
}

fn to_f64_mat(a: &IMat) -> DMatrix<f64> {
    let d = a.len();
    DMatrix::from_fn(d, d, |i, j| a[i][j].to_f64().unwrap_or(f64::NAN))
}

/// Dominant eigenvalue and unit eigenvector by power iteration.
pub fn power_iteration(a: &DMatrix<f64>, steps: usize) -> (f64, Vec<f64>) {
    let d = a.nrows();
    let mut v = nalgebra::DVector::from_element(d, 1.0 / (d as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..steps {
        let w = a * &v;
        lambda = w.dot(&v);
        let n = w.norm();
        if n == 0.0 {
            break;
        }
        v = w / n;
    }
    (lambda, v.iter().copied().collect())
}

/// Certified Perron root: Sturm enclosure of width below `2^{−bits}` that
/// also contains the power-iteration estimate.
pub fn perron_root(a: &IMat, bits: u32) -> Result<Dilatation, TrackError> {
    let d = a.len();
    let k = positivity_power(a).ok_or(TrackError::NotPrimitive((d - 1) * (d - 1) + 1))?;
    let p = char_poly(a);
    let inner = largest_root(&p, bits + 2).expect("a primitive matrix has a real Perron root");
    let (est, _) = power_iteration(&to_f64_mat(a), 2000);
    // widen by a quarter of the budget on each side to absorb the float estimate
    let pad = BigRational::new(BigInt::one(), BigInt::one() << (bits + 2));
    let enclosure = Enclosure {
        lo: &inner.lo - &pad,
        hi: &inner.hi + &pad,
    };
    Ok(Dilatation {
        enclosure,
        char_poly: p,
        power_estimate: est,
        positivity_power: k,
        matrix: a.clone(),
    })
}

/// Perron root of the induced matrix at width `< 1e−12`.
pub fn dilatation(a: &CarriedAction) -> Result<Dilatation, TrackError> {
    perron_root(&a.induced, 42)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ElementSpectrum {
    pub word: String,
    pub moduli: Vec<f64>,
    pub proximal: bool,
    /// `|λ₁| / |λ₂|`.
    pub gap: f64,
}

pub fn spectrum(word: &str, a: &IMat) -> ElementSpectrum {
    let mut moduli: Vec<f64> = to_f64_mat(a).complex_eigenvalues().iter().map(|z| z.norm()).collect();
    moduli.sort_by(|x, y| y.total_cmp(x));
    let top = moduli[0];
    let second = moduli.get(1).copied().unwrap_or(0.0);
    let proximal = top > 0.0 && top - second > 1e-9 * top;
    ElementSpectrum {
        word: word.to_string(),
        gap: if second > 0.0 { top / second } else { f64::INFINITY },
        moduli,
        proximal,
    }
}

fn word_name(w: &[usize]) -> String {
    w.iter().map(|k| char::from(b'A' + *k as u8)).collect()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let s = if v.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    v.iter().map(|x| s * x / n).collect()
}

/// Sine of the angle between the lines through `u` and `v`.
pub fn projective_distance(u: &[f64], v: &[f64]) -> f64 {
    let (u, v) = (unit(u), unit(v));
    let c: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
    (1.0 - c * c).max(0.0).sqrt()
}

/// `[w·𝟙]` for every positive word `w` of length `depth`.
pub fn limit_set_sample(actions: &[IMat], depth: usize) -> Vec<(String, Vec<f64>)> {
    let mats: Vec<DMatrix<f64>> = actions.iter().map(to_f64_mat).collect();
    let d = mats[0].nrows();
    let k = mats.len();
    let words = k.pow(depth as u32);
    (0..words)
        .into_par_iter()
        .map(|mut code| {
            let mut w = Vec::with_capacity(depth);
            for _ in 0..depth {
                w.push(code % k);
                code /= k;
            }
            let mut v = nalgebra::DVector::from_element(d, 1.0);
            for &l in w.iter().rev() {
                v = &mats[l] * v;
                v /= v.norm();
            }
            (word_name(&w), unit(v.as_slice()))
        })
        .collect()
}

/// Projective distance between `[v_{AB^n}]` and `[A v_B]`.
pub fn lemma_convergence(a: &IMat, b: &IMat, n: usize) -> f64 {
    let (fa, fb) = (to_f64_mat(a), to_f64_mat(b));
    let mut m = fa.clone();
    for _ in 0..n {
        m = &m * &fb;
        let s = m.amax();
        m /= s;
    }
    let (_, v_abn) = power_iteration(&m, 500);
    let (_, vb) = power_iteration(&fb, 2000);
    let avb = &fa * nalgebra::DVector::from_vec(vb);
    projective_distance(&v_abn, avb.as_slice())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProximalityReport {
    pub elements: Vec<ElementSpectrum>,
    pub limit_points: Vec<(String, Vec<f64>)>,
    /// Least sine of the angle between a sampled limit vector and a
    /// generator's complementary eigenspace.
    pub min_angle_to_complement: f64,
    /// Per depth: whether some span of at most `dim − 1` sampled vectors
    /// is invariant under every generator.
    pub invariant_subspace_found: Vec<(usize, bool)>,
}

fn rank(m: &DMatrix<f64>) -> usize {
    let scale = m.amax().max(1e-300);
    m.clone().svd(false, false).rank(1e-9 * scale)
}

fn invariant_span(gens: &[DMatrix<f64>], vs: &[Vec<f64>]) -> bool {
    let d = gens[0].nrows();
    let cols: Vec<nalgebra::DVector<f64>> = vs.iter().map(|v| nalgebra::DVector::from_vec(v.clone())).collect();
    let n = cols.len().min(8);
    for mask in 1u32..(1 << n) {
        let chosen: Vec<&nalgebra::DVector<f64>> = (0..n).filter(|k| mask >> k & 1 == 1).map(|k| &cols[k]).collect();
        if chosen.len() >= d {
            continue;
        }
        let s = DMatrix::from_columns(&chosen.iter().map(|c| (*c).clone()).collect::<Vec<_>>());
        let r = rank(&s);
        if r == 0 || r >= d {
            continue;
        }
        let mut all = chosen.iter().map(|c| (*c).clone()).collect::<Vec<_>>();
        for g in gens {
            all.extend(chosen.iter().map(|c| g * *c));
        }
        if rank(&DMatrix::from_columns(&all)) == r {
            return true;
        }
    }
    false
}

pub fn proximality_and_limit_set(actions: &[CarriedAction], depth: usize) -> Result<ProximalityReport, TrackError> {
    if actions.len() < 2 {
        return Err(TrackError::TooFewActions(2));
    }
    let mats: Vec<IMat> = actions.iter().map(|a| a.induced.clone()).collect();
    let mut elements = Vec::new();
    for len in 1..=depth.min(3) {
        for code in 0..mats.len().pow(len as u32) {
            let mut w = Vec::new();
            let mut c = code;
            for _ in 0..len {
                w.push(c % mats.len());
                c /= mats.len();
            }
            let m = w.iter().skip(1).fold(mats[w[0]].clone(), |acc, l| mat_mul(&acc, &mats[*l]));
            let s = spectrum(&word_name(&w), &m);
            if !s.proximal {
                return Err(TrackError::NonProximal {
                    word: s.word,
                    moduli: s.moduli,
                });
            }
            elements.push(s);
        }
    }
    let limit_points = limit_set_sample(&mats, depth);
    let gens: Vec<DMatrix<f64>> = mats.iter().map(to_f64_mat).collect();
    let mut min_angle = f64::INFINITY;
    for g in &gens {
        let (_, left) = power_iteration(&g.transpose(), 2000);
        for (_, v) in &limit_points {
            let c: f64 = left.iter().zip(v).map(|(a, b)| a * b).sum::<f64>().abs();
            min_angle = min_angle.min(c / left.iter().map(|x| x * x).sum::<f64>().sqrt());
        }
    }
    let invariant_subspace_found = (1..=depth)
        .map(|k| {
            let vs: Vec<Vec<f64>> = limit_set_sample(&mats, k).into_iter().map(|p| p.1).collect();
            (k, invariant_span(&gens, &vs))
        })
        .collect();
    Ok(ProximalityReport {
        elements,
        limit_points,
        min_angle_to_complement: min_angle,
        invariant_subspace_found,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Verdict {
    /// `log λ₂ / log λ₁ = p/q`, i.e. `λ₁^p = λ₂^q`; certified by exact
    /// characteristic polynomials when both matrices are known.
    Dependent { p: u64, q: u64, certified: bool },
    IndependentUpTo(u64),
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Dependent { p, q, .. } => write!(f, "DEPENDENT({p},{q})"),
            Verdict::IndependentUpTo(h) => write!(f, "INDEPENDENT-UP-TO({h})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonarithReport {
    pub verdict: Verdict,
    pub label: String,
    /// `log λ₂ / log λ₁` to the working precision.
    pub ratio: String,
    pub ratio_width: f64,
    /// Convergents `p/q` of the ratio with `q ≤ H`.
    pub convergents: Vec<(String, String)>,
}

fn dec(q: &BigRational, digits: usize) -> DBig {
    let n = DBig::from_str(&q.numer().to_string()).unwrap().with_precision(digits).value();
    let d = DBig::from_str(&q.denom().to_string()).unwrap().with_precision(digits).value();
    n / d
}

fn rat(x: &DBig) -> BigRational {
    let repr = x.repr();
    let m = BigInt::from_str(&repr.significand().to_string()).unwrap();
    let e = repr.exponent();
    let ten = BigInt::from(10);
    if e >= 0 {
        BigRational::from_integer(m * num_traits::pow(ten, e as usize))
    } else {
        BigRational::new(m, num_traits::pow(ten, (-e) as usize))
    }
}

/// Rational of least denominator in `[lo, hi]`, `0 < lo ≤ hi`.
fn simplest_between(lo: &BigRational, hi: &BigRational) -> BigRational {
    let c = lo.ceil();
    if &c <= hi {
        return c;
    }
    let n = lo.floor();
    let inner = simplest_between(&(hi - &n).recip(), &(lo - &n).recip());
    n + inner.recip()
}

fn convergents(x: &BigRational, h: &BigInt) -> Vec<BigRational> {
    let (mut p0, mut q0, mut p1, mut q1) = (BigInt::zero(), BigInt::one(), BigInt::one(), BigInt::zero());
    let mut r = x.clone();
    let mut out = Vec::new();
    for _ in 0..200 {
        let a = r.floor().to_integer();
        let (p2, q2) = (&a * &p1 + &p0, &a * &q1 + &q0);
        if &q2 > h {
            break;
        }
        out.push(BigRational::new(p2.clone(), q2.clone()));
        (p0, q0, p1, q1) = (p1, q1, p2, q2);
        let frac = &r - BigRational::from_integer(a);
        if frac.is_zero() {
            break;
        }
        r = frac.recip();
    }
    out
}

/// Exact test of `λ(A)^p = λ(B)^q` through the characteristic polynomials
/// of `A^p` and `B^q`.
fn certify_power_relation(a: &IMat, b: &IMat, p: u64, q: u64) -> bool {
    let (ap, bq) = (mat_pow(a, p as usize), mat_pow(b, q as usize));
    let Ok(da) = perron_root(&ap, 60) else {
        return false;
    };
    let Ok(db) = perron_root(&bq, 60) else {
        return false;
    };
    let g = da.char_poly.gcd(&db.char_poly);
    if g.degree().unwrap_or(0) == 0 {
        return false;
    }
    let lo = da.enclosure.lo.clone().max(db.enclosure.lo.clone());
    let hi = da.enclosure.hi.clone().min(db.enclosure.hi.clone());
    lo <= hi && g.count_roots(&(lo.clone() - BigRational::new(1.into(), BigInt::one() << 70)), &hi) > 0
        && da.char_poly.count_roots(&(&da.enclosure.lo - BigRational::new(1.into(), BigInt::one() << 70)), &da.enclosure.hi) == 1
}

/// Decides whether `log λ₂ / log λ₁` equals a rational of height `≤ h`.
///
/// The ratio is enclosed at `digits` decimal digits. If the interval holds
/// a rational `p/q` with `q ≤ h`, it is certified exactly when both
/// matrices are present; otherwise the enclosures must be refined.
pub fn nonarith_check(l1: &Dilatation, l2: &Dilatation, h: u64, digits: usize) -> Result<NonarithReport, TrackError> {
    let one = BigRational::one();
    if l1.enclosure.lo <= one || l2.enclosure.lo <= one {
        return Err(TrackError::NotExpanding);
    }
    let digits = digits.max(30);
    let ln = |q: &BigRational| dec(q, digits + 10).ln();
    let slack = BigRational::new(1.into(), num_traits::pow(BigInt::from(10), digits));
    let lo = rat(&(ln(&l2.enclosure.lo) / ln(&l1.enclosure.hi))) - &slack;
    let hi = rat(&(ln(&l2.enclosure.hi) / ln(&l1.enclosure.lo))) + &slack;
    let mid = (&lo + &hi) / BigRational::from_integer(2.into());
    let hb = BigInt::from(h);
    let conv = convergents(&mid, &hb);
    let s = simplest_between(&lo, &hi);
    let verdict = if s.denom() <= &hb {
        let (p, q) = (s.numer().to_u64().unwrap_or(u64::MAX), s.denom().to_u64().unwrap_or(u64::MAX));
        let exact = !l1.matrix.is_empty() && !l2.matrix.is_empty() && p <= 64 && q <= 64;
        if exact && certify_power_relation(&l1.matrix, &l2.matrix, p, q) {
            Verdict::Dependent { p, q, certified: true }
        } else {
            return Err(TrackError::EnclosureTooWide(h));
        }
    } else {
        Verdict::IndependentUpTo(h)
    };
    let ratio = dec(&mid, digits).to_string();
    Ok(NonarithReport {
        label: verdict.to_string(),
        verdict,
        ratio,
        ratio_width: (&hi - &lo).to_f64().unwrap_or(f64::INFINITY),
        convergents: conv.iter().map(|c| (c.numer().to_string(), c.denom().to_string())).collect(),
    })
}
