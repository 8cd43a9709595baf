//! Ping-pong Schottky subgroups of `SL(2,ℤ)`: certificates, orbit balls,
//! conjugacy classes and growth exponents.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::hyperbolic::{distance, translation_length_from_trace, MappingClass, TeichPoint};

pub const DEFAULT_BUDGET: u64 = 100_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroupError {
    #[error("generator {0} is not hyperbolic")]
    NotHyperbolic(usize),
    #[error("ping-pong arcs of {0} and {1} overlap")]
    Overlap(Letter, Letter),
    #[error("generator {0} does not map the complement of its repelling arc into its attracting arc")]
    NotNested(usize),
    #[error("no generators")]
    Empty,
    #[error("budget of {budget} nodes exceeded after {visited} visits ({found} elements found)")]
    BudgetExceeded { budget: u64, visited: u64, found: usize },
    #[error("ladder has {0} rungs; at least 4 are needed")]
    InsufficientLadder(usize),
    #[error("counts vanish on the fitted part of the ladder")]
    EmptyCounts,
    #[error("matrix entries overflowed 128-bit arithmetic")]
    Overflow,
    #[error("no sign change of the Cauchy-increment balance in [{0}, {1}]")]
    NoAbscissa(f64, f64),
}

/// Generator `gen` or its inverse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Letter {
    pub gen: usize,
    pub inverse: bool,
}

impl Letter {
    pub fn code(&self) -> usize {
        2 * self.gen + self.inverse as usize
    }

    pub fn from_code(code: usize) -> Self {
        Letter {
            gen: code / 2,
            inverse: code % 2 == 1,
        }
    }

    pub fn inv(&self) -> Letter {
        Letter {
            gen: self.gen,
            inverse: !self.inverse,
        }
    }
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = (b'a' + self.gen as u8) as char;
        if self.inverse {
            write!(f, "{}", c.to_ascii_uppercase())
        } else {
            write!(f, "{c}")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Word {
    pub letters: Vec<Letter>,
}

impl Word {
    pub fn identity() -> Self {
        Word { letters: vec![] }
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn is_reduced(&self) -> bool {
        self.letters.windows(2).all(|w| w[0] != w[1].inv())
    }

    pub fn is_cyclically_reduced(&self) -> bool {
        self.is_reduced()
            && (self.letters.len() < 2 || self.letters[0] != self.letters[self.letters.len() - 1].inv())
    }

    pub fn inverse(&self) -> Word {
        Word {
            letters: self.letters.iter().rev().map(|l| l.inv()).collect(),
        }
    }

    /// Lexicographically least cyclic rotation.
    pub fn min_rotation(&self) -> Word {
        let n = self.letters.len();
        (0..n.max(1))
            .map(|k| {
                let mut v = self.letters[k.min(n)..].to_vec();
                v.extend_from_slice(&self.letters[..k.min(n)]);
                v
            })
            .min()
            .map(|letters| Word { letters })
            .unwrap_or_else(Word::identity)
    }

    /// Shortest period `p` with `w = u^(n/p)`.
    pub fn period(&self) -> usize {
        let n = self.letters.len();
        (1..=n)
            .find(|&p| n % p == 0 && (p..n).all(|i| self.letters[i] == self.letters[i - p]))
            .unwrap_or(n)
    }

    pub fn is_primitive(&self) -> bool {
        !self.letters.is_empty() && self.period() == self.letters.len()
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.letters.is_empty() {
            return write!(f, "1");
        }
        for l in &self.letters {
            write!(f, "{l}")?;
        }
        Ok(())
    }
}

/// Closed circular arc with exact rational endpoints; `None` is `∞`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RationalArc {
    #[serde(serialize_with = "ser_ext")]
    pub lo: Option<BigRational>,
    #[serde(serialize_with = "ser_ext")]
    pub hi: Option<BigRational>,
}

fn ser_ext<S: serde::Serializer>(v: &Option<BigRational>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        None => s.serialize_str("inf"),
        Some(q) => s.serialize_str(&q.to_string()),
    }
}

fn ext_key(p: &Option<BigRational>) -> (u8, BigRational) {
    match p {
        None => (1, BigRational::zero()),
        Some(q) => (0, q.clone()),
    }
}

/// Whether `b` lies on the closed counterclockwise arc from `a` to `c`.
fn cyclic_between(a: &Option<BigRational>, b: &Option<BigRational>, c: &Option<BigRational>) -> bool {
    let (ka, kb, kc) = (ext_key(a), ext_key(b), ext_key(c));
    match ka.cmp(&kc) {
        Ordering::Less => ka <= kb && kb <= kc,
        Ordering::Greater => kb >= ka || kb <= kc,
        Ordering::Equal => kb == ka,
    }
}

impl RationalArc {
    pub fn contains(&self, p: &Option<BigRational>) -> bool {
        cyclic_between(&self.lo, p, &self.hi)
    }

    pub fn contains_arc(&self, o: &RationalArc) -> bool {
        self.contains(&o.lo) && self.contains(&o.hi) && cyclic_between(&self.lo, &o.lo, &o.hi)
    }

    pub fn intersects(&self, o: &RationalArc) -> bool {
        self.contains(&o.lo) || self.contains(&o.hi) || o.contains(&self.lo) || o.contains(&self.hi)
    }

    pub fn complement(&self) -> RationalArc {
        RationalArc {
            lo: self.hi.clone(),
            hi: self.lo.clone(),
        }
    }

    pub fn image(&self, g: &MappingClass) -> RationalArc {
        RationalArc {
            lo: g.apply_boundary_exact(&self.lo),
            hi: g.apply_boundary_exact(&self.hi),
        }
    }

    pub fn to_boundary_arc(&self) -> crate::hyperbolic::BoundaryArc {
        use crate::hyperbolic::{BoundaryArc, BoundaryPoint};
        let f = |p: &Option<BigRational>| match p {
            None => BoundaryPoint::Infinity,
            Some(q) => BoundaryPoint::Finite(q.to_f64().unwrap_or(f64::NAN)),
        };
        BoundaryArc::new(f(&self.lo), f(&self.hi)).unwrap_or_else(|_| BoundaryArc::full())
    }
}

impl fmt::Display for RationalArc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = |p: &Option<BigRational>| p.as_ref().map_or("inf".to_string(), |q| q.to_string());
        write!(f, "[{}, {}]", s(&self.lo), s(&self.hi))
    }
}

/// Attracting and repelling arcs of one generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PingPongPair {
    pub generator: usize,
    pub attracting: RationalArc,
    pub repelling: RationalArc,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchottkyGroup {
    generators: Vec<MappingClass>,
    certificate: Vec<PingPongPair>,
    fast: Vec<[i128; 4]>,
}

type Mat = [i128; 4];

const IDENTITY: Mat = [1, 0, 0, 1];

fn mat_mul(m: &Mat, n: &Mat) -> Option<Mat> {
    let e = |p: i128, q: i128, r: i128, s: i128| p.checked_mul(q)?.checked_add(r.checked_mul(s)?);
    Some([
        e(m[0], n[0], m[1], n[2])?,
        e(m[0], n[1], m[1], n[3])?,
        e(m[2], n[0], m[3], n[2])?,
        e(m[2], n[1], m[3], n[3])?,
    ])
}

fn mat_inv(m: &Mat) -> Mat {
    [m[3], -m[1], -m[2], m[0]]
}

/// `d(x, γ·y)` from the integer entries of `γ`.
pub fn orbit_distance(m: &Mat, x: &TeichPoint, y: &TeichPoint) -> f64 {
    let [a, b, c, d] = m.map(|v| v as f64);
    let (yr, yi) = (y.re(), y.im());
    let den_r = c * yr + d;
    let den_i = c * yi;
    let den = den_r * den_r + den_i * den_i;
    let num_r = a * yr + b;
    let num_i = a * yi;
    let re = (num_r * den_r + num_i * den_i) / den;
    let im = yi / den;
    let dr = x.re() - re;
    let di = x.im() - im;
    let chord = (dr * dr + di * di).sqrt();
    (chord / (2.0 * (x.im() * im).sqrt())).asinh()
}

fn to_mat(g: &MappingClass) -> Option<Mat> {
    g.entries_i128()
}

/// Isometric-circle arcs: `g` maps the outside of `|cz + d| = 1` onto the
/// inside of `|cz − a| = 1`.
fn isometric_arcs(g: &MappingClass) -> Option<(RationalArc, RationalArc)> {
    let [a, _, c, d] = g.entries();
    if c.is_zero() {
        return None;
    }
    let r = |n: BigInt| Some(BigRational::new(n, c.clone()));
    let (lo_r, hi_r, lo_a, hi_a) = if c.is_positive() {
        (r(-d - 1), r(-d + 1), r(a - 1), r(a + 1))
    } else {
        (r(-d + 1), r(-d - 1), r(a + 1), r(a - 1))
    };
    Some((
        RationalArc { lo: lo_a, hi: hi_a },
        RationalArc { lo: lo_r, hi: hi_r },
    ))
}

/// Rational arc of the given half-width around the point nearest `p`.
fn rational_arc_around(p: f64, half: f64) -> Option<RationalArc> {
    let q = |v: f64| BigRational::from_float(v);
    Some(RationalArc {
        lo: Some(q(p - half)?),
        hi: Some(q(p + half)?),
    })
}

/// Fallback certificate: a small repelling arc around the repelling fixed
/// point, and its complement's image as the attracting arc.
fn shrunk_arcs(g: &MappingClass, half: f64) -> Option<(RationalArc, RationalArc)> {
    let m = crate::hyperbolic::mobius_f64(g.entries_f64());
    let (_, rep) = m.fixed_points();
    let rep = match rep {
        crate::hyperbolic::BoundaryPoint::Finite(v) => v,
        crate::hyperbolic::BoundaryPoint::Infinity => return None,
    };
    let repelling = rational_arc_around(rep, half)?;
    let attracting = repelling.complement().image(g);
    Some((attracting, repelling))
}

impl SchottkyGroup {
    /// Builds and checks a ping-pong certificate.
    pub fn verify(generators: Vec<MappingClass>) -> Result<Self, GroupError> {
        if generators.is_empty() {
            return Err(GroupError::Empty);
        }
        for (k, g) in generators.iter().enumerate() {
            if !g.is_hyperbolic() {
                return Err(GroupError::NotHyperbolic(k));
            }
        }
        let fast = generators
            .iter()
            .map(to_mat)
            .collect::<Option<Vec<_>>>()
            .ok_or(GroupError::Overflow)?;
        let mut last_err = GroupError::Empty;
        let mut candidates: Vec<Box<dyn Fn(&MappingClass) -> Option<(RationalArc, RationalArc)>>> =
            vec![Box::new(isometric_arcs)];
        for half in [0.1, 0.03, 0.01, 0.003, 0.001] {
            candidates.push(Box::new(move |g| shrunk_arcs(g, half)));
        }
        for make in &candidates {
            let arcs: Option<Vec<_>> = generators.iter().map(make).collect();
            let Some(arcs) = arcs else { continue };
            let certificate: Vec<PingPongPair> = arcs
                .into_iter()
                .enumerate()
                .map(|(k, (attracting, repelling))| PingPongPair {
                    generator: k,
                    attracting,
                    repelling,
                })
                .collect();
            match check_certificate(&generators, &certificate) {
                Ok(()) => {
                    return Ok(SchottkyGroup {
                        generators,
                        certificate,
                        fast,
                    })
                }
                Err(e) => last_err = e,
            }
        }
        Err(last_err)
    }

    pub fn generators(&self) -> &[MappingClass] {
        &self.generators
    }

    pub fn certificate(&self) -> &[PingPongPair] {
        &self.certificate
    }

    pub fn rank(&self) -> usize {
        self.generators.len()
    }

    /// Arc attached to a letter: the attracting arc of `g` for `g`, the
    /// repelling arc of `g` for `g⁻¹`.
    pub fn letter_arc(&self, l: Letter) -> &RationalArc {
        let p = &self.certificate[l.gen];
        if l.inverse {
            &p.repelling
        } else {
            &p.attracting
        }
    }

    pub fn letters(&self) -> Vec<Letter> {
        (0..2 * self.rank()).map(Letter::from_code).collect()
    }

    pub fn letter_matrix(&self, l: Letter) -> Mat {
        let m = self.fast[l.gen];
        if l.inverse {
            mat_inv(&m)
        } else {
            m
        }
    }

    pub fn word_matrix(&self, w: &Word) -> Result<Mat, GroupError> {
        w.letters.iter().try_fold(IDENTITY, |acc, &l| {
            mat_mul(&acc, &self.letter_matrix(l)).ok_or(GroupError::Overflow)
        })
    }

    pub fn word_element(&self, w: &Word) -> MappingClass {
        w.letters.iter().fold(MappingClass::identity(), |acc, l| {
            let g = &self.generators[l.gen];
            acc.mul(&if l.inverse { g.inverse() } else { g.clone() })
        })
    }

    /// All reduced words up to `max_len`, in canonical order.
    pub fn reduced_words(&self, max_len: usize) -> Vec<Word> {
        let mut out = vec![Word::identity()];
        let mut frontier = vec![Word::identity()];
        for _ in 0..max_len {
            let mut next = Vec::new();
            for w in &frontier {
                for l in self.letters() {
                    if w.letters.last().is_some_and(|last| *last == l.inv()) {
                        continue;
                    }
                    let mut v = w.clone();
                    v.letters.push(l);
                    next.push(v);
                }
            }
            out.extend(next.iter().cloned());
            frontier = next;
        }
        out
    }
}

fn check_certificate(gens: &[MappingClass], cert: &[PingPongPair]) -> Result<(), GroupError> {
    let arcs: Vec<(Letter, &RationalArc)> = cert
        .iter()
        .flat_map(|p| {
            [
                (Letter { gen: p.generator, inverse: false }, &p.attracting),
                (Letter { gen: p.generator, inverse: true }, &p.repelling),
            ]
        })
        .collect();
    for i in 0..arcs.len() {
        for j in i + 1..arcs.len() {
            if arcs[i].1.intersects(arcs[j].1) {
                return Err(GroupError::Overlap(arcs[i].0, arcs[j].0));
            }
        }
    }
    for (k, p) in cert.iter().enumerate() {
        let img = p.repelling.complement().image(&gens[k]);
        if !p.attracting.contains_arc(&img) {
            return Err(GroupError::NotNested(k));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BallElement {
    pub word: Word,
    pub distance: f64,
    #[serde(skip)]
    pub matrix: Mat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SearchStrategy {
    /// Depth-first word search, cutting subtrees by the quasi-geodesic bound.
    Pruned,
    /// Every reduced word up to a fixed length; no cuts.
    BruteForce { max_len: usize },
}

/// Constants of the lower bound `d(x, wuy) ≥ d(x, wy) + m·|u| − C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PruningBound {
    pub min_increment: f64,
    pub defect: f64,
}

impl PruningBound {
    /// Measured on all reduced words of length ≤ 4, then the defect is
    /// inflated by half.
    pub fn calibrate(g: &SchottkyGroup, x: &TeichPoint, y: &TeichPoint) -> Result<Self, GroupError> {
        let words = g.reduced_words(4);
        let mut dist = BTreeMap::new();
        for w in &words {
            dist.insert(w.clone(), orbit_distance(&g.word_matrix(w)?, x, y));
        }
        let mut m = f64::INFINITY;
        for w in words.iter().filter(|w| !w.is_empty()) {
            let parent = Word {
                letters: w.letters[..w.len() - 1].to_vec(),
            };
            m = m.min(dist[w] - dist[&parent]);
        }
        let m = m.max(0.0);
        let mut c: f64 = 0.0;
        for w in &words {
            for k in 0..w.len() {
                let prefix = Word {
                    letters: w.letters[..k].to_vec(),
                };
                let ext = (w.len() - k) as f64;
                c = c.max(dist[&prefix] + m * ext - dist[w]);
            }
        }
        Ok(PruningBound {
            min_increment: m,
            defect: 1.5 * c + 1e-9,
        })
    }

    fn cuts(&self, d: f64, radius: f64) -> bool {
        d + self.min_increment - self.defect > radius
    }
}

struct Search<'a> {
    g: &'a SchottkyGroup,
    x: &'a TeichPoint,
    y: &'a TeichPoint,
    radius: f64,
    bound: Option<PruningBound>,
    max_len: usize,
    budget: u64,
    visited: u64,
    out: Vec<BallElement>,
    overflow: bool,
}

impl Search<'_> {
    fn descend(&mut self, word: &mut Vec<Letter>, m: Mat) -> bool {
        self.visited += 1;
        if self.visited > self.budget {
            return false;
        }
        let d = orbit_distance(&m, self.x, self.y);
        if d <= self.radius {
            self.out.push(BallElement {
                word: Word { letters: word.clone() },
                distance: d,
                matrix: m,
            });
        }
        if word.len() >= self.max_len {
            return true;
        }
        if let Some(b) = self.bound {
            if b.cuts(d, self.radius) {
                return true;
            }
        }
        for code in 0..2 * self.g.rank() {
            let l = Letter::from_code(code);
            if word.last().is_some_and(|last| *last == l.inv()) {
                continue;
            }
            let Some(next) = mat_mul(&m, &self.g.letter_matrix(l)) else {
                self.overflow = true;
                return false;
            };
            word.push(l);
            let ok = self.descend(word, next);
            word.pop();
            if !ok {
                return false;
            }
        }
        true
    }
}

/// Words `γ` with `d(x, γy) ≤ R`, in canonical word order.
///
/// The search is split by first letter across workers; each worker gets the
/// full budget share `budget / (2·rank)`.
pub fn enumerate_ball(
    g: &SchottkyGroup,
    x: &TeichPoint,
    y: &TeichPoint,
    radius: f64,
    strategy: SearchStrategy,
    budget: u64,
) -> Result<Vec<BallElement>, GroupError> {
    let (bound, max_len) = match strategy {
        SearchStrategy::Pruned => (Some(PruningBound::calibrate(g, x, y)?), usize::MAX),
        SearchStrategy::BruteForce { max_len } => (None, max_len),
    };
    let mut out = Vec::new();
    let d0 = distance(x, y);
    if d0 <= radius {
        out.push(BallElement {
            word: Word::identity(),
            distance: d0,
            matrix: IDENTITY,
        });
    }
    if max_len == 0 {
        return Ok(out);
    }
    let share = (budget / (2 * g.rank() as u64)).max(1);
    let blocks: Vec<Result<Vec<BallElement>, GroupError>> = (0..2 * g.rank())
        .into_par_iter()
        .map(|code| {
            let l = Letter::from_code(code);
            let mut s = Search {
                g,
                x,
                y,
                radius,
                bound,
                max_len,
                budget: share,
                visited: 0,
                out: Vec::new(),
                overflow: false,
            };
            let ok = s.descend(&mut vec![l], g.letter_matrix(l));
            if s.overflow {
                Err(GroupError::Overflow)
            } else if !ok {
                Err(GroupError::BudgetExceeded {
                    budget,
                    visited: s.visited,
                    found: s.out.len(),
                })
            } else {
                Ok(s.out)
            }
        })
        .collect();
    for b in blocks {
        out.extend(b?);
    }
    out.sort_by(|a, b| a.word.cmp(&b.word));
    Ok(out)
}

/// Sorted orbit distances `d(x, γy) ≤ R` over `PSL(2,ℤ)`, by a sieve on
/// matrix entries.
///
/// With `x = h_x·i`, `y = h_y·i` the distance is `d(i, h_x⁻¹γh_y·i)`, so
/// `‖γ‖² ≤ ‖h_x‖²‖h_y‖²·2cosh(2R)` bounds the search.
pub fn lattice_distances(x: &TeichPoint, y: &TeichPoint, radius: f64, budget: u64) -> Result<Vec<f64>, GroupError> {
    let norm_sq = |p: &TeichPoint| (p.re() * p.re() + p.im() * p.im() + 1.0) / p.im();
    let bound = norm_sq(x) * norm_sq(y) * 2.0 * (2.0 * radius).cosh() * (1.0 + 1e-12);
    let amax = bound.sqrt().floor() as i64;
    let rows: Vec<Vec<f64>> = (0..=amax)
        .into_par_iter()
        .map(|a| {
            let mut out = Vec::new();
            let bmax = ((bound - (a * a) as f64).max(0.0)).sqrt().floor() as i64;
            for b in -bmax..=bmax {
                if a == 0 && b <= 0 {
                    continue;
                }
                let ee = a.extended_gcd(&b);
                if ee.gcd != 1 {
                    continue;
                }
                // a·d − b·c = 1 from a·x + b·y = 1: d = x, c = −y
                let (c0, d0) = (-ee.y, ee.x);
                let rest = bound - (a * a + b * b) as f64;
                let nrm = (a * a + b * b) as f64;
                let kstar = -((c0 * a + d0 * b) as f64) / nrm;
                let span = (rest / nrm).max(0.0).sqrt() + 1.0;
                let (klo, khi) = ((kstar - span).floor() as i64, (kstar + span).ceil() as i64);
                for k in klo..=khi {
                    let (c, d) = (c0 + k * a, d0 + k * b);
                    if ((c * c + d * d) as f64) > rest {
                        continue;
                    }
                    let m = [a as i128, b as i128, c as i128, d as i128];
                    let dist = orbit_distance(&m, x, y);
                    if dist <= radius {
                        out.push(dist);
                    }
                }
            }
            out
        })
        .collect();
    let total: usize = rows.iter().map(|r| r.len()).sum();
    if total as u64 > budget {
        return Err(GroupError::BudgetExceeded {
            budget,
            visited: total as u64,
            found: total,
        });
    }
    let mut all: Vec<f64> = rows.into_iter().flatten().collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(all)
}

/// `N(R_k)` for each rung.
pub fn ladder_counts(values: &[f64], ladder: &[f64]) -> Vec<u64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ladder
        .iter()
        .map(|r| sorted.partition_point(|d| *d <= *r) as u64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub points: usize,
}

/// Least squares with a 95% Student-t interval on the slope.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let (stderr, half) = if xs.len() > 2 {
        let rss: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| {
                let r = y - intercept - slope * x;
                r * r
            })
            .sum();
        let se = (rss / (n - 2.0) / sxx).sqrt();
        let t = StudentsT::new(0.0, 1.0, n - 2.0)
            .map(|d| d.inverse_cdf(0.975))
            .unwrap_or(f64::INFINITY);
        (se, t * se)
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    LinearFit {
        slope,
        intercept,
        stderr,
        ci_low: slope - half,
        ci_high: slope + half,
        points: xs.len(),
    }
}

/// Indices of the top half of a ladder.
pub fn top_half(len: usize) -> std::ops::Range<usize> {
    len / 2..len
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentEstimate {
    pub h: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub stderr: f64,
    pub ladder: Vec<f64>,
    pub counts: Vec<u64>,
}

/// Slope of `log N(R)` against `R` over the top half of the ladder.
pub fn fit_exponent(ladder: &[f64], counts: &[u64]) -> Result<ExponentEstimate, GroupError> {
    if ladder.len() < 4 {
        return Err(GroupError::InsufficientLadder(ladder.len()));
    }
    let idx = top_half(ladder.len());
    if counts[idx.clone()].iter().any(|c| *c == 0) {
        return Err(GroupError::EmptyCounts);
    }
    let xs: Vec<f64> = ladder[idx.clone()].to_vec();
    let ys: Vec<f64> = counts[idx].iter().map(|c| (*c as f64).ln()).collect();
    let fit = linear_fit(&xs, &ys);
    Ok(ExponentEstimate {
        h: fit.slope,
        ci_low: fit.ci_low,
        ci_high: fit.ci_high,
        stderr: fit.stderr,
        ladder: ladder.to_vec(),
        counts: counts.to_vec(),
    })
}

/// Orbit-growth exponent of a Schottky group from its ball counts.
pub fn critical_exponent(
    g: &SchottkyGroup,
    x: &TeichPoint,
    ladder: &[f64],
    budget: u64,
) -> Result<ExponentEstimate, GroupError> {
    if ladder.len() < 4 {
        return Err(GroupError::InsufficientLadder(ladder.len()));
    }
    let top = *ladder.last().unwrap();
    let ball = enumerate_ball(g, x, x, top, SearchStrategy::Pruned, budget)?;
    let mut d: Vec<f64> = ball.iter().map(|e| e.distance).collect();
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    fit_exponent(ladder, &ladder_counts(&d, ladder))
}

/// Exponent of the full lattice `PSL(2,ℤ)`, from the matrix sieve.
pub fn lattice_critical_exponent(x: &TeichPoint, ladder: &[f64], budget: u64) -> Result<ExponentEstimate, GroupError> {
    if ladder.len() < 4 {
        return Err(GroupError::InsufficientLadder(ladder.len()));
    }
    let d = lattice_distances(x, x, *ladder.last().unwrap(), budget)?;
    fit_exponent(ladder, &ladder_counts(&d, ladder))
}

/// `Σ_{d(x,γy) ≤ cutoff} exp(−s·d(x,γy))`.
pub fn poincare_series(distances: &[f64], s: f64, cutoff: f64) -> f64 {
    distances
        .iter()
        .filter(|d| **d <= cutoff)
        .map(|d| (-s * d).exp())
        .sum()
}

fn log_sum_exp(ds: &[f64], s: f64) -> f64 {
    if ds.is_empty() {
        return f64::NEG_INFINITY;
    }
    let m = ds.iter().map(|d| -s * d).fold(f64::NEG_INFINITY, f64::max);
    m + ds.iter().map(|d| (-s * d - m).exp()).sum::<f64>().ln()
}

/// Partial sums of the Poincaré series, computed from an orbit ball.
pub fn poincare_partial_sums(
    g: &SchottkyGroup,
    x: &TeichPoint,
    y: &TeichPoint,
    s: f64,
    cutoffs: &[f64],
    budget: u64,
) -> Result<Vec<f64>, GroupError> {
    let top = cutoffs.iter().cloned().fold(0.0, f64::max);
    let ball = enumerate_ball(g, x, y, top, SearchStrategy::Pruned, budget)?;
    let d: Vec<f64> = ball.iter().map(|e| e.distance).collect();
    Ok(cutoffs.iter().map(|c| poincare_series(&d, s, *c)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbscissaEstimate {
    pub s: f64,
    pub blocks: [f64; 3],
}

/// Abscissa of convergence from the Cauchy increments of the partial sums.
///
/// With `R₀ < R₁ < R₂` the lower, middle and top radii of the upper half of
/// the ladder, returns the `s` at which the increment over `(R₁, R₂]`
/// equals the increment over `(R₀, R₁]`: below it the increments grow with
/// the cutoff, above it they shrink.
pub fn poincare_abscissa(distances: &[f64], ladder: &[f64]) -> Result<AbscissaEstimate, GroupError> {
    if ladder.len() < 4 {
        return Err(GroupError::InsufficientLadder(ladder.len()));
    }
    let r2 = *ladder.last().unwrap();
    let r0 = ladder[top_half(ladder.len()).start.saturating_sub(1)];
    let r1 = 0.5 * (r0 + r2);
    let shell = |a: f64, b: f64| -> Vec<f64> { distances.iter().cloned().filter(|d| *d > a && *d <= b).collect() };
    let (lower, upper) = (shell(r0, r1), shell(r1, r2));
    // log of the upper increment over the lower, in log-sum-exp form
    let phi = |s: f64| log_sum_exp(&upper, s) - log_sum_exp(&lower, s);
    let (mut lo, mut hi) = (0.0, 8.0);
    let (flo, fhi) = (phi(lo), phi(hi));
    if !(flo.is_finite() && fhi.is_finite()) || flo < 0.0 || fhi > 0.0 {
        return Err(GroupError::NoAbscissa(lo, hi));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if phi(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(AbscissaEstimate {
        s: 0.5 * (lo + hi),
        blocks: [r0, r1, r2],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConjClass {
    pub word: Word,
    pub primitive: bool,
    pub translation_length: f64,
}

fn translation_length_of(m: &Mat) -> f64 {
    let tr = (m[0] + m[3]).unsigned_abs();
    if tr <= 2 {
        0.0
    } else {
        translation_length_from_trace(tr as f64)
    }
}

/// Offset `K` with `ℓ(w) ≥ d(x, wx) − K` on cyclically reduced words,
/// measured to length 4 and inflated by half.
fn axis_offset(g: &SchottkyGroup, x: &TeichPoint) -> Result<f64, GroupError> {
    let mut k: f64 = 0.0;
    for w in g.reduced_words(4) {
        if w.is_empty() || !w.is_cyclically_reduced() {
            continue;
        }
        let m = g.word_matrix(&w)?;
        k = k.max(orbit_distance(&m, x, x) - translation_length_of(&m));
    }
    Ok(1.5 * k + 1e-9)
}

fn collect_classes<I: IntoIterator<Item = (Word, Mat)>>(items: I, l_max: f64) -> Vec<ConjClass> {
    let mut seen = BTreeMap::new();
    for (w, m) in items {
        if w.is_empty() || !w.is_cyclically_reduced() {
            continue;
        }
        let l = translation_length_of(&m);
        if l > l_max {
            continue;
        }
        let rep = w.min_rotation();
        seen.entry(rep.clone()).or_insert(ConjClass {
            primitive: rep.is_primitive(),
            word: rep,
            translation_length: l,
        });
    }
    seen.into_values().collect()
}

/// One representative per conjugacy class with `ℓ ≤ L_max`, found through
/// the orbit ball of radius `L_max + K` at the first certificate point.
pub fn enumerate_conjugacy_classes(
    g: &SchottkyGroup,
    x: &TeichPoint,
    l_max: f64,
    budget: u64,
) -> Result<Vec<ConjClass>, GroupError> {
    let k = axis_offset(g, x)?;
    let ball = enumerate_ball(g, x, x, l_max + k, SearchStrategy::Pruned, budget)?;
    Ok(collect_classes(ball.into_iter().map(|e| (e.word, e.matrix)), l_max))
}

/// Every cyclically reduced word up to `max_len`, no geometric cut.
pub fn brute_force_classes(g: &SchottkyGroup, max_len: usize, l_max: f64) -> Result<Vec<ConjClass>, GroupError> {
    let words = g.reduced_words(max_len);
    let mut items = Vec::with_capacity(words.len());
    for w in words {
        let m = g.word_matrix(&w)?;
        items.push((w, m));
    }
    Ok(collect_classes(items, l_max))
}

/// `n(R)`: primitive classes with `ℓ ≤ R` at each rung.
pub fn primitive_counts(classes: &[ConjClass], ladder: &[f64]) -> Vec<u64> {
    let mut ls: Vec<f64> = classes
        .iter()
        .filter(|c| c.primitive)
        .map(|c| c.translation_length)
        .collect();
    ls.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ladder_counts(&ls, ladder)
}

/// Exponent from closed-geodesic counts: `hR·e^{−hR}·n(R) → 1` makes
/// `log(R·n(R))` affine in `R` with slope `h`; fitted over the top half.
pub fn geodesic_exponent(ladder: &[f64], counts: &[u64]) -> Result<ExponentEstimate, GroupError> {
    if ladder.len() < 4 {
        return Err(GroupError::InsufficientLadder(ladder.len()));
    }
    let idx = top_half(ladder.len());
    if counts[idx.clone()].iter().any(|c| *c == 0) {
        return Err(GroupError::EmptyCounts);
    }
    let xs: Vec<f64> = ladder[idx.clone()].to_vec();
    let ys: Vec<f64> = idx.map(|i| (ladder[i] * counts[i] as f64).ln()).collect();
    let fit = linear_fit(&xs, &ys);
    Ok(ExponentEstimate {
        h: fit.slope,
        ci_low: fit.ci_low,
        ci_high: fit.ci_high,
        stderr: fit.stderr,
        ladder: ladder.to_vec(),
        counts: counts.to_vec(),
    })
}

/// `⟨A³, B³⟩` with `A = [[2,1],[1,1]]`, `B = [[1,1],[1,2]]`.
pub fn standard_schottky() -> SchottkyGroup {
    let a = MappingClass::from_i64(2, 1, 1, 1).unwrap().pow(3);
    let b = MappingClass::from_i64(1, 1, 1, 2).unwrap().pow(3);
    SchottkyGroup::verify(vec![a, b]).expect("standard pair plays ping-pong")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mc(a: i64, b: i64, c: i64, d: i64) -> MappingClass {
        MappingClass::from_i64(a, b, c, d).unwrap()
    }

    #[test]
    fn standard_pair_certificate() {
        let g = standard_schottky();
        assert_eq!(g.certificate().len(), 2);
        let arcs: Vec<_> = g.letters().into_iter().map(|l| g.letter_arc(l).clone()).collect();
        for i in 0..4 {
            for j in i + 1..4 {
                assert!(!arcs[i].intersects(&arcs[j]));
            }
        }
    }

    #[test]
    fn ping_pong_failures() {
        let a = mc(2, 1, 1, 1);
        assert!(matches!(
            SchottkyGroup::verify(vec![a.clone(), a.pow(2)]),
            Err(GroupError::Overlap(..))
        ));
        assert!(matches!(
            SchottkyGroup::verify(vec![a.clone(), a.inverse()]),
            Err(GroupError::Overlap(..))
        ));
        assert_eq!(
            SchottkyGroup::verify(vec![a, mc(1, 1, 0, 1)]),
            Err(GroupError::NotHyperbolic(1))
        );
    }

    #[test]
    fn words() {
        let a = Letter { gen: 0, inverse: false };
        let b = Letter { gen: 1, inverse: false };
        let w = Word { letters: vec![b, a, b, a] };
        assert_eq!(w.period(), 2);
        assert!(!w.is_primitive());
        assert_eq!(w.min_rotation().letters, vec![a, b, a, b]);
        assert!(Word { letters: vec![a, a.inv()] }.is_reduced() == false);
        assert!(!Word { letters: vec![a, b, a.inv()] }.is_cyclically_reduced());
        assert_eq!(w.inverse().inverse(), w);
    }

    #[test]
    fn ball_radius_zero() {
        let g = standard_schottky();
        let b = enumerate_ball(&g, &TeichPoint::i(), &TeichPoint::i(), 0.0, SearchStrategy::Pruned, DEFAULT_BUDGET).unwrap();
        assert_eq!(b.len(), 1);
        assert!(b[0].word.is_empty());
    }

    #[test]
    fn budget_is_distinct_from_empty() {
        let g = standard_schottky();
        let r = enumerate_ball(&g, &TeichPoint::i(), &TeichPoint::i(), 30.0, SearchStrategy::Pruned, 100);
        assert!(matches!(r, Err(GroupError::BudgetExceeded { .. })));
    }

    #[test]
    fn linear_fit_exact_line() {
        let f = linear_fit(&[1.0, 2.0, 3.0, 4.0], &[3.0, 5.0, 7.0, 9.0]);
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12);
        assert!(f.stderr < 1e-6);
    }

    #[test]
    fn generator_classes() {
        let g = standard_schottky();
        let cls = enumerate_conjugacy_classes(&g, &TeichPoint::i(), 3.0, DEFAULT_BUDGET).unwrap();
        let expect = 3.0 * ((3.0 + 5f64.sqrt()) / 2.0).ln();
        assert_eq!(cls.len(), 4);
        for c in &cls {
            assert_eq!(c.word.len(), 1);
            assert!((c.translation_length - expect).abs() < 1e-12);
        }
        assert!(enumerate_conjugacy_classes(&g, &TeichPoint::i(), 2.0, DEFAULT_BUDGET)
            .unwrap()
            .is_empty());
    }
}
