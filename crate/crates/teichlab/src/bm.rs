//! Bowen–Margulis measure `e^{δρ_x(η,ζ)} dν_x(η) dν_x(ζ) dt` on geodesics.
//!
//! A geodesic is keyed by its endpoint pair `(η, ζ)` with time measured from
//! the point closest to the basepoint.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::group::{Letter, SchottkyGroup, Word};
use crate::hyperbolic::{
    boundary_from_visual, busemann_at, distance, gromov_product_at, mobius_f64, visual_angle, BoundaryArc, BoundaryPoint,
    Geodesic, GeometryError, Mobius, TeichPoint,
};
use crate::ps::{ArcMeasure, CylinderMeasure};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BmError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("cell ({0}, {1}) is masked")]
    Masked(usize, usize),
    #[error("box below the quadrature floor")]
    BoxTooSmall,
    #[error("no backward arc carries mass for both leaves")]
    NoOverlap,
    #[error("fine partition does not refine the grid")]
    BadRefinement,
    #[error("certificate arcs are not paired isometric circles")]
    DegenerateCertificate,
    #[error("observable has no mass")]
    EmptyObservable,
    #[error("sample budget {0} exceeded")]
    SampleBudget(usize),
}

/// Cell weights `ν(A)·ν(B)·exp(δ·ρ_x(mid A, mid B))` on one partition used
/// for rows and columns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BMGrid {
    pub arcs: Vec<BoundaryArc>,
    pub nu: Vec<f64>,
    pub basepoint: TeichPoint,
    pub delta: f64,
    weights: Vec<f64>,
    masked: Vec<bool>,
    /// `ν×ν` mass of masked cells.
    pub residual: f64,
}

fn closures_meet(a: &BoundaryArc, b: &BoundaryArc) -> bool {
    a.intersects(b) || a.contains(b.lo()) || a.contains(b.hi()) || b.contains(a.lo()) || b.contains(a.hi())
}

pub fn bm_grid(nu: &ArcMeasure, x: &TeichPoint, delta: f64) -> BMGrid {
    let arcs = nu.arcs().to_vec();
    let n = arcs.len();
    let mut weights = vec![0.0; n * n];
    let mut masked = vec![false; n * n];
    let mut residual = 0.0;
    for i in 0..n {
        for j in i..n {
            let m = nu.masses[i] * nu.masses[j];
            if i == j || closures_meet(&arcs[i], &arcs[j]) {
                masked[i * n + j] = true;
                masked[j * n + i] = true;
                residual += if i == j { m } else { 2.0 * m };
                continue;
            }
            if m == 0.0 {
                continue;
            }
            let rho = gromov_product_at(x, arcs[i].midpoint(), arcs[j].midpoint()).unwrap_or(f64::INFINITY);
            let w = m * (delta * rho).exp();
            weights[i * n + j] = w;
            weights[j * n + i] = w;
        }
    }
    BMGrid {
        arcs,
        nu: nu.masses.clone(),
        basepoint: *x,
        delta,
        weights,
        masked,
        residual,
    }
}

impl BMGrid {
    pub fn len(&self) -> usize {
        self.arcs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arcs.is_empty()
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.len() + col]
    }

    pub fn is_masked(&self, row: usize, col: usize) -> bool {
        self.masked[row * self.len() + col]
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Unmasked cells of positive weight.
    pub fn charged_cells(&self) -> Vec<(usize, usize)> {
        let n = self.len();
        (0..n * n)
            .filter(|k| !self.masked[*k] && self.weights[*k] > 0.0)
            .map(|k| (k / n, k % n))
            .collect()
    }

    pub fn locate(&self, p: BoundaryPoint) -> Option<usize> {
        let theta = p.angle();
        self.arcs.iter().position(|a| {
            let off = (theta - a.start_angle()).rem_euclid(2.0 * std::f64::consts::PI);
            off < a.angular_length()
        })
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["row_arc", "col_arc", "weight", "masked"])?;
        let n = self.len();
        for i in 0..n {
            for j in 0..n {
                wr.write_record([
                    i.to_string(),
                    j.to_string(),
                    format!("{:e}", self.weight(i, j)),
                    self.is_masked(i, j).to_string(),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// Arc pair times a time window; the representative geodesic joins the arc
/// midpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowBox {
    pub backward: BoundaryArc,
    pub forward: BoundaryArc,
    pub t0: f64,
    pub t1: f64,
    pub basepoint: TeichPoint,
}

impl FlowBox {
    pub fn new(backward: BoundaryArc, forward: BoundaryArc, t0: f64, t1: f64, x: &TeichPoint) -> Result<Self, BmError> {
        if !(t1 > t0) {
            return Err(BmError::BoxTooSmall);
        }
        if backward.midpoint().angular_gap(&forward.midpoint()) < 1e-12 {
            return Err(GeometryError::NotFilling.into());
        }
        Ok(Self {
            backward,
            forward,
            t0,
            t1,
            basepoint: *x,
        })
    }

    pub fn from_cell(grid: &BMGrid, row: usize, col: usize, t0: f64, t1: f64) -> Result<Self, BmError> {
        Self::new(grid.arcs[row], grid.arcs[col], t0, t1, &grid.basepoint)
    }

    pub fn representative(&self) -> Geodesic {
        Geodesic::new(self.backward.midpoint(), self.forward.midpoint(), &self.basepoint).expect("distinct midpoints")
    }

    pub fn reference_point(&self) -> TeichPoint {
        self.representative().point_at(0.0)
    }

    pub fn contains(&self, eta: BoundaryPoint, zeta: BoundaryPoint, t: f64) -> bool {
        self.backward.contains(eta) && self.forward.contains(zeta) && t >= self.t0 && t <= self.t1
    }

    pub fn shifted(&self, s: f64) -> FlowBox {
        FlowBox {
            t0: self.t0 + s,
            t1: self.t1 + s,
            ..*self
        }
    }
}

fn cell_of(grid: &BMGrid, b: &FlowBox) -> Result<(usize, usize), BmError> {
    let row = grid.arcs.iter().position(|a| *a == b.backward).ok_or(BmError::BadRefinement)?;
    let col = grid.arcs.iter().position(|a| *a == b.forward).ok_or(BmError::BadRefinement)?;
    if grid.is_masked(row, col) {
        return Err(BmError::Masked(row, col));
    }
    Ok((row, col))
}

/// Midpoints and masses of the fine arcs whose midpoints fall in `arc`.
fn children(fine: &ArcMeasure, arc: &BoundaryArc) -> Vec<(BoundaryPoint, f64)> {
    fine.arcs()
        .iter()
        .zip(&fine.masses)
        .filter(|(a, _)| arc.contains(a.midpoint()))
        .map(|(a, m)| (a.midpoint(), *m))
        .collect()
}

/// Relative deviation between the grid mass `w(A,B)·(t₁ − t₀)` of a
/// single-cell box and the iterated integral over the fine partition:
/// strong-unstable conditional `e^{δβ_ζ(x,p)} dν(ζ)`, then strong-stable
/// conditional `e^{δβ_η(x,p)} dν(η)`, then arclength with `t_nodes`
/// midpoint nodes.
pub fn horospherical_consistency(grid: &BMGrid, b: &FlowBox, fine: &ArcMeasure, t_nodes: usize) -> Result<f64, BmError> {
    let (row, col) = cell_of(grid, b)?;
    let coarse = grid.weight(row, col) * (b.t1 - b.t0);
    if coarse < 1e-300 || t_nodes == 0 {
        return Err(BmError::BoxTooSmall);
    }
    let x = grid.basepoint;
    let etas = children(fine, &b.backward);
    let zetas = children(fine, &b.forward);
    let ke: f64 = etas.iter().map(|e| e.1).sum();
    let kz: f64 = zetas.iter().map(|e| e.1).sum();
    let scale = grid.nu[row].max(grid.nu[col]);
    if (ke - grid.nu[row]).abs() > 1e-9 * scale || (kz - grid.nu[col]).abs() > 1e-9 * scale {
        return Err(BmError::BadRefinement);
    }
    let dt = (b.t1 - b.t0) / t_nodes as f64;
    let d = grid.delta;
    let mut total = 0.0;
    for k in 0..t_nodes {
        let t = b.t0 + (k as f64 + 0.5) * dt;
        let mut stable = 0.0;
        for (eta, me) in etas.iter().filter(|e| e.1 > 0.0) {
            let mut unstable = 0.0;
            for (zeta, mz) in zetas.iter().filter(|e| e.1 > 0.0) {
                let p = Geodesic::new(*eta, *zeta, &x)?.point_at(t);
                unstable += mz * (d * busemann_at(*zeta, &x, &p)).exp() * (d * busemann_at(*eta, &x, &p)).exp();
            }
            stable += me * unstable;
        }
        total += stable * dt;
    }
    Ok((coarse - total).abs() / total)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolonomyReport {
    pub max_relative_deviation: f64,
    pub per_arc: Vec<(usize, f64)>,
    /// `max |f(η)·f⁻¹(η) − 1|` over the quadrature nodes.
    pub round_trip: f64,
}

/// Point of the geodesic `(η, ζ)` on the horocycle at `η` through `p`.
fn along_horocycle(eta: BoundaryPoint, zeta: BoundaryPoint, p: &TeichPoint, x: &TeichPoint) -> Result<TeichPoint, BmError> {
    let g = Geodesic::new(eta, zeta, x)?;
    let t = busemann_at(eta, p, &g.point_at(0.0));
    Ok(g.point_at(t))
}

/// Pushes the weak-stable conditional `w(·, B₁)` of the leaf over column
/// `q1` to the leaf over `q2` along strong-unstable holonomy and compares
/// with `w(·, B₂)`, arc by arc over the rows.
///
/// The holonomy factor `exp(δ[β_{ζ₂}(x,p₂) − β_{ζ₁}(x,p₁)])`, with `p₂` on
/// the `η`-horocycle of `p₁`, is averaged over `nodes` points of each row.
pub fn holonomy_invariance(grid: &BMGrid, q1: usize, q2: usize, nodes: usize) -> Result<HolonomyReport, BmError> {
    let x = grid.basepoint;
    let (z1, z2) = (grid.arcs[q1].midpoint(), grid.arcs[q2].midpoint());
    let floor = 1e-4 * grid.total();
    let mut per_arc = Vec::new();
    let mut worst: f64 = 0.0;
    let mut round: f64 = 0.0;
    for row in 0..grid.len() {
        if grid.is_masked(row, q1) || grid.is_masked(row, q2) {
            continue;
        }
        let (src, dst) = (grid.weight(row, q1), grid.weight(row, q2));
        if src <= floor || dst <= floor {
            continue;
        }
        let mut sum = 0.0;
        for eta in node_points(&grid.arcs[row], nodes) {
            let p1 = Geodesic::new(eta, z1, &x)?.point_at(0.0);
            let p2 = along_horocycle(eta, z2, &p1, &x)?;
            let f = (grid.delta * (busemann_at(z2, &x, &p2) - busemann_at(z1, &x, &p1))).exp();
            let back = along_horocycle(eta, z1, &p2, &x)?;
            let fb = (grid.delta * (busemann_at(z1, &x, &back) - busemann_at(z2, &x, &p2))).exp();
            round = round.max((f * fb - 1.0).abs());
            sum += f;
        }
        let pushed = src * sum / nodes as f64;
        let dev = (pushed - dst).abs() / dst;
        worst = worst.max(dev);
        per_arc.push((row, dev));
    }
    if per_arc.is_empty() {
        return Err(BmError::NoOverlap);
    }
    Ok(HolonomyReport {
        max_relative_deviation: worst,
        per_arc,
        round_trip: round,
    })
}

fn node_points(arc: &BoundaryArc, n: usize) -> Vec<BoundaryPoint> {
    arc.subdivide(n).iter().map(|a| a.midpoint()).collect()
}

/// Relative change of a box's grid mass after flowing its points by `s` and
/// recovering `(η, ζ, t)` from the flowed points by visual angles.
pub fn flow_drift(grid: &BMGrid, b: &FlowBox, s: f64, samples: usize, seed: u64) -> Result<f64, BmError> {
    let (row, col) = cell_of(grid, b)?;
    let x = grid.basepoint;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = b.shifted(s);
    let mut recovered = 0.0;
    for _ in 0..samples {
        let eta = uniform_in(&b.backward, &mut rng);
        let zeta = uniform_in(&b.forward, &mut rng);
        let t = rng.gen_range(b.t0..b.t1);
        let p = Geodesic::new(eta, zeta, &x)?.point_at(t + s);
        let phi = visual_angle(&p, zeta);
        let (e2, z2) = (boundary_from_visual(&p, phi + std::f64::consts::PI), boundary_from_visual(&p, phi));
        let t2 = Geodesic::new(e2, z2, &x)?.time_of(&p);
        if let (Some(r), Some(c)) = (grid.locate(e2), grid.locate(z2)) {
            if target.contains(e2, z2, t2) && !grid.is_masked(r, c) {
                recovered += grid.weight(r, c);
            }
        }
    }
    let before = grid.weight(row, col);
    let after = recovered / samples as f64;
    Ok((after - before).abs() / before)
}

fn uniform_in<R: Rng>(arc: &BoundaryArc, rng: &mut R) -> BoundaryPoint {
    BoundaryPoint::from_angle(arc.start_angle() + rng.gen::<f64>() * arc.angular_length())
}

/// Region of the upper half-plane outside the half-discs over the
/// certificate arcs; a fundamental domain when each generator carries the
/// circle over its repelling arc onto the circle over its attracting arc.
#[derive(Debug, Clone, PartialEq)]
pub struct FordDomain {
    discs: Vec<(Letter, f64, f64)>,
    inverses: Vec<Mobius>,
}

impl FordDomain {
    pub fn new(g: &SchottkyGroup) -> Result<Self, BmError> {
        let mut discs = Vec::new();
        let mut inverses = Vec::new();
        for l in g.letters() {
            let arc = g.letter_arc(l);
            let back = g.letter_arc(l.inv());
            let el = g.word_element(&Word { letters: vec![l] });
            let (Some(lo), Some(hi)) = (arc.lo.clone(), arc.hi.clone()) else {
                return Err(BmError::DegenerateCertificate);
            };
            if lo >= hi {
                return Err(BmError::DegenerateCertificate);
            }
            let img = [el.apply_boundary_exact(&back.lo), el.apply_boundary_exact(&back.hi)];
            let ends = [Some(lo.clone()), Some(hi.clone())];
            if !(img == ends || img == [ends[1].clone(), ends[0].clone()]) {
                return Err(BmError::DegenerateCertificate);
            }
            let (lo, hi) = (rat_f64(&lo), rat_f64(&hi));
            discs.push((l, 0.5 * (lo + hi), 0.5 * (hi - lo)));
            inverses.push(mobius_f64(g.letter_matrix(l.inv()).map(|v| v as f64)));
        }
        Ok(Self { discs, inverses })
    }

    fn disc_of(&self, p: &TeichPoint) -> Option<usize> {
        self.discs
            .iter()
            .position(|(_, c, r)| (p.re() - c).powi(2) + p.im().powi(2) < r * r)
    }

    pub fn contains(&self, p: &TeichPoint) -> bool {
        self.disc_of(p).is_none()
    }

    /// `(γ, γ⁻¹·p)` with `γ⁻¹·p` in the domain.
    pub fn reduce(&self, p: &TeichPoint) -> (Word, TeichPoint) {
        let mut q = *p;
        let mut letters = Vec::new();
        for _ in 0..10_000 {
            match self.disc_of(&q) {
                None => break,
                Some(k) => {
                    letters.push(self.discs[k].0);
                    q = self.inverses[k].apply_point(&q);
                }
            }
        }
        (Word { letters }, q)
    }

    /// Time the geodesic `(η, ζ)` spends in the domain.
    pub fn dwell(&self, eta: BoundaryPoint, zeta: BoundaryPoint, x: &TeichPoint) -> Result<f64, BmError> {
        let geo = Geodesic::new(eta, zeta, x)?;
        let inside = |p: BoundaryPoint| self.discs.iter().position(|(_, c, r)| (p.value() - c).abs() < *r);
        let (Some(a), Some(b)) = (inside(eta), inside(zeta)) else {
            return Ok(f64::INFINITY);
        };
        if a == b {
            return Ok(0.0);
        }
        let outside = |t: f64, k: usize| {
            let p = geo.point_at(t);
            let (_, c, r) = self.discs[k];
            (p.re() - c).powi(2) + p.im().powi(2) >= r * r
        };
        // exit time from the backward disc and entry time into the forward one
        let exit = crossing(|t| outside(t, a), -60.0, 60.0);
        let entry = crossing(|t| !outside(t, b), -60.0, 60.0);
        Ok((entry - exit).max(0.0))
    }
}

fn rat_f64(q: &num_rational::BigRational) -> f64 {
    use num_traits::ToPrimitive;
    q.to_f64().unwrap_or(f64::NAN)
}

/// First `t` where a monotone predicate turns true, by bisection.
fn crossing(f: impl Fn(f64) -> bool, mut lo: f64, mut hi: f64) -> f64 {
    if f(lo) {
        return lo;
    }
    if !f(hi) {
        return hi;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if f(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Boundary sampler for `ν_x` on the limit set.
///
/// Depth-`k` cylinder masses come from a [`CylinderMeasure`]; inside a
/// cylinder `w`, the next `k` letters `c` are drawn with weight
/// `ν(c)·exp(δ·β_{ξ_c}(x, w⁻¹x))`, the transformation rule
/// `ν_x(w·E) = ∫_E exp(δ·β_η(x, w⁻¹x)) dν_x(η)` evaluated at the cylinder
/// centres `ξ_c`.
#[derive(Debug, Clone)]
pub struct LimitSampler {
    pub basepoint: TeichPoint,
    pub delta: f64,
    cylinders: Vec<(Word, f64, BoundaryPoint)>,
    letter_mobius: Vec<[f64; 4]>,
    blocks: usize,
    total: f64,
}

fn mat_mul(m: &[f64; 4], n: &[f64; 4]) -> [f64; 4] {
    let r = [
        m[0] * n[0] + m[1] * n[2],
        m[0] * n[1] + m[1] * n[3],
        m[2] * n[0] + m[3] * n[2],
        m[2] * n[1] + m[3] * n[3],
    ];
    let s = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    r.map(|v| v / s)
}

impl LimitSampler {
    /// Sampled points carry `depth·(blocks + 1)` letters.
    pub fn new(g: &SchottkyGroup, nu: &CylinderMeasure, blocks: usize) -> Self {
        let letter_mobius: Vec<[f64; 4]> = (0..2 * g.rank())
            .map(|c| g.letter_matrix(Letter::from_code(c)).map(|v| v as f64))
            .collect();
        let cylinders: Vec<(Word, f64, BoundaryPoint)> = nu
            .words
            .iter()
            .zip(&nu.masses)
            .zip(&nu.centres)
            .map(|((w, m), c)| (w.clone(), *m, *c))
            .collect();
        Self {
            basepoint: nu.basepoint,
            delta: nu.delta,
            total: nu.total(),
            cylinders,
            letter_mobius,
            blocks,
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.total
    }

    pub fn scaled(&self, k: f64) -> Self {
        let mut s = self.clone();
        for c in &mut s.cylinders {
            c.1 *= k;
        }
        s.total *= k;
        s
    }

    pub fn cylinder_masses(&self) -> Vec<(Word, f64)> {
        self.cylinders.iter().map(|c| (c.0.clone(), c.1)).collect()
    }

    fn pick<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = rng.gen::<f64>() * total;
        for (k, w) in weights.iter().enumerate() {
            if u < *w {
                return k;
            }
            u -= w;
        }
        weights.len() - 1
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> BoundaryPoint {
        let x = self.basepoint;
        let masses: Vec<f64> = self.cylinders.iter().map(|c| c.1).collect();
        let mut k = Self::pick(&masses, rng);
        let mut m = word_f64(&self.letter_mobius, &self.cylinders[k].0);
        let mut last = *self.cylinders[k].0.letters.last().unwrap();
        for _ in 0..self.blocks {
            let winv = mobius_f64(m).inverse();
            let back = winv.apply_point(&x);
            let weights: Vec<f64> = self
                .cylinders
                .iter()
                .map(|(w, mass, centre)| {
                    if w.letters[0] == last.inv() || *mass == 0.0 {
                        0.0
                    } else {
                        mass * (self.delta * busemann_at(*centre, &x, &back)).exp()
                    }
                })
                .collect();
            k = Self::pick(&weights, rng);
            m = mat_mul(&m, &word_f64(&self.letter_mobius, &self.cylinders[k].0));
            last = *self.cylinders[k].0.letters.last().unwrap();
        }
        let fix = mobius_f64(self.letter_mobius[last.code()]).fixed_points().0;
        mobius_f64(m).apply_boundary(fix)
    }
}

fn word_f64(letters: &[[f64; 4]], w: &Word) -> [f64; 4] {
    w.letters
        .iter()
        .fold([1.0, 0.0, 0.0, 1.0], |acc, l| mat_mul(&acc, &letters[l.code()]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MassEstimate {
    pub value: f64,
    pub stderr: f64,
    pub samples: usize,
}

const CHUNK: usize = 4096;

/// Runs `f` on `samples` draws split into fixed chunks, each with its own
/// ChaCha stream, and returns per-sample values in draw order.
fn sample_chunks<T: Send>(samples: usize, seed: u64, f: impl Fn(&mut ChaCha8Rng) -> T + Sync) -> Vec<T> {
    let chunks = samples.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let n = CHUNK.min(samples - c * CHUNK);
            (0..n).map(|_| f(&mut rng)).collect::<Vec<_>>()
        })
        .collect()
}

fn mean_err(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// `‖μ‖`: Monte-Carlo mass of the Ford fundamental domain, times the time
/// thickness convention (1 for the reported normalization).
pub fn bm_mass(
    sampler: &LimitSampler,
    ford: &FordDomain,
    thickness: f64,
    samples: usize,
    seed: u64,
) -> Result<MassEstimate, BmError> {
    let x = sampler.basepoint;
    let vals = sample_chunks(samples, seed, |rng| {
        let eta = sampler.sample(rng);
        let zeta = sampler.sample(rng);
        pair_weight(sampler, &x, eta, zeta) * ford.dwell(eta, zeta, &x).unwrap_or(0.0)
    });
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(BmError::DegenerateCertificate);
    }
    let (m, e) = mean_err(&vals);
    let k = sampler.total_mass().powi(2) * thickness;
    Ok(MassEstimate {
        value: m * k,
        stderr: e * k,
        samples,
    })
}

fn pair_weight(s: &LimitSampler, x: &TeichPoint, eta: BoundaryPoint, zeta: BoundaryPoint) -> f64 {
    match gromov_product_at(x, eta, zeta) {
        Ok(rho) => (s.delta * rho).exp(),
        Err(_) => 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrelationRow {
    pub t: f64,
    pub c: f64,
    pub product: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationTable {
    pub rows: Vec<CorrelationRow>,
    pub mass_a: MassEstimate,
    pub mass_b: MassEstimate,
    pub total: MassEstimate,
}

impl CorrelationTable {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "C(t)", "product", "stderr"])?;
        for r in &self.rows {
            wr.write_record([r.t.to_string(), format!("{:e}", r.c), format!("{:e}", r.product), format!("{:e}", r.stderr)])?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn window(boxes: &[FlowBox]) -> (f64, f64) {
    boxes
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x.t0), b.max(x.t1)))
}

/// Reduces the flowed vector to the Ford domain and reports its
/// coordinates there.
fn reduced_coords(
    ford: &FordDomain,
    g: &SchottkyGroup,
    x: &TeichPoint,
    eta: BoundaryPoint,
    zeta: BoundaryPoint,
    p: &TeichPoint,
) -> Option<(BoundaryPoint, BoundaryPoint, f64)> {
    let (w, q) = ford.reduce(p);
    if w.is_empty() {
        let t = Geodesic::new(eta, zeta, x).ok()?.time_of(p);
        return Some((eta, zeta, t));
    }
    let inv = mobius_f64(g.word_matrix(&w.inverse()).ok()?.map(|v| v as f64));
    let (e2, z2) = (inv.apply_boundary(eta), inv.apply_boundary(zeta));
    let t = Geodesic::new(e2, z2, x).ok()?.time_of(&q);
    Some((e2, z2, t))
}

struct FlowSample {
    eta: BoundaryPoint,
    zeta: BoundaryPoint,
    t: f64,
    weight: f64,
}

fn draw(
    sampler: &LimitSampler,
    ford: &FordDomain,
    boxes: &[FlowBox],
    rng: &mut ChaCha8Rng,
) -> FlowSample {
    let x = sampler.basepoint;
    let (lo, hi) = window(boxes);
    let eta = sampler.sample(rng);
    let zeta = sampler.sample(rng);
    let t = rng.gen_range(lo..hi);
    let inside = boxes.iter().any(|b| b.contains(eta, zeta, t))
        && Geodesic::new(eta, zeta, &x).map(|g| ford.contains(&g.point_at(t))).unwrap_or(false);
    let weight = if inside { pair_weight(sampler, &x, eta, zeta) * (hi - lo) } else { 0.0 };
    FlowSample { eta, zeta, t, weight }
}

/// `C(t) = μ(A ∩ φ₋ₜB)/‖μ‖` on the quotient, against `μ(A)μ(B)/‖μ‖²`.
///
/// Observables are the parts of the boxes inside the Ford domain. Points of
/// `A` are flowed in the cover and reduced back into the domain.
#[allow(clippy::too_many_arguments)]
pub fn mixing_correlation(
    g: &SchottkyGroup,
    sampler: &LimitSampler,
    ford: &FordDomain,
    obs_a: &[FlowBox],
    obs_b: &[FlowBox],
    t_grid: &[f64],
    samples: usize,
    seed: u64,
    budget: usize,
) -> Result<CorrelationTable, BmError> {
    if obs_a.is_empty() || obs_b.is_empty() {
        return Err(BmError::EmptyObservable);
    }
    if samples > budget {
        return Err(BmError::SampleBudget(budget));
    }
    let x = sampler.basepoint;
    let k = sampler.total_mass().powi(2);
    let total = bm_mass(sampler, ford, 1.0, samples, seed ^ 0x5eed_0001)?;
    let est = |v: &[f64]| {
        let (m, e) = mean_err(v);
        MassEstimate {
            value: m * k,
            stderr: e * k,
            samples,
        }
    };
    let b_vals = sample_chunks(samples, seed ^ 0x5eed_0002, |rng| draw(sampler, ford, obs_b, rng).weight);
    let mass_b = est(&b_vals);
    let rows: Vec<Vec<f64>> = sample_chunks(samples, seed, |rng| {
        let s = draw(sampler, ford, obs_a, rng);
        let mut out = vec![s.weight];
        for t in t_grid {
            let hit = s.weight > 0.0
                && Geodesic::new(s.eta, s.zeta, &x)
                    .ok()
                    .and_then(|geo| reduced_coords(ford, g, &x, s.eta, s.zeta, &geo.point_at(s.t + t)))
                    .is_some_and(|(e, z, tt)| obs_b.iter().any(|b| b.contains(e, z, tt)));
            out.push(if hit { s.weight } else { 0.0 });
        }
        out
    });
    let column = |j: usize| rows.iter().map(|r| r[j]).collect::<Vec<f64>>();
    let mass_a = est(&column(0));
    if mass_a.value <= 0.0 || mass_b.value <= 0.0 {
        return Err(BmError::EmptyObservable);
    }
    let product = mass_a.value * mass_b.value / total.value.powi(2);
    let table = t_grid
        .iter()
        .enumerate()
        .map(|(j, t)| {
            let m = est(&column(j + 1));
            CorrelationRow {
                t: *t,
                c: m.value / total.value,
                product,
                stderr: m.stderr / total.value,
            }
        })
        .collect();
    Ok(CorrelationTable {
        rows: table,
        mass_a,
        mass_b,
        total,
    })
}

/// Relative change of `μ(S)` when `S` is moved by a group element, both
/// masses estimated with the same draws over a common time window.
pub fn generator_invariance(
    g: &SchottkyGroup,
    sampler: &LimitSampler,
    b: &FlowBox,
    word: &Word,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64), BmError> {
    let x = sampler.basepoint;
    let ginv = mobius_f64(g.word_matrix(&word.inverse()).map_err(|_| BmError::EmptyObservable)?.map(|v| v as f64));
    // covers the box and its image under the generator
    let span = b.t0.abs().max(b.t1.abs()) + distance(&x, &ginv.apply_point(&x)) + 1.0;
    let vals = sample_chunks(samples, seed, |rng| {
        let eta = sampler.sample(rng);
        let zeta = sampler.sample(rng);
        let t = rng.gen_range(-span..span);
        let w = pair_weight(sampler, &x, eta, zeta) * 2.0 * span;
        let here = b.contains(eta, zeta, t);
        let moved = Geodesic::new(eta, zeta, &x)
            .ok()
            .and_then(|geo| {
                let p = ginv.apply_point(&geo.point_at(t));
                let (e2, z2) = (ginv.apply_boundary(eta), ginv.apply_boundary(zeta));
                let t2 = Geodesic::new(e2, z2, &x).ok()?.time_of(&p);
                Some(b.contains(e2, z2, t2))
            })
            .unwrap_or(false);
        (if here { w } else { 0.0 }, if moved { w } else { 0.0 })
    });
    let a: Vec<f64> = vals.iter().map(|v| v.0).collect();
    let m: Vec<f64> = vals.iter().map(|v| v.1).collect();
    let (ma, ea) = mean_err(&a);
    let (mm, em) = mean_err(&m);
    if ma <= 0.0 {
        return Err(BmError::EmptyObservable);
    }
    Ok(((mm - ma).abs() / ma, (ea.hypot(em)) / ma))
}
