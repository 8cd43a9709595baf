//! Patterson–Sullivan approximants `ν_{y,s}` and their arc discretization.

use std::f64::consts::PI;

use num_bigint::BigInt;
use serde::Serialize;
use thiserror::Error;

use crate::group::{enumerate_ball, orbit_distance, GroupError, Letter, SchottkyGroup, SearchStrategy, Word};
use crate::hyperbolic::{busemann_at, distance, pr, wrap_angle, BoundaryArc, BoundaryPoint, TeichPoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error("partition does not cover the circle exactly once (gap or overlap at arc {0})")]
    BadPartition(usize),
    #[error("every arc is below the mass floor")]
    AllBelowFloor,
    #[error("distance spectrum is empty")]
    EmptySpectrum,
    #[error("measures were built on different atom sets")]
    MismatchedAtoms,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Atom {
    pub word: Word,
    #[serde(skip)]
    pub matrix: [i128; 4],
    pub point: TeichPoint,
    /// `pr_y(γx)` from the observer `y`; `None` when the atom sits at `y`.
    pub direction: Option<BoundaryPoint>,
    /// `d(y, γx)`.
    pub distance: f64,
    pub weight: f64,
}

/// `f_s(x,x)⁻¹ Σ exp(−s·d(y, γx)) δ_{γx}` over a finite orbit ball.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomicMeasure {
    pub orbit_base: TeichPoint,
    pub observer: TeichPoint,
    pub exponent: f64,
    pub cutoff: f64,
    pub normalization: f64,
    pub atoms: Vec<Atom>,
    pub warnings: Vec<String>,
}

impl AtomicMeasure {
    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    /// Mass carried by atoms with `d(y, γx) < d`.
    pub fn mass_within(&self, d: f64) -> f64 {
        self.atoms.iter().filter(|a| a.distance < d).map(|a| a.weight).sum()
    }
}

fn atom_set(
    g: &SchottkyGroup,
    x: &TeichPoint,
    centre: &TeichPoint,
    cutoff: f64,
    budget: u64,
) -> Result<Vec<(Word, [i128; 4])>, GroupError> {
    Ok(enumerate_ball(g, centre, x, cutoff, SearchStrategy::Pruned, budget)?
        .into_iter()
        .map(|e| (e.word, e.matrix))
        .collect())
}

fn partial_sum(g: &SchottkyGroup, x: &TeichPoint, s: f64, cutoff: f64, budget: u64) -> Result<f64, GroupError> {
    Ok(enumerate_ball(g, x, x, cutoff, SearchStrategy::Pruned, budget)?
        .iter()
        .map(|e| (-s * e.distance).exp())
        .sum())
}

/// The approximant seen from `observer`, with atoms `γx` inside the ball of
/// radius `cutoff` about `centre`. Normalized by `f_s(x,x)` on the ball of
/// the same radius about `x`.
pub fn ps_measure(
    g: &SchottkyGroup,
    x: &TeichPoint,
    observer: &TeichPoint,
    centre: &TeichPoint,
    s: f64,
    cutoff: f64,
    budget: u64,
) -> Result<AtomicMeasure, MeasureError> {
    let norm = partial_sum(g, x, s, cutoff, budget)?;
    let atoms = atom_set(g, x, centre, cutoff, budget)?
        .into_iter()
        .map(|(word, m)| {
            let d = orbit_distance(&m, observer, x);
            let point = crate::hyperbolic::mobius_f64(m.map(|v| v as f64)).apply_point(x);
            Atom {
                direction: (d > 1e-12).then(|| pr(observer, &point)),
                word,
                matrix: m,
                point,
                distance: d,
                weight: (-s * d).exp() / norm,
            }
        })
        .collect();
    Ok(AtomicMeasure {
        orbit_base: *x,
        observer: *observer,
        exponent: s,
        cutoff,
        normalization: norm,
        atoms,
        warnings: vec![],
    })
}

/// `ν_{x,s}` on the ball of radius `cutoff` about `x`; total mass 1.
pub fn ps_approximant(
    g: &SchottkyGroup,
    x: &TeichPoint,
    s: f64,
    cutoff: f64,
    h_estimate: Option<f64>,
    budget: u64,
) -> Result<AtomicMeasure, MeasureError> {
    let mut m = ps_measure(g, x, x, x, s, cutoff, budget)?;
    if let Some(h) = h_estimate {
        if s <= h {
            m.warnings
                .push(format!("s = {s} is not above h = {h}: the series diverges and truncation dominates"));
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivarianceReport {
    pub atoms_matched: bool,
    /// Atoms whose integer weight expression `‖h_x⁻¹·g⁻¹γ·h_x‖` coincides
    /// exactly (checked on the integer matrices `g⁻¹γ` and `γ₀`).
    pub exact_matches: usize,
    pub max_weight_rel_diff: f64,
    pub max_direction_gap: f64,
}

fn reduce(mut letters: Vec<Letter>) -> Word {
    let mut out: Vec<Letter> = Vec::with_capacity(letters.len());
    for l in letters.drain(..) {
        if out.last().is_some_and(|last| *last == l.inv()) {
            out.pop();
        } else {
            out.push(l);
        }
    }
    Word { letters: out }
}

/// Compares `g★ν_{x,s}` with `ν_{gx,s}` atom by atom.
pub fn equivariance_check(g_word: &Word, group: &SchottkyGroup, nu_x: &AtomicMeasure, nu_gx: &AtomicMeasure) -> EquivarianceReport {
    let gm = group.word_matrix(g_word).expect("generator word fits");
    let gmob = crate::hyperbolic::mobius_f64(gm.map(|v| v as f64));
    let mut pushed: Vec<(Word, &Atom)> = nu_x
        .atoms
        .iter()
        .map(|a| {
            let mut l = g_word.letters.clone();
            l.extend_from_slice(&a.word.letters);
            (reduce(l), a)
        })
        .collect();
    pushed.sort_by(|a, b| a.0.cmp(&b.0));
    let mut target: Vec<&Atom> = nu_gx.atoms.iter().collect();
    target.sort_by(|a, b| a.word.cmp(&b.word));
    let matched = pushed.len() == target.len() && pushed.iter().zip(&target).all(|(p, t)| p.0 == t.word);
    let mut exact = 0;
    let mut rel: f64 = 0.0;
    let mut gap: f64 = 0.0;
    if matched {
        let ginv = [gm[3], -gm[1], -gm[2], gm[0]];
        for ((_, a), b) in pushed.iter().zip(&target) {
            let m = b.matrix;
            let back = [
                ginv[0] * m[0] + ginv[1] * m[2],
                ginv[0] * m[1] + ginv[1] * m[3],
                ginv[2] * m[0] + ginv[3] * m[2],
                ginv[2] * m[1] + ginv[3] * m[3],
            ];
            if back.iter().zip(a.matrix.iter()).all(|(p, q)| BigInt::from(*p) == BigInt::from(*q)) {
                exact += 1;
            }
            rel = rel.max((a.weight - b.weight).abs() / a.weight.max(b.weight));
            if let (Some(da), Some(db)) = (a.direction, b.direction) {
                gap = gap.max(gmob.apply_boundary(da).angular_gap(&db));
            }
        }
    }
    EquivarianceReport {
        atoms_matched: matched,
        exact_matches: exact,
        max_weight_rel_diff: rel,
        max_direction_gap: gap,
    }
}

/// Arcs covering the circle once, sorted by start angle; membership is
/// half-open, `[start, start + length)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArcPartition {
    arcs: Vec<BoundaryArc>,
}

impl ArcPartition {
    pub fn new(mut arcs: Vec<BoundaryArc>) -> Result<Self, MeasureError> {
        if arcs.len() == 1 && arcs[0].is_full() {
            return Ok(Self { arcs });
        }
        arcs.sort_by(|a, b| a.start_angle().partial_cmp(&b.start_angle()).unwrap());
        let total: f64 = arcs.iter().map(|a| a.angular_length()).sum();
        if (total - 2.0 * PI).abs() > 1e-9 {
            return Err(MeasureError::BadPartition(0));
        }
        for i in 0..arcs.len() {
            let next = &arcs[(i + 1) % arcs.len()];
            let end = arcs[i].start_angle() + arcs[i].angular_length();
            if wrap_angle(end - next.start_angle()).abs() > 1e-9 {
                return Err(MeasureError::BadPartition(i));
            }
        }
        Ok(Self { arcs })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            arcs: crate::hyperbolic::uniform_partition(n),
        }
    }

    pub fn single() -> Self {
        Self {
            arcs: vec![BoundaryArc::full()],
        }
    }

    pub fn arcs(&self) -> &[BoundaryArc] {
        &self.arcs
    }

    pub fn len(&self) -> usize {
        self.arcs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arcs.is_empty()
    }

    pub fn locate(&self, p: BoundaryPoint) -> usize {
        if self.arcs.len() == 1 {
            return 0;
        }
        let theta = p.angle();
        self.arcs
            .iter()
            .position(|a| {
                let off = (theta - a.start_angle()).rem_euclid(2.0 * PI);
                off < a.angular_length()
            })
            .unwrap_or_else(|| {
                // rounding at a shared endpoint: nearest start
                self.arcs
                    .iter()
                    .enumerate()
                    .min_by(|a, b| {
                        let da = wrap_angle(theta - a.1.start_angle()).abs();
                        let db = wrap_angle(theta - b.1.start_angle()).abs();
                        da.partial_cmp(&db).unwrap()
                    })
                    .map(|(i, _)| i)
                    .unwrap()
            })
    }

    /// Splits every arc in two; child `2i`, `2i+1` come from parent `i`.
    pub fn dyadic(&self) -> Self {
        let arcs = if self.arcs.len() == 1 && self.arcs[0].is_full() {
            vec![
                BoundaryArc::from_angles(-PI, PI),
                BoundaryArc::from_angles(0.0, PI),
            ]
        } else {
            self.arcs.iter().flat_map(|a| a.subdivide(2)).collect()
        };
        Self { arcs }
    }

    /// Depth-`k` ping-pong cylinders `l₁⋯l_{k−1}·D_{l_k}` together with the
    /// gaps between them.
    pub fn certificate(g: &SchottkyGroup, depth: usize) -> (Self, Vec<usize>) {
        let cylinders = certificate_cylinders(g, depth);
        let mut arcs: Vec<BoundaryArc> = cylinders.clone();
        arcs.sort_by(|a, b| a.start_angle().partial_cmp(&b.start_angle()).unwrap());
        let mut all = Vec::new();
        for i in 0..arcs.len() {
            let a = arcs[i];
            let next = arcs[(i + 1) % arcs.len()];
            all.push(a);
            let end = a.start_angle() + a.angular_length();
            let gap = (next.start_angle() - end).rem_euclid(2.0 * PI);
            if gap > 1e-12 && gap < 2.0 * PI - 1e-12 {
                all.push(BoundaryArc::from_angles(end, gap));
            }
        }
        let part = ArcPartition { arcs: all };
        let idx = cylinders
            .iter()
            .map(|c| {
                part.arcs
                    .iter()
                    .position(|a| a == c)
                    .expect("cylinder is a partition cell")
            })
            .collect();
        (part, idx)
    }
}

/// Arcs `w·D_l` for reduced words `wl` of length `depth`.
pub fn certificate_cylinders(g: &SchottkyGroup, depth: usize) -> Vec<BoundaryArc> {
    let mut out = Vec::new();
    for w in g.reduced_words(depth).into_iter().filter(|w| w.len() == depth) {
        let (last, prefix) = w.letters.split_last().unwrap();
        let base = g.letter_arc(*last).to_boundary_arc();
        let pm = g.word_matrix(&Word { letters: prefix.to_vec() }).unwrap();
        let mob = crate::hyperbolic::mobius_f64(pm.map(|v| v as f64));
        out.push(BoundaryArc::new(mob.apply_boundary(base.lo()), mob.apply_boundary(base.hi())).unwrap());
    }
    out
}

/// Point masses on the depth-`k` certificate cylinders, at the centres
/// `ξ_w = w·fix⁺(last letter)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CylinderMeasure {
    pub depth: usize,
    pub words: Vec<Word>,
    pub masses: Vec<f64>,
    pub centres: Vec<BoundaryPoint>,
    pub basepoint: TeichPoint,
    pub delta: f64,
    /// Growth factor of the last transfer step; 1 for a conformal density.
    pub eigenvalue: f64,
}

impl CylinderMeasure {
    /// Cylinder masses read off an approximant by word prefix.
    pub fn from_atoms(g: &SchottkyGroup, m: &AtomicMeasure, depth: usize) -> Self {
        let mut c = Self::uniform(g, &m.observer, m.exponent, depth);
        let index: std::collections::HashMap<&Word, usize> = c.words.iter().enumerate().map(|(k, w)| (w, k)).collect();
        let mut masses = vec![0.0; c.words.len()];
        for a in m.atoms.iter().filter(|a| a.word.len() >= depth) {
            let prefix = Word { letters: a.word.letters[..depth].to_vec() };
            masses[index[&prefix]] += a.weight;
        }
        c.masses = masses;
        c
    }

    fn uniform(g: &SchottkyGroup, x: &TeichPoint, delta: f64, depth: usize) -> Self {
        let words: Vec<Word> = g.reduced_words(depth).into_iter().filter(|w| w.len() == depth).collect();
        let centres = words
            .iter()
            .map(|w| {
                let last = *w.letters.last().unwrap();
                let fix = crate::hyperbolic::mobius_f64(g.letter_matrix(last).map(|v| v as f64)).fixed_points().0;
                word_mobius(g, w).apply_boundary(fix)
            })
            .collect();
        let n = words.len();
        Self {
            depth,
            masses: vec![1.0 / n as f64; n],
            words,
            centres,
            basepoint: *x,
            delta,
            eigenvalue: f64::NAN,
        }
    }

    pub fn total(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// One application of `ν ↦ Σ_l l★(e^{δβ(x, l⁻¹x)}·ν|_{Λ∖D_{l⁻¹}})`,
    /// with images aggregated to their depth-`k` prefixes.
    fn transfer(&self, g: &SchottkyGroup, index: &std::collections::HashMap<Word, usize>) -> Vec<f64> {
        let x = self.basepoint;
        let mut out = vec![0.0; self.masses.len()];
        for l in g.letters() {
            let back = crate::hyperbolic::mobius_f64(g.letter_matrix(l.inv()).map(|v| v as f64)).apply_point(&x);
            for (k, w) in self.words.iter().enumerate() {
                if w.letters[0] == l.inv() {
                    continue;
                }
                let mut p = vec![l];
                p.extend_from_slice(&w.letters[..self.depth - 1]);
                let factor = (self.delta * busemann_at(self.centres[k], &x, &back)).exp();
                out[index[&Word { letters: p }]] += self.masses[k] * factor;
            }
        }
        out
    }

    /// Power iteration of the transfer rule at fixed `δ`, normalized to
    /// total mass 1.
    pub fn iterate(mut self, g: &SchottkyGroup, steps: usize) -> Self {
        let index: std::collections::HashMap<Word, usize> =
            self.words.iter().cloned().enumerate().map(|(k, w)| (w, k)).collect();
        let t = self.total();
        self.masses.iter_mut().for_each(|m| *m /= t);
        for _ in 0..steps {
            let next = self.transfer(g, &index);
            let lambda: f64 = next.iter().sum();
            self.masses = next.into_iter().map(|m| m / lambda).collect();
            self.eigenvalue = lambda;
        }
        self
    }
}

fn word_mobius(g: &SchottkyGroup, w: &Word) -> crate::hyperbolic::Mobius {
    let m = w.letters.iter().fold([1.0, 0.0, 0.0, 1.0], |acc: [f64; 4], l| {
        let n = g.letter_matrix(*l).map(|v| v as f64);
        let r = [
            acc[0] * n[0] + acc[1] * n[2],
            acc[0] * n[1] + acc[1] * n[3],
            acc[2] * n[0] + acc[3] * n[2],
            acc[2] * n[1] + acc[3] * n[3],
        ];
        let s = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        r.map(|v| v / s)
    });
    crate::hyperbolic::mobius_f64(m)
}

/// The exponent at which the transfer rule has eigenvalue 1, by bisection
/// on `[lo, hi]`, with its fixed cylinder measure.
pub fn conformal_exponent(g: &SchottkyGroup, x: &TeichPoint, depth: usize, lo: f64, hi: f64) -> CylinderMeasure {
    let at = |d: f64| CylinderMeasure::uniform(g, x, d, depth).iterate(g, 60);
    let (mut a, mut b) = (lo, hi);
    for _ in 0..50 {
        let mid = 0.5 * (a + b);
        if at(mid).eigenvalue > 1.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    at(0.5 * (a + b))
}

/// Finite measure on a partition of the boundary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArcMeasure {
    pub partition: ArcPartition,
    pub masses: Vec<f64>,
    pub atom_counts: Vec<usize>,
    /// Mass of atoms dropped for being closer than the minimum distance.
    pub dropped_mass: f64,
}

impl ArcMeasure {
    pub fn total(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn arcs(&self) -> &[BoundaryArc] {
        self.partition.arcs()
    }

    pub fn scaled(&self, k: f64) -> ArcMeasure {
        ArcMeasure {
            masses: self.masses.iter().map(|m| m * k).collect(),
            ..self.clone()
        }
    }

    pub fn max_mass(&self) -> f64 {
        self.masses.iter().cloned().fold(0.0, f64::max)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["arc_lo", "arc_hi", "mass", "atom_count"])?;
        for ((a, m), c) in self.arcs().iter().zip(&self.masses).zip(&self.atom_counts) {
            wr.write_record([a.lo().to_string(), a.hi().to_string(), format!("{m:e}"), c.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

pub fn bin_to_arcs(m: &AtomicMeasure, partition: &ArcPartition, min_distance: f64) -> ArcMeasure {
    let mut masses = vec![0.0; partition.len()];
    let mut counts = vec![0; partition.len()];
    let mut dropped = 0.0;
    for a in &m.atoms {
        match a.direction {
            Some(p) if a.distance >= min_distance => {
                let k = partition.locate(p);
                masses[k] += a.weight;
                counts[k] += 1;
            }
            _ => dropped += a.weight,
        }
    }
    ArcMeasure {
        partition: partition.clone(),
        masses,
        atom_counts: counts,
        dropped_mass: dropped,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ConformalityMode {
    /// `β` of the arc midpoint.
    Midpoint,
    /// `d(x, z) − d(y, z)` of each atom `z`.
    ExactWeight,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConformalityReport {
    pub max_relative_deviation: f64,
    pub arcs_compared: usize,
    pub per_arc: Vec<(usize, f64)>,
}

/// Worst relative deviation of `ν_y(A)/ν_x(A)` from the conformal factor
/// `exp(s·β_A(x, y))` over arcs above the mass floor `10⁻⁴·‖ν_x‖`.
///
/// Both measures must be built on the same atom set. The arc of an atom is
/// read from `ν_x`; atoms at either observer are skipped.
pub fn conformality_check(
    nu_x: &AtomicMeasure,
    nu_y: &AtomicMeasure,
    partition: &ArcPartition,
    min_distance: f64,
    mode: ConformalityMode,
) -> Result<ConformalityReport, MeasureError> {
    if nu_x.atoms.len() != nu_y.atoms.len()
        || nu_x.atoms.iter().zip(&nu_y.atoms).any(|(a, b)| a.word != b.word)
    {
        return Err(MeasureError::MismatchedAtoms);
    }
    let s = nu_x.exponent;
    let (x, y) = (nu_x.observer, nu_y.observer);
    // atoms enter both sides or neither, filtered by their distance from x
    let n = partition.len();
    let (mut mx, mut my, mut predicted) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for (a, b) in nu_x.atoms.iter().zip(&nu_y.atoms) {
        let (Some(p), Some(_)) = (a.direction, b.direction) else {
            continue;
        };
        if a.distance < min_distance {
            continue;
        }
        let k = partition.locate(p);
        mx[k] += a.weight;
        my[k] += b.weight;
        if mode == ConformalityMode::ExactWeight {
            let beta = distance(&x, &a.point) - distance(&y, &a.point);
            predicted[k] += a.weight * (s * beta).exp();
        }
    }
    let floor = 1e-4 * mx.iter().sum::<f64>();
    let mut per_arc = Vec::new();
    let mut worst: f64 = 0.0;
    for (k, arc) in partition.arcs().iter().enumerate() {
        if mx[k] < floor || mx[k] == 0.0 {
            continue;
        }
        let expect = match mode {
            ConformalityMode::Midpoint => mx[k] * (s * busemann_at(arc.midpoint(), &x, &y)).exp(),
            ConformalityMode::ExactWeight => predicted[k],
        };
        let dev = (my[k] - expect).abs() / expect;
        worst = worst.max(dev);
        per_arc.push((k, dev));
    }
    if per_arc.is_empty() {
        return Err(MeasureError::AllBelowFloor);
    }
    Ok(ConformalityReport {
        max_relative_deviation: worst,
        arcs_compared: per_arc.len(),
        per_arc,
    })
}

/// Piecewise-exponential weight `h` on a unit grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SullivanWeight {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub slopes: Vec<f64>,
    pub power: f64,
    pub divergent_on_sample: bool,
}

impl SullivanWeight {
    pub fn eval(&self, t: f64) -> f64 {
        if t <= self.grid[0] {
            return self.values[0];
        }
        let k = self.grid.partition_point(|g| *g <= t).min(self.grid.len()) - 1;
        if k + 1 >= self.grid.len() {
            let last = self.grid.len() - 1;
            return self.values[last] * (self.slopes[last.saturating_sub(1)] * (t - self.grid[last])).exp();
        }
        self.values[k] * (self.slopes[k] * (t - self.grid[k])).exp()
    }

    /// Smallest grid point beyond which every slope is at most `eps`.
    pub fn threshold(&self, eps: f64) -> Option<f64> {
        let k = self.slopes.iter().rposition(|s| *s > eps).map_or(0, |k| k + 1);
        self.grid.get(k).copied()
    }

    /// `max h(t + u) / (e^{εu}·h(t))` over grid pairs with `t ≥ t₀`.
    pub fn slow_growth_audit(&self, eps: f64) -> (Option<f64>, f64) {
        let Some(t0) = self.threshold(eps) else {
            return (None, 0.0);
        };
        let mut worst: f64 = 0.0;
        for (i, t) in self.grid.iter().enumerate().filter(|(_, t)| **t >= t0) {
            for (j, v) in self.values.iter().enumerate().skip(i) {
                let u = self.grid[j] - t;
                worst = worst.max(v / ((eps * u).exp() * self.values[i]));
            }
        }
        (Some(t0), worst)
    }
}

/// Weighted sum `Σ h(d)·m·e^{−δd}` over spectrum entries with `d ≤ t`.
fn weighted_sum(spectrum: &[(f64, f64)], delta: f64, h: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    spectrum.iter()
        .filter(|(d, _)| *d > lo && *d <= hi)
        .map(|(d, m)| h(*d) * m * (-delta * d).exp())
        .sum()
}

/// Sample-scale divergence: the weighted increment over `(T/2, T]` is at
/// least three quarters of the increment over `(T/4, T/2]`.
pub fn divergent_on_sample(spectrum: &[(f64, f64)], delta: f64, h: &dyn Fn(f64) -> f64, range: f64) -> bool {
    let late = weighted_sum(spectrum, delta, h, range / 2.0, range);
    let early = weighted_sum(spectrum, delta, h, range / 4.0, range / 2.0);
    early > 0.0 && late >= 0.75 * early
}

/// A slowly growing `h` with `Σ h(d)·e^{−δd}` divergent on the sample.
///
/// Tries `h(t) = max(1, t)^p` for `p = 0, ½, 1, …, 4` and keeps the first
/// that passes [`divergent_on_sample`]; the table stores it on the unit
/// grid of `[0, range]` with log-linear interpolation, so the slopes
/// `p·log((k+1)/k)` decrease to 0 from `t = 1` on.
pub fn sullivan_weight(spectrum: &[(f64, f64)], delta: f64, range: f64) -> Result<SullivanWeight, MeasureError> {
    if spectrum.is_empty() {
        return Err(MeasureError::EmptySpectrum);
    }
    let n = range.ceil() as usize;
    let grid: Vec<f64> = (0..=n).map(|k| k as f64).collect();
    let mut chosen = None;
    for step in 0..=8 {
        let p = 0.5 * step as f64;
        let h = move |t: f64| t.max(1.0).powf(p);
        if divergent_on_sample(spectrum, delta, &h, range) {
            chosen = Some(p);
            break;
        }
    }
    let (p, ok) = match chosen {
        Some(p) => (p, true),
        None => (4.0, false),
    };
    let values: Vec<f64> = grid.iter().map(|t| t.max(1.0).powf(p)).collect();
    let slopes: Vec<f64> = values.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
    Ok(SullivanWeight {
        grid,
        values,
        slopes,
        power: p,
        divergent_on_sample: ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{standard_schottky, DEFAULT_BUDGET};

    #[test]
    fn large_exponent_concentrates_on_identity() {
        let g = standard_schottky();
        let m = ps_approximant(&g, &TeichPoint::i(), 10.0, 8.0, None, DEFAULT_BUDGET).unwrap();
        let id = m.atoms.iter().find(|a| a.word.is_empty()).unwrap();
        assert!(id.weight > 0.99);
        assert!((m.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_arc_keeps_retained_mass() {
        let g = standard_schottky();
        let m = ps_approximant(&g, &TeichPoint::i(), 0.6, 8.0, None, DEFAULT_BUDGET).unwrap();
        let b = bin_to_arcs(&m, &ArcPartition::single(), 0.5);
        assert!((b.total() + b.dropped_mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn partitions_validate() {
        assert!(ArcPartition::new(crate::hyperbolic::uniform_partition(16)).is_ok());
        let mut arcs = crate::hyperbolic::uniform_partition(16);
        arcs.pop();
        assert!(ArcPartition::new(arcs).is_err());
        let g = standard_schottky();
        let (p, idx) = ArcPartition::certificate(&g, 2);
        assert_eq!(idx.len(), 12);
        assert!(ArcPartition::new(p.arcs().to_vec()).is_ok());
    }

    #[test]
    fn toy_spectrum_weight() {
        // multiplicities 2^k/k² at d = k: convergent at δ = log 2
        let spectrum: Vec<(f64, f64)> = (1..=40).map(|k| (k as f64, 2f64.powi(k) / (k * k) as f64)).collect();
        let delta = 2f64.ln();
        assert!(!divergent_on_sample(&spectrum, delta, &|_| 1.0, 40.0));
        assert!(divergent_on_sample(&spectrum, delta, &|t| t, 40.0));
        let h = sullivan_weight(&spectrum, delta, 40.0).unwrap();
        assert_eq!(h.power, 1.0);
        for t in [1.0, 7.5, 20.0, 39.0] {
            assert!((h.eval(t) - t).abs() < 1e-9 * t + 0.35);
        }
        assert!(h.slopes[1..].windows(2).all(|w| w[1] <= w[0] + 1e-15));
        let (t0, worst) = h.slow_growth_audit(0.1);
        assert!(t0.unwrap() <= 11.0);
        assert!(worst <= 1.0 + 1e-12);
    }

    #[test]
    fn divergent_spectrum_takes_constant_weight() {
        let spectrum: Vec<(f64, f64)> = (1..=30).map(|k| (k as f64, 3f64.powi(k))).collect();
        let h = sullivan_weight(&spectrum, 1.0, 30.0).unwrap();
        assert_eq!(h.power, 0.0);
        assert!(h.values.iter().all(|v| *v == 1.0));
    }
}
