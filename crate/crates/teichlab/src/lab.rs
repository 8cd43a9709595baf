//! Counting experiments, their configuration and machine-readable reports.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bm::{
    bm_grid, bm_mass, flow_drift, holonomy_invariance, horospherical_consistency, mixing_correlation, BmError,
    FlowBox, FordDomain, LimitSampler,
};
use crate::group::{
    critical_exponent, enumerate_ball, enumerate_conjugacy_classes, geodesic_exponent, ladder_counts,
    poincare_abscissa, primitive_counts, standard_schottky, ExponentEstimate, GroupError, Letter, SchottkyGroup,
    SearchStrategy, DEFAULT_BUDGET,
};
use crate::hyperbolic::{
    cross_ratio, distance, gromov_product_mixed, mobius_f64, pr, Foliation, GeometryError, MappingClass, TeichPoint,
};
use crate::ps::{
    bin_to_arcs, conformal_exponent, conformality_check, ps_approximant, ps_measure, ArcPartition, ConformalityMode,
    MeasureError,
};
use crate::traintrack::{nonarith_check, perron_root, to_imat, TrackError};

#[derive(Debug, Error)]
pub enum LabError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Bm(#[from] BmError),
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error("arc partition is empty")]
    EmptyArcs,
    #[error("no orbit point within t = {0} has a direction")]
    EmptyCounts(f64),
}

impl LabError {
    /// Budget exhaustion, reported as truncation rather than failure.
    pub fn is_truncation(&self) -> bool {
        matches!(
            self,
            LabError::Group(GroupError::BudgetExceeded { .. })
                | LabError::Measure(MeasureError::Group(GroupError::BudgetExceeded { .. }))
                | LabError::Bm(BmError::SampleBudget(_))
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub stabilization: f64,
    pub product_ratio: f64,
    pub geodesic_slope: f64,
    pub equidistribution: f64,
    /// Mass floor for equidistribution cells, relative to the product total.
    pub equidistribution_floor: f64,
    pub axis_slack: f64,
    pub exponent_coherence: f64,
    pub conformality: f64,
    pub horospherical: f64,
    pub holonomy: f64,
    pub flow_drift: f64,
    pub mixing_final_gap: f64,
    pub enclosure_width: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            stabilization: 0.2,
            product_ratio: 0.15,
            geodesic_slope: 0.05,
            equidistribution: 0.2,
            equidistribution_floor: 1e-4,
            axis_slack: 1e-9,
            exponent_coherence: 0.05,
            conformality: 0.15,
            horospherical: 0.05,
            holonomy: 0.1,
            flow_drift: 0.01,
            mixing_final_gap: 0.1,
            enclosure_width: 1e-12,
        }
    }
}

/// Everything an experiment reads. Missing fields take the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// JSON file `{"generators": [[a,b,c,d], ...]}`; `⟨A³,B³⟩` when absent.
    pub group: Option<PathBuf>,
    /// `x, x′, y, y′` as `[re, im]`.
    pub basepoints: Vec<[f64; 2]>,
    pub radius_ladder: Vec<f64>,
    pub arc_partition: usize,
    /// Offsets above `h`; the first entry is the one closest to `h`.
    pub s_ladder: Vec<f64>,
    pub seed: u64,
    /// Orbit-enumeration cap (search nodes).
    pub budget: u64,
    /// Monte-Carlo cap (draws per estimate).
    pub sample_budget: usize,
    pub samples: usize,
    pub mass_samples: usize,
    pub measure_cutoff: f64,
    pub bm_cutoff: f64,
    pub cylinder_depth: usize,
    pub equidistribution_time: f64,
    pub axis_word_length: usize,
    pub mixing_times: Vec<f64>,
    pub mixing_window: f64,
    pub tt_action: Vec<Vec<i64>>,
    pub nonarith_pair: [Vec<Vec<i64>>; 2],
    pub nonarith_height: u64,
    pub tolerances: Tolerances,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            group: None,
            basepoints: vec![[0.0, 1.0], [0.0, 2.0], [0.3, 0.8], [-0.4, 1.7]],
            radius_ladder: (1..=8).map(f64::from).collect(),
            arc_partition: 64,
            s_ladder: vec![0.05, 0.1, 0.2],
            seed: 11,
            budget: DEFAULT_BUDGET,
            sample_budget: 1_000_000,
            samples: 400_000,
            mass_samples: 40_000,
            measure_cutoff: 10.0,
            bm_cutoff: 12.0,
            cylinder_depth: 3,
            equidistribution_time: 8.0,
            axis_word_length: 4,
            mixing_times: vec![2.0, 4.0, 6.0, 8.0],
            mixing_window: 8.0,
            tt_action: vec![vec![2, 1], vec![1, 1]],
            nonarith_pair: [vec![vec![2, 1], vec![1, 1]], vec![vec![5, 2], vec![2, 1]]],
            nonarith_height: 1_000_000,
            tolerances: Tolerances::default(),
        }
    }
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self, LabError> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, LabError> {
        let s = fs::read_to_string(path).map_err(|source| LabError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&s)
    }

    pub fn validate(&self) -> Result<(), LabError> {
        let bad = |m: &str| Err(LabError::Config(m.to_string()));
        if self.radius_ladder.is_empty() || !strictly_increasing(&self.radius_ladder) {
            return bad("radius_ladder must be non-empty and strictly increasing");
        }
        if self.radius_ladder[0] < 0.0 {
            return bad("radius_ladder must be non-negative");
        }
        if self.s_ladder.is_empty() || !strictly_increasing(&self.s_ladder) || self.s_ladder[0] <= 0.0 {
            return bad("s_ladder must be positive and strictly increasing");
        }
        if !strictly_increasing(&self.mixing_times) {
            return bad("mixing_times must be strictly increasing");
        }
        if self.budget == 0 || self.sample_budget == 0 || self.samples == 0 || self.mass_samples == 0 {
            return bad("budgets and sample counts must be positive");
        }
        if self.arc_partition == 0 {
            return bad("arc_partition must be positive");
        }
        if self.basepoints.is_empty() || self.basepoints.iter().any(|p| !(p[1] > 0.0) || !p[0].is_finite()) {
            return bad("basepoints must lie in the upper half-plane");
        }
        Ok(())
    }

    pub fn point(&self, k: usize) -> Result<TeichPoint, LabError> {
        let p = self
            .basepoints
            .get(k)
            .ok_or_else(|| LabError::Config(format!("basepoint {k} missing")))?;
        Ok(TeichPoint::new(p[0], p[1])?)
    }

    pub fn ladder_top(&self) -> f64 {
        *self.radius_ladder.last().unwrap()
    }

    pub fn load_group(&self) -> Result<SchottkyGroup, LabError> {
        match &self.group {
            None => Ok(standard_schottky()),
            Some(path) => {
                let s = fs::read_to_string(path).map_err(|source| LabError::Io {
                    path: path.clone(),
                    source,
                })?;
                group_from_json(&s)
            }
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupFile {
    generators: Vec<[i64; 4]>,
}

pub fn group_from_json(s: &str) -> Result<SchottkyGroup, LabError> {
    let f: GroupFile = serde_json::from_str(s)?;
    let gens = f
        .generators
        .iter()
        .map(|[a, b, c, d]| MappingClass::from_i64(*a, *b, *c, *d))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SchottkyGroup::verify(gens)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Below,
    AtMost,
    Above,
    AtLeast,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Below => "<",
            Relation::AtMost => "<=",
            Relation::Above => ">",
            Relation::AtLeast => ">=",
        })
    }
}

/// One pass/fail verdict, with the tolerance it was judged against.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub statistic: f64,
    pub relation: Relation,
    pub tolerance: f64,
    pub passed: bool,
    /// Ladder top or time the statistic was computed at.
    pub truncation_radius: Option<f64>,
}

impl Check {
    pub fn new(name: &str, statistic: f64, relation: Relation, tolerance: f64, radius: Option<f64>) -> Self {
        let passed = match relation {
            Relation::Below => statistic < tolerance,
            Relation::AtMost => statistic <= tolerance,
            Relation::Above => statistic > tolerance,
            Relation::AtLeast => statistic >= tolerance,
        };
        Self {
            name: name.to_string(),
            statistic,
            relation,
            tolerance,
            passed,
            truncation_radius: radius,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {} {} {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.statistic,
            self.relation,
            self.tolerance
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Num(f64),
    Text(String),
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Num(v) => write!(f, "{v}"),
            Cell::Text(s) => f.write_str(s),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

/// One CSV file: `<name>.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<&Cell>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| &r[k]).collect())
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(&self.columns)?;
        for r in &self.rows {
            wr.write_record(r.iter().map(|c| c.to_string()))?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Estimate {
    pub name: String,
    pub value: f64,
    pub ci: Option<[f64; 2]>,
    pub truncation_radius: Option<f64>,
    pub note: Option<String>,
}

impl Estimate {
    fn plain(name: &str, value: f64, radius: Option<f64>) -> Self {
        Self {
            name: name.to_string(),
            value,
            ci: None,
            truncation_radius: radius,
            note: None,
        }
    }

    fn exponent(name: &str, e: &ExponentEstimate) -> Self {
        Self {
            name: name.to_string(),
            value: e.h,
            ci: Some([e.ci_low, e.ci_high]),
            truncation_radius: e.ladder.last().copied(),
            note: None,
        }
    }
}

/// Report of one experiment. Contains no wall-clock data, so identical
/// inputs give byte-identical JSON.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub seed: u64,
    pub budget: u64,
    pub ladder: Vec<f64>,
    pub estimates: Vec<Estimate>,
    pub checks: Vec<Check>,
    pub tables: Vec<Table>,
    pub flags: Vec<String>,
    pub truncated: bool,
}

impl ExperimentReport {
    pub fn new(experiment: &str, cfg: &ExperimentConfig) -> Self {
        Self {
            experiment: experiment.to_string(),
            seed: cfg.seed,
            budget: cfg.budget,
            ladder: cfg.radius_ladder.clone(),
            estimates: Vec::new(),
            checks: Vec::new(),
            tables: Vec::new(),
            flags: Vec::new(),
            truncated: false,
        }
    }

    pub fn truncated(experiment: &str, cfg: &ExperimentConfig, err: &LabError) -> Self {
        let mut r = Self::new(experiment, cfg);
        r.truncated = true;
        r.flags.push(format!("truncated: {err}"));
        r
    }

    pub fn merge(&mut self, other: ExperimentReport) {
        self.estimates.extend(other.estimates);
        self.checks.extend(other.checks);
        self.tables.extend(other.tables);
        self.flags.extend(other.flags);
        self.truncated |= other.truncated;
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn estimate(&self, name: &str) -> Option<f64> {
        self.estimates.iter().find(|e| e.name == name).map(|e| e.value)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// 3 on truncation, 2 on a failed check, 0 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.truncated {
            3
        } else if !self.passed() {
            2
        } else {
            0
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `report.json` and one CSV per table into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), LabError> {
        let io = |source| LabError::Io {
            path: dir.to_path_buf(),
            source,
        };
        fs::create_dir_all(dir).map_err(io)?;
        fs::write(dir.join("report.json"), self.to_json() + "\n").map_err(io)?;
        for t in &self.tables {
            let f = fs::File::create(dir.join(format!("{}.csv", t.name))).map_err(io)?;
            t.write_csv(f)?;
        }
        Ok(())
    }
}

/// `N(x, y, R)` at every rung.
pub fn orbit_counts(
    g: &SchottkyGroup,
    x: &TeichPoint,
    y: &TeichPoint,
    ladder: &[f64],
    budget: u64,
) -> Result<Vec<u64>, LabError> {
    let top = *ladder.last().ok_or(GroupError::InsufficientLadder(0))?;
    let d: Vec<f64> = enumerate_ball(g, x, y, top, SearchStrategy::Pruned, budget)?
        .iter()
        .map(|e| e.distance)
        .collect();
    Ok(ladder_counts(&d, ladder))
}

/// Orbit-growth exponent, or `None` for a cyclic group.
fn orbit_exponent(g: &SchottkyGroup, cfg: &ExperimentConfig) -> Result<Option<ExponentEstimate>, LabError> {
    if g.rank() < 2 {
        return Ok(None);
    }
    Ok(Some(critical_exponent(g, &cfg.point(0)?, &cfg.radius_ladder, cfg.budget)?))
}

fn exponent_value(e: &Option<ExponentEstimate>) -> f64 {
    e.as_ref().map_or(0.0, |e| e.h)
}

/// Max relative change of consecutive values over the last three.
pub fn stabilization(values: &[f64]) -> f64 {
    let tail = &values[values.len().saturating_sub(3)..];
    tail.windows(2)
        .map(|w| (w[1] - w[0]).abs() / w[0].abs())
        .fold(0.0, f64::max)
}

/// `e^{−hR}·N(R)` over the ladder and its stabilization over the top rungs.
pub fn orbit_growth_experiment(g: &SchottkyGroup, cfg: &ExperimentConfig) -> Result<ExperimentReport, LabError> {
    let mut rep = ExperimentReport::new("orbit-growth", cfg);
    let x = cfg.point(0)?;
    let top = cfg.ladder_top();
    let counts = orbit_counts(g, &x, &x, &cfg.radius_ladder, cfg.budget)?;
    let est = orbit_exponent(g, cfg)?;
    let h = exponent_value(&est);
    match &est {
        Some(e) => rep.estimates.push(Estimate::exponent("h_orbit", e)),
        None => {
            rep.flags.push("nonhyperbolic growth".to_string());
            rep.estimates.push(Estimate::plain("h_orbit", 0.0, Some(top)));
        }
    }
    let mut table = Table::new("orbit_growth", &["radius", "count", "normalized"]);
    let normalized: Vec<f64> = cfg
        .radius_ladder
        .iter()
        .zip(&counts)
        .map(|(r, n)| (-h * r).exp() * *n as f64)
        .collect();
    for ((r, n), v) in cfg.radius_ladder.iter().zip(&counts).zip(&normalized) {
        table.push(vec![(*r).into(), (*n).into(), (*v).into()]);
    }
    rep.tables.push(table);
    rep.checks.push(Check::new(
        "stabilization",
        stabilization(&normalized),
        Relation::Below,
        cfg.tolerances.stabilization,
        Some(top),
    ));
    if est.is_some() {
        let nu = conformal_exponent(g, &x, cfg.cylinder_depth, 0.05, 2.0);
        let sampler = LimitSampler::new(g, &nu, cfg.cylinder_depth);
        let ford = FordDomain::new(g)?;
        let mass = bm_mass(&sampler, &ford, 1.0, cfg.mass_samples.min(cfg.sample_budget), cfg.seed)?;
        let total = sampler.total_mass();
        rep.estimates.push(Estimate {
            name: "limit_constant".to_string(),
            value: total * total / (nu.delta * mass.value),
            ci: None,
            truncation_radius: Some(top),
            note: Some(format!(
                "non-acceptance-grade: ||nu_x||^2/(delta ||mu||) with ||mu|| = {} +- {} in the Ford-domain convention",
                mass.value, mass.stderr
            )),
        });
    }
    Ok(rep)
}

/// `N(x,y)·N(x′,y′) / (N(x,y′)·N(x′,y))` at each rung; rungs with a zero
/// denominator are skipped and flagged.
pub fn product_structure_test(
    g: &SchottkyGroup,
    cfg: &ExperimentConfig,
    x: &TeichPoint,
    x2: &TeichPoint,
    y: &TeichPoint,
    y2: &TeichPoint,
) -> Result<ExperimentReport, LabError> {
    let mut rep = ExperimentReport::new("product-structure", cfg);
    let l = &cfg.radius_ladder;
    let n = |a: &TeichPoint, b: &TeichPoint| orbit_counts(g, a, b, l, cfg.budget);
    let (nxy, nx2y2, nxy2, nx2y) = (n(x, y)?, n(x2, y2)?, n(x, y2)?, n(x2, y)?);
    let mut table = Table::new("product_ratio", &["radius", "n_xy", "n_x2y2", "n_xy2", "n_x2y", "ratio"]);
    let mut last = f64::NAN;
    for k in 0..l.len() {
        let num = nxy[k] as u128 * nx2y2[k] as u128;
        let den = nxy2[k] as u128 * nx2y[k] as u128;
        if den == 0 {
            rep.flags.push(format!("rung {} skipped: zero denominator", l[k]));
            last = f64::NAN;
            continue;
        }
        last = if num == den { 1.0 } else { num as f64 / den as f64 };
        table.push(vec![
            l[k].into(),
            nxy[k].into(),
            nx2y2[k].into(),
            nxy2[k].into(),
            nx2y[k].into(),
            last.into(),
        ]);
    }
    rep.tables.push(table);
    rep.estimates.push(Estimate::plain("product_ratio", last, Some(cfg.ladder_top())));
    rep.checks.push(Check::new(
        "product_ratio",
        (last - 1.0).abs(),
        Relation::Below,
        cfg.tolerances.product_ratio,
        Some(cfg.ladder_top()),
    ));
    Ok(rep)
}

/// Closed-geodesic counts `n(R)` and the slope check `|log n(R)/R − h|`.
pub fn geodesic_count_experiment(g: &SchottkyGroup, cfg: &ExperimentConfig) -> Result<ExperimentReport, LabError> {
    let mut rep = ExperimentReport::new("geodesic-count", cfg);
    let x = cfg.point(0)?;
    let l = &cfg.radius_ladder;
    let top = cfg.ladder_top();
    let est = orbit_exponent(g, cfg)?;
    let h = exponent_value(&est);
    let classes = enumerate_conjugacy_classes(g, &x, top, cfg.budget)?;
    let mut all: Vec<f64> = classes.iter().map(|c| c.translation_length).collect();
    all.sort_by(f64::total_cmp);
    let n_all = ladder_counts(&all, l);
    let n_prim = primitive_counts(&classes, l);
    let mut table = Table::new(
        "geodesic_count",
        &["radius", "classes", "primitive", "proper_powers", "normalized", "log_n_over_r"],
    );
    for k in 0..l.len() {
        let n = n_prim[k] as f64;
        let log_ratio = if n_prim[k] > 0 { n.ln() / l[k] } else { f64::NAN };
        table.push(vec![
            l[k].into(),
            n_all[k].into(),
            n_prim[k].into(),
            (n_all[k] - n_prim[k]).into(),
            (h * l[k] * (-h * l[k]).exp() * n).into(),
            log_ratio.into(),
        ]);
    }
    rep.tables.push(table);
    rep.estimates.push(Estimate::plain("h_orbit", h, Some(top)));
    let n_top = *n_prim.last().unwrap();
    if n_top == 0 {
        rep.flags.push(format!("no closed geodesic of length <= {top}"));
    } else {
        let gap = ((n_top as f64).ln() / top - h).abs();
        rep.checks.push(Check::new("geodesic_slope", gap, Relation::Below, cfg.tolerances.geodesic_slope, Some(top)));
    }
    if let Ok(fit) = geodesic_exponent(l, &n_prim) {
        let mut e = Estimate::exponent("h_geodesic_fit", &fit);
        e.note = Some("slope of log(R n(R)) over the top half of the ladder".to_string());
        rep.estimates.push(e);
    }
    Ok(rep)
}

/// Orbit-growth exponent, Poincaré abscissa and geodesic slope, checked
/// pairwise.
pub fn exponent_coherence(g: &SchottkyGroup, cfg: &ExperimentConfig) -> Result<ExperimentReport, LabError> {
    let mut rep = ExperimentReport::new("exponent", cfg);
    let x = cfg.point(0)?;
    let l = &cfg.radius_ladder;
    let top = cfg.ladder_top();
    let orbit = critical_exponent(g, &x, l, cfg.budget)?;
    let d: Vec<f64> = enumerate_ball(g, &x, &x, top, SearchStrategy::Pruned, cfg.budget)?
        .iter()
        .map(|e| e.distance)
        .collect();
    let abscissa = poincare_abscissa(&d, l)?;
    let classes = enumerate_conjugacy_classes(g, &x, top, cfg.budget)?;
    let geo = geodesic_exponent(l, &primitive_counts(&classes, l))?;
    rep.estimates.push(Estimate::exponent("h_orbit", &orbit));
    rep.estimates.push(Estimate::plain("h_poincare", abscissa.s, Some(top)));
    rep.estimates.push(Estimate::exponent("h_geodesic", &geo));
    let mut table = Table::new("exponents", &["estimator", "value", "ci_low", "ci_high"]);
    table.push(vec!["orbit".into(), orbit.h.into(), orbit.ci_low.into(), orbit.ci_high.into()]);
    table.push(vec!["poincare".into(), abscissa.s.into(), f64::NAN.into(), f64::NAN.into()]);
    table.push(vec!["geodesic".into(), geo.h.into(), geo.ci_low.into(), geo.ci_high.into()]);
    rep.tables.push(table);
    let tol = cfg.tolerances.exponent_coherence;
    for (name, a, b) in [
        ("orbit_vs_poincare", orbit.h, abscissa.s),
        ("orbit_vs_geodesic", orbit.h, geo.h),
        ("poincare_vs_geodesic", abscissa.s, geo.h),
    ] {
        rep.checks.push(Check::new(name, (a - b).abs(), Relation::Below, tol, Some(top)));
    }
    Ok(rep)
}

/// Normalized counts of `γ` with `d(x, γy) ≤ t`, by the arc of `pr(x, γx)`
/// and the arc of `pr(y, γ⁻¹y)`, against `ν_x(A)ν_y(B)` normalized.
pub fn equidistribution_experiment(
    g: &SchottkyGroup,
    cfg: &ExperimentConfig,
    arcs_a: &ArcPartition,
    arcs_b: &ArcPartition,
    t: f64,
) -> Result<ExperimentReport, LabError> {
    if arcs_a.is_empty() || arcs_b.is_empty() {
        return Err(LabError::EmptyArcs);
    }
    let mut rep = ExperimentReport::new("equidistribution", cfg);
    let x = cfg.point(0)?;
    let y = cfg.point(2).or_else(|_| cfg.point(0))?;
    let h = exponent_value(&orbit_exponent(g, cfg)?);
    let s = h + cfg.s_ladder[0];
    // the identity atom has a direction from y ≠ x only, so both sides drop it
    let measure = |observer: &TeichPoint, arcs: &ArcPartition| -> Result<_, LabError> {
        let mut m = ps_measure(g, &x, observer, &x, s, cfg.measure_cutoff, cfg.budget)?;
        m.atoms.retain(|a| !a.word.is_empty());
        Ok(bin_to_arcs(&m, arcs, 0.0))
    };
    let (nu_x, nu_y) = (measure(&x, arcs_a)?, measure(&y, arcs_b)?);
    let (na, nb) = (arcs_a.len(), arcs_b.len());
    let mut counts = vec![0u64; na * nb];
    for e in enumerate_ball(g, &x, &y, t, SearchStrategy::Pruned, cfg.budget)? {
        let m = mobius_f64(e.matrix.map(|v| v as f64));
        let (gx, ginv_y) = (m.apply_point(&x), m.inverse().apply_point(&y));
        if distance(&x, &gx) < 1e-12 || distance(&y, &ginv_y) < 1e-12 {
            continue;
        }
        counts[arcs_a.locate(pr(&x, &gx)) * nb + arcs_b.locate(pr(&y, &ginv_y))] += 1;
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(LabError::EmptyCounts(t));
    }
    let (tx, ty) = (nu_x.total(), nu_y.total());
    let floor = cfg.tolerances.equidistribution_floor;
    let mut worst: f64 = 0.0;
    let mut table = Table::new(
        "equidistribution",
        &["arc_a", "arc_b", "count", "empirical", "predicted", "deviation"],
    );
    for i in 0..na {
        for j in 0..nb {
            let c = counts[i * nb + j];
            let emp = c as f64 / total as f64;
            let pred = nu_x.masses[i] * nu_y.masses[j] / (tx * ty);
            let dev = if pred >= floor {
                let d = if emp == pred { 0.0 } else { (emp - pred).abs() / pred };
                worst = worst.max(d);
                d
            } else {
                f64::NAN
            };
            table.push(vec![i.into(), j.into(), c.into(), emp.into(), pred.into(), dev.into()]);
        }
    }
    rep.tables.push(table);
    rep.estimates.push(Estimate::plain("orbit_points", total as f64, Some(t)));
    rep.estimates.push(Estimate::plain("exponent_s", s, None));
    rep.checks.push(Check::new(
        "equidistribution",
        worst,
        Relation::Below,
        cfg.tolerances.equidistribution,
        Some(t),
    ));
    Ok(rep)
}

/// `ρ_x(γx, γ⁺)` and `ρ_x(γ⁻¹x, γ⁻)` for one element, with their slack
/// over `d(x, γx)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AxisRow {
    pub word: String,
    pub distance: f64,
    pub translation_length: f64,
    pub rho_plus: f64,
    pub rho_minus: f64,
}

impl AxisRow {
    pub fn slack(&self) -> f64 {
        (self.rho_plus - self.distance).min(self.rho_minus - self.distance)
    }
}

pub fn axis_gromov_row(word: &str, m: &MappingClass, x: &TeichPoint) -> Result<AxisRow, GeometryError> {
    let axis = m.axis()?;
    let inv = m.inverse();
    let (gx, ginv_x) = (m.apply_point(x), inv.apply_point(x));
    Ok(AxisRow {
        word: word.to_string(),
        distance: distance(x, &gx),
        translation_length: axis.length,
        rho_plus: gromov_product_mixed(x, &gx, axis.attracting.boundary_point()),
        rho_minus: gromov_product_mixed(x, &ginv_x, axis.repelling.boundary_point()),
    })
}

/// The inequality `ρ_x(γ^{±1}x, γ^{±}) ≥ d(x, γx)` over every reduced word
/// up to the configured length.
pub fn axis_gromov_property(g: &SchottkyGroup, cfg: &ExperimentConfig) -> Result<ExperimentReport, LabError> {
    let mut rep = ExperimentReport::new("axis-gromov", cfg);
    let x = cfg.point(0)?;
    let mut table = Table::new(
        "axis_gromov",
        &["word", "distance", "translation_length", "rho_plus", "rho_minus", "slack"],
    );
    let mut worst = f64::INFINITY;
    for w in g.reduced_words(cfg.axis_word_length) {
        if w.is_empty() {
            continue;
        }
        let row = axis_gromov_row(&w.to_string(), &g.word_element(&w), &x)?;
        worst = worst.min(row.slack());
        table.push(vec![
            row.word.clone().into(),
            row.distance.into(),
            row.translation_length.into(),
            row.rho_plus.into(),
            row.rho_minus.into(),
            row.slack().into(),
        ]);
    }
    rep.tables.push(table);
    rep.checks.push(Check::new("axis_gromov_slack", worst, Relation::AtLeast, -cfg.tolerances.axis_slack, None));
    Ok(rep)
}

/// One CLI subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    VerifyGroup,
    OrbitCount,
    Exponent,
    PsMeasure,
    Conformality,
    BmGrid,
    Mixing,
    GeodesicCount,
    Equidistribution,
    CrossRatio,
    TtDilatation,
    Nonarith,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::VerifyGroup => "verify-group",
            Experiment::OrbitCount => "orbit-count",
            Experiment::Exponent => "exponent",
            Experiment::PsMeasure => "ps-measure",
            Experiment::Conformality => "conformality",
            Experiment::BmGrid => "bm-grid",
            Experiment::Mixing => "mixing",
            Experiment::GeodesicCount => "geodesic-count",
            Experiment::Equidistribution => "equidistribution",
            Experiment::CrossRatio => "cross-ratio",
            Experiment::TtDilatation => "tt-dilatation",
            Experiment::Nonarith => "nonarith",
        }
    }

    /// Runs the experiment. Budget exhaustion yields a truncated report;
    /// other failures are errors.
    pub fn run(&self, cfg: &ExperimentConfig, precision: Option<usize>) -> Result<ExperimentReport, LabError> {
        cfg.validate()?;
        match self.dispatch(cfg, precision) {
            Ok(mut r) => {
                r.experiment = self.name().to_string();
                Ok(r)
            }
            Err(e) if e.is_truncation() => Ok(ExperimentReport::truncated(self.name(), cfg, &e)),
            Err(e) => Err(e),
        }
    }

    fn dispatch(&self, cfg: &ExperimentConfig, precision: Option<usize>) -> Result<ExperimentReport, LabError> {
        match self {
            Experiment::TtDilatation => return tt_dilatation(cfg, precision),
            Experiment::Nonarith => return nonarith(cfg, precision),
            Experiment::CrossRatio => return cross_ratio_report(cfg),
            _ => {}
        }
        let g = cfg.load_group()?;
        match self {
            Experiment::VerifyGroup => Ok(verify_group(&g, cfg)),
            Experiment::OrbitCount => {
                let mut r = orbit_growth_experiment(&g, cfg)?;
                if cfg.basepoints.len() >= 4 {
                    let p = |k| cfg.point(k);
                    r.merge(product_structure_test(&g, cfg, &p(0)?, &p(1)?, &p(2)?, &p(3)?)?);
                }
                Ok(r)
            }
            Experiment::Exponent => exponent_coherence(&g, cfg),
            Experiment::PsMeasure => ps_measure_report(&g, cfg),
            Experiment::Conformality => conformality_report(&g, cfg),
            Experiment::BmGrid => bm_grid_report(&g, cfg),
            Experiment::Mixing => mixing_report(&g, cfg),
            Experiment::GeodesicCount => {
                let mut r = geodesic_count_experiment(&g, cfg)?;
                r.merge(axis_gromov_property(&g, cfg)?);
                Ok(r)
            }
            Experiment::Equidistribution => {
                let (p, _) = ArcPartition::certificate(&g, 1);
                equidistribution_experiment(&g, cfg, &p, &p, cfg.equidistribution_time)
            }
            _ => unreachable!(),
        }
    }
}

fn verify_group(g: &SchottkyGroup, cfg: &ExperimentConfig) -> ExperimentReport {
    let mut rep = ExperimentReport::new("verify-group", cfg);
    let mut table = Table::new("certificate", &["generator", "matrix", "attracting", "repelling"]);
    for p in g.certificate() {
        table.push(vec![
            p.generator.into(),
            g.generators()[p.generator].to_string().into(),
            p.attracting.to_string().into(),
            p.repelling.to_string().into(),
        ]);
    }
    rep.tables.push(table);
    rep.estimates.push(Estimate::plain("rank", g.rank() as f64, None));
    rep
}

fn ps_measure_report(g: &SchottkyGroup, cfg: &ExperimentConfig) -> Result<ExperimentReport, LabError> {
    let mut rep = ExperimentReport::new("ps-measure", cfg);
    let x = cfg.point(0)?;
    let h = exponent_value(&orbit_exponent(g, cfg)?);
    let part = ArcPartition::uniform(cfg.arc_partition);
    let mut table = Table::new("ps_masses", &["s", "arc", "arc_lo", "arc_hi", "mass", "atoms"]);
    for ds in &cfg.s_ladder {
        let s = h + ds;
        let m = bin_to_arcs(&ps_approximant(g, &x, s, cfg.measure_cutoff, Some(h), cfg.budget)?, &part, 0.0);
        for (k, a) in m.arcs().iter().enumerate() {
            table.push(vec![
                s.into(),
                k.into(),
                a.lo().to_string().into(),
                a.hi().to_string().into(),
                m.masses[k].into(),
                m.atom_counts[k].into(),
            ]);
        }
    }
    rep.tables.push(table);
    let atoms = ps_approximant(g, &x, h + cfg.s_ladder[0], cfg.measure_cutoff, Some(h), cfg.budget)?;
    rep.flags.extend(atoms.warnings.iter().cloned());
    let (cert, idx) = ArcPartition::certificate(g, cfg.cylinder_depth);
    let b = bin_to_arcs(&atoms, &cert, 0.0);
    let min_cyl = idx.iter().map(|k| b.masses[*k]).fold(f64::INFINITY, f64::min);
    rep.checks.push(Check::new("min_cylinder_mass", min_cyl, Relation::Above, 0.0, Some(cfg.measure_cutoff)));
    let mut p = part;
    let mut maxima = vec![bin_to_arcs(&atoms, &p, 0.0).max_mass()];
    for _ in 0..3 {
        p = p.dyadic();
        maxima.push(bin_to_arcs(&atoms, &p, 0.0).max_mass());
    }
    let mut refine = Table::new("max_arc_mass", &["arcs", "max_mass"]);
    for (k, m) in maxima.iter().enumerate() {
        refine.push(vec![(cfg.arc_partition << k).into(), (*m).into()]);
    }
    rep.tables.push(refine);
    let rise = maxima.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    rep.checks.push(Check::new("max_mass_rise", rise, Relation::AtMost, 0.0, None));
    rep.checks.push(Check::new("max_mass_ratio", maxima[3] / maxima[0], Relation::Below, 1.0, None));
    Ok(rep)
}

fn conformality_report(g: &SchottkyGroup, cfg: &ExperimentConfig) -> Result<ExperimentReport, LabError> {
    let mut rep = ExperimentReport::new("conformality", cfg);
    let x = cfg.point(0)?;
    let y = cfg.point(1)?;
    let h = exponent_value(&orbit_exponent(g, cfg)?);
    let part = ArcPartition::uniform(cfg.arc_partition);
    let mut table = Table::new("conformality", &["s", "max_relative_deviation", "arcs_compared"]);
    let mut devs = Vec::new();
    for ds in &cfg.s_ladder {
        let s = h + ds;
        let nx = ps_measure(g, &x, &x, &x, s, cfg.measure_cutoff, cfg.budget)?;
        let ny = ps_measure(g, &x, &y, &x, s, cfg.measure_cutoff, cfg.budget)?;
        let c = conformality_check(&nx, &ny, &part, 0.0, ConformalityMode::Midpoint)?;
        table.push(vec![s.into(), c.max_relative_deviation.into(), c.arcs_compared.into()]);
        devs.push(c.max_relative_deviation);
    }
    rep.tables.push(table);
    rep.checks.push(Check::new(
        "conformality",
        devs[0],
        Relation::Below,
        cfg.tolerances.conformality,
        Some(cfg.measure_cutoff),
    ));
    // the s-ladder increases away from h, so deviations should increase along it
    let fall = devs.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max);
    if devs.len() > 1 {
        rep.checks.push(Check::new("conformality_monotone", fall, Relation::Below, 0.0, None));
    }
    Ok(rep)
}

fn bm_grid_report(g: &SchottkyGroup, cfg: &ExperimentConfig) -> Result<ExperimentReport, LabError> {
    let mut rep = ExperimentReport::new("bm-grid", cfg);
    let x = cfg.point(0)?;
    let h = exponent_value(&orbit_exponent(g, cfg)?);
    let atoms = ps_approximant(g, &x, h + cfg.s_ladder[0], cfg.bm_cutoff, Some(h), cfg.budget)?;
    let coarse = ArcPartition::uniform(cfg.arc_partition);
    let grid = bm_grid(&bin_to_arcs(&atoms, &coarse, 0.0), &x, h);
    let fine = bin_to_arcs(&atoms, &coarse.dyadic().dyadic(), 0.0);
    let mut table = Table::new("bm_grid", &["row", "col", "weight"]);
    for (r, c) in grid.charged_cells() {
        table.push(vec![r.into(), c.into(), grid.weight(r, c).into()]);
    }
    rep.tables.push(table);
    let cells = grid.charged_cells();
    let (r, c) = *cells
        .iter()
        .max_by(|a, b| grid.weight(a.0, a.1).total_cmp(&grid.weight(b.0, b.1)))
        .ok_or(BmError::EmptyObservable)?;
    let b = FlowBox::from_cell(&grid, r, c, -0.5, 0.5)?;
    let horo = horospherical_consistency(&grid, &b, &fine, 16)?;
    rep.checks.push(Check::new("horospherical", horo, Relation::Below, cfg.tolerances.horospherical, None));
    let mut cols: Vec<usize> = cells.iter().map(|c| c.1).collect();
    cols.sort_unstable();
    cols.dedup();
    let mut holo: f64 = 0.0;
    for &a in &cols {
        for &q in cols.iter().filter(|q| **q != a) {
            if let Ok(h) = holonomy_invariance(&grid, a, q, 8) {
                holo = holo.max(h.max_relative_deviation);
            }
        }
    }
    rep.checks.push(Check::new("holonomy", holo, Relation::Below, cfg.tolerances.holonomy, None));
    let mut drift: f64 = 0.0;
    for (r, c) in cells.iter().take(4) {
        let b = FlowBox::from_cell(&grid, *r, *c, -1.0, 1.0)?;
        for s in [0.5, 3.0] {
            drift = drift.max(flow_drift(&grid, &b, s, 2000, cfg.seed)?);
        }
    }
    rep.checks.push(Check::new("flow_drift", drift, Relation::Below, cfg.tolerances.flow_drift, None));
    rep.estimates.push(Estimate::plain("grid_total", grid.total(), Some(cfg.bm_cutoff)));
    Ok(rep)
}

fn letter_box(g: &SchottkyGroup, a: usize, b: usize, w: f64, x: &TeichPoint) -> Result<FlowBox, LabError> {
    let arc = |c: usize| g.letter_arc(Letter::from_code(c)).to_boundary_arc();
    Ok(FlowBox::new(arc(a), arc(b), -w, w, x)?)
}

/// Observables `(D_a → D_A)` and `(D_b → D_B)` over `[−w, w]`.
fn mixing_report(g: &SchottkyGroup, cfg: &ExperimentConfig) -> Result<ExperimentReport, LabError> {
    let mut rep = ExperimentReport::new("mixing", cfg);
    if g.rank() < 2 {
        return Err(LabError::Config("mixing needs two generators".to_string()));
    }
    let x = cfg.point(0)?;
    let nu = conformal_exponent(g, &x, cfg.cylinder_depth, 0.05, 2.0);
    let sampler = LimitSampler::new(g, &nu, cfg.cylinder_depth);
    let ford = FordDomain::new(g)?;
    let a = vec![letter_box(g, 0, 2, cfg.mixing_window, &x)?];
    let b = vec![letter_box(g, 1, 3, cfg.mixing_window, &x)?];
    let tab = mixing_correlation(
        g,
        &sampler,
        &ford,
        &a,
        &b,
        &cfg.mixing_times,
        cfg.samples,
        cfg.seed,
        cfg.sample_budget,
    )?;
    let mut table = Table::new("mixing", &["t", "correlation", "product", "stderr", "relative_gap"]);
    let gaps: Vec<f64> = tab.rows.iter().map(|r| (r.c - r.product).abs() / r.product).collect();
    for (r, gap) in tab.rows.iter().zip(&gaps) {
        table.push(vec![r.t.into(), r.c.into(), r.product.into(), r.stderr.into(), (*gap).into()]);
    }
    rep.tables.push(table);
    rep.estimates.push(Estimate::plain("delta", nu.delta, None));
    rep.estimates.push(Estimate::plain("bm_mass", tab.total.value, None));
    let rise = gaps.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    if gaps.len() > 1 {
        rep.checks.push(Check::new("mixing_gap_decreasing", rise, Relation::Below, 0.0, None));
    }
    let last_t = cfg.mixing_times.last().copied();
    rep.checks.push(Check::new(
        "mixing_final_gap",
        *gaps.last().unwrap_or(&f64::NAN),
        Relation::Below,
        cfg.tolerances.mixing_final_gap,
        last_t,
    ));
    Ok(rep)
}

/// `ℓ(g)` against `τ(g⁺, g⁻, β, gβ)` for the generators of the lattice and
/// a few of their products.
fn cross_ratio_report(cfg: &ExperimentConfig) -> Result<ExperimentReport, LabError> {
    let mut rep = ExperimentReport::new("cross-ratio", cfg);
    let elements = [
        (2, 1, 1, 1),
        (1, 1, 1, 2),
        (5, 2, 2, 1),
        (3, 2, 1, 1),
        (8, 3, 5, 2),
        (2, -1, -1, 1),
    ];
    let beta = Foliation::new(1.0, 0.37)?;
    let mut table = Table::new("cross_ratio", &["element", "translation_length", "tau", "twice_tau"]);
    let (mut gap_one, mut gap_two): (f64, f64) = (0.0, 0.0);
    for (a, b, c, d) in elements {
        let m = MappingClass::from_i64(a, b, c, d)?;
        let ax = m.axis()?;
        let tau = cross_ratio(&ax.attracting, &ax.repelling, &beta, &m.apply_foliation(&beta))?.abs();
        gap_one = gap_one.max((ax.length - tau).abs());
        gap_two = gap_two.max((ax.length - 2.0 * tau).abs());
        table.push(vec![m.to_string().into(), ax.length.into(), tau.into(), (2.0 * tau).into()]);
    }
    rep.tables.push(table);
    rep.checks.push(Check::new("length_equals_twice_tau", gap_two, Relation::Below, 1e-9, None));
    rep.checks.push(Check::new("length_equals_tau", gap_one, Relation::Below, 1e-9, None));
    Ok(rep)
}

fn bits_for(digits: usize) -> u32 {
    (digits as f64 * std::f64::consts::LOG2_10).ceil() as u32
}

fn tt_dilatation(cfg: &ExperimentConfig, precision: Option<usize>) -> Result<ExperimentReport, LabError> {
    let mut rep = ExperimentReport::new("tt-dilatation", cfg);
    let bits = precision.map_or(42, bits_for);
    let d = perron_root(&to_imat(&cfg.tt_action), bits)?;
    let mut table = Table::new("dilatation", &["lo", "hi", "width", "power_estimate", "positivity_power"]);
    table.push(vec![
        d.enclosure.lo.to_string().into(),
        d.enclosure.hi.to_string().into(),
        d.enclosure.width().into(),
        d.power_estimate.into(),
        d.positivity_power.into(),
    ]);
    rep.tables.push(table);
    rep.estimates.push(Estimate::plain("dilatation", d.enclosure.mid(), None));
    rep.checks.push(Check::new(
        "enclosure_width",
        d.enclosure.width(),
        Relation::Below,
        cfg.tolerances.enclosure_width,
        None,
    ));
    Ok(rep)
}

fn nonarith(cfg: &ExperimentConfig, precision: Option<usize>) -> Result<ExperimentReport, LabError> {
    let mut rep = ExperimentReport::new("nonarith", cfg);
    let digits = precision.unwrap_or(50);
    let bits = bits_for(digits).max(200);
    let l1 = perron_root(&to_imat(&cfg.nonarith_pair[0]), bits)?;
    let l2 = perron_root(&to_imat(&cfg.nonarith_pair[1]), bits)?;
    let r = nonarith_check(&l1, &l2, cfg.nonarith_height, digits)?;
    let mut table = Table::new("nonarith", &["verdict", "ratio", "ratio_width"]);
    table.push(vec![r.label.clone().into(), r.ratio.clone().into(), r.ratio_width.into()]);
    rep.tables.push(table);
    let mut conv = Table::new("convergents", &["p", "q"]);
    for (p, q) in &r.convergents {
        conv.push(vec![p.clone().into(), q.clone().into()]);
    }
    rep.tables.push(conv);
    rep.flags.push(r.label);
    Ok(rep)
}
