//! Two-subsystem coupled linear plant.
//!
//! Each subsystem is a discrete-time linear model in deviation coordinates:
//!
//! ```text
//! x+     = A x + B u + G v_in + F w
//! y      = C x + D u + E v_in
//! v_out  = Cv x + Dv u + Ev v_in
//! ```
//!
//! Subsystem 1's coupling output feeds subsystem 2's coupling input and
//! vice-versa, which closes an algebraic loop through the Ev blocks. The
//! loop is resolved exactly by a linear solve at every step.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Conditioning bound above which the coupling loop matrix is rejected.
pub const LOOP_CONDITION_LIMIT: f64 = 1e12;

/// Human-readable signal names carried along for reports.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SignalLabels {
    #[serde(default)]
    pub inputs: Vec<String>,
    #[serde(default)]
    pub outputs: Vec<String>,
    #[serde(default)]
    pub coupling_in: Vec<String>,
    #[serde(default)]
    pub coupling_out: Vec<String>,
}

/// One subsystem's linear maps plus operating-point offsets.
///
/// `u0`/`y0` are bookkeeping constants for cost evaluation and reporting;
/// they are never added inside the dynamics, which run entirely in
/// deviation coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub cv: DMatrix<f64>,
    pub dv: DMatrix<f64>,
    pub ev: DMatrix<f64>,
    pub u0: DVector<f64>,
    pub y0: DVector<f64>,
    pub labels: SignalLabels,
}

impl SubsystemModel {
    /// Builds a model, checking mutual dimension consistency, finiteness
    /// and the square steady-map requirement `n_u == n_y`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        g: DMatrix<f64>,
        f: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        e: DMatrix<f64>,
        cv: DMatrix<f64>,
        dv: DMatrix<f64>,
        ev: DMatrix<f64>,
        u0: DVector<f64>,
        y0: DVector<f64>,
        labels: SignalLabels,
    ) -> Result<Self> {
        let model = Self {
            a,
            b,
            g,
            f,
            c,
            d,
            e,
            cv,
            dv,
            ev,
            u0,
            y0,
            labels,
        };
        let issues = model.dimension_issues("subsystem");
        if let Some(first) = issues.into_iter().next() {
            return Err(Error::DimensionMismatch {
                context: first.context,
                expected: first.expected,
                got: first.got,
            });
        }
        if let Some(name) = model.non_finite_block() {
            return Err(Error::NonFinite(name.to_string()));
        }
        Ok(model)
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }
    pub fn n_y(&self) -> usize {
        self.c.nrows()
    }
    pub fn n_w(&self) -> usize {
        self.f.ncols()
    }
    /// Width of the coupling signal this subsystem receives.
    pub fn n_v_in(&self) -> usize {
        self.g.ncols()
    }
    /// Width of the coupling signal this subsystem emits.
    pub fn n_v_out(&self) -> usize {
        self.cv.nrows()
    }

    /// One step of the isolated dynamics given a resolved coupling input.
    pub fn advance(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        v_in: &DVector<f64>,
        w: &DVector<f64>,
    ) -> DVector<f64> {
        &self.a * x + &self.b * u + &self.g * v_in + &self.f * w
    }

    /// Regulated output (disturbance-free convention).
    pub fn output(&self, x: &DVector<f64>, u: &DVector<f64>, v_in: &DVector<f64>) -> DVector<f64> {
        &self.c * x + &self.d * u + &self.e * v_in
    }

    /// Emitted coupling signal.
    pub fn coupling_output(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        v_in: &DVector<f64>,
    ) -> DVector<f64> {
        &self.cv * x + &self.dv * u + &self.ev * v_in
    }

    fn dimension_issues(&self, who: &str) -> Vec<DimIssue> {
        let mut issues = Vec::new();
        let n_x = self.a.nrows();
        let n_u = self.b.ncols();
        let n_y = self.c.nrows();
        let n_vin = self.g.ncols();
        let n_vout = self.cv.nrows();
        let mut check = |name: &str, rows: usize, cols: usize, er: usize, ec: usize| {
            if rows != er || cols != ec {
                issues.push(DimIssue {
                    context: format!("{who}.{name}"),
                    expected: format!("{er}x{ec}"),
                    got: format!("{rows}x{cols}"),
                });
            }
        };
        check("A", self.a.nrows(), self.a.ncols(), n_x, n_x);
        check("B", self.b.nrows(), self.b.ncols(), n_x, n_u);
        check("G", self.g.nrows(), self.g.ncols(), n_x, n_vin);
        check("F", self.f.nrows(), self.f.ncols(), n_x, self.f.ncols());
        check("C", self.c.nrows(), self.c.ncols(), n_y, n_x);
        check("D", self.d.nrows(), self.d.ncols(), n_y, n_u);
        check("E", self.e.nrows(), self.e.ncols(), n_y, n_vin);
        check("Cv", self.cv.nrows(), self.cv.ncols(), n_vout, n_x);
        check("Dv", self.dv.nrows(), self.dv.ncols(), n_vout, n_u);
        check("Ev", self.ev.nrows(), self.ev.ncols(), n_vout, n_vin);
        if self.u0.len() != n_u {
            issues.push(DimIssue {
                context: format!("{who}.U0"),
                expected: format!("{n_u}"),
                got: format!("{}", self.u0.len()),
            });
        }
        if self.y0.len() != n_y {
            issues.push(DimIssue {
                context: format!("{who}.Y0"),
                expected: format!("{n_y}"),
                got: format!("{}", self.y0.len()),
            });
        }
        if n_u != n_y {
            issues.push(DimIssue {
                context: format!("{who}: square steady map requires n_u = n_y"),
                expected: format!("n_y = {n_y}"),
                got: format!("n_u = {n_u}"),
            });
        }
        issues
    }

    fn non_finite_block(&self) -> Option<&'static str> {
        let blocks: [(&'static str, &DMatrix<f64>); 10] = [
            ("A", &self.a),
            ("B", &self.b),
            ("G", &self.g),
            ("F", &self.f),
            ("C", &self.c),
            ("D", &self.d),
            ("E", &self.e),
            ("Cv", &self.cv),
            ("Dv", &self.dv),
            ("Ev", &self.ev),
        ];
        for (name, m) in blocks {
            if m.iter().any(|x| !x.is_finite()) {
                return Some(name);
            }
        }
        if self.u0.iter().any(|x| !x.is_finite()) {
            return Some("U0");
        }
        if self.y0.iter().any(|x| !x.is_finite()) {
            return Some("Y0");
        }
        None
    }
}

struct DimIssue {
    context: String,
    expected: String,
    got: String,
}

/// The coupled pair: subsystem 1's coupling input is subsystem 2's coupling
/// output and vice-versa.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledPlant {
    pub s1: SubsystemModel,
    pub s2: SubsystemModel,
}

impl CoupledPlant {
    pub fn new(s1: SubsystemModel, s2: SubsystemModel) -> Result<Self> {
        if s1.n_v_in() != s2.n_v_out() {
            return Err(Error::DimensionMismatch {
                context: "wiring: dim(v1) as input to S1 vs output of S2".into(),
                expected: format!("{}", s1.n_v_in()),
                got: format!("{}", s2.n_v_out()),
            });
        }
        if s2.n_v_in() != s1.n_v_out() {
            return Err(Error::DimensionMismatch {
                context: "wiring: dim(v2) as input to S2 vs output of S1".into(),
                expected: format!("{}", s2.n_v_in()),
                got: format!("{}", s1.n_v_out()),
            });
        }
        let plant = Self { s1, s2 };
        let cond = plant.loop_condition();
        if !cond.is_finite() || cond > LOOP_CONDITION_LIMIT {
            return Err(Error::SingularLoop {
                cond,
                limit: LOOP_CONDITION_LIMIT,
            });
        }
        Ok(plant)
    }

    pub fn subsystem(&self, index: SubsystemId) -> &SubsystemModel {
        match index {
            SubsystemId::S1 => &self.s1,
            SubsystemId::S2 => &self.s2,
        }
    }

    /// Condition number of the algebraic loop matrix I - Ev1*Ev2, where
    /// Ev1 = s2.ev (produces v1) and Ev2 = s1.ev (produces v2).
    pub fn loop_condition(&self) -> f64 {
        let n = self.s1.n_v_in();
        let loop_matrix = DMatrix::identity(n, n) - &self.s2.ev * &self.s1.ev;
        condition_number(&loop_matrix)
    }

    /// Solves the coupling equations exactly for the current state and inputs.
    ///
    /// Eliminating v2 gives
    /// `(I - Ev1*Ev2) v1 = Cv1 x2 + Dv1 u2 + Ev1 (Cv2 x1 + Dv2 u1)`
    /// with the paper-side names Cv1 = s2.cv, Ev1 = s2.ev, Cv2 = s1.cv, etc.
    pub fn resolve_coupling(
        &self,
        state: &PlantState,
        u1: &DVector<f64>,
        u2: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        self.resolve_coupling_with_injection(state, u1, u2, None)
    }

    /// Same as [`resolve_coupling`](Self::resolve_coupling) but with additive
    /// exogenous injections on the coupling channels (used for operator
    /// handover, where a scripted stream feeds a dedicated channel).
    pub fn resolve_coupling_with_injection(
        &self,
        state: &PlantState,
        u1: &DVector<f64>,
        u2: &DVector<f64>,
        injection: Option<(&DVector<f64>, &DVector<f64>)>,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        self.check_input_dims(state, u1, u2)?;
        let n1 = self.s1.n_v_in();
        let n2 = self.s2.n_v_in();
        let (inj1, inj2) = match injection {
            Some((i1, i2)) => {
                if i1.len() != n1 || i2.len() != n2 {
                    return Err(Error::DimensionMismatch {
                        context: "coupling injection".into(),
                        expected: format!("({n1}, {n2})"),
                        got: format!("({}, {})", i1.len(), i2.len()),
                    });
                }
                (i1.clone(), i2.clone())
            }
            None => (DVector::zeros(n1), DVector::zeros(n2)),
        };

        // c1 = what S2 emits toward S1 ignoring the loop; c2 symmetric.
        let c1 = &self.s2.cv * &state.x2 + &self.s2.dv * u2 + inj1;
        let c2 = &self.s1.cv * &state.x1 + &self.s1.dv * u1 + inj2;

        let loop_matrix = DMatrix::identity(n1, n1) - &self.s2.ev * &self.s1.ev;
        let cond = condition_number(&loop_matrix);
        if !cond.is_finite() || cond > LOOP_CONDITION_LIMIT {
            return Err(Error::SingularLoop {
                cond,
                limit: LOOP_CONDITION_LIMIT,
            });
        }
        let rhs = &c1 + &self.s2.ev * &c2;
        let v1 = loop_matrix
            .lu()
            .solve(&rhs)
            .ok_or(Error::SingularLoop {
                cond,
                limit: LOOP_CONDITION_LIMIT,
            })?;
        let v2 = &c2 + &self.s1.ev * &v1;
        Ok((v1, v2))
    }

    /// Advances the true plant one step, returning the next state, the
    /// regulated outputs and the resolved coupling signals at time k.
    pub fn step(
        &self,
        state: &PlantState,
        u1: &DVector<f64>,
        u2: &DVector<f64>,
        w1: &DVector<f64>,
        w2: &DVector<f64>,
    ) -> Result<StepOutput> {
        self.step_with_injection(state, u1, u2, w1, w2, None)
    }

    pub fn step_with_injection(
        &self,
        state: &PlantState,
        u1: &DVector<f64>,
        u2: &DVector<f64>,
        w1: &DVector<f64>,
        w2: &DVector<f64>,
        injection: Option<(&DVector<f64>, &DVector<f64>)>,
    ) -> Result<StepOutput> {
        let (v1, v2) = self.resolve_coupling_with_injection(state, u1, u2, injection)?;
        let y1 = self.s1.output(&state.x1, u1, &v1);
        let y2 = self.s2.output(&state.x2, u2, &v2);
        let next = PlantState {
            x1: self.s1.advance(&state.x1, u1, &v1, w1),
            x2: self.s2.advance(&state.x2, u2, &v2, w2),
            k: state.k + 1,
        };
        Ok(StepOutput {
            next,
            y1,
            y2,
            v1,
            v2,
        })
    }

    fn check_input_dims(
        &self,
        state: &PlantState,
        u1: &DVector<f64>,
        u2: &DVector<f64>,
    ) -> Result<()> {
        if state.x1.len() != self.s1.n_x() || state.x2.len() != self.s2.n_x() {
            return Err(Error::DimensionMismatch {
                context: "plant state".into(),
                expected: format!("({}, {})", self.s1.n_x(), self.s2.n_x()),
                got: format!("({}, {})", state.x1.len(), state.x2.len()),
            });
        }
        if u1.len() != self.s1.n_u() || u2.len() != self.s2.n_u() {
            return Err(Error::DimensionMismatch {
                context: "plant inputs".into(),
                expected: format!("({}, {})", self.s1.n_u(), self.s2.n_u()),
                got: format!("({}, {})", u1.len(), u2.len()),
            });
        }
        Ok(())
    }
}

/// Which subsystem of the pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubsystemId {
    S1,
    S2,
}

impl SubsystemId {
    pub fn index(self) -> usize {
        match self {
            SubsystemId::S1 => 0,
            SubsystemId::S2 => 1,
        }
    }
    pub fn other(self) -> Self {
        match self {
            SubsystemId::S1 => SubsystemId::S2,
            SubsystemId::S2 => SubsystemId::S1,
        }
    }
}

/// Joint state of the coupled plant at discrete time `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub x1: DVector<f64>,
    pub x2: DVector<f64>,
    pub k: u64,
}

impl PlantState {
    pub fn zero(plant: &CoupledPlant) -> Self {
        Self {
            x1: DVector::zeros(plant.s1.n_x()),
            x2: DVector::zeros(plant.s2.n_x()),
            k: 0,
        }
    }

    pub fn inf_norm(&self) -> f64 {
        self.x1
            .iter()
            .chain(self.x2.iter())
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.x1.iter().chain(self.x2.iter()).all(|x| x.is_finite())
    }
}

/// Output of one true-plant step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub next: PlantState,
    pub y1: DVector<f64>,
    pub y2: DVector<f64>,
    pub v1: DVector<f64>,
    pub v2: DVector<f64>,
}

/// Report-style model validation: dimension issues, loop conditioning and
/// the (informational) spectral radius of each A block. Open-loop unstable
/// A blocks are allowed; the report only lists hard inconsistencies as
/// issues.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<String>,
    pub loop_condition: f64,
    pub spectral_radius_a1: f64,
    pub spectral_radius_a2: f64,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Validates a (possibly inconsistent) pair of subsystem models without
/// erroring; intended for loaders and diagnostics.
pub fn validate_model(s1: &SubsystemModel, s2: &SubsystemModel) -> ValidationReport {
    let mut issues = Vec::new();
    for issue in s1
        .dimension_issues("S1")
        .into_iter()
        .chain(s2.dimension_issues("S2"))
    {
        issues.push(format!(
            "{}: expected {}, got {}",
            issue.context, issue.expected, issue.got
        ));
    }
    if let Some(name) = s1.non_finite_block() {
        issues.push(format!("S1.{name}: non-finite entries"));
    }
    if let Some(name) = s2.non_finite_block() {
        issues.push(format!("S2.{name}: non-finite entries"));
    }
    if s1.n_v_in() != s2.n_v_out() {
        issues.push(format!(
            "wiring: dim(v1)={} as S1 input but S2 emits {}",
            s1.n_v_in(),
            s2.n_v_out()
        ));
    }
    if s2.n_v_in() != s1.n_v_out() {
        issues.push(format!(
            "wiring: dim(v2)={} as S2 input but S1 emits {}",
            s2.n_v_in(),
            s1.n_v_out()
        ));
    }

    let mut loop_condition = f64::INFINITY;
    if s1.n_v_in() == s2.n_v_out() && s2.n_v_in() == s1.n_v_out() {
        let n = s1.n_v_in();
        let loop_matrix = DMatrix::identity(n, n) - &s2.ev * &s1.ev;
        loop_condition = condition_number(&loop_matrix);
        if !loop_condition.is_finite() || loop_condition > LOOP_CONDITION_LIMIT {
            issues.push(format!(
                "coupling loop matrix I - Ev1*Ev2 ill-conditioned (cond = {loop_condition:.3e})"
            ));
        }
    }

    ValidationReport {
        issues,
        loop_condition,
        spectral_radius_a1: matrix_spectral_radius(&s1.a),
        spectral_radius_a2: matrix_spectral_radius(&s2.a),
    }
}

/// 2-norm condition number via SVD; infinity when the smallest singular
/// value underflows to zero.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn matrix_spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .complex_eigenvalues()
        .iter()
        .fold(0.0f64, |acc, l| acc.max(l.norm()))
}

// ---------------------------------------------------------------------------
// Plant definition file (JSON)
// ---------------------------------------------------------------------------

/// On-disk form of one subsystem: row-major matrices, explicit dimensions
/// for cross-checking, operating-point vectors and labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsystemFile {
    pub n_x: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub n_v_in: usize,
    pub n_v_out: usize,
    pub n_w: usize,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
    pub f: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    pub e: Vec<Vec<f64>>,
    pub cv: Vec<Vec<f64>>,
    pub dv: Vec<Vec<f64>>,
    pub ev: Vec<Vec<f64>>,
    pub u0: Vec<f64>,
    pub y0: Vec<f64>,
    #[serde(default)]
    pub labels: SignalLabels,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantFile {
    pub s1: SubsystemFile,
    pub s2: SubsystemFile,
}

fn rows_to_matrix(name: &str, rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch {
            context: format!("plant file field {name}"),
            expected: format!("{nrows}x{ncols}"),
            got: format!(
                "{}x{}",
                rows.len(),
                rows.first().map(|r| r.len()).unwrap_or(0)
            ),
        });
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

impl SubsystemFile {
    pub fn to_model(&self) -> Result<SubsystemModel> {
        SubsystemModel::new(
            rows_to_matrix("a", &self.a, self.n_x, self.n_x)?,
            rows_to_matrix("b", &self.b, self.n_x, self.n_u)?,
            rows_to_matrix("g", &self.g, self.n_x, self.n_v_in)?,
            rows_to_matrix("f", &self.f, self.n_x, self.n_w)?,
            rows_to_matrix("c", &self.c, self.n_y, self.n_x)?,
            rows_to_matrix("d", &self.d, self.n_y, self.n_u)?,
            rows_to_matrix("e", &self.e, self.n_y, self.n_v_in)?,
            rows_to_matrix("cv", &self.cv, self.n_v_out, self.n_x)?,
            rows_to_matrix("dv", &self.dv, self.n_v_out, self.n_u)?,
            rows_to_matrix("ev", &self.ev, self.n_v_out, self.n_v_in)?,
            DVector::from_vec(self.u0.clone()),
            DVector::from_vec(self.y0.clone()),
            self.labels.clone(),
        )
    }

    pub fn from_model(m: &SubsystemModel) -> Self {
        Self {
            n_x: m.n_x(),
            n_u: m.n_u(),
            n_y: m.n_y(),
            n_v_in: m.n_v_in(),
            n_v_out: m.n_v_out(),
            n_w: m.n_w(),
            a: matrix_to_rows(&m.a),
            b: matrix_to_rows(&m.b),
            g: matrix_to_rows(&m.g),
            f: matrix_to_rows(&m.f),
            c: matrix_to_rows(&m.c),
            d: matrix_to_rows(&m.d),
            e: matrix_to_rows(&m.e),
            cv: matrix_to_rows(&m.cv),
            dv: matrix_to_rows(&m.dv),
            ev: matrix_to_rows(&m.ev),
            u0: m.u0.iter().copied().collect(),
            y0: m.y0.iter().copied().collect(),
            labels: m.labels.clone(),
        }
    }
}

impl PlantFile {
    pub fn from_plant(plant: &CoupledPlant) -> Self {
        Self {
            s1: SubsystemFile::from_model(&plant.s1),
            s2: SubsystemFile::from_model(&plant.s2),
        }
    }
}

/// Parses a plant definition document and rejects it if validation reports
/// any issue.
pub fn load_plant_json(text: &str) -> Result<CoupledPlant> {
    let file: PlantFile = serde_json::from_str(text)?;
    let s1 = file.s1.to_model()?;
    let s2 = file.s2.to_model()?;
    let report = validate_model(&s1, &s2);
    if !report.is_ok() {
        return Err(Error::Config(format!(
            "plant definition rejected: {}",
            report.issues.join("; ")
        )));
    }
    CoupledPlant::new(s1, s2)
}

pub fn plant_to_json(plant: &CoupledPlant) -> String {
    serde_json::to_string_pretty(&PlantFile::from_plant(plant)).expect("plant serializes")
}
