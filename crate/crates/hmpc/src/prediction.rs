//! Horizon lifting: condensed affine maps from (initial state, control
//! profile, coupling profile) to predicted state, output and emitted
//! coupling profiles.
//!
//! Indexing convention: a profile holds `n` entries indexed 0..n-1; entry
//! `i` of the control and coupling profiles is consumed by the recursion
//! step that produces the state after `i + 1` steps, and stage `i + 1` of
//! every cost pairs that state (and the output/emission computed from it)
//! with the same entry. The first control entry is the move applied in
//! closed loop.

use nalgebra::{DMatrix, DVector};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::SubsystemModel;

/// A horizon-indexed sequence of fixed-width vectors, stored stacked.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    width: usize,
    stacked: DVector<f64>,
}

impl Profile {
    pub fn zeros(len: usize, width: usize) -> Self {
        Self {
            width,
            stacked: DVector::zeros(len * width),
        }
    }

    /// Builds a profile from a stacked vector; the length must be a
    /// multiple of `width`.
    pub fn from_stacked(width: usize, stacked: DVector<f64>) -> Result<Self> {
        if width == 0 || stacked.len() % width != 0 {
            return Err(Error::DimensionMismatch {
                context: "profile from stacked vector".into(),
                expected: format!("multiple of width {width}"),
                got: format!("{}", stacked.len()),
            });
        }
        Ok(Self { width, stacked })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map(|r| r.len()).unwrap_or(0);
        if width == 0 {
            return Err(Error::DimensionMismatch {
                context: "profile rows".into(),
                expected: "non-empty rows".into(),
                got: format!("{} rows", rows.len()),
            });
        }
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::DimensionMismatch {
                context: "profile rows".into(),
                expected: format!("uniform width {width}"),
                got: "ragged rows".into(),
            });
        }
        let mut stacked = DVector::zeros(rows.len() * width);
        for (i, row) in rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                stacked[i * width + j] = *v;
            }
        }
        Ok(Self { width, stacked })
    }

    pub fn len(&self) -> usize {
        if self.width == 0 {
            0
        } else {
            self.stacked.len() / self.width
        }
    }

    pub fn is_empty(&self) -> bool {
        self.stacked.len() == 0
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn stacked(&self) -> &DVector<f64> {
        &self.stacked
    }

    pub fn into_stacked(self) -> DVector<f64> {
        self.stacked
    }

    pub fn entry(&self, i: usize) -> DVector<f64> {
        self.stacked.rows(i * self.width, self.width).into_owned()
    }

    pub fn set_entry(&mut self, i: usize, value: &DVector<f64>) {
        self.stacked
            .rows_mut(i * self.width, self.width)
            .copy_from(value);
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.len())
            .map(|i| (0..self.width).map(|j| self.stacked[i * self.width + j]).collect())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.stacked.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.stacked.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// Max-norm of the elementwise difference.
    pub fn max_abs_diff(&self, other: &Profile) -> f64 {
        debug_assert_eq!(self.stacked.len(), other.stacked.len());
        self.stacked
            .iter()
            .zip(other.stacked.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Receding-horizon warm start: drop the first entry, repeat the last.
    pub fn shifted_by_one(&self) -> Profile {
        let n = self.len();
        if n <= 1 {
            return self.clone();
        }
        let mut out = Profile::zeros(n, self.width);
        for i in 0..n - 1 {
            out.set_entry(i, &self.entry(i + 1));
        }
        out.set_entry(n - 1, &self.entry(n - 1));
        out
    }
}

impl Serialize for Profile {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Profile {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<f64>> = Deserialize::deserialize(deserializer)?;
        Profile::from_rows(&rows).map_err(D::Error::custom)
    }
}

/// Condensed affine maps over the horizon, stored dense.
///
/// `state_*` maps (x0, u, v) to the stacked states x(k+1..k+n);
/// `output_*` to the stacked regulated outputs; `coupling_*` to the
/// stacked emitted coupling profile the other subsystem would receive.
#[derive(Debug, Clone)]
pub struct LiftedMaps {
    n: usize,
    n_x: usize,
    n_u: usize,
    n_y: usize,
    n_v_in: usize,
    n_v_out: usize,
    pub state_x: DMatrix<f64>,
    pub state_u: DMatrix<f64>,
    pub state_v: DMatrix<f64>,
    pub output_x: DMatrix<f64>,
    pub output_u: DMatrix<f64>,
    pub output_v: DMatrix<f64>,
    pub coupling_x: DMatrix<f64>,
    pub coupling_u: DMatrix<f64>,
    pub coupling_v: DMatrix<f64>,
}

impl LiftedMaps {
    pub fn horizon(&self) -> usize {
        self.n
    }
    pub fn n_x(&self) -> usize {
        self.n_x
    }
    pub fn n_u(&self) -> usize {
        self.n_u
    }
    pub fn n_y(&self) -> usize {
        self.n_y
    }
    pub fn n_v_in(&self) -> usize {
        self.n_v_in
    }
    pub fn n_v_out(&self) -> usize {
        self.n_v_out
    }

    fn check_args(&self, x0: &DVector<f64>, u: &Profile, v: &Profile) -> Result<()> {
        if x0.len() != self.n_x
            || u.width() != self.n_u
            || u.len() != self.n
            || v.width() != self.n_v_in
            || v.len() != self.n
        {
            return Err(Error::DimensionMismatch {
                context: "lifted map arguments".into(),
                expected: format!(
                    "x0 {}, u {}x{}, v {}x{}",
                    self.n_x, self.n, self.n_u, self.n, self.n_v_in
                ),
                got: format!(
                    "x0 {}, u {}x{}, v {}x{}",
                    x0.len(),
                    u.len(),
                    u.width(),
                    v.len(),
                    v.width()
                ),
            });
        }
        Ok(())
    }

    /// Predicted state and output profiles (disturbance-free).
    pub fn predict_profiles(
        &self,
        x0: &DVector<f64>,
        u: &Profile,
        v: &Profile,
    ) -> Result<(Profile, Profile)> {
        self.check_args(x0, u, v)?;
        let states =
            &self.state_x * x0 + &self.state_u * u.stacked() + &self.state_v * v.stacked();
        let outputs =
            &self.output_x * x0 + &self.output_u * u.stacked() + &self.output_v * v.stacked();
        Ok((
            Profile::from_stacked(self.n_x, states)?,
            Profile::from_stacked(self.n_y, outputs)?,
        ))
    }

    /// The emitted coupling profile the other subsystem would receive.
    pub fn coupling_profile(
        &self,
        x0: &DVector<f64>,
        u: &Profile,
        v: &Profile,
    ) -> Result<Profile> {
        self.check_args(x0, u, v)?;
        let emitted =
            &self.coupling_x * x0 + &self.coupling_u * u.stacked() + &self.coupling_v * v.stacked();
        Profile::from_stacked(self.n_v_out, emitted)
    }
}

/// Lifts a one-step model over a horizon of `n` steps into condensed maps.
///
/// The recursion `x(k+i+1) = A x(k+i) + B u[i] + G v[i]` fills the state
/// maps block row by block row; output and emission rows then apply the
/// per-step output equations along the predicted trajectory, pairing stage
/// `i + 1` states with entry `i` of the control and coupling profiles.
pub fn lift_subsystem(model: &SubsystemModel, n: usize) -> LiftedMaps {
    assert!(n >= 1, "horizon must be at least 1");
    let n_x = model.n_x();
    let n_u = model.n_u();
    let n_y = model.n_y();
    let n_v_in = model.n_v_in();
    let n_v_out = model.n_v_out();

    let mut state_x = DMatrix::zeros(n * n_x, n_x);
    let mut state_u = DMatrix::zeros(n * n_x, n * n_u);
    let mut state_v = DMatrix::zeros(n * n_x, n * n_v_in);

    // Row block i holds x(k+i+1) = A * x(k+i) + B u[i] + G v[i].
    let mut prev_x = DMatrix::identity(n_x, n_x);
    for i in 0..n {
        let row_x = &model.a * &prev_x;
        state_x.view_mut((i * n_x, 0), (n_x, n_x)).copy_from(&row_x);
        prev_x = row_x;

        for j in 0..=i {
            // Contribution of u[j] (and v[j]) to x(k+i+1) is A^(i-j) B.
            let power = i - j;
            let mut bu = model.b.clone();
            let mut gv = model.g.clone();
            for _ in 0..power {
                bu = &model.a * bu;
                gv = &model.a * gv;
            }
            state_u
                .view_mut((i * n_x, j * n_u), (n_x, n_u))
                .copy_from(&bu);
            state_v
                .view_mut((i * n_x, j * n_v_in), (n_x, n_v_in))
                .copy_from(&gv);
        }
    }

    // y(k+i+1) = C x(k+i+1) + D u[i] + E v[i]; emission rows likewise with
    // (Cv, Dv, Ev).
    let mut output_x = DMatrix::zeros(n * n_y, n_x);
    let mut output_u = DMatrix::zeros(n * n_y, n * n_u);
    let mut output_v = DMatrix::zeros(n * n_y, n * n_v_in);
    let mut coupling_x = DMatrix::zeros(n * n_v_out, n_x);
    let mut coupling_u = DMatrix::zeros(n * n_v_out, n * n_u);
    let mut coupling_v = DMatrix::zeros(n * n_v_out, n * n_v_in);

    for i in 0..n {
        let xs_x = state_x.view((i * n_x, 0), (n_x, n_x));
        output_x
            .view_mut((i * n_y, 0), (n_y, n_x))
            .copy_from(&(&model.c * xs_x));
        coupling_x
            .view_mut((i * n_v_out, 0), (n_v_out, n_x))
            .copy_from(&(&model.cv * xs_x));
        for j in 0..=i {
            let xs_u = state_u.view((i * n_x, j * n_u), (n_x, n_u));
            let mut ou = &model.c * xs_u;
            let mut cu = &model.cv * xs_u;
            let xs_v = state_v.view((i * n_x, j * n_v_in), (n_x, n_v_in));
            let mut ov = &model.c * xs_v;
            let mut cv = &model.cv * xs_v;
            if j == i {
                ou += &model.d;
                cu += &model.dv;
                ov += &model.e;
                cv += &model.ev;
            }
            output_u
                .view_mut((i * n_y, j * n_u), (n_y, n_u))
                .copy_from(&ou);
            coupling_u
                .view_mut((i * n_v_out, j * n_u), (n_v_out, n_u))
                .copy_from(&cu);
            output_v
                .view_mut((i * n_y, j * n_v_in), (n_y, n_v_in))
                .copy_from(&ov);
            coupling_v
                .view_mut((i * n_v_out, j * n_v_in), (n_v_out, n_v_in))
                .copy_from(&cv);
        }
    }

    LiftedMaps {
        n,
        n_x,
        n_u,
        n_y,
        n_v_in,
        n_v_out,
        state_x,
        state_u,
        state_v,
        output_x,
        output_u,
        output_v,
        coupling_x,
        coupling_u,
        coupling_v,
    }
}

/// Step-by-step reference simulation of the same recursion; the condensed
/// maps must reproduce it exactly. Kept public for oracle-style checks.
pub fn iterate_profiles(
    model: &SubsystemModel,
    x0: &DVector<f64>,
    u: &Profile,
    v: &Profile,
) -> (Profile, Profile, Profile) {
    let n = u.len();
    let mut states = Profile::zeros(n, model.n_x());
    let mut outputs = Profile::zeros(n, model.n_y());
    let mut emitted = Profile::zeros(n, model.n_v_out());
    let mut x = x0.clone();
    for i in 0..n {
        let ui = u.entry(i);
        let vi = v.entry(i);
        x = model.advance(&x, &ui, &vi, &DVector::zeros(model.n_w()));
        states.set_entry(i, &x);
        outputs.set_entry(i, &model.output(&x, &ui, &vi));
        emitted.set_entry(i, &model.coupling_output(&x, &ui, &vi));
    }
    (states, outputs, emitted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SignalLabels;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn scalar_model(a: f64, b: f64, g: f64, c: f64, d: f64, e: f64) -> SubsystemModel {
        SubsystemModel::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, g),
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, c),
            DMatrix::from_element(1, 1, d),
            DMatrix::from_element(1, 1, e),
            DMatrix::from_element(1, 1, c),
            DMatrix::from_element(1, 1, d),
            DMatrix::from_element(1, 1, e),
            nalgebra::DVector::zeros(1),
            nalgebra::DVector::zeros(1),
            SignalLabels::default(),
        )
        .unwrap()
    }

    fn random_model(rng: &mut StdRng, n_x: usize, n_u: usize, n_v: usize) -> SubsystemModel {
        let mut mat = |r: usize, c: usize, scale: f64| {
            DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0) * scale)
        };
        let n_y = n_u;
        SubsystemModel::new(
            mat(n_x, n_x, 0.4),
            mat(n_x, n_u, 1.0),
            mat(n_x, n_v, 1.0),
            mat(n_x, 1, 1.0),
            mat(n_y, n_x, 1.0),
            mat(n_y, n_u, 0.5),
            mat(n_y, n_v, 0.5),
            mat(n_v, n_x, 1.0),
            mat(n_v, n_u, 0.5),
            mat(n_v, n_v, 0.3),
            nalgebra::DVector::zeros(n_u),
            nalgebra::DVector::zeros(n_y),
            SignalLabels::default(),
        )
        .unwrap()
    }

    #[test]
    fn two_hand_iterations() {
        // A = 0.5, B = 1, G = 0, x0 = 1, u = 0 → states (0.5, 0.25).
        let model = scalar_model(0.5, 1.0, 0.0, 1.0, 0.0, 0.0);
        let lifted = lift_subsystem(&model, 2);
        let (states, _) = lifted
            .predict_profiles(
                &nalgebra::DVector::from_element(1, 1.0),
                &Profile::zeros(2, 1),
                &Profile::zeros(2, 1),
            )
            .unwrap();
        assert_abs_diff_eq!(states.entry(0)[0], 0.5);
        assert_abs_diff_eq!(states.entry(1)[0], 0.25);
    }

    #[test]
    fn single_step_through_b() {
        let model = scalar_model(0.5, 1.0, 0.0, 1.0, 0.0, 0.0);
        let lifted = lift_subsystem(&model, 1);
        let u = Profile::from_rows(&[vec![1.0]]).unwrap();
        let (states, _) = lifted
            .predict_profiles(&nalgebra::DVector::zeros(1), &u, &Profile::zeros(1, 1))
            .unwrap();
        assert_abs_diff_eq!(states.entry(0)[0], 1.0);
    }

    #[test]
    fn pure_coupling_effect() {
        // A = 0, B = 0, G = 1, v = (3, 7) → states (3, 7).
        let model = scalar_model(0.0, 0.0, 1.0, 1.0, 0.0, 0.0);
        let lifted = lift_subsystem(&model, 2);
        let v = Profile::from_rows(&[vec![3.0], vec![7.0]]).unwrap();
        let (states, _) = lifted
            .predict_profiles(&nalgebra::DVector::zeros(1), &Profile::zeros(2, 1), &v)
            .unwrap();
        assert_abs_diff_eq!(states.entry(0)[0], 3.0);
        assert_abs_diff_eq!(states.entry(1)[0], 7.0);
    }

    #[test]
    fn coupling_profile_tracks_states() {
        // Cv = 1, Dv = Ev = 0, A = 0.5, B = 1, x0 = 1, u = 0 → (0.5, 0.25).
        let model = scalar_model(0.5, 1.0, 0.0, 1.0, 0.0, 0.0);
        let lifted = lift_subsystem(&model, 2);
        let em = lifted
            .coupling_profile(
                &nalgebra::DVector::from_element(1, 1.0),
                &Profile::zeros(2, 1),
                &Profile::zeros(2, 1),
            )
            .unwrap();
        assert_abs_diff_eq!(em.entry(0)[0], 0.5);
        assert_abs_diff_eq!(em.entry(1)[0], 0.25);
    }

    #[test]
    fn coupling_feedthrough_passes_v() {
        // Ev = 1, Cv = Dv = 0 → emission equals the coupling profile.
        let mut model = scalar_model(0.5, 1.0, 0.0, 1.0, 0.0, 0.0);
        model.cv = DMatrix::zeros(1, 1);
        model.ev = DMatrix::from_element(1, 1, 1.0);
        let lifted = lift_subsystem(&model, 2);
        let v = Profile::from_rows(&[vec![4.0], vec![5.0]]).unwrap();
        let em = lifted
            .coupling_profile(&nalgebra::DVector::zeros(1), &Profile::zeros(2, 1), &v)
            .unwrap();
        assert_abs_diff_eq!(em.entry(0)[0], 4.0);
        assert_abs_diff_eq!(em.entry(1)[0], 5.0);
    }

    #[test]
    fn zero_inputs_zero_profile() {
        let model = scalar_model(0.3, 1.0, 0.5, 1.0, 0.2, 0.1);
        let lifted = lift_subsystem(&model, 4);
        let em = lifted
            .coupling_profile(
                &nalgebra::DVector::zeros(1),
                &Profile::zeros(4, 1),
                &Profile::zeros(4, 1),
            )
            .unwrap();
        assert_eq!(em.max_abs(), 0.0);
    }

    #[test]
    fn condensed_matches_iterative_on_random_instances() {
        let mut rng = StdRng::seed_from_u64(42);
        for case in 0..100 {
            let n_x = rng.random_range(1..4usize);
            let n_u = rng.random_range(1..3usize);
            let n_v = rng.random_range(1..3usize);
            let n = rng.random_range(1..7usize);
            let model = random_model(&mut rng, n_x, n_u, n_v);
            let lifted = lift_subsystem(&model, n);
            let x0 =
                nalgebra::DVector::from_fn(n_x, |_, _| rng.random_range(-2.0..2.0));
            let u = Profile::from_stacked(
                n_u,
                nalgebra::DVector::from_fn(n * n_u, |_, _| rng.random_range(-2.0..2.0)),
            )
            .unwrap();
            let v = Profile::from_stacked(
                n_v,
                nalgebra::DVector::from_fn(n * n_v, |_, _| rng.random_range(-2.0..2.0)),
            )
            .unwrap();

            let (states, outputs) = lifted.predict_profiles(&x0, &u, &v).unwrap();
            let emitted = lifted.coupling_profile(&x0, &u, &v).unwrap();
            let (ref_states, ref_outputs, ref_emitted) = iterate_profiles(&model, &x0, &u, &v);

            let scale = 1.0 + ref_states.max_abs();
            assert!(
                states.max_abs_diff(&ref_states) <= 1e-10 * scale,
                "case {case}: state mismatch"
            );
            assert!(
                outputs.max_abs_diff(&ref_outputs) <= 1e-10 * scale,
                "case {case}: output mismatch"
            );
            assert!(
                emitted.max_abs_diff(&ref_emitted) <= 1e-10 * scale,
                "case {case}: emission mismatch"
            );
        }
    }

    #[test]
    fn coupling_map_jacobians_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(7);
        let model = random_model(&mut rng, 3, 2, 2);
        let n = 4;
        let lifted = lift_subsystem(&model, n);
        let x0 = nalgebra::DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let u = Profile::from_stacked(
            2,
            nalgebra::DVector::from_fn(n * 2, |_, _| rng.random_range(-1.0..1.0)),
        )
        .unwrap();
        let v = Profile::from_stacked(
            2,
            nalgebra::DVector::from_fn(n * 2, |_, _| rng.random_range(-1.0..1.0)),
        )
        .unwrap();
        let h = 1e-6;

        let base = lifted.coupling_profile(&x0, &u, &v).unwrap();
        for j in 0..n * 2 {
            let mut vp = v.clone();
            let mut stacked = vp.stacked().clone();
            stacked[j] += h;
            vp = Profile::from_stacked(2, stacked).unwrap();
            let plus = lifted.coupling_profile(&x0, &u, &vp).unwrap();
            for i in 0..base.stacked().len() {
                let fd = (plus.stacked()[i] - base.stacked()[i]) / h;
                assert_abs_diff_eq!(fd, lifted.coupling_v[(i, j)], epsilon = 1e-8);
            }
        }
    }

    proptest! {
        /// Superposition: prediction is linear in (x0, u, v).
        #[test]
        fn prediction_superposes(seed in 0u64..500) {
            let mut rng = StdRng::seed_from_u64(seed);
            let model = random_model(&mut rng, 2, 1, 1);
            let n = 3;
            let lifted = lift_subsystem(&model, n);
            let rand_profile = |rng: &mut StdRng, w: usize| {
                Profile::from_stacked(
                    w,
                    nalgebra::DVector::from_fn(n * w, |_, _| rng.random_range(-1.0..1.0)),
                )
                .unwrap()
            };
            let u1 = rand_profile(&mut rng, 1);
            let u2 = rand_profile(&mut rng, 1);
            let v = rand_profile(&mut rng, 1);
            let x0 = nalgebra::DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));

            let (s_sum, _) = lifted
                .predict_profiles(
                    &x0,
                    &Profile::from_stacked(1, u1.stacked() + u2.stacked()).unwrap(),
                    &v,
                )
                .unwrap();
            let (s_a, _) = lifted.predict_profiles(&x0, &u1, &v).unwrap();
            let (s_b, _) = lifted
                .predict_profiles(&nalgebra::DVector::zeros(2), &u2, &Profile::zeros(n, 1))
                .unwrap();
            let combined = Profile::from_stacked(2, s_a.stacked() + s_b.stacked()).unwrap();
            prop_assert!(s_sum.max_abs_diff(&combined) <= 1e-10 * (1.0 + s_sum.max_abs()));
        }
    }
}
