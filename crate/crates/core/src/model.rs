//! Model parameters, the voltage velocity field and the constructive
//! constants of the Harris argument.
//!
//! Every other module reads the physics from [`ModelParams`]; nothing else
//! re-derives `J`, `g_F` or the Lyapunov weight.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Physical constants of the linear voltage-conductance model.
///
/// Field names follow the configuration keys (`g_L`, `V_E`, ...).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    /// Leak conductance.
    #[serde(rename = "g_L")]
    pub g_l: f64,
    /// Excitatory reversal potential.
    #[serde(rename = "V_E")]
    pub v_e: f64,
    /// Reset voltage.
    #[serde(rename = "V_R")]
    pub v_r: f64,
    /// Firing threshold.
    #[serde(rename = "V_F")]
    pub v_f: f64,
    /// Diffusion coefficient of the conductance.
    pub a: f64,
    /// Mean input conductance.
    pub g_in: f64,
}

impl Default for ModelParams {
    /// Normalized setting `V_R = 0`, `V_F = 1`, `a = g_in = 1` with
    /// `g_L = 1`, `V_E = 2`.
    fn default() -> Self {
        Self { g_l: 1.0, v_e: 2.0, v_r: 0.0, v_f: 1.0, a: 1.0, g_in: 1.0 }
    }
}

impl ModelParams {
    pub fn new(g_l: f64, v_e: f64, v_r: f64, v_f: f64, a: f64, g_in: f64) -> Result<Self> {
        let p = Self { g_l, v_e, v_r, v_f, a, g_in };
        p.validate()?;
        Ok(p)
    }

    /// Normalized voltages and noise with the given leak and reversal potential.
    pub fn normalized(g_l: f64, v_e: f64) -> Result<Self> {
        Self::new(g_l, v_e, 0.0, 1.0, 1.0, 1.0)
    }

    /// Full check of the model invariants.
    pub fn validate(&self) -> Result<()> {
        self.validate_dynamics()?;
        if self.a <= 0.0 {
            return Err(invalid("a", format!("must be > 0, got {}", self.a)));
        }
        Ok(())
    }

    /// Same as [`validate`](Self::validate) but admits `a = 0`, the
    /// noiseless mode used by the particle simulator.
    pub fn validate_dynamics(&self) -> Result<()> {
        let finite = [
            ("g_L", self.g_l),
            ("V_E", self.v_e),
            ("V_R", self.v_r),
            ("V_F", self.v_f),
            ("a", self.a),
            ("g_in", self.g_in),
        ];
        for (key, x) in finite {
            if !x.is_finite() {
                return Err(invalid(key, format!("must be finite, got {x}")));
            }
        }
        if self.g_l <= 0.0 {
            return Err(invalid("g_L", format!("must be > 0, got {}", self.g_l)));
        }
        if self.v_f <= self.v_r {
            return Err(invalid("V_F", format!("must exceed V_R={}, got {}", self.v_r, self.v_f)));
        }
        if self.v_e <= self.v_f {
            return Err(invalid("V_E", format!("must exceed V_F={}, got {}", self.v_f, self.v_e)));
        }
        if self.a < 0.0 {
            return Err(invalid("a", format!("must be >= 0, got {}", self.a)));
        }
        if self.g_in <= 0.0 {
            return Err(invalid("g_in", format!("must be > 0, got {}", self.g_in)));
        }
        Ok(())
    }

    /// Voltage velocity `J(v, g) = g_L (V_R - v) + g (V_E - v)`.
    #[inline]
    pub fn velocity(&self, v: f64, g: f64) -> f64 {
        self.g_l * (self.v_r - v) + g * (self.v_e - v)
    }

    /// Conductance at which `J(V_F, g)` changes sign.
    pub fn critical_conductance(&self) -> Result<f64> {
        if self.v_e <= self.v_f {
            return Err(invalid("V_E", format!("must exceed V_F={}, got {}", self.v_f, self.v_e)));
        }
        Ok(self.g_l * (self.v_f - self.v_r) / (self.v_e - self.v_f))
    }

    /// Unchecked `g_F`; only meaningful for validated parameters.
    #[inline]
    pub fn g_f(&self) -> f64 {
        self.g_l * (self.v_f - self.v_r) / (self.v_e - self.v_f)
    }

    /// Lyapunov weight `W(v, g) = (g - g_in)^2`.
    #[inline]
    pub fn lyapunov(&self, g: f64) -> f64 {
        let d = g - self.g_in;
        d * d
    }

    /// Voltage where `J(., g)` vanishes.
    pub fn voltage_nullcline(&self, g: f64) -> f64 {
        (self.g_l * self.v_r + g * self.v_e) / (self.g_l + g)
    }

    pub fn voltage_span(&self) -> f64 {
        self.v_f - self.v_r
    }
}

/// Explicit constants of the minorization construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarrisConstants {
    pub v_star: f64,
    pub g_star: f64,
    /// Half-width of the box `N` in voltage.
    pub v_r: f64,
    /// Half-width of the box `N` in conductance.
    pub g_r: f64,
    /// Minimal inward voltage speed on the vertical faces of `N`.
    pub j_star: f64,
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub t: f64,
    /// Lyapunov level of the small set.
    pub r: f64,
    /// Upper conductance of the small set `C(R)`.
    pub m_of_r: f64,
    /// Lower conductance of the small set (zero once `R >= g_in^2`).
    pub g_low: f64,
    pub beta: f64,
}

impl HarrisConstants {
    /// Default half-widths for the box `N` around the zero point.
    ///
    /// `v_r = min(0.05, g*/2)`; `g_r` is sized so the right face keeps a
    /// strictly negative velocity: half the ratio of the two partial
    /// derivatives of `J` at the zero point.
    pub fn default_half_widths(params: &ModelParams) -> (f64, f64) {
        let (v_star, g_star) = zero_point(params);
        let v_r = (0.05f64).min(g_star / 2.0);
        let slope_ratio = (params.g_l + g_star) / (params.v_e - v_star);
        let g_r = (0.5 * slope_ratio * v_r).min(g_star / 2.0);
        (v_r, g_r)
    }

    /// Does `(v, g)` lie in `C(R)`?
    pub fn in_small_set(&self, v: f64, g: f64, params: &ModelParams) -> bool {
        v >= params.v_r && v < params.v_f && g >= self.g_low && g <= self.m_of_r
    }

    /// Does `(v, g)` lie in the box `N`?
    pub fn in_box(&self, v: f64, g: f64) -> bool {
        (v - self.v_star).abs() <= self.v_r && (g - self.g_star).abs() <= self.g_r
    }
}

/// Zero of `J` at the midpoint voltage: `((V_R + V_F)/2, g*)`.
pub fn zero_point(params: &ModelParams) -> (f64, f64) {
    let v_star = 0.5 * (params.v_r + params.v_f);
    let g_star = params.g_l * (v_star - params.v_r) / (params.v_e - v_star);
    (v_star, g_star)
}

/// Builds the constants for Lyapunov level `r` and box half-widths
/// `(v_half, g_half)`, rejecting boxes whose faces are not strictly inflowing.
pub fn harris_constants(params: &ModelParams, r: f64, v_half: f64, g_half: f64) -> Result<HarrisConstants> {
    params.validate()?;
    if !(r >= 1.0) || !r.is_finite() {
        return Err(invalid("R", format!("must be >= 1, got {r}")));
    }
    if !(v_half > 0.0) || !(g_half > 0.0) {
        return Err(invalid("v_r", format!("box half-widths must be > 0, got ({v_half}, {g_half})")));
    }
    let (v_star, g_star) = zero_point(params);
    if g_star - g_half <= 0.0 {
        return Err(invalid("g_r", format!("g* - g_r = {} must be > 0", g_star - g_half)));
    }
    if v_star - v_half <= params.v_r || v_star + v_half >= params.v_f {
        return Err(invalid("v_r", format!("box [{}, {}] leaves the voltage range", v_star - v_half, v_star + v_half)));
    }

    // J is increasing in g on each vertical face, so the extremes sit at the
    // corners. The left face must push right and the right face push left.
    let (g_lo, g_hi) = (g_star - g_half, g_star + g_half);
    let left = [params.velocity(v_star - v_half, g_lo), params.velocity(v_star - v_half, g_hi)];
    let right = [params.velocity(v_star + v_half, g_lo), params.velocity(v_star + v_half, g_hi)];
    if left[0] <= 0.0 || right[1] >= 0.0 {
        return Err(invalid(
            "g_r",
            format!(
                "faces of N are not inflowing (J_left_min = {}, J_right_max = {}); shrink g_r relative to v_r",
                left[0], right[1]
            ),
        ));
    }
    let j_star = left.iter().chain(right.iter()).fold(f64::INFINITY, |m, j| m.min(j.abs()));

    let span = params.voltage_span();
    // span / ((2 g* + 3)(V_E - V_R)) with g* expanded, so the normalized
    // case evaluates 1.5 / 11 and rounds once.
    let head = params.v_e - v_star;
    let t2 = span * head / ((2.0 * params.g_l * (v_star - params.v_r) + 3.0 * head) * (params.v_e - params.v_r));
    let t3 = span / (2.0 * j_star);
    let t1 = 1.0 + t3;
    let root = r.sqrt();
    Ok(HarrisConstants {
        v_star,
        g_star,
        v_r: v_half,
        g_r: g_half,
        j_star,
        t1,
        t2,
        t3,
        t: t1 + t2,
        r,
        m_of_r: params.g_in + root,
        g_low: (params.g_in - root).max(0.0),
        beta: 1.0,
    })
}

/// [`harris_constants`] with [`HarrisConstants::default_half_widths`].
pub fn harris_constants_default(params: &ModelParams, r: f64) -> Result<HarrisConstants> {
    let (v_half, g_half) = HarrisConstants::default_half_widths(params);
    harris_constants(params, r, v_half, g_half)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;

    fn fig2() -> ModelParams {
        ModelParams::normalized(1.0, 2.0).unwrap()
    }

    #[test]
    fn velocity_examples() {
        let p = fig2();
        assert_eq!(p.velocity(0.5, 1.0 / 3.0), 0.0);
        assert_eq!(p.velocity(0.0, 0.0), 0.0);
        assert_eq!(p.velocity(1.0, 1.0), 0.0);
    }

    #[test]
    fn critical_conductance_examples() {
        assert_eq!(fig2().critical_conductance().unwrap(), 1.0);
        let p = ModelParams::new(2.0, 3.0, 0.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(p.critical_conductance().unwrap(), 1.0);
        let tiny = ModelParams { g_l: 1e-300, ..fig2() };
        assert!(tiny.critical_conductance().unwrap() < 1e-299);
        let bad = ModelParams { v_e: 1.0, ..fig2() };
        assert!(bad.critical_conductance().is_err());
        assert!(ModelParams::new(1.0, 0.5, 0.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn validation_names_the_key() {
        let err = ModelParams::new(1.0, 1.0, 0.0, 1.0, 1.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { key: "V_E", .. }));
        let err = ModelParams::new(-1.0, 2.0, 0.0, 1.0, 1.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { key: "g_L", .. }));
        let err = ModelParams::new(1.0, 2.0, 0.0, 1.0, 0.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { key: "a", .. }));
    }

    #[test]
    fn harris_constants_normalized() {
        let h = harris_constants_default(&fig2(), 1.0).unwrap();
        assert_eq!(h.v_star, 0.5);
        assert_eq!(h.g_star, 1.0 / 3.0);
        assert_eq!(h.m_of_r, 2.0);
        assert_eq!(h.t2, 3.0 / 22.0);
        assert_eq!(fig2().velocity(h.v_star, h.g_star), 0.0);
        assert_eq!(h.t1, 1.0 + h.t3);
        assert_eq!(h.t, h.t1 + h.t2);
        assert!(h.j_star > 0.0);
        assert_eq!(h.g_low, 0.0);
    }

    #[test]
    fn degenerate_box_rejected() {
        assert!(harris_constants(&fig2(), 1.0, 0.0, 0.0).is_err());
        assert!(harris_constants(&fig2(), 0.5, 0.05, 0.02).is_err());
    }

    #[test]
    fn square_box_is_not_trapping() {
        // On the right face v = 0.55 the velocity changes sign inside
        // [g* - 0.05, g* + 0.05], so the true minimum of |J| there is zero.
        let p = fig2();
        assert!(p.velocity(0.55, 1.0 / 3.0 - 0.05) < 0.0);
        assert!(p.velocity(0.55, 1.0 / 3.0 + 0.05) > 0.0);
        assert!(harris_constants(&p, 1.0, 0.05, 0.05).is_err());
    }

    /// Brute-force minimum of |J| over both vertical faces.
    fn face_min_brute(p: &ModelParams, h: &HarrisConstants) -> f64 {
        let n = 20_000;
        let mut m = f64::INFINITY;
        for k in 0..=n {
            let g = h.g_star - h.g_r + 2.0 * h.g_r * k as f64 / n as f64;
            m = m.min(p.velocity(h.v_star - h.v_r, g).abs());
            m = m.min(p.velocity(h.v_star + h.v_r, g).abs());
        }
        m
    }

    #[test]
    fn j_star_matches_brute_force() {
        let p = fig2();
        for (vr, gr) in [(0.05, 0.02), (0.05, 0.0222), (0.1, 0.03), (0.02, 0.001)] {
            let h = harris_constants(&p, 1.0, vr, gr).unwrap();
            assert!((h.j_star - face_min_brute(&p, &h)).abs() < 1e-12, "({vr}, {gr})");
        }
    }

    fn params_strategy() -> impl Strategy<Value = ModelParams> {
        (0.1f64..5.0, 0.05f64..3.0, -1.0f64..1.0, 0.2f64..2.0, 0.1f64..3.0, 0.1f64..3.0).prop_map(
            |(g_l, ve_gap, v_r, span, a, g_in)| ModelParams {
                g_l,
                v_e: v_r + span + ve_gap,
                v_r,
                v_f: v_r + span,
                a,
                g_in,
            },
        )
    }

    proptest! {
        #[test]
        fn zero_set_position(p in params_strategy(), frac in 0.01f64..0.99, above in 0.01f64..10.0) {
            let g_f = p.g_f();
            prop_assert!(p.velocity(p.v_f, g_f).abs() < 1e-12 * (1.0 + g_f));
            let v_low = p.voltage_nullcline(g_f * frac);
            prop_assert!(v_low > p.v_r && v_low < p.v_f);
            let v_high = p.voltage_nullcline(g_f + above);
            prop_assert!(v_high > p.v_f && v_high < p.v_e);
        }

        #[test]
        fn monotone_in_each_variable(p in params_strategy(), v in -1.0f64..1.5, g in 0.0f64..5.0, d in 1e-3f64..1.0) {
            prop_assert!(p.velocity(v + d, g) < p.velocity(v, g));
            if v < p.v_e {
                prop_assert!(p.velocity(v, g + d) > p.velocity(v, g));
            }
        }

        #[test]
        fn boundary_signs(p in params_strategy(), g in 1e-6f64..10.0) {
            prop_assert!(p.velocity(p.v_r, g) > 0.0);
            let g_f = p.g_f();
            if (g - g_f).abs() > 1e-9 {
                prop_assert_eq!(p.velocity(p.v_f, g) < 0.0, g < g_f);
            }
        }

        #[test]
        fn accepted_constants_satisfy_invariants(p in params_strategy(), r in 1.0f64..50.0, vr in 0.001f64..0.2, gr in 0.0005f64..0.2) {
            if let Ok(h) = harris_constants(&p, r, vr, gr) {
                prop_assert!(p.velocity(h.v_star, h.g_star).abs() < 1e-12);
                prop_assert!(h.j_star > 0.0);
                prop_assert!(h.g_star - h.g_r > 0.0);
                prop_assert_eq!(h.t1, 1.0 + h.t3);
                prop_assert_eq!(h.t, h.t1 + h.t2);
                prop_assert_eq!(h.m_of_r, p.g_in + r.sqrt());
            }
        }
    }
}
