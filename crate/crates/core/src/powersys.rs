//! Two-bus test system: a slack bus feeding a generator bus with a local
//! load, the generator described by a sixth-order dq model.
//!
//! States `x = [e'q, e''q, e'd, e''d, sin δ, ω]`, algebraic variables
//! `y = [i_d, i_q, v_d, v_q, v2, v_x, v_y, cos δ]`. Every nonlinearity is a
//! product of two variables, so the model is a [`QuadraticDae`].

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dae::{QuadraticDae, QuadraticTerm};
use crate::error::{Error, Result};

pub const N: usize = 6;
pub const M: usize = 8;

pub const E_QP: usize = 0;
pub const E_QPP: usize = 1;
pub const E_DP: usize = 2;
pub const E_DPP: usize = 3;
pub const SIN_DELTA: usize = 4;
pub const OMEGA: usize = 5;
pub const I_D: usize = 6;
pub const I_Q: usize = 7;
pub const V_D: usize = 8;
pub const V_Q: usize = 9;
pub const V_2: usize = 10;
pub const V_X: usize = 11;
pub const V_Y: usize = 12;
pub const COS_DELTA: usize = 13;
/// Field voltage, only present in the setpoint-solving model.
const V_F: usize = 14;

pub const LABELS: [&str; N + M] =
    ["e'q", "e''q", "e'd", "e''d", "sin_delta", "omega", "i_d", "i_q", "v_d", "v_q", "v2", "v_x", "v_y", "cos_delta"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoBusParams {
    pub t_d0p: f64,
    pub t_d0pp: f64,
    pub t_q0p: f64,
    pub t_q0pp: f64,
    pub x_q: f64,
    pub x_qp: f64,
    pub x_qpp: f64,
    /// Not given with the machine data; defaults mirror the q axis.
    pub x_d: f64,
    pub x_dp: f64,
    pub x_dpp: f64,
    pub inertia: f64,
    pub damping: f64,
    pub t_aa: f64,
    pub p_m: f64,
    pub r: f64,
    pub x: f64,
    pub b: f64,
    pub f_n: f64,
    pub v1: f64,
    pub v2: f64,
    pub p_g: f64,
    pub p_l: f64,
    pub q_l: f64,
    /// Field voltage; solved from the `v2` setpoint when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field_voltage: Option<f64>,
}

pub fn default_params() -> TwoBusParams {
    TwoBusParams {
        t_d0p: 0.6,
        t_d0pp: 0.02,
        t_q0p: 0.535,
        t_q0pp: 0.02,
        x_q: 0.8958,
        x_qp: 0.1969,
        x_qpp: 0.1,
        x_d: 0.8958,
        x_dp: 0.1969,
        x_dpp: 0.1,
        inertia: 12.8,
        damping: 20.0,
        t_aa: 0.002,
        p_m: 0.8,
        r: 0.01938,
        x: 0.05,
        b: 0.0528,
        f_n: 60.0,
        v1: 1.04,
        v2: 1.025,
        p_g: 0.8,
        p_l: 1.63,
        q_l: 1.025,
        field_voltage: None,
    }
}

impl TwoBusParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameters(msg));
        for (name, v) in [
            ("t_d0p", self.t_d0p),
            ("t_d0pp", self.t_d0pp),
            ("t_q0p", self.t_q0p),
            ("t_q0pp", self.t_q0pp),
            ("inertia", self.inertia),
            ("f_n", self.f_n),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.t_d0pp >= self.t_d0p || self.t_q0pp >= self.t_q0p {
            return bad("subtransient time constants must be below the transient ones".into());
        }
        if !(self.x_qpp < self.x_qp && self.x_qp < self.x_q) {
            return bad("q-axis reactances must satisfy x''q < x'q < xq".into());
        }
        if !(self.x_dpp < self.x_dp && self.x_dp < self.x_d) {
            return bad("d-axis reactances must satisfy x''d < x'd < xd".into());
        }
        if self.r * self.r + self.x * self.x == 0.0 {
            return bad("line impedance must be nonzero".into());
        }
        let fields = [
            self.x_q,
            self.x_qp,
            self.x_qpp,
            self.x_d,
            self.x_dp,
            self.x_dpp,
            self.damping,
            self.t_aa,
            self.p_m,
            self.r,
            self.x,
            self.b,
            self.v1,
            self.v2,
            self.p_g,
            self.p_l,
            self.q_l,
        ];
        if fields.iter().chain(self.field_voltage.iter()).any(|v| !v.is_finite()) {
            return bad("parameters must be finite".into());
        }
        Ok(())
    }
}

struct Builder {
    dim: usize,
    constant: DVector<f64>,
    linear: DMatrix<f64>,
    quad: Vec<QuadraticTerm>,
}

impl Builder {
    fn new(rows: usize, dim: usize) -> Self {
        Self { dim, constant: DVector::zeros(rows), linear: DMatrix::zeros(rows, dim), quad: Vec::new() }
    }

    fn c(&mut self, eq: usize, v: f64) {
        self.constant[eq] += v;
    }

    fn l(&mut self, eq: usize, j: usize, v: f64) {
        self.linear[(eq, j)] += v;
    }

    fn q(&mut self, eq: usize, j: usize, k: usize, v: f64) {
        self.quad.push(QuadraticTerm { eq, j, k, coeff: v });
    }

    fn build(self, n: usize) -> Result<QuadraticDae> {
        QuadraticDae::new(n, self.dim - n, self.constant, self.linear, &self.quad)
    }
}

/// Generator, swing and network equations. With `vf = None` the field
/// voltage is an extra algebraic unknown pinned by `v2 = V2`.
fn assemble(p: &TwoBusParams, vf: Option<f64>) -> Result<QuadraticDae> {
    let dim = if vf.is_some() { N + M } else { N + M + 1 };
    let mut h = Builder::new(dim, dim);
    let add_vf = |h: &mut Builder, eq: usize, coeff: f64| match vf {
        Some(v) => h.c(eq, coeff * v),
        None => h.l(eq, V_F, coeff),
    };

    let d_corr = p.t_d0pp / p.t_d0p * p.x_dpp / p.x_dp * (p.x_d - p.x_dp);
    let q_corr = p.t_q0pp / p.t_q0p * p.x_qpp / p.x_qp * (p.x_q - p.x_qp);

    h.l(0, E_QP, -1.0 / p.t_d0p);
    h.l(0, I_D, -(p.x_d - p.x_dp - d_corr) / p.t_d0p);
    add_vf(&mut h, 0, (1.0 - p.t_aa / p.t_d0p) / p.t_d0p);

    h.l(1, E_QPP, -1.0 / p.t_d0pp);
    h.l(1, E_QP, 1.0 / p.t_d0pp);
    h.l(1, I_D, -(p.x_dp - p.x_dpp - d_corr) / p.t_d0pp);
    add_vf(&mut h, 1, p.t_aa / p.t_d0p / p.t_d0pp);

    h.l(2, E_DP, -1.0 / p.t_q0p);
    h.l(2, I_Q, (p.x_q - p.x_qp - q_corr) / p.t_q0p);

    h.l(3, E_DPP, -1.0 / p.t_q0pp);
    h.l(3, E_DP, 1.0 / p.t_q0pp);
    h.l(3, I_Q, (p.x_qp - p.x_qpp - q_corr) / p.t_q0pp);

    let wn = 2.0 * PI * p.f_n;
    h.q(4, COS_DELTA, OMEGA, wn);
    h.l(4, COS_DELTA, -wn);

    h.c(5, (p.p_m + p.damping) / p.inertia);
    h.q(5, I_D, V_D, -1.0 / p.inertia);
    h.q(5, I_Q, V_Q, -1.0 / p.inertia);
    h.l(5, OMEGA, -p.damping / p.inertia);

    h.l(6, E_QPP, -1.0);
    h.l(6, I_D, p.x_dpp);
    h.l(6, V_Q, 1.0);

    h.l(7, E_DPP, -1.0);
    h.l(7, I_Q, -p.x_qpp);
    h.l(7, V_D, 1.0);

    h.l(8, V_Q, -1.0);
    h.q(8, COS_DELTA, V_X, 1.0);
    h.q(8, SIN_DELTA, V_Y, 1.0);

    h.l(9, V_D, -1.0);
    h.q(9, SIN_DELTA, V_X, 1.0);
    h.q(9, COS_DELTA, V_Y, -1.0);

    h.c(10, -1.0);
    h.q(10, COS_DELTA, COS_DELTA, 1.0);
    h.q(10, SIN_DELTA, SIN_DELTA, 1.0);

    // Active and reactive injections at bus 2 through the line r + jx
    // with half the shunt susceptance at the bus.
    let z2 = p.r * p.r + p.x * p.x;
    h.q(11, COS_DELTA, I_Q, 1.0);
    h.q(11, I_D, SIN_DELTA, 1.0);
    h.l(11, V_Y, p.b / 2.0 - p.x / z2 - p.q_l);
    h.l(11, V_X, -p.r / z2 - p.p_l);
    h.c(11, p.r * p.v1 / z2);

    h.q(12, COS_DELTA, I_D, -1.0);
    h.q(12, I_Q, SIN_DELTA, 1.0);
    h.l(12, V_X, -p.b / 2.0 + p.x / z2 + p.q_l);
    h.l(12, V_Y, -p.r / z2 - p.p_l);
    h.c(12, -p.x * p.v1 / z2);

    h.q(13, V_2, V_2, 1.0);
    h.q(13, V_X, V_X, -1.0);
    h.q(13, V_Y, V_Y, -1.0);

    if vf.is_none() {
        h.l(N + M, V_2, 1.0);
        h.c(N + M, -p.v2);
    }
    h.build(N)
}

fn initial_guess() -> DVector<f64> {
    DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0, 0.3, 1.0, 0.5, 0.5, 0.3, 1.0, 1.0, 1.0, 0.2, 0.95])
}

/// Field voltage that holds `v2` at its setpoint, with the matching operating point.
pub fn setpoint_field_voltage(params: &TwoBusParams) -> Result<(f64, DVector<f64>)> {
    params.validate()?;
    let aug = assemble(params, None)?;
    let guess = initial_guess();
    let z0 = DVector::from_iterator(N + M + 1, guess.iter().copied().chain(std::iter::once(1.5)));
    let z = aug.solve_equilibrium(&z0)?;
    Ok((z[V_F], z.rows(0, N + M).into_owned()))
}

fn labels() -> Vec<String> {
    LABELS.iter().map(|s| s.to_string()).collect()
}

/// The two-bus model. When `field_voltage` is unset it is solved from the
/// `v2` setpoint.
pub fn build_two_bus(params: &TwoBusParams) -> Result<QuadraticDae> {
    params.validate()?;
    let vf = match params.field_voltage {
        Some(v) => v,
        None => setpoint_field_voltage(params)?.0,
    };
    assemble(params, Some(vf))?.with_labels(labels())
}

/// Operating point of a two-bus model from a flat-ish start.
pub fn two_bus_equilibrium(dae: &QuadraticDae) -> Result<DVector<f64>> {
    if dae.n() != N || dae.m() != M {
        return Err(crate::error::invalid("not a two-bus model"));
    }
    dae.solve_equilibrium(dae.equilibrium().unwrap_or(&initial_guess()))
}

/// Built model with its equilibrium attached.
pub fn two_bus_with_equilibrium(params: &TwoBusParams) -> Result<QuadraticDae> {
    let mut dae = build_two_bus(params)?;
    let z = two_bus_equilibrium(&dae)?;
    dae.set_equilibrium(z)?;
    Ok(dae)
}

/// The model with line reactance scaled by `line_scale`, keeping the
/// pre-fault field voltage.
pub fn fault_variant(params: &TwoBusParams, line_scale: f64) -> Result<QuadraticDae> {
    if !(line_scale >= 1.0 && line_scale.is_finite()) {
        return Err(Error::InvalidParameters(format!("line scale must be finite and at least 1, got {line_scale}")));
    }
    params.validate()?;
    let vf = match params.field_voltage {
        Some(v) => v,
        None => setpoint_field_voltage(params)?.0,
    };
    let faulted = TwoBusParams { x: params.x * line_scale, field_voltage: Some(vf), ..params.clone() };
    assemble(&faulted, Some(vf))?.with_labels(labels())
}
