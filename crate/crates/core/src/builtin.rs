//! Named demo models.

use nalgebra::{DMatrix, DVector};

use crate::dae::{QuadraticDae, QuadraticTerm};
use crate::error::{invalid, Result};
use crate::powersys::{default_params, fault_variant, two_bus_with_equilibrium};

pub const NAMES: [&str; 5] = ["scalar", "linear", "scalar-fault", "two-bus", "two-bus-fault"];

/// Line-reactance factor of the `two-bus-fault` demo.
pub const TWO_BUS_FAULT_SCALE: f64 = 5.0;

fn scalar_labels() -> Vec<String> {
    vec!["x".into(), "y".into()]
}

fn one_by_one(a: f64, b: f64, c: f64, d: f64, terms: &[QuadraticTerm]) -> Result<QuadraticDae> {
    let lin = DMatrix::from_row_slice(2, 2, &[a, b, c, d]);
    QuadraticDae::new(1, 1, DVector::zeros(2), lin, terms)?
        .with_labels(scalar_labels())?
        .with_equilibrium(DVector::zeros(2))
}

/// `ẋ = −x + y`, `0 = x − 2y + y²`.
pub fn scalar() -> Result<QuadraticDae> {
    one_by_one(-1.0, 1.0, 1.0, -2.0, &[QuadraticTerm { eq: 1, j: 1, k: 1, coeff: 1.0 }])
}

/// `ẋ = −x + y`, `0 = x − 2y`, which reduces to `ẋ = −x/2`.
pub fn linear() -> Result<QuadraticDae> {
    one_by_one(-1.0, 1.0, 1.0, -2.0, &[])
}

/// `ẋ = −x + 3y`, `0 = x − 2y`, which reduces to `ẋ = x/2`.
pub fn scalar_fault() -> Result<QuadraticDae> {
    one_by_one(-1.0, 3.0, 1.0, -2.0, &[])
}

pub fn by_name(name: &str) -> Result<QuadraticDae> {
    match name {
        "scalar" => scalar(),
        "linear" => linear(),
        "scalar-fault" => scalar_fault(),
        "two-bus" => two_bus_with_equilibrium(&default_params()),
        "two-bus-fault" => fault_variant(&default_params(), TWO_BUS_FAULT_SCALE),
        _ => Err(invalid(format!("unknown built-in model '{name}' (known: {})", NAMES.join(", ")))),
    }
}
