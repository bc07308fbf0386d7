//! Atomic-unit conversion constants for the dimensionless field strengths.
//!
//! The electric field enters as `f = F / F0` and the magnetic field as
//! `gamma = B / B0`; all other quantities in this crate are in atomic
//! Hartree units.

/// Atomic unit of electric field strength in V/m.
pub const F0_V_PER_M: f64 = 5.14e11;

/// Atomic unit of magnetic flux density in T.
pub const B0_TESLA: f64 = 2.35e5;

/// Electric field in SI units (V/m) for a dimensionless `f`.
pub fn electric_field_si(f: f64) -> f64 {
    f * F0_V_PER_M
}

/// Magnetic flux density in SI units (T) for a dimensionless `gamma`.
pub fn magnetic_field_si(gamma: f64) -> f64 {
    gamma * B0_TESLA
}
