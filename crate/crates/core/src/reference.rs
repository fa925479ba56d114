//! Reference parameter values used as penalty anchors, bound centers and
//! initial guesses.

use crate::model::{ParameterSet, RatioKind, Scalars, TimeGrid, GROUPS};

/// Reference confirmation ratio per group.
pub const TAU: [f64; GROUPS] = [0.40, 0.10];
/// Reference infection hospitalization ratio per group.
pub const ZETA: [f64; GROUPS] = [0.25, 0.05];
/// Reference hospitalization fatality ratio per group.
pub const XI: [f64; GROUPS] = [0.40, 0.10];

pub const BETA: [f64; GROUPS] = [0.30, 0.30];
pub const SIGMA: [f64; GROUPS] = [0.25, 0.25];
pub const ETA: [f64; GROUPS] = [0.13, 0.13];
pub const MU: [f64; GROUPS] = [0.13, 0.13];
pub const GAMMA_I: [f64; GROUPS] = [0.20, 0.20];
pub const GAMMA_H: [f64; GROUPS] = [0.14, 0.14];
pub const CONTACT: [[f64; GROUPS]; GROUPS] = [[4.0, 0.5], [0.1, 2.0]];

/// Initial exposed counts inside and outside LTC.
pub const EXPOSED: [f64; GROUPS] = [1.0, 100.0];

/// Reference scalars in flat-vector order.
pub fn scalars() -> Scalars {
    let mut s = [0.0; 16];
    for g in 0..GROUPS {
        s[g] = BETA[g];
        s[2 + g] = SIGMA[g];
        s[4 + g] = ETA[g];
        s[6 + g] = MU[g];
        s[8 + g] = GAMMA_I[g];
        s[10 + g] = GAMMA_H[g];
    }
    s[12] = CONTACT[0][0];
    s[13] = CONTACT[0][1];
    s[14] = CONTACT[1][0];
    s[15] = CONTACT[1][1];
    s
}

/// Reference value of a ratio kind; transmission reduction starts at zero.
pub fn ratio(kind: RatioKind) -> [f64; GROUPS] {
    match kind {
        RatioKind::Alpha => [0.0, 0.0],
        RatioKind::Tau => TAU,
        RatioKind::Zeta => ZETA,
        RatioKind::Xi => XI,
    }
}

/// Constant sequences at the reference ratios with reference scalars.
pub fn reference_parameters(grid: &TimeGrid, population: [f64; GROUPS]) -> ParameterSet {
    let ratios = RatioKind::ALL.map(ratio);
    ParameterSet::constant(grid, ratios, &scalars(), population)
}
