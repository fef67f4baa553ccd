//! Reference systems used by the tests, the acceptance suite and the experiment files.

use crate::model::{affine_rho, mat, LpvDelaySystem};
use crate::polymat::{ParamBox, PolyMatrix};

/// Two-state oscillator with parameter-dependent stiffness and delayed damping,
/// scheduled on `[0, 1]`. No control input.
pub fn scheduled_oscillator(h: f64) -> LpvDelaySystem {
    let mut s = LpvDelaySystem::zeros(2, 1, 0, 1, ParamBox::unit(), h);
    s.a = affine_rho(2, 2, &[0.0, 1.0, -2.0, 1.0], &[0.0, 0.0, -1.0, 0.0]);
    s.a_d = affine_rho(2, 2, &[-1.0, 0.0, -1.0, -1.0], &[0.0, 0.0, -1.0, 0.0]);
    s.c = PolyMatrix::constant(mat(1, 2, &[1.0, 0.0]));
    s.c_d = s.c.clone();
    s.e = s.c.transpose();
    s
}

/// Open-loop unstable two-state plant with one input, scheduled on `[0, 1]`.
pub fn unstable_plant(h: f64) -> LpvDelaySystem {
    let mut s = LpvDelaySystem::zeros(2, 1, 1, 1, ParamBox::unit(), h);
    s.a = affine_rho(2, 2, &[2.0, -0.5, -1.0, -2.0], &[-1.0, -0.5, 0.0, 0.1]);
    s.a_d = affine_rho(2, 2, &[-1.0, 0.0, 0.05, -1.0], &[0.0, 0.0, -0.45, 0.0]);
    s.b = PolyMatrix::constant(mat(2, 1, &[1.0, 0.0]));
    s.e = PolyMatrix::constant(mat(2, 1, &[0.1, 0.1]));
    s.c = PolyMatrix::constant(mat(1, 2, &[0.0, 1.0]));
    s.c_d = s.c.clone();
    s.d = PolyMatrix::constant(mat(1, 1, &[1.0]));
    s
}

/// Published memory gains `(K, Kd)` for [`unstable_plant`]; a structural reference only.
pub fn published_gains() -> (PolyMatrix, PolyMatrix) {
    let s = 1.0 / 13.678;
    let k = affine_rho(1, 2, &[-15.689 * s, -1.1362 * s], &[11.446 * s, 6.18 * s]);
    let kd = affine_rho(1, 2, &[-12.622 * s, 3.0325 * s], &[-0.99326 * s, 0.15588 * s]);
    (k, kd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polymat::Point;

    #[test]
    fn plant_entries() {
        let s = unstable_plant(0.5);
        let a = s.a.eval(&Point::rho(1.0)).unwrap();
        assert_eq!(a, mat(2, 2, &[1.0, -1.0, -1.0, -1.9]));
        let ad = s.a_d.eval(&Point::rho(1.0)).unwrap();
        assert!((ad[(1, 0)] + 0.4).abs() < 1e-15);
        s.check_structure().unwrap();
        scheduled_oscillator(0.1).check_structure().unwrap();
    }
}
