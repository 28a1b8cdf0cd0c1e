//! Real, orthonormal spherical harmonics up to degree 4.
//!
//! Values are emitted in `(l, m)` order, `m` ascending from `-l` to `l`, as
//! Cartesian polynomials of the unit direction. The polynomial form lets the
//! same code produce Jacobians when evaluated on dual numbers.

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::real::{Real, Scalar};

pub const MAX_SH_DEGREE: usize = 4;

/// Number of basis functions for all bands `l ≤ degree`.
pub const fn sh_len(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Evaluate the basis into `out`, which must hold at least `sh_len(degree)` values.
pub fn sh_eval<S: Scalar>(dir: Vec3<S>, degree: usize, out: &mut [S]) {
    debug_assert!(degree <= MAX_SH_DEGREE && out.len() >= sh_len(degree));
    let c = S::lit;
    let (x, y, z) = (dir.x, dir.y, dir.z);
    out[0] = c(0.282_094_791_773_878_14);
    if degree == 0 {
        return;
    }
    out[1] = c(-0.488_602_511_902_919_9) * y;
    out[2] = c(0.488_602_511_902_919_9) * z;
    out[3] = c(-0.488_602_511_902_919_9) * x;
    if degree == 1 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    out[4] = c(1.092_548_430_592_079_2) * xy;
    out[5] = c(-1.092_548_430_592_079_2) * yz;
    out[6] = c(0.946_174_695_757_56) * zz - c(0.315_391_565_252_52);
    out[7] = c(-1.092_548_430_592_079_2) * xz;
    out[8] = c(0.546_274_215_296_039_6) * (xx - yy);
    if degree == 2 {
        return;
    }
    out[9] = c(0.590_043_589_926_643_5) * y * (c(-3.0) * xx + yy);
    out[10] = c(2.890_611_442_640_554) * xy * z;
    out[11] = c(0.457_045_799_464_465_7) * y * (c(1.0) - c(5.0) * zz);
    out[12] = c(0.373_176_332_590_115_4) * z * (c(5.0) * zz - c(3.0));
    out[13] = c(0.457_045_799_464_465_7) * x * (c(1.0) - c(5.0) * zz);
    out[14] = c(1.445_305_721_320_277) * z * (xx - yy);
    out[15] = c(0.590_043_589_926_643_5) * x * (-xx + c(3.0) * yy);
    if degree == 3 {
        return;
    }
    out[16] = c(2.503_342_941_796_705) * xy * (xx - yy);
    out[17] = c(1.770_130_769_779_930_5) * yz * (c(-3.0) * xx + yy);
    out[18] = c(0.946_174_695_757_56) * xy * (c(7.0) * zz - c(1.0));
    out[19] = c(0.669_046_543_557_289_2) * yz * (c(3.0) - c(7.0) * zz);
    out[20] = c(-3.173_566_407_456_129_4) * zz + c(3.702_494_142_032_150_7) * zz * zz + c(0.317_356_640_745_612_9);
    out[21] = c(0.669_046_543_557_289_2) * xz * (c(3.0) - c(7.0) * zz);
    out[22] = c(0.473_087_347_878_78) * (xx - yy) * (c(7.0) * zz - c(1.0));
    out[23] = c(1.770_130_769_779_930_5) * xz * (-xx + c(3.0) * yy);
    out[24] = c(-3.755_014_412_695_057) * xx * yy + c(0.625_835_735_449_176_1) * (xx * xx + yy * yy);
}

/// Checked evaluation of the basis for a unit direction.
pub fn sh_basis<T: Real>(dir: Vec3<T>, degree: usize) -> Result<Vec<T>> {
    if degree > MAX_SH_DEGREE {
        return Err(Error::invalid(format!("SH degree {degree} outside 0..={MAX_SH_DEGREE}")));
    }
    let n = dir.norm().val();
    if (n - 1.0).abs() > T::UNIT_TOL {
        return Err(Error::invalid(format!("SH direction must be unit length, got norm {n}")));
    }
    let mut out = vec![T::zero(); sh_len(degree)];
    sh_eval(dir, degree, &mut out);
    Ok(out)
}
