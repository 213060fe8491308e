//! Slice-wise sine/cosine for the activation layers.
//!
//! Three-part Cody-Waite reduction by pi/2 followed by the fdlibm kernel
//! polynomials. Accurate to a few ulp for |x| < 2^20, which covers every
//! pre-activation the networks produce; larger inputs fall back to std.

const FRAC_2_PI: f64 = std::f64::consts::FRAC_2_PI;
const PIO2_1: f64 = 1.570_796_326_734_125_614_17e0;
const PIO2_2: f64 = 6.077_100_506_303_965_976_60e-11;
const PIO2_3: f64 = 2.022_266_248_711_166_455_80e-21;
const ROUND: f64 = 6_755_399_441_055_744.0; // 1.5 * 2^52

const S1: f64 = -1.666_666_666_666_663_243_48e-1;
const S2: f64 = 8.333_333_333_322_489_461_24e-3;
const S3: f64 = -1.984_126_982_985_794_931_34e-4;
const S4: f64 = 2.755_731_370_707_006_767_89e-6;
const S5: f64 = -2.505_076_025_340_686_341_95e-8;
const S6: f64 = 1.589_690_995_211_550_102_21e-10;

const C1: f64 = 4.166_666_666_666_660_190_37e-2;
const C2: f64 = -1.388_888_888_887_410_957_49e-3;
const C3: f64 = 2.480_158_728_947_672_941_78e-5;
const C4: f64 = -2.755_731_435_139_066_330_35e-7;
const C5: f64 = 2.087_572_321_298_174_827_90e-9;
const C6: f64 = -1.135_964_755_778_819_482_65e-11;

const LIMIT: f64 = 1_048_576.0;

#[inline(always)]
fn kernel(x: f64) -> (f64, f64) {
    let shifted = x * FRAC_2_PI + ROUND;
    // low mantissa bits of the shifted value hold the quadrant index mod 4
    let quadrant = shifted.to_bits() & 3;
    let q = shifted - ROUND;
    let r = ((x - q * PIO2_1) - q * PIO2_2) - q * PIO2_3;
    let z = r * r;
    let sr = r + r * z * (S1 + z * (S2 + z * (S3 + z * (S4 + z * (S5 + z * S6)))));
    let cr = 1.0 - 0.5 * z + z * z * (C1 + z * (C2 + z * (C3 + z * (C4 + z * (C5 + z * C6)))));
    let swap = 0u64.wrapping_sub(quadrant & 1);
    let (sb, cb) = (sr.to_bits(), cr.to_bits());
    let s = (sb & !swap) | (cb & swap);
    let c = (cb & !swap) | (sb & swap);
    let s_sign = (quadrant & 2) << 62;
    let c_sign = ((quadrant + 1) & 2) << 62;
    (f64::from_bits(s ^ s_sign), f64::from_bits(c ^ c_sign))
}

#[cfg(test)]
#[inline]
pub fn sincos(x: f64) -> (f64, f64) {
    if x.abs() < LIMIT {
        kernel(x)
    } else {
        x.sin_cos()
    }
}

#[inline(always)]
fn sincos_slice_body(x: &[f64], s: &mut [f64], c: &mut [f64]) {
    let n = x.len().min(s.len()).min(c.len());
    let (x, s, c) = (&x[..n], &mut s[..n], &mut c[..n]);
    let mut in_range = true;
    for i in 0..n {
        let (a, b) = kernel(x[i]);
        s[i] = a;
        c[i] = b;
        in_range &= x[i].abs() < LIMIT;
    }
    if !in_range {
        for i in 0..n {
            if !(x[i].abs() < LIMIT) {
                (s[i], c[i]) = x[i].sin_cos();
            }
        }
    }
}

// Wider vectors only; no FMA, so both paths round identically.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn sincos_slice_avx2(x: &[f64], s: &mut [f64], c: &mut [f64]) {
    sincos_slice_body(x, s, c)
}

pub fn sincos_slice(x: &[f64], s: &mut [f64], c: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the required CPU feature was detected at runtime.
            return unsafe { sincos_slice_avx2(x, s, c) };
        }
    }
    sincos_slice_body(x, s, c)
}
