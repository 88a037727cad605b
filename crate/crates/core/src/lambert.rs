//! Lambert W on its two real branches, by Halley iteration.

const TOL: f64 = 1e-12;
const BRANCH_POINT: f64 = -1.0 / std::f64::consts::E;

fn halley(x: f64, mut w: f64) -> f64 {
    for _ in 0..100 {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        if wp1 == 0.0 {
            break;
        }
        let step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1));
        w -= step;
        if step.abs() <= TOL * (1.0 + w.abs()) {
            break;
        }
    }
    w
}

/// Principal branch `W_0(x)`, `x >= -1/e`; `W_0 >= -1`.
pub fn lambert_w0(x: f64) -> f64 {
    if x.is_nan() || x < BRANCH_POINT {
        return f64::NAN;
    }
    if x == BRANCH_POINT {
        return -1.0;
    }
    if x == 0.0 {
        return 0.0;
    }
    let w = if x < -0.3 {
        let p = (2.0 * (std::f64::consts::E * x + 1.0)).sqrt();
        -1.0 + p - p * p / 3.0
    } else if x < 3.0 {
        x.ln_1p() * 0.9
    } else {
        let l = x.ln();
        l - l.ln()
    };
    halley(x, w)
}

/// Lower branch `W_{-1}(x)`, `-1/e <= x < 0`; `W_{-1} <= -1`.
pub fn lambert_wm1(x: f64) -> f64 {
    if !(BRANCH_POINT..0.0).contains(&x) {
        return f64::NAN;
    }
    if x == BRANCH_POINT {
        return -1.0;
    }
    let w = if x < -0.25 {
        let p = -(2.0 * (std::f64::consts::E * x + 1.0)).sqrt();
        -1.0 + p - p * p / 3.0
    } else {
        let l1 = (-x).ln();
        l1 - (-l1).ln()
    };
    halley(x, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check(w: f64, x: f64) {
        assert!((w * w.exp() - x).abs() <= 1e-12 * x.abs().max(1e-300) + 1e-15, "w={w} x={x}");
    }

    #[test]
    fn inverts_w_exp_w() {
        for x in [-0.367, -0.3, -0.1, -1e-6, 1e-8, 0.5, 1.0, 10.0, 1e6, 1e100] {
            let w = lambert_w0(x);
            assert!(w >= -1.0);
            check(w, x);
        }
        for x in [-0.3678, -0.3, -0.1, -1e-3, -1e-10, -1e-100] {
            let w = lambert_wm1(x);
            assert!(w <= -1.0);
            check(w, x);
        }
        assert!((lambert_w0(1.0) - 0.567_143_290_409_783_8).abs() < 1e-15);
        assert!((lambert_w0(std::f64::consts::E) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn domain_edges() {
        assert!(lambert_w0(-1.0).is_nan());
        assert!(lambert_wm1(0.1).is_nan());
        assert_eq!(lambert_w0(BRANCH_POINT), -1.0);
    }
}
