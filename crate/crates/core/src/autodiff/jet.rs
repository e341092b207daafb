//! Second-order forward-mode jets in two spatial variables.
//!
//! A `Jet2` carries a value together with first and second partial
//! derivatives with respect to the two spatial coordinates. Arithmetic
//! propagates all six components by the chain rule, so evaluating a
//! closed-form expression (or a network forward pass) on seeded jets
//! yields the exact Hessian-in-(x,y) of that expression. The Reynolds
//! number is deliberately not a jet variable: it rides along as a plain
//! constant wherever it appears.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Value plus first/second spatial derivatives: (v, ∂x, ∂y, ∂xx, ∂yy, ∂xy).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet2 {
    pub value: f64,
    pub dx: f64,
    pub dy: f64,
    pub dxx: f64,
    pub dyy: f64,
    pub dxy: f64,
}

impl Jet2 {
    /// A constant: value only, every derivative slot zero.
    #[inline]
    pub const fn constant(value: f64) -> Self {
        Jet2 { value, dx: 0.0, dy: 0.0, dxx: 0.0, dyy: 0.0, dxy: 0.0 }
    }

    /// Seed the x-coordinate: d/dx = 1, everything else zero.
    #[inline]
    pub const fn seed_x(value: f64) -> Self {
        Jet2 { value, dx: 1.0, dy: 0.0, dxx: 0.0, dyy: 0.0, dxy: 0.0 }
    }

    /// Seed the y-coordinate: d/dy = 1, everything else zero.
    #[inline]
    pub const fn seed_y(value: f64) -> Self {
        Jet2 { value, dx: 0.0, dy: 1.0, dxx: 0.0, dyy: 0.0, dxy: 0.0 }
    }

    /// Seed an affinely rescaled coordinate, e.g. a normalized network
    /// input x̂ = s·x + c: the first-derivative slot carries s, second
    /// derivatives stay zero.
    #[inline]
    pub const fn seed_affine_x(value: f64, slope: f64) -> Self {
        Jet2 { value, dx: slope, dy: 0.0, dxx: 0.0, dyy: 0.0, dxy: 0.0 }
    }

    /// Same as [`seed_affine_x`](Self::seed_affine_x) for the y slot.
    #[inline]
    pub const fn seed_affine_y(value: f64, slope: f64) -> Self {
        Jet2 { value, dx: 0.0, dy: slope, dxx: 0.0, dyy: 0.0, dxy: 0.0 }
    }

    #[inline]
    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.dx.is_finite()
            && self.dy.is_finite()
            && self.dxx.is_finite()
            && self.dyy.is_finite()
            && self.dxy.is_finite()
    }

    /// Multiply every component by a plain constant.
    #[inline]
    pub fn scale(self, k: f64) -> Self {
        Jet2 {
            value: k * self.value,
            dx: k * self.dx,
            dy: k * self.dy,
            dxx: k * self.dxx,
            dyy: k * self.dyy,
            dxy: k * self.dxy,
        }
    }

    /// Add a plain constant to the value component.
    #[inline]
    pub fn offset(self, k: f64) -> Self {
        Jet2 { value: self.value + k, ..self }
    }

    /// Apply a scalar function through the second-order chain rule.
    /// `f0 = f(v)`, `f1 = f'(v)`, `f2 = f''(v)`:
    ///   (f∘a)'  = f'·a'
    ///   (f∘a)'' = f'·a'' + f''·a'²   (mixed: f'·a_xy + f''·a_x·a_y)
    #[inline]
    pub fn lift(self, f0: f64, f1: f64, f2: f64) -> Self {
        Jet2 {
            value: f0,
            dx: f1 * self.dx,
            dy: f1 * self.dy,
            dxx: f1 * self.dxx + f2 * self.dx * self.dx,
            dyy: f1 * self.dyy + f2 * self.dy * self.dy,
            dxy: f1 * self.dxy + f2 * self.dx * self.dy,
        }
    }

    #[inline]
    pub fn recip(self) -> Self {
        let inv = 1.0 / self.value;
        // (1/v)' = -1/v², (1/v)'' = 2/v³
        self.lift(inv, -inv * inv, 2.0 * inv * inv * inv)
    }

    #[inline]
    pub fn exp(self) -> Self {
        let e = self.value.exp();
        self.lift(e, e, e)
    }

    #[inline]
    pub fn ln(self) -> Self {
        let inv = 1.0 / self.value;
        self.lift(self.value.ln(), inv, -inv * inv)
    }

    #[inline]
    pub fn sqrt(self) -> Self {
        let s = self.value.sqrt();
        let f1 = 0.5 / s;
        // f'' = -1/(4 v^{3/2})
        self.lift(s, f1, -0.5 * f1 / self.value)
    }

    #[inline]
    pub fn tanh(self) -> Self {
        let t = self.value.tanh();
        let sech2 = 1.0 - t * t;
        self.lift(t, sech2, -2.0 * t * sech2)
    }

    #[inline]
    pub fn sin(self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.lift(s, c, -s)
    }

    #[inline]
    pub fn cos(self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.lift(c, -s, -c)
    }

    /// ln(1 + eˣ), evaluated in the overflow-safe branch form.
    #[inline]
    pub fn softplus(self) -> Self {
        let v = self.value;
        let f0 = if v > 0.0 { v + (-v).exp().ln_1p() } else { v.exp().ln_1p() };
        let s = sigmoid(v);
        self.lift(f0, s, s * (1.0 - s))
    }

    /// Logistic function 1/(1+e⁻ˣ).
    #[inline]
    pub fn sigmoid(self) -> Self {
        let s = sigmoid(self.value);
        let s1 = s * (1.0 - s);
        self.lift(s, s1, s1 * (1.0 - 2.0 * s))
    }

    /// General power aᵇ for a > 0, via exp(b·ln a).
    #[inline]
    pub fn powf(self, e: Jet2) -> Self {
        (e * self.ln()).exp()
    }

    /// max(a, k) with the tie resolved toward `a`. When the value drops
    /// below the floor the result is the constant `k`: derivative
    /// information is intentionally cut, matching how clipping floors
    /// are meant to behave inside the turbulence closure.
    #[inline]
    pub fn floor_at(self, k: f64) -> Self {
        if self.value >= k {
            self
        } else {
            Jet2::constant(k)
        }
    }
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Add for Jet2 {
    type Output = Jet2;
    #[inline]
    fn add(self, rhs: Jet2) -> Jet2 {
        Jet2 {
            value: self.value + rhs.value,
            dx: self.dx + rhs.dx,
            dy: self.dy + rhs.dy,
            dxx: self.dxx + rhs.dxx,
            dyy: self.dyy + rhs.dyy,
            dxy: self.dxy + rhs.dxy,
        }
    }
}

impl Sub for Jet2 {
    type Output = Jet2;
    #[inline]
    fn sub(self, rhs: Jet2) -> Jet2 {
        Jet2 {
            value: self.value - rhs.value,
            dx: self.dx - rhs.dx,
            dy: self.dy - rhs.dy,
            dxx: self.dxx - rhs.dxx,
            dyy: self.dyy - rhs.dyy,
            dxy: self.dxy - rhs.dxy,
        }
    }
}

impl Mul for Jet2 {
    type Output = Jet2;
    /// Product rule through second order:
    ///   (fg)'' = f''g + 2f'g' + fg''
    ///   (fg)_xy = f_xy·g + f_x·g_y + f_y·g_x + f·g_xy
    #[inline]
    fn mul(self, rhs: Jet2) -> Jet2 {
        Jet2 {
            value: self.value * rhs.value,
            dx: self.dx * rhs.value + self.value * rhs.dx,
            dy: self.dy * rhs.value + self.value * rhs.dy,
            dxx: self.dxx * rhs.value + 2.0 * self.dx * rhs.dx + self.value * rhs.dxx,
            dyy: self.dyy * rhs.value + 2.0 * self.dy * rhs.dy + self.value * rhs.dyy,
            dxy: self.dxy * rhs.value
                + self.dx * rhs.dy
                + self.dy * rhs.dx
                + self.value * rhs.dxy,
        }
    }
}

impl Div for Jet2 {
    type Output = Jet2;
    #[inline]
    fn div(self, rhs: Jet2) -> Jet2 {
        self * rhs.recip()
    }
}

impl Neg for Jet2 {
    type Output = Jet2;
    #[inline]
    fn neg(self) -> Jet2 {
        self.scale(-1.0)
    }
}

/// The elementary operations the lifting API exposes by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LiftOp {
    Add,
    Sub,
    Mul,
    Div,
    Tanh,
    Exp,
    Ln,
    Sqrt,
    Pow,
}

impl LiftOp {
    fn arity(self) -> usize {
        match self {
            LiftOp::Add | LiftOp::Sub | LiftOp::Mul | LiftOp::Div | LiftOp::Pow => 2,
            _ => 1,
        }
    }
}

/// Domain violations surfaced by [`lift_elementary`]. The unchecked
/// operators follow IEEE semantics; this API refuses to produce NaN.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DomainError {
    #[error("{op:?} expects {expected} argument(s), got {got}")]
    Arity { op: LiftOp, expected: usize, got: usize },
    #[error("ln of non-positive value {value}")]
    LnNonPositive { value: f64 },
    #[error("division by zero value")]
    DivByZero,
    #[error("sqrt of negative value {value}")]
    SqrtNegative { value: f64 },
    #[error("pow with non-positive base {value}")]
    PowNonPositiveBase { value: f64 },
}

/// Apply a named elementary operation with domain checking.
///
/// This is the safe entry point for code that assembles expressions
/// dynamically; hot paths use the operators directly after validating
/// their inputs once.
pub fn lift_elementary(op: LiftOp, args: &[Jet2]) -> Result<Jet2, DomainError> {
    if args.len() != op.arity() {
        return Err(DomainError::Arity { op, expected: op.arity(), got: args.len() });
    }
    match op {
        LiftOp::Add => Ok(args[0] + args[1]),
        LiftOp::Sub => Ok(args[0] - args[1]),
        LiftOp::Mul => Ok(args[0] * args[1]),
        LiftOp::Div => {
            if args[1].value == 0.0 {
                return Err(DomainError::DivByZero);
            }
            Ok(args[0] / args[1])
        }
        LiftOp::Tanh => Ok(args[0].tanh()),
        LiftOp::Exp => Ok(args[0].exp()),
        LiftOp::Ln => {
            if args[0].value <= 0.0 {
                return Err(DomainError::LnNonPositive { value: args[0].value });
            }
            Ok(args[0].ln())
        }
        LiftOp::Sqrt => {
            if args[0].value < 0.0 {
                return Err(DomainError::SqrtNegative { value: args[0].value });
            }
            Ok(args[0].sqrt())
        }
        LiftOp::Pow => {
            if args[0].value <= 0.0 {
                return Err(DomainError::PowNonPositiveBase { value: args[0].value });
            }
            Ok(args[0].powf(args[1]))
        }
    }
}

impl fmt::Display for Jet2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [dx {}, dy {}, dxx {}, dyy {}, dxy {}]",
            self.value, self.dx, self.dy, self.dxx, self.dyy, self.dxy
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Central finite differences of a plain scalar field, used as the
    /// independent oracle for every jet component. First derivatives use
    /// h = 1e-4, second derivatives h = 1e-3 (FD rounding noise on second
    /// differences grows like eps/h², so the wider step is the accurate
    /// one there).
    fn fd_jet(f: &dyn Fn(f64, f64) -> f64, x: f64, y: f64) -> Jet2 {
        let h1 = 1e-4;
        let h2 = 1e-3;
        Jet2 {
            value: f(x, y),
            dx: (f(x + h1, y) - f(x - h1, y)) / (2.0 * h1),
            dy: (f(x, y + h1) - f(x, y - h1)) / (2.0 * h1),
            dxx: (f(x + h2, y) - 2.0 * f(x, y) + f(x - h2, y)) / (h2 * h2),
            dyy: (f(x, y + h2) - 2.0 * f(x, y) + f(x, y - h2)) / (h2 * h2),
            dxy: (f(x + h2, y + h2) - f(x + h2, y - h2) - f(x - h2, y + h2)
                + f(x - h2, y - h2))
                / (4.0 * h2 * h2),
        }
    }

    /// Relative comparison with an absolute floor at the FD noise level.
    fn assert_close(analytic: f64, fd: f64, rel: f64, what: &str) {
        let diff = (analytic - fd).abs();
        let scale = analytic.abs().max(fd.abs()).max(1e-2);
        assert!(
            diff <= rel * scale,
            "{what}: analytic {analytic} vs finite-difference {fd} (diff {diff:e})"
        );
    }

    fn assert_jet_matches_fd(jet: Jet2, fd: Jet2, ctx: &str) {
        assert_close(jet.value, fd.value, 1e-9, &format!("{ctx} value"));
        assert_close(jet.dx, fd.dx, 1e-6, &format!("{ctx} dx"));
        assert_close(jet.dy, fd.dy, 1e-6, &format!("{ctx} dy"));
        assert_close(jet.dxx, fd.dxx, 1e-4, &format!("{ctx} dxx"));
        assert_close(jet.dyy, fd.dyy, 1e-4, &format!("{ctx} dyy"));
        assert_close(jet.dxy, fd.dxy, 1e-4, &format!("{ctx} dxy"));
    }

    /// Base field with nonzero curvature and mixed term, strictly positive
    /// on [-0.5, 0.5]² so that ln/sqrt/div stay in-domain.
    fn base(x: f64, y: f64) -> f64 {
        0.9 + 0.3 * x + 0.2 * y + 0.25 * x * y + 0.15 * x * x - 0.1 * y * y
    }

    fn base_jet(x: Jet2, y: Jet2) -> Jet2 {
        Jet2::constant(0.9)
            + x.scale(0.3)
            + y.scale(0.2)
            + (x * y).scale(0.25)
            + (x * x).scale(0.15)
            - (y * y).scale(0.1)
    }

    /// Second base field for binary ops, also positive on the test square.
    fn base2(x: f64, y: f64) -> f64 {
        1.4 - 0.2 * x + 0.35 * y + 0.1 * x * x + 0.3 * x * y
    }

    fn base2_jet(x: Jet2, y: Jet2) -> Jet2 {
        Jet2::constant(1.4) - x.scale(0.2)
            + y.scale(0.35)
            + (x * x).scale(0.1)
            + (x * y).scale(0.3)
    }

    fn sample_points(n: usize) -> Vec<(f64, f64)> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
        (0..n).map(|_| (rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5))).collect()
    }

    /// Every elementary operation, composed over the curved base fields,
    /// agrees with central finite differences in all six components.
    #[test]
    fn elementary_ops_match_finite_differences() {
        type Pair = (&'static str, fn(f64, f64) -> f64, fn(Jet2, Jet2) -> Jet2);
        let cases: Vec<Pair> = vec![
            ("add", |x, y| base(x, y) + base2(x, y), |x, y| base_jet(x, y) + base2_jet(x, y)),
            ("sub", |x, y| base(x, y) - base2(x, y), |x, y| base_jet(x, y) - base2_jet(x, y)),
            ("mul", |x, y| base(x, y) * base2(x, y), |x, y| base_jet(x, y) * base2_jet(x, y)),
            ("div", |x, y| base(x, y) / base2(x, y), |x, y| base_jet(x, y) / base2_jet(x, y)),
            ("tanh", |x, y| base(x, y).tanh(), |x, y| base_jet(x, y).tanh()),
            ("exp", |x, y| base(x, y).exp(), |x, y| base_jet(x, y).exp()),
            ("ln", |x, y| base(x, y).ln(), |x, y| base_jet(x, y).ln()),
            ("sqrt", |x, y| base(x, y).sqrt(), |x, y| base_jet(x, y).sqrt()),
            ("recip", |x, y| 1.0 / base(x, y), |x, y| base_jet(x, y).recip()),
            ("sin", |x, y| base(x, y).sin(), |x, y| base_jet(x, y).sin()),
            ("cos", |x, y| base(x, y).cos(), |x, y| base_jet(x, y).cos()),
            (
                "softplus",
                |x, y| (1.0 + base(x, y).exp()).ln(),
                |x, y| base_jet(x, y).softplus(),
            ),
            (
                "sigmoid",
                |x, y| 1.0 / (1.0 + (-base(x, y)).exp()),
                |x, y| base_jet(x, y).sigmoid(),
            ),
            (
                "pow",
                |x, y| base(x, y).powf(base2(x, y)),
                |x, y| base_jet(x, y).powf(base2_jet(x, y)),
            ),
        ];
        let points = sample_points(1000);
        for (name, plain, jet) in cases {
            for &(x, y) in &points {
                let fd = fd_jet(&plain, x, y);
                let j = jet(Jet2::seed_x(x), Jet2::seed_y(y));
                assert_jet_matches_fd(j, fd, &format!("{name} at ({x}, {y})"));
            }
        }
    }

    /// x·y seeded at (2, 3): the mixed slot is the only second derivative.
    #[test]
    fn product_of_seeds_has_unit_mixed_derivative() {
        let j = Jet2::seed_x(2.0) * Jet2::seed_y(3.0);
        assert_eq!(j.value, 6.0);
        assert_eq!(j.dx, 3.0);
        assert_eq!(j.dy, 2.0);
        assert_eq!(j.dxx, 0.0);
        assert_eq!(j.dyy, 0.0);
        assert_eq!(j.dxy, 1.0);
    }

    #[test]
    fn constants_have_empty_derivative_slots() {
        let c = Jet2::constant(7.5);
        assert_eq!((c.dx, c.dy, c.dxx, c.dyy, c.dxy), (0.0, 0.0, 0.0, 0.0, 0.0));
        let seeded = Jet2::seed_x(1.25);
        assert_eq!(seeded.value, 1.25);
        assert_eq!(seeded.dx, 1.0);
        assert_eq!(seeded.dy, 0.0);
    }

    #[test]
    fn floor_at_cuts_derivatives_below_threshold() {
        let above = base_jet(Jet2::seed_x(0.2), Jet2::seed_y(0.1));
        assert_eq!(above.floor_at(0.5), above);
        let below = above.floor_at(2.0);
        assert_eq!(below, Jet2::constant(2.0));
    }

    #[test]
    fn checked_lift_rejects_domain_violations() {
        let neg = Jet2::constant(-1.0);
        let zero = Jet2::constant(0.0);
        let one = Jet2::constant(1.0);
        assert_eq!(
            lift_elementary(LiftOp::Ln, &[neg]),
            Err(DomainError::LnNonPositive { value: -1.0 })
        );
        assert_eq!(lift_elementary(LiftOp::Div, &[one, zero]), Err(DomainError::DivByZero));
        assert_eq!(
            lift_elementary(LiftOp::Sqrt, &[neg]),
            Err(DomainError::SqrtNegative { value: -1.0 })
        );
        assert_eq!(
            lift_elementary(LiftOp::Pow, &[zero, one]),
            Err(DomainError::PowNonPositiveBase { value: 0.0 })
        );
        assert_eq!(
            lift_elementary(LiftOp::Tanh, &[one, one]),
            Err(DomainError::Arity { op: LiftOp::Tanh, expected: 1, got: 2 })
        );
        // In-domain calls succeed and stay finite.
        let ok = lift_elementary(LiftOp::Pow, &[one.offset(1.0), one.scale(0.5)]).unwrap();
        assert!(ok.is_finite());
    }

    proptest! {
        /// Jets are linear: jet(a·f + b·g) = a·jet(f) + b·jet(g), exactly.
        #[test]
        fn linearity(
            x in -1.0f64..1.0, y in -1.0f64..1.0,
            a in -3.0f64..3.0, b in -3.0f64..3.0,
        ) {
            let (jx, jy) = (Jet2::seed_x(x), Jet2::seed_y(y));
            let f = base_jet(jx, jy);
            let g = base2_jet(jx, jy);
            let combined = f.scale(a) + g.scale(b);
            let resummed = Jet2 {
                value: a * f.value + b * g.value,
                dx: a * f.dx + b * g.dx,
                dy: a * f.dy + b * g.dy,
                dxx: a * f.dxx + b * g.dxx,
                dyy: a * f.dyy + b * g.dyy,
                dxy: a * f.dxy + b * g.dxy,
            };
            prop_assert_eq!(combined, resummed);
        }

        /// Multiplication commutes componentwise. The second-derivative
        /// slots sum the same terms in a different association, so the
        /// comparison allows one part in 1e14.
        #[test]
        fn multiplication_commutes(x in -1.0f64..1.0, y in -1.0f64..1.0) {
            let f = base_jet(Jet2::seed_x(x), Jet2::seed_y(y));
            let g = base2_jet(Jet2::seed_x(x), Jet2::seed_y(y));
            let (fg, gf) = (f * g, g * f);
            for (a, b) in [
                (fg.value, gf.value), (fg.dx, gf.dx), (fg.dy, gf.dy),
                (fg.dxx, gf.dxx), (fg.dyy, gf.dyy), (fg.dxy, gf.dxy),
            ] {
                prop_assert!((a - b).abs() <= 1e-14 * a.abs().max(b.abs()).max(1.0));
            }
        }

        /// The mixed second derivative is symmetric: seeding (x, y) and
        /// evaluating f(x, y) vs the transposed field f(y, x) swaps dx/dy
        /// and dxx/dyy but leaves dxy unchanged.
        #[test]
        fn mixed_derivative_is_symmetric(x in -1.0f64..1.0, y in -1.0f64..1.0) {
            let f = base_jet(Jet2::seed_x(x), Jet2::seed_y(y));
            let t = base_jet(Jet2::seed_y(x), Jet2::seed_x(y));
            prop_assert_eq!(f.dxy, t.dxy);
            prop_assert_eq!(f.dx, t.dy);
            prop_assert_eq!(f.dxx, t.dyy);
        }
    }
}
