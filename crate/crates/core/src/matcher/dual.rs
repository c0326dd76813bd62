use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

/// Largest number of hyperparameters a gradient can be taken over.
pub const MAX_PARAMS: usize = 8;

/// Forward-mode dual number: a value and its partials with respect to up
/// to [`MAX_PARAMS`] hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d: [f64; MAX_PARAMS],
}

impl Dual {
    pub const ZERO: Dual = Dual { v: 0.0, d: [0.0; MAX_PARAMS] };

    pub fn constant(v: f64) -> Self {
        Dual { v, d: [0.0; MAX_PARAMS] }
    }

    /// `v` carrying partial `dv` in slot `i`.
    pub fn seed(v: f64, i: usize, dv: f64) -> Self {
        let mut d = [0.0; MAX_PARAMS];
        d[i] = dv;
        Dual { v, d }
    }

    /// f(self) given f(v) and f′(v).
    #[inline]
    pub fn chain(self, fv: f64, dfdv: f64) -> Self {
        let mut d = self.d;
        for x in &mut d {
            *x *= dfdv;
        }
        Dual { v: fv, d }
    }

    /// a·self + b·other on the partials, with value `v`.
    #[inline]
    pub fn combine(v: f64, a: f64, x: &Dual, b: f64, y: &Dual) -> Self {
        let mut d = [0.0; MAX_PARAMS];
        for i in 0..MAX_PARAMS {
            d[i] = a * x.d[i] + b * y.d[i];
        }
        Dual { v, d }
    }

    pub fn square(self) -> Self {
        self.chain(self.v * self.v, 2.0 * self.v)
    }

    /// Square root; the derivative at 0 is taken as 0.
    pub fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, if s > 0.0 { 0.5 / s } else { 0.0 })
    }

    pub fn ln(self) -> Self {
        self.chain(self.v.ln(), 1.0 / self.v)
    }

    pub fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }

    pub fn scale(self, k: f64) -> Self {
        self.chain(self.v * k, k)
    }

    pub fn is_finite(&self) -> bool {
        self.v.is_finite() && self.d.iter().all(|x| x.is_finite())
    }
}

impl Add for Dual {
    type Output = Dual;
    #[inline]
    fn add(self, o: Dual) -> Dual {
        Dual::combine(self.v + o.v, 1.0, &self, 1.0, &o)
    }
}

impl AddAssign for Dual {
    #[inline]
    fn add_assign(&mut self, o: Dual) {
        self.v += o.v;
        for i in 0..MAX_PARAMS {
            self.d[i] += o.d[i];
        }
    }
}

impl Sub for Dual {
    type Output = Dual;
    #[inline]
    fn sub(self, o: Dual) -> Dual {
        Dual::combine(self.v - o.v, 1.0, &self, -1.0, &o)
    }
}

impl Mul for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, o: Dual) -> Dual {
        Dual::combine(self.v * o.v, o.v, &self, self.v, &o)
    }
}

impl Div for Dual {
    type Output = Dual;
    #[inline]
    fn div(self, o: Dual) -> Dual {
        let q = self.v / o.v;
        Dual::combine(q, 1.0 / o.v, &self, -q / o.v, &o)
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        self.scale(-1.0)
    }
}
