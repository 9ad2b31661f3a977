//! Method-call sugar over `libm` so numeric code reads the same as with std.

#[cfg_attr(test, allow(dead_code))]
pub(crate) trait F64Ext {
    fn sqrt(self) -> f64;
    fn sin(self) -> f64;
    fn cos(self) -> f64;
    fn exp(self) -> f64;
    fn ln(self) -> f64;
    fn cosh(self) -> f64;
    fn sinh(self) -> f64;
    fn powf(self, e: f64) -> f64;
    fn hypot(self, other: f64) -> f64;
    fn floor(self) -> f64;
    fn ceil(self) -> f64;
    fn acosh(self) -> f64;
    fn max_f(self, other: f64) -> f64;
    fn min_f(self, other: f64) -> f64;
}

impl F64Ext for f64 {
    fn sqrt(self) -> f64 {
        libm::sqrt(self)
    }
    fn sin(self) -> f64 {
        libm::sin(self)
    }
    fn cos(self) -> f64 {
        libm::cos(self)
    }
    fn exp(self) -> f64 {
        libm::exp(self)
    }
    fn ln(self) -> f64 {
        libm::log(self)
    }
    fn cosh(self) -> f64 {
        libm::cosh(self)
    }
    fn sinh(self) -> f64 {
        libm::sinh(self)
    }
    fn powf(self, e: f64) -> f64 {
        libm::pow(self, e)
    }
    fn hypot(self, other: f64) -> f64 {
        libm::hypot(self, other)
    }
    fn floor(self) -> f64 {
        libm::floor(self)
    }
    fn ceil(self) -> f64 {
        libm::ceil(self)
    }
    fn acosh(self) -> f64 {
        libm::acosh(self)
    }
    fn max_f(self, other: f64) -> f64 {
        if self > other {
            self
        } else {
            other
        }
    }
    fn min_f(self, other: f64) -> f64 {
        if self < other {
            self
        } else {
            other
        }
    }
}
