//! Arithmetic backends for expression evaluation.
//!
//! One tree walk serves four number types: plain floats, intervals, and
//! forward-mode duals over either. Fallible operations return `None` on a
//! domain violation and the caller attaches the offending node.

use super::interval::Interval;

pub(crate) trait Number: Clone {
    fn constant(c: f64, n_vars: usize) -> Self;
    fn variable(index: usize, value: &Self::Seed, n_vars: usize) -> Self;
    type Seed;

    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn div(&self, o: &Self) -> Option<Self>;
    fn neg(&self) -> Self;
    fn powi(&self, k: i32) -> Option<Self>;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn exp(&self) -> Self;
    fn sqrt(&self) -> Option<Self>;
    fn abs(&self) -> Self;
    fn min(&self, o: &Self) -> Self;
    fn max(&self, o: &Self) -> Self;
}

impl Number for f64 {
    type Seed = f64;

    fn constant(c: f64, _: usize) -> Self {
        c
    }
    fn variable(_: usize, value: &f64, _: usize) -> Self {
        *value
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Option<Self> {
        (*o != 0.0).then(|| self / o)
    }
    fn neg(&self) -> Self {
        -self
    }
    fn powi(&self, k: i32) -> Option<Self> {
        (k >= 0 || *self != 0.0).then(|| f64::powi(*self, k))
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn sqrt(&self) -> Option<Self> {
        (*self >= 0.0).then(|| f64::sqrt(*self))
    }
    fn abs(&self) -> Self {
        f64::abs(*self)
    }
    fn min(&self, o: &Self) -> Self {
        if self <= o {
            *self
        } else {
            *o
        }
    }
    fn max(&self, o: &Self) -> Self {
        if self >= o {
            *self
        } else {
            *o
        }
    }
}

impl Number for Interval {
    type Seed = Interval;

    fn constant(c: f64, _: usize) -> Self {
        Interval::point(c)
    }
    fn variable(_: usize, value: &Interval, _: usize) -> Self {
        *value
    }
    fn add(&self, o: &Self) -> Self {
        Interval::add(self, o)
    }
    fn sub(&self, o: &Self) -> Self {
        Interval::sub(self, o)
    }
    fn mul(&self, o: &Self) -> Self {
        Interval::mul(self, o)
    }
    fn div(&self, o: &Self) -> Option<Self> {
        Interval::div(self, o)
    }
    fn neg(&self) -> Self {
        Interval::neg(self)
    }
    fn powi(&self, k: i32) -> Option<Self> {
        Interval::powi(self, k)
    }
    fn sin(&self) -> Self {
        Interval::sin(self)
    }
    fn cos(&self) -> Self {
        Interval::cos(self)
    }
    fn exp(&self) -> Self {
        Interval::exp(self)
    }
    fn sqrt(&self) -> Option<Self> {
        Interval::sqrt(self)
    }
    fn abs(&self) -> Self {
        Interval::abs(self)
    }
    fn min(&self, o: &Self) -> Self {
        Interval::min(self, o)
    }
    fn max(&self, o: &Self) -> Self {
        Interval::max(self, o)
    }
}

/// Scalar operations a dual number needs from its component type.
pub(crate) trait DualBase: Number<Seed = Self> {
    fn zero() -> Self;
    fn one() -> Self;
    /// Sign of the derivative of `abs` at this value (right branch at 0).
    fn abs_slope(&self) -> Self;
    /// `Some(true)` if self <= o everywhere, `Some(false)` if self > o
    /// everywhere, `None` if undecided (overlapping intervals).
    fn le(&self, o: &Self) -> Option<bool>;
    fn hull(&self, o: &Self) -> Self;
}

impl DualBase for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn abs_slope(&self) -> Self {
        if *self >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }
    fn le(&self, o: &Self) -> Option<bool> {
        Some(self <= o)
    }
    fn hull(&self, _: &Self) -> Self {
        *self
    }
}

impl DualBase for Interval {
    fn zero() -> Self {
        Interval::point(0.0)
    }
    fn one() -> Self {
        Interval::point(1.0)
    }
    fn abs_slope(&self) -> Self {
        if self.lo >= 0.0 {
            Interval::point(1.0)
        } else if self.hi < 0.0 {
            Interval::point(-1.0)
        } else {
            Interval::new(-1.0, 1.0)
        }
    }
    fn le(&self, o: &Self) -> Option<bool> {
        if self.hi <= o.lo {
            Some(true)
        } else if self.lo > o.hi {
            Some(false)
        } else {
            None
        }
    }
    fn hull(&self, o: &Self) -> Self {
        Interval::hull(self, o)
    }
}

/// Value plus full gradient with respect to every model variable.
#[derive(Clone, Debug)]
pub(crate) struct Dual<T> {
    pub value: T,
    pub grad: Vec<T>,
}

impl<T: DualBase> Dual<T> {
    fn map_grad(&self, scale: &T) -> Vec<T> {
        self.grad.iter().map(|g| g.mul(scale)).collect()
    }

    fn chain(value: T, inner: &Dual<T>, slope: &T) -> Self {
        Dual {
            value,
            grad: inner.map_grad(slope),
        }
    }
}

impl<T: DualBase> Number for Dual<T> {
    type Seed = T;

    fn constant(c: f64, n_vars: usize) -> Self {
        Dual {
            value: T::constant(c, n_vars),
            grad: vec![T::zero(); n_vars],
        }
    }

    fn variable(index: usize, value: &T, n_vars: usize) -> Self {
        let mut grad = vec![T::zero(); n_vars];
        grad[index] = T::one();
        Dual {
            value: value.clone(),
            grad,
        }
    }

    fn add(&self, o: &Self) -> Self {
        Dual {
            value: self.value.add(&o.value),
            grad: self.grad.iter().zip(&o.grad).map(|(a, b)| a.add(b)).collect(),
        }
    }

    fn sub(&self, o: &Self) -> Self {
        Dual {
            value: self.value.sub(&o.value),
            grad: self.grad.iter().zip(&o.grad).map(|(a, b)| a.sub(b)).collect(),
        }
    }

    fn mul(&self, o: &Self) -> Self {
        Dual {
            value: self.value.mul(&o.value),
            grad: self
                .grad
                .iter()
                .zip(&o.grad)
                .map(|(a, b)| a.mul(&o.value).add(&self.value.mul(b)))
                .collect(),
        }
    }

    fn div(&self, o: &Self) -> Option<Self> {
        let value = self.value.div(&o.value)?;
        let denom = o.value.powi(2)?;
        let grad = self
            .grad
            .iter()
            .zip(&o.grad)
            .map(|(a, b)| a.mul(&o.value).sub(&self.value.mul(b)).div(&denom))
            .collect::<Option<Vec<_>>>()?;
        Some(Dual { value, grad })
    }

    fn neg(&self) -> Self {
        Dual {
            value: self.value.neg(),
            grad: self.grad.iter().map(|g| g.neg()).collect(),
        }
    }

    fn powi(&self, k: i32) -> Option<Self> {
        if k == 0 {
            return Some(Self::constant(1.0, self.grad.len()));
        }
        let value = self.value.powi(k)?;
        let slope = self.value.powi(k - 1)?.mul(&T::constant(k as f64, 0));
        Some(Self::chain(value, self, &slope))
    }

    fn sin(&self) -> Self {
        Self::chain(self.value.sin(), self, &self.value.cos())
    }

    fn cos(&self) -> Self {
        Self::chain(self.value.cos(), self, &self.value.sin().neg())
    }

    fn exp(&self) -> Self {
        let e = self.value.exp();
        Self::chain(e.clone(), self, &e)
    }

    fn sqrt(&self) -> Option<Self> {
        let s = self.value.sqrt()?;
        // The derivative is unbounded where the argument touches zero.
        let slope = T::one().div(&s.add(&s))?;
        Some(Self::chain(s, self, &slope))
    }

    fn abs(&self) -> Self {
        Self::chain(self.value.abs(), self, &self.value.abs_slope())
    }

    fn min(&self, o: &Self) -> Self {
        match self.value.le(&o.value) {
            Some(true) => self.clone(),
            Some(false) => o.clone(),
            None => Dual {
                value: self.value.min(&o.value),
                grad: self.grad.iter().zip(&o.grad).map(|(a, b)| a.hull(b)).collect(),
            },
        }
    }

    fn max(&self, o: &Self) -> Self {
        // Ties go to the first argument: self >= o  <=>  !(self < o).
        match o.value.le(&self.value) {
            Some(true) => self.clone(),
            Some(false) => o.clone(),
            None => Dual {
                value: self.value.max(&o.value),
                grad: self.grad.iter().zip(&o.grad).map(|(a, b)| a.hull(b)).collect(),
            },
        }
    }
}
