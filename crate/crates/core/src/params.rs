//! Named parameter tensors.
//!
//! Every trainable structure exposes its tensors in a fixed order through
//! [`ParamSet`]; the optimizer, checkpoint codec and gradient checks are
//! written once against that trait.

/// Read-only visitor: tensor name, shape and values.
pub type Visitor<'a> = dyn FnMut(&'static str, &[usize], &[f64]) + 'a;

/// A fixed, ordered collection of named `f64` tensors.
pub trait ParamSet: Clone {
    fn visit(&self, f: &mut Visitor<'_>);
    fn visit_mut(&mut self, f: &mut dyn FnMut(&'static str, &mut [f64]));

    /// Same shapes, all zeros.
    fn zeros_like(&self) -> Self;

    fn n_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, v| n += v.len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        self.visit(&mut |_, _, v| out.extend_from_slice(v));
        out
    }

    fn tensor_names(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        self.visit(&mut |n, _, _| out.push(n));
        out
    }

    /// `self[i] += scale * other[i]` for every tensor.
    fn add_scaled(&mut self, other: &Self, scale: f64) {
        let flat = other.flatten();
        let mut off = 0;
        self.visit_mut(&mut |_, v| {
            for (x, g) in v.iter_mut().zip(&flat[off..]) {
                *x += scale * g;
            }
            off += v.len();
        });
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, _, v| ok &= v.iter().all(|x| x.is_finite()));
        ok
    }
}

/// Implements [`ParamSet`] for a struct whose listed fields are
/// standard-layout ndarray arrays.
#[macro_export]
macro_rules! impl_param_set {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl $crate::params::ParamSet for $ty {
            fn visit(&self, f: &mut $crate::params::Visitor<'_>) {
                $( f(stringify!($field), self.$field.shape(),
                     self.$field.as_slice().expect("standard layout")); )*
            }
            fn visit_mut(&mut self, f: &mut dyn FnMut(&'static str, &mut [f64])) {
                $( f(stringify!($field),
                     self.$field.as_slice_mut().expect("standard layout")); )*
            }
            fn zeros_like(&self) -> Self {
                let mut z = self.clone();
                z.visit_mut(&mut |_, v| v.iter_mut().for_each(|x| *x = 0.0));
                z
            }
        }
    };
}
