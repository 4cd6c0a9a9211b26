use super::{Scalar, Tensor};
use crate::{Error, Result};

/// A fixed, ordered collection of named parameter tensors.
///
/// Gradient buffers and optimizer moments reuse the parameter type itself, so
/// every model struct doubles as its own gradient accumulator.
pub trait ParamSet<T: Scalar> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>);
    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor<T>>);

    fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.collect("", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        self.collect_mut(&mut out);
        out
    }

    fn num_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Same structure with every entry set to zero.
    fn zeroed(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(T::zero());
        }
        z
    }

    /// Element-wise `self += other` over structurally identical sets.
    fn accumulate(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let src = other.named_tensors();
        for (dst, (_, s)) in self.tensors_mut().into_iter().zip(src) {
            for (a, &b) in dst.data_mut().iter_mut().zip(s.data()) {
                *a += b;
            }
        }
    }

    fn scale_all(&mut self, s: T) {
        for t in self.tensors_mut() {
            t.scale(s);
        }
    }
}

impl<T: Scalar, P: ParamSet<T>> ParamSet<T> for Vec<P> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        for (i, p) in self.iter().enumerate() {
            p.collect(&format!("{prefix}{i}."), out);
        }
    }
    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor<T>>) {
        for p in self.iter_mut() {
            p.collect_mut(out);
        }
    }
}

impl<T: Scalar, P: ParamSet<T>> ParamSet<T> for Option<P> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        if let Some(p) = self {
            p.collect(prefix, out);
        }
    }
    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor<T>>) {
        if let Some(p) = self {
            p.collect_mut(out);
        }
    }
}

impl<T: Scalar> ParamSet<T> for Tensor<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        out.push((prefix.trim_end_matches('.').to_string(), self));
    }
    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor<T>>) {
        out.push(self);
    }
}

/// Implements [`ParamSet`] for a struct generic over the scalar by visiting
/// the listed fields in order, naming each tensor `field.subfield…`.
macro_rules! param_set {
    ($ty:ident { $($field:ident),* $(,)? }) => {
        impl<T: $crate::numerics::Scalar> $crate::numerics::ParamSet<T> for $ty<T> {
            fn collect<'a>(
                &'a self,
                prefix: &str,
                out: &mut Vec<(String, &'a $crate::numerics::Tensor<T>)>,
            ) {
                $( $crate::numerics::ParamSet::collect(
                    &self.$field,
                    &format!("{prefix}{}.", stringify!($field)),
                    out,
                ); )*
            }
            fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut $crate::numerics::Tensor<T>>) {
                $( $crate::numerics::ParamSet::collect_mut(&mut self.$field, out); )*
            }
        }
    };
}
pub(crate) use param_set;

/// Concatenates every parameter into one `f64` vector in visiting order.
pub fn flatten_params<T: Scalar, P: ParamSet<T>>(p: &P) -> Vec<f64> {
    p.named_tensors()
        .iter()
        .flat_map(|(_, t)| t.data().iter().map(|v| v.as_f64()))
        .collect()
}

/// Inverse of [`flatten_params`].
pub fn unflatten_params<T: Scalar, P: ParamSet<T>>(p: &mut P, flat: &[f64]) -> Result<()> {
    let total: usize = p.num_params();
    if total != flat.len() {
        return Err(Error::Shape(format!(
            "{} values for {total} parameters",
            flat.len()
        )));
    }
    let mut it = flat.iter();
    for t in p.tensors_mut() {
        for v in t.data_mut() {
            *v = T::of(*it.next().expect("length checked"));
        }
    }
    Ok(())
}
