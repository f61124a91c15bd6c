//! Flat parameter and gradient vectors with a named segment layout.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{self, Scalar};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Ordered segments that tile `[0, len)` with no gap or overlap.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    segments: Vec<Segment>,
}

impl Layout {
    /// Builds a contiguous layout from `(name, len)` pairs.
    pub fn contiguous<S: Into<String>>(blocks: impl IntoIterator<Item = (S, usize)>) -> Self {
        let mut offset = 0;
        let segments = blocks
            .into_iter()
            .map(|(name, len)| {
                let seg = Segment { name: name.into(), offset, len };
                offset += len;
                seg
            })
            .collect();
        Layout { segments }
    }

    /// Single anonymous block, handy for plain vectors.
    pub fn flat(len: usize) -> Self {
        Self::contiguous([("flat", len)])
    }

    /// Validates an explicit segment table.
    pub fn from_segments(segments: Vec<Segment>) -> Result<Self> {
        let mut expected = 0;
        for s in &segments {
            if s.offset != expected {
                return Err(Error::usage(format!(
                    "segment '{}' starts at {} but previous block ends at {expected}",
                    s.name, s.offset
                )));
            }
            expected += s.len;
        }
        Ok(Layout { segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.last().map(|s| s.offset + s.len).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }
}

fn check_finite<T: Scalar>(values: &[T], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::numeric(format!("{what} has non-finite entry at index {i}"))),
    }
}

macro_rules! flat_vector {
    ($(#[$meta:meta])* $name:ident, $what:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name<T> {
            values: Vec<T>,
            layout: Arc<Layout>,
        }

        impl<T: Scalar> $name<T> {
            /// Wraps `values`, checking the length against `layout` and finiteness.
            pub fn new(layout: Arc<Layout>, values: Vec<T>) -> Result<Self> {
                if values.len() != layout.len() {
                    return Err(Error::usage(format!(
                        "{} length {} does not match layout length {}",
                        $what,
                        values.len(),
                        layout.len()
                    )));
                }
                check_finite(&values, $what)?;
                Ok(Self { values, layout })
            }

            pub fn zeros(layout: Arc<Layout>) -> Self {
                let values = vec![T::zero(); layout.len()];
                Self { values, layout }
            }

            /// Single-segment vector; panics on non-finite input.
            pub fn from_vec(values: Vec<T>) -> Self {
                let layout = Arc::new(Layout::flat(values.len()));
                Self::new(layout, values).expect(concat!("finite ", $what))
            }

            pub fn len(&self) -> usize {
                self.values.len()
            }

            pub fn is_empty(&self) -> bool {
                self.values.is_empty()
            }

            pub fn as_slice(&self) -> &[T] {
                &self.values
            }

            pub fn into_vec(self) -> Vec<T> {
                self.values
            }

            pub fn layout(&self) -> &Arc<Layout> {
                &self.layout
            }

            pub fn segment(&self, name: &str) -> Option<&[T]> {
                self.layout.segment(name).map(|s| &self.values[s.offset..s.offset + s.len])
            }

            pub fn norm(&self) -> T {
                scalar::norm(&self.values)
            }

            pub fn is_finite(&self) -> bool {
                self.values.iter().all(|v| v.is_finite())
            }

            pub(crate) fn from_parts_unchecked(layout: Arc<Layout>, values: Vec<T>) -> Self {
                debug_assert_eq!(values.len(), layout.len());
                Self { values, layout }
            }

            pub(crate) fn ensure_finite(self) -> Result<Self> {
                check_finite(&self.values, $what)?;
                Ok(self)
            }

            /// Same-length check used by every binary operation.
            pub(crate) fn check_len(&self, other_len: usize, op: &str) -> Result<()> {
                if self.len() != other_len {
                    return Err(Error::usage(format!(
                        "{op}: length mismatch ({} vs {other_len})",
                        self.len()
                    )));
                }
                Ok(())
            }
        }
    };
}

flat_vector!(
    /// Model parameters.
    Params,
    "parameter vector"
);
flat_vector!(
    /// A gradient, or any displacement living in parameter space.
    Grad,
    "gradient vector"
);

impl<T: Scalar> Grad<T> {
    pub fn dot(&self, other: &Grad<T>) -> T {
        scalar::dot(&self.values, &other.values)
    }

    pub fn scaled(&self, s: T) -> Grad<T> {
        let values = self.values.iter().map(|&v| v * s).collect();
        Grad::from_parts_unchecked(self.layout.clone(), values)
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, s: T, other: &Grad<T>) -> Result<Grad<T>> {
        self.check_len(other.len(), "add_scaled")?;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| a + s * b).collect();
        Grad::from_parts_unchecked(self.layout.clone(), values).ensure_finite()
    }

    pub(crate) fn axpy_in_place(&mut self, s: T, other: &Grad<T>) {
        debug_assert_eq!(self.len(), other.len());
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a = *a + s * b;
        }
    }
}

impl<T: Scalar> Params<T> {
    /// `self - other` as a displacement.
    pub fn diff(&self, other: &Params<T>) -> Result<Grad<T>> {
        self.check_len(other.len(), "diff")?;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| a - b).collect();
        Ok(Grad::from_parts_unchecked(self.layout.clone(), values))
    }

    /// `self + s * d`.
    pub fn displaced(&self, s: T, d: &Grad<T>) -> Result<Params<T>> {
        self.check_len(d.len(), "displaced")?;
        let values = self.values.iter().zip(d.as_slice()).map(|(&a, &b)| a + s * b).collect();
        Params::from_parts_unchecked(self.layout.clone(), values).ensure_finite()
    }

    /// Copy with coordinate `i` shifted by `h`. Used by finite differences.
    pub fn perturbed(&self, i: usize, h: T) -> Params<T> {
        let mut values = self.values.clone();
        values[i] = values[i] + h;
        Params::from_parts_unchecked(self.layout.clone(), values)
    }
}
