//! Named parameter ranges and the affine map onto the unit cube `[-1, 1]^d`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

impl Parameter {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.upper - self.lower)
    }
}

/// An ordered set of continuous parameters with finite ranges.
///
/// The order of the parameters is the canonical column order for every
/// matrix in the crate; tables with shuffled columns are rearranged to it.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ParameterSpace {
    params: Vec<Parameter>,
}

impl<'de> Deserialize<'de> for ParameterSpace {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let params = Vec::<Parameter>::deserialize(d)?;
        ParameterSpace::from_parameters(params).map_err(serde::de::Error::custom)
    }
}

impl ParameterSpace {
    pub fn new<S, I>(ranges: I) -> Result<Self>
    where
        S: Into<String>,
        I: IntoIterator<Item = (S, f64, f64)>,
    {
        let params = ranges
            .into_iter()
            .map(|(name, lower, upper)| Parameter {
                name: name.into(),
                lower,
                upper,
            })
            .collect();
        Self::from_parameters(params)
    }

    pub fn from_parameters(params: Vec<Parameter>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::Argument("a parameter space needs at least one parameter".into()));
        }
        for (i, p) in params.iter().enumerate() {
            if !(p.lower.is_finite() && p.upper.is_finite()) || p.lower >= p.upper {
                return Err(Error::Argument(format!(
                    "parameter `{}` needs finite bounds with lower < upper, got [{}, {}]",
                    p.name, p.lower, p.upper
                )));
            }
            if params[..i].iter().any(|q| q.name == p.name) {
                return Err(Error::Schema(format!("duplicate parameter name `{}`", p.name)));
            }
        }
        Ok(ParameterSpace { params })
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn parameters(&self) -> &[Parameter] {
        &self.params
    }

    pub fn names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Checks that `names` is a permutation of this space's parameter names and
    /// returns, for each canonical slot, the position of that name in `names`.
    pub fn column_order(&self, names: &[String]) -> Result<Vec<usize>> {
        if names.len() != self.dim() {
            return Err(Error::Schema(format!(
                "expected {} parameter columns ({}), found {} ({})",
                self.dim(),
                self.names().join(", "),
                names.len(),
                names.join(", ")
            )));
        }
        self.params
            .iter()
            .map(|p| {
                names.iter().position(|n| *n == p.name).ok_or_else(|| {
                    Error::Schema(format!("parameter `{}` missing from columns", p.name))
                })
            })
            .collect()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::Schema(format!(
                "point has {len} coordinates but the space has {} parameters",
                self.dim()
            )));
        }
        Ok(())
    }

    /// Map a point in natural units onto `[-1, 1]^d`.
    ///
    /// Coordinates outside their range are rejected unless
    /// `allow_extrapolation` is set.
    pub fn scale_point(&self, x: &[f64], allow_extrapolation: bool) -> Result<Vec<f64>> {
        self.check_len(x.len())?;
        if !allow_extrapolation {
            for (p, &v) in self.params.iter().zip(x) {
                if !(v >= p.lower && v <= p.upper) {
                    return Err(Error::Domain {
                        name: p.name.clone(),
                        value: v,
                        lower: p.lower,
                        upper: p.upper,
                    });
                }
            }
        }
        Ok(self.scale_unchecked(x))
    }

    pub(crate) fn scale_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.params.iter().zip(x).map(|(p, &v)| (v - p.midpoint()) / p.half_width()));
    }

    pub(crate) fn scale_unchecked(&self, x: &[f64]) -> Vec<f64> {
        self.params
            .iter()
            .zip(x)
            .map(|(p, &v)| (v - p.midpoint()) / p.half_width())
            .collect()
    }

    /// Inverse of [`scale_point`](Self::scale_point).
    pub fn unscale_point(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_len(u.len())?;
        Ok(self.unscale_unchecked(u))
    }

    pub(crate) fn unscale_unchecked(&self, u: &[f64]) -> Vec<f64> {
        self.params
            .iter()
            .zip(u)
            .map(|(p, &v)| p.midpoint() + v * p.half_width())
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && self
                .params
                .iter()
                .zip(x)
                .all(|(p, &v)| v >= p.lower && v <= p.upper)
    }

    /// True when every range of `other` lies inside the matching range here.
    pub fn contains_space(&self, other: &ParameterSpace) -> bool {
        other.dim() == self.dim()
            && self.params.iter().zip(&other.params).all(|(p, q)| {
                p.name == q.name && q.lower >= p.lower && q.upper <= p.upper
            })
    }

    /// Clamp a point onto the box, coordinate by coordinate.
    pub fn clamp(&self, x: &mut [f64]) {
        for (p, v) in self.params.iter().zip(x.iter_mut()) {
            *v = v.clamp(p.lower, p.upper);
        }
    }

    /// Product of the range widths.
    pub fn volume(&self) -> f64 {
        self.params.iter().map(|p| p.upper - p.lower).product()
    }
}
