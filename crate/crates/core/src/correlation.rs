//! Stationary correlation kernels with a nugget.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    ExpSq,
    Matern,
    OrnUhl,
    RatQuad,
}

impl KernelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            KernelKind::ExpSq => "exp_sq",
            KernelKind::Matern => "matern",
            KernelKind::OrnUhl => "orn_uhl",
            KernelKind::RatQuad => "rat_quad",
        }
    }
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp_sq" => Ok(KernelKind::ExpSq),
            "matern" => Ok(KernelKind::Matern),
            "orn_uhl" => Ok(KernelKind::OrnUhl),
            "rat_quad" => Ok(KernelKind::RatQuad),
            other => Err(Error::Argument(format!(
                "unknown correlation kind `{other}` (expected exp_sq, matern, orn_uhl or rat_quad)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub theta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

pub const DEFAULT_MATERN_NU: f64 = 2.5;
pub const DEFAULT_RAT_QUAD_ALPHA: f64 = 2.0;

#[derive(Serialize, Deserialize)]
struct CorrelatorRepr {
    kind: KernelKind,
    hyperparameters: Hyperparameters,
    nugget: f64,
}

/// Correlation function `(1 - δ) c(u_A, v_A) + δ 1[u = v]`.
///
/// `c` is isotropic over the active coordinates with a single correlation
/// length θ; the indicator compares every coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CorrelatorRepr", into = "CorrelatorRepr")]
pub struct Correlator {
    kind: KernelKind,
    theta: f64,
    nu: f64,
    alpha: f64,
    nugget: f64,
}

impl TryFrom<CorrelatorRepr> for Correlator {
    type Error = Error;

    fn try_from(r: CorrelatorRepr) -> Result<Self> {
        let mut c = Correlator::new(r.kind, r.hyperparameters.theta, r.nugget)?;
        if let Some(nu) = r.hyperparameters.nu {
            c = c.with_nu(nu)?;
        }
        if let Some(alpha) = r.hyperparameters.alpha {
            c = c.with_alpha(alpha)?;
        }
        Ok(c)
    }
}

impl From<Correlator> for CorrelatorRepr {
    fn from(c: Correlator) -> Self {
        CorrelatorRepr {
            kind: c.kind,
            hyperparameters: c.hyperparameters(),
            nugget: c.nugget,
        }
    }
}

/// `exp_sq` with θ = 0.1 and no nugget.
pub fn default_correlator() -> Correlator {
    Correlator {
        kind: KernelKind::ExpSq,
        theta: 0.1,
        nu: DEFAULT_MATERN_NU,
        alpha: DEFAULT_RAT_QUAD_ALPHA,
        nugget: 0.0,
    }
}

impl Default for Correlator {
    fn default() -> Self {
        default_correlator()
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::Hyperparameter(format!("theta must be positive, got {theta}")));
    }
    Ok(())
}

fn check_nugget(nugget: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&nugget) {
        return Err(Error::Hyperparameter(format!("nugget must lie in [0, 1], got {nugget}")));
    }
    Ok(())
}

impl Correlator {
    pub fn new(kind: KernelKind, theta: f64, nugget: f64) -> Result<Self> {
        check_theta(theta)?;
        check_nugget(nugget)?;
        Ok(Correlator {
            kind,
            theta,
            nugget,
            ..default_correlator()
        })
    }

    /// Matérn smoothness; one of 1/2, 3/2, 5/2.
    pub fn with_nu(mut self, nu: f64) -> Result<Self> {
        if ![0.5, 1.5, 2.5].contains(&nu) {
            return Err(Error::Hyperparameter(format!(
                "matern nu must be 0.5, 1.5 or 2.5, got {nu}"
            )));
        }
        self.nu = nu;
        Ok(self)
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Hyperparameter(format!("rat_quad alpha must be positive, got {alpha}")));
        }
        self.alpha = alpha;
        Ok(self)
    }

    pub fn with_theta(mut self, theta: f64) -> Result<Self> {
        check_theta(theta)?;
        self.theta = theta;
        Ok(self)
    }

    pub fn with_nugget(mut self, nugget: f64) -> Result<Self> {
        check_nugget(nugget)?;
        self.nugget = nugget;
        Ok(self)
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn nugget(&self) -> f64 {
        self.nugget
    }

    pub fn hyperparameters(&self) -> Hyperparameters {
        Hyperparameters {
            theta: self.theta,
            nu: (self.kind == KernelKind::Matern).then_some(self.nu),
            alpha: (self.kind == KernelKind::RatQuad).then_some(self.alpha),
        }
    }

    /// Kernel as a function of distance alone, without the nugget.
    pub fn base(&self, r: f64) -> f64 {
        let t = self.theta;
        match self.kind {
            KernelKind::ExpSq => (-(r * r) / (t * t)).exp(),
            KernelKind::OrnUhl => (-r / t).exp(),
            KernelKind::Matern => {
                let s = r / t;
                if self.nu == 0.5 {
                    (-s).exp()
                } else if self.nu == 1.5 {
                    let a = 3f64.sqrt() * s;
                    (1.0 + a) * (-a).exp()
                } else {
                    let a = 5f64.sqrt() * s;
                    (1.0 + a + a * a / 3.0) * (-a).exp()
                }
            }
            KernelKind::RatQuad => (1.0 + r * r / (2.0 * self.alpha * t * t)).powf(-self.alpha),
        }
    }

    /// Kernel as a function of squared distance, without the nugget.
    #[inline]
    pub fn base_sq(&self, r2: f64) -> f64 {
        match self.kind {
            KernelKind::ExpSq => (-r2 / (self.theta * self.theta)).exp(),
            _ => self.base(r2.sqrt()),
        }
    }

    /// Correlation between two scaled points.
    pub fn value(&self, u: &[f64], v: &[f64], actives: &[bool]) -> f64 {
        if u == v {
            return 1.0;
        }
        let mut r2 = 0.0;
        for ((a, b), &on) in u.iter().zip(v).zip(actives) {
            if on {
                r2 += (a - b) * (a - b);
            }
        }
        let c = if r2 == 0.0 { 1.0 } else { self.base_sq(r2) };
        (1.0 - self.nugget) * c
    }

    /// Cross-correlation matrix with entry `(i, j) = value(U_i, V_j)`.
    pub fn matrix(&self, us: &[Vec<f64>], vs: &[Vec<f64>], actives: &[bool]) -> DMatrix<f64> {
        DMatrix::from_fn(us.len(), vs.len(), |i, j| self.value(&us[i], &vs[j], actives))
    }

    /// Symmetric self-correlation matrix with an exact unit diagonal.
    pub fn self_matrix(&self, us: &[Vec<f64>], actives: &[bool]) -> DMatrix<f64> {
        let n = us.len();
        let mut m = DMatrix::identity(n, n);
        for i in 0..n {
            for j in 0..i {
                let c = self.value(&us[i], &us[j], actives);
                m[(i, j)] = c;
                m[(j, i)] = c;
            }
        }
        m
    }
}
