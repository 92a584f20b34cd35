use serde::{Deserialize, Serialize};

/// Global curvature imposed on the fitted function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Curvature {
    Convex,
    Concave,
}

/// Componentwise monotonicity imposed on the fitted function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Monotonicity {
    #[default]
    None,
    Increasing,
    Decreasing,
}

/// The full shape restriction: curvature, optional monotonicity, and an
/// optional homogeneity restriction (intercepts pinned to zero, so the fit
/// passes through the origin in each linear piece).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub curvature: Curvature,
    pub monotonicity: Monotonicity,
    pub homogeneous: bool,
}

impl Shape {
    pub fn concave() -> Self {
        Shape { curvature: Curvature::Concave, monotonicity: Monotonicity::None, homogeneous: false }
    }

    pub fn convex() -> Self {
        Shape { curvature: Curvature::Convex, monotonicity: Monotonicity::None, homogeneous: false }
    }

    pub fn with_monotonicity(mut self, m: Monotonicity) -> Self {
        self.monotonicity = m;
        self
    }

    pub fn homogeneous(mut self) -> Self {
        self.homogeneous = true;
        self
    }
}

impl Default for Shape {
    /// Concave, no monotonicity, inhomogeneous: the production-frontier setting.
    fn default() -> Self {
        Shape::concave()
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let curv = match self.curvature {
            Curvature::Convex => "convex",
            Curvature::Concave => "concave",
        };
        write!(f, "{curv}")?;
        match self.monotonicity {
            Monotonicity::None => {}
            Monotonicity::Increasing => write!(f, ", increasing")?,
            Monotonicity::Decreasing => write!(f, ", decreasing")?,
        }
        if self.homogeneous {
            write!(f, ", homogeneous")?;
        }
        Ok(())
    }
}
