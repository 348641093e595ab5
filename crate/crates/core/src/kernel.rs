use serde::{Deserialize, Serialize};

use crate::quad::integrate;

/// Symmetric second-order kernels supported on `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    #[default]
    Triangular,
    Epanechnikov,
    Uniform,
}

impl Kernel {
    pub fn weight(&self, u: f64) -> f64 {
        let a = u.abs();
        if !(a <= 1.0) {
            return 0.0;
        }
        match self {
            Kernel::Triangular => 1.0 - a,
            Kernel::Epanechnikov => 0.75 * (1.0 - u * u),
            Kernel::Uniform => 0.5,
        }
    }

    /// One-sided moment `int_0^1 x^p K(x)^s dx`.
    pub fn moment(&self, p: u32, s: u32) -> f64 {
        integrate(|x| x.powi(p as i32) * self.weight(x).powi(s as i32), 0.0, 1.0, &[], 4)
    }
}

impl std::fmt::Display for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Kernel::Triangular => "triangular",
            Kernel::Epanechnikov => "epanechnikov",
            Kernel::Uniform => "uniform",
        };
        f.write_str(s)
    }
}
