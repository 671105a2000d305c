use serde::{Deserialize, Serialize};

fn default_grid_points() -> usize {
    1001
}

fn default_refinement() -> usize {
    2
}

fn default_max_grid() -> usize {
    1_000_000
}

/// Axis-aligned box searched by a dense grid with nested refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Domain {
    pub bounds: Vec<(f64, f64)>,
    #[serde(default = "default_grid_points")]
    pub grid_points_per_dim: usize,
    #[serde(default = "default_refinement")]
    pub refinement_iters: usize,
    #[serde(default = "default_max_grid")]
    pub max_grid_size: usize,
}

impl Domain {
    pub fn new(bounds: Vec<(f64, f64)>) -> Self {
        Domain {
            bounds,
            grid_points_per_dim: default_grid_points(),
            refinement_iters: default_refinement(),
            max_grid_size: default_max_grid(),
        }
    }

    pub fn with_grid(mut self, points_per_dim: usize) -> Self {
        self.grid_points_per_dim = points_per_dim;
        self
    }

    pub fn with_refinement(mut self, iters: usize) -> Self {
        self.refinement_iters = iters;
        self
    }

    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut errs = Vec::new();
        if self.bounds.is_empty() {
            errs.push("domain needs at least one dimension".to_string());
        }
        for (d, (lo, hi)) in self.bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                errs.push(format!("dimension {d}: need finite lo < hi, got [{lo}, {hi}]"));
            }
        }
        if self.grid_points_per_dim == 0 {
            errs.push("grid_points_per_dim must be >= 1".to_string());
        }
        match self.grid_size() {
            Some(n) if n <= self.max_grid_size => {}
            _ => errs.push(format!(
                "grid of {}^{} points exceeds the cap of {}",
                self.grid_points_per_dim,
                self.bounds.len(),
                self.max_grid_size
            )),
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(&self.bounds)
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn grid_size(&self) -> Option<usize> {
        let mut n: usize = 1;
        for _ in &self.bounds {
            n = n.checked_mul(self.grid_points_per_dim)?;
        }
        Some(n)
    }

    /// Full search grid; the first coordinate varies slowest.
    pub fn grid(&self) -> Vec<Vec<f64>> {
        box_grid(&self.bounds, self.grid_points_per_dim)
    }
}

/// Equally spaced points on `[lo, hi]`, endpoints included.
pub(crate) fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n)
                .map(|i| if i == n - 1 { hi } else { lo + step * i as f64 })
                .collect()
        }
    }
}

pub(crate) fn box_grid(bounds: &[(f64, f64)], points_per_dim: usize) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = bounds
        .iter()
        .map(|(lo, hi)| linspace(*lo, *hi, points_per_dim))
        .collect();
    let mut out: Vec<Vec<f64>> = vec![Vec::with_capacity(bounds.len())];
    for axis in &axes {
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for prefix in &out {
            for v in axis {
                let mut p = prefix.clone();
                p.push(*v);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_ordering_and_size() {
        let d = Domain::new(vec![(0.0, 1.0), (-1.0, 1.0)]).with_grid(3);
        let g = d.grid();
        assert_eq!(g.len(), 9);
        assert_eq!(g[0], vec![0.0, -1.0]);
        assert_eq!(g[1], vec![0.0, 0.0]);
        assert_eq!(g[8], vec![1.0, 1.0]);
    }

    #[test]
    fn validation() {
        assert!(Domain::new(vec![(0.0, 20.0)]).validate().is_ok());
        assert!(Domain::new(vec![(1.0, 1.0)]).validate().is_err());
        let big = Domain::new(vec![(0.0, 1.0); 3]);
        assert!(big.validate().is_err());
        let errs = Domain::new(vec![(2.0, 1.0), (f64::NAN, 1.0)]).with_grid(10).validate().unwrap_err();
        assert_eq!(errs.len(), 2);
    }

    #[test]
    fn endpoints_exact() {
        let v = linspace(-5.0, 5.0, 1001);
        assert_eq!(v[0], -5.0);
        assert_eq!(v[500], 0.0);
        assert_eq!(v[1000], 5.0);
    }
}
