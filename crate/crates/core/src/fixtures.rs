//! Point-cloud fixtures: a thin rod, a flat slab and a solid cube, all on a
//! regular grid with spacing [`SPACING`].

use crate::geometry::PointCloud;

pub const SPACING: f64 = 0.1;

/// Fixture families used by the scaling sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Rod,
    Slab,
    Cube,
}

impl Family {
    pub fn points(self, n: usize) -> PointCloud {
        match self {
            Family::Rod => rod(n),
            Family::Slab => slab(n),
            Family::Cube => cube(n),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Rod => "rod",
            Family::Slab => "slab",
            Family::Cube => "cube",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rod" | "rod-1d" => Ok(Family::Rod),
            "slab" | "slab-2d" => Ok(Family::Slab),
            "cube" | "cube-3d" => Ok(Family::Cube),
            other => Err(format!("unknown geometry '{other}' (rod, slab, cube)")),
        }
    }
}

fn grid(n: usize, dims: [usize; 3]) -> PointCloud {
    let pts = (0..n)
        .map(|i| {
            let a = i % dims[0];
            let b = (i / dims[0]) % dims[1];
            let c = i / (dims[0] * dims[1]);
            [c as f64 * SPACING, b as f64 * SPACING, a as f64 * SPACING]
        })
        .collect();
    PointCloud::new(pts).expect("grid points are finite")
}

/// `n` points along x with a 2×2 cross-section.
pub fn rod(n: usize) -> PointCloud {
    grid(n, [2, 2, usize::MAX])
}

/// `n` points filling a square grid in the x-y plane, one layer thick.
pub fn slab(n: usize) -> PointCloud {
    let side = (n as f64).sqrt().ceil().max(1.0) as usize;
    let pts = (0..n)
        .map(|i| [(i / side) as f64 * SPACING, (i % side) as f64 * SPACING, 0.0])
        .collect();
    PointCloud::new(pts).expect("grid points are finite")
}

/// `n` points filling a cubic grid.
pub fn cube(n: usize) -> PointCloud {
    let mut side = (n as f64).cbrt().floor() as usize;
    while side.pow(3) < n {
        side += 1;
    }
    grid(n, [side.max(1), side.max(1), usize::MAX])
}
