use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::relaxometry::{ParameterMap, RelaxKind};

/// Relaxation properties of one tissue class. Times in ms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tissue {
    pub a: f64,
    pub b: f64,
    pub t1_star: f64,
    pub t2: f64,
}

impl Tissue {
    pub const MYOCARDIUM: Tissue = Tissue { a: 0.6, b: 1.3, t1_star: 850.0, t2: 45.0 };
    pub const BLOOD: Tissue = Tissue { a: 1.0, b: 2.1, t1_star: 1400.0, t2: 180.0 };
    pub const BODY: Tissue = Tissue { a: 0.8, b: 1.6, t1_star: 600.0, t2: 60.0 };

    /// Checks `A, B ∈ [0.1, 3]`, `B > A`, `T1* ∈ [200, 2000]`, `T2 ∈ [20, 200]`.
    pub fn validate(&self) -> Result<()> {
        let ok = (0.1..=3.0).contains(&self.a)
            && (0.1..=3.0).contains(&self.b)
            && self.b > self.a
            && (200.0..=2000.0).contains(&self.t1_star)
            && (20.0..=200.0).contains(&self.t2);
        if !ok {
            return Err(Error::InvalidArgument(format!("tissue outside physiological range: {self:?}")));
        }
        Ok(())
    }

    pub fn t1(&self) -> f64 {
        (self.b / self.a - 1.0) * self.t1_star
    }
}

/// Region geometry in pixel coordinates (`x` indexes rows, `y` columns).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Ellipse {
        cx: f64,
        cy: f64,
        rx: f64,
        ry: f64,
    },
    /// Ellipse minus a concentric inner ellipse.
    Annulus {
        cx: f64,
        cy: f64,
        rx: f64,
        ry: f64,
        inner_rx: f64,
        inner_ry: f64,
    },
}

impl Shape {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let inside = |cx: f64, cy: f64, rx: f64, ry: f64| ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2) <= 1.0;
        match *self {
            Shape::Ellipse { cx, cy, rx, ry } => inside(cx, cy, rx, ry),
            Shape::Annulus { cx, cy, rx, ry, inner_rx, inner_ry } => {
                inside(cx, cy, rx, ry) && !inside(cx, cy, inner_rx, inner_ry)
            }
        }
    }

    /// Analytic area in pixels².
    pub fn area(&self) -> f64 {
        use std::f64::consts::PI;
        match *self {
            Shape::Ellipse { rx, ry, .. } => PI * rx * ry,
            Shape::Annulus { rx, ry, inner_rx, inner_ry, .. } => PI * (rx * ry - inner_rx * inner_ry),
        }
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        match *self {
            Shape::Ellipse { cx, cy, rx, ry } | Shape::Annulus { cx, cy, rx, ry, .. } => (cx, cy, rx, ry),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Region {
    pub shape: Shape,
    pub tissue: Tissue,
}

/// Grid plus an ordered region list. Later regions overwrite earlier ones
/// where they overlap.
#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub nx: usize,
    pub ny: usize,
    pub regions: Vec<Region>,
    pub seed: u64,
}

/// Rasterized ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    pub t1_star: Array2<f64>,
    pub t2: Array2<f64>,
    pub mask: Array2<bool>,
}

impl Phantom {
    pub fn shape(&self) -> (usize, usize) {
        self.mask.dim()
    }

    pub fn map(&self, kind: RelaxKind) -> ParameterMap {
        match kind {
            RelaxKind::T1 => ParameterMap::t1(self.a.clone(), self.b.clone(), self.t1_star.clone())
                .expect("phantom channels share one shape"),
            RelaxKind::T2 => {
                ParameterMap::t2(self.a.clone(), self.t2.clone()).expect("phantom channels share one shape")
            }
        }
    }
}

impl PhantomSpec {
    pub fn empty(nx: usize, ny: usize) -> Self {
        Self { nx, ny, regions: Vec::new(), seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 {
            return Err(Error::InvalidArgument(format!("empty grid {}×{}", self.nx, self.ny)));
        }
        for (i, r) in self.regions.iter().enumerate() {
            r.tissue.validate()?;
            let (cx, cy, rx, ry) = r.shape.bounds();
            let inner_ok = match r.shape {
                Shape::Annulus { inner_rx, inner_ry, .. } => {
                    inner_rx > 0.0 && inner_ry > 0.0 && inner_rx < rx && inner_ry < ry
                }
                Shape::Ellipse { .. } => true,
            };
            let fits = rx > 0.0
                && ry > 0.0
                && cx - rx >= -0.5
                && cx + rx <= self.nx as f64 - 0.5
                && cy - ry >= -0.5
                && cy + ry <= self.ny as f64 - 0.5;
            if !fits || !inner_ok {
                return Err(Error::InvalidArgument(format!("region {i} does not lie within the grid: {:?}", r.shape)));
            }
        }
        Ok(())
    }

    /// A cardiac short-axis phantom: body ellipse, myocardial annulus and a
    /// blood pool, with geometry and tissue values jittered by up to ±10%.
    pub fn cardiac(nx: usize, ny: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut j = |v: f64| v * rng.random_range(0.9..1.1);
        let (n, m) = (nx as f64, ny as f64);
        let (cx, cy) = ((n - 1.0) / 2.0, (m - 1.0) / 2.0);
        let body = Shape::Ellipse { cx, cy, rx: j(0.42 * n), ry: j(0.40 * m) };
        let (hx, hy) = (cx + (j(1.0) - 1.0) * 0.3 * n, cy + (j(1.0) - 1.0) * 0.3 * m);
        let outer = j(0.2);
        let inner = outer * j(0.62);
        let myo =
            Shape::Annulus { cx: hx, cy: hy, rx: outer * n, ry: outer * m, inner_rx: inner * n, inner_ry: inner * m };
        let pool = Shape::Ellipse { cx: hx, cy: hy, rx: inner * n, ry: inner * m };
        let mut tissue = |t: Tissue| Tissue { a: j(t.a), b: j(t.b), t1_star: j(t.t1_star), t2: j(t.t2) };
        let regions = vec![
            Region { shape: body, tissue: tissue(Tissue::BODY) },
            Region { shape: myo, tissue: tissue(Tissue::MYOCARDIUM) },
            Region { shape: pool, tissue: tissue(Tissue::BLOOD) },
        ];
        Self { nx, ny, regions, seed }
    }

    /// Parses the line format
    ///
    /// ```text
    /// grid = 64 64
    /// seed = 3
    /// ellipse = cx cy rx ry a b t1star t2
    /// annulus = cx cy rx ry inner_rx inner_ry a b t1star t2
    /// ```
    ///
    /// Blank lines and `#` comments are ignored; regions keep file order.
    pub fn parse(text: &str) -> Result<Self> {
        let mut grid = None;
        let mut seed = 0;
        let mut regions = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Config { line: no + 1, message };
            let (key, value) =
                line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let nums = || -> Result<Vec<f64>> {
                value
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| err(format!("bad number `{t}`"))))
                    .collect()
            };
            match key.trim() {
                "grid" => {
                    let v = nums()?;
                    if v.len() != 2 || v.iter().any(|x| *x < 1.0 || x.fract() != 0.0) {
                        return Err(err("grid needs two positive integers".into()));
                    }
                    grid = Some((v[0] as usize, v[1] as usize));
                }
                "seed" => seed = value.trim().parse().map_err(|_| err(format!("bad seed `{}`", value.trim())))?,
                "ellipse" => {
                    let v = nums()?;
                    let [cx, cy, rx, ry, a, b, t1_star, t2] = v[..] else {
                        return Err(err(format!("ellipse needs 8 numbers, got {}", v.len())));
                    };
                    regions.push(Region {
                        shape: Shape::Ellipse { cx, cy, rx, ry },
                        tissue: Tissue { a, b, t1_star, t2 },
                    });
                }
                "annulus" => {
                    let v = nums()?;
                    let [cx, cy, rx, ry, inner_rx, inner_ry, a, b, t1_star, t2] = v[..] else {
                        return Err(err(format!("annulus needs 10 numbers, got {}", v.len())));
                    };
                    regions.push(Region {
                        shape: Shape::Annulus { cx, cy, rx, ry, inner_rx, inner_ry },
                        tissue: Tissue { a, b, t1_star, t2 },
                    });
                }
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        let (nx, ny) = grid.ok_or(Error::Config { line: 0, message: "missing `grid`".into() })?;
        let spec = Self { nx, ny, regions, seed };
        spec.validate()?;
        Ok(spec)
    }
}

/// Rasterizes the spec; a pixel belongs to a region when its center does.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let dim = (spec.nx, spec.ny);
    let mut p = Phantom {
        a: Array2::zeros(dim),
        b: Array2::zeros(dim),
        t1_star: Array2::zeros(dim),
        t2: Array2::zeros(dim),
        mask: Array2::from_elem(dim, false),
    };
    for r in &spec.regions {
        for ((i, j), m) in p.mask.indexed_iter_mut() {
            if r.shape.contains(i as f64, j as f64) {
                *m = true;
                p.a[[i, j]] = r.tissue.a;
                p.b[[i, j]] = r.tissue.b;
                p.t1_star[[i, j]] = r.tissue.t1_star;
                p.t2[[i, j]] = r.tissue.t2;
            }
        }
    }
    Ok(p)
}
