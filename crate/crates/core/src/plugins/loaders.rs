use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{ArrayD, Dimension, IxDyn};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::engine::{CreateContainer, Loader, Params, PluginError};
use crate::model::{DType, DatasetDescriptor, Pattern};
use crate::storage::Container;

/// Open-beam intensity in counts.
pub const I0: f64 = 50_000.0;
/// Dark-current level in counts.
pub const DARK_LEVEL: f64 = 1_000.0;
/// Lowest transmission the loader produces.
pub const MIN_TRANSMISSION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    /// Centre in unit-square coordinates, rotation axis at (0.5, 0.5).
    pub center: [f64; 2],
    pub radius: f64,
    pub density: f64,
    /// Detector-row span `[lo, hi]` in unit coordinates; all rows if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<[f64; 2]>,
}

impl Disk {
    pub fn new(center: [f64; 2], radius: f64, density: f64) -> Self {
        Disk { center, radius, density, rows: None }
    }

    fn covers_row(&self, y: f64) -> bool {
        self.rows.is_none_or(|[lo, hi]| y >= lo && y <= hi)
    }

    /// Density-weighted chord length along the ray at angle `theta` and
    /// signed offset `s` from the axis (unit coordinates).
    pub fn line_integral(&self, theta: f64, s: f64) -> f64 {
        let (sn, cs) = theta.sin_cos();
        let s0 = (self.center[0] - 0.5) * cs + (self.center[1] - 0.5) * sn;
        let d = s - s0;
        let r2 = self.radius * self.radius;
        if d * d >= r2 {
            0.0
        } else {
            2.0 * (r2 - d * d).sqrt() * self.density
        }
    }

    /// Whether pixel `(x, y)` in unit coordinates lies inside the disk.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.center[0];
        let dy = y - self.center[1];
        dx * dx + dy * dy < self.radius * self.radius
    }
}

/// Disks imaged by `n_theta` projections over [0, π) onto `n_x` bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub disks: Vec<Disk>,
    pub n_x: usize,
    pub n_theta: usize,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<(), PluginError> {
        if self.n_x == 0 || self.n_theta == 0 {
            return Err(PluginError::InvalidSpec("n_x and n_theta must be positive".into()));
        }
        for (k, d) in self.disks.iter().enumerate() {
            let finite = d.center.iter().all(|c| c.is_finite()) && d.density.is_finite() && d.radius.is_finite();
            if !(finite && d.radius > 0.0) {
                return Err(PluginError::InvalidSpec(format!("disk {k}: radius must be > 0 and values finite")));
            }
        }
        Ok(())
    }

    pub fn angle(&self, t: usize) -> f64 {
        t as f64 * std::f64::consts::PI / self.n_theta as f64
    }

    /// Offset of bin `b` from the axis in unit coordinates; the axis sits at
    /// bin `n_x / 2`.
    pub fn bin_offset(&self, b: usize) -> f64 {
        (b as f64 - self.n_x as f64 / 2.0) / self.n_x as f64
    }

    /// Line integral through every disk covering detector row position `y`.
    pub fn integral(&self, t: usize, b: usize, y: f64) -> f64 {
        let (theta, s) = (self.angle(t), self.bin_offset(b));
        self.disks.iter().filter(|d| d.covers_row(y)).map(|d| d.line_integral(theta, s)).sum()
    }

    /// Analytic slice on the reconstruction grid `[row, col]` for row
    /// position `y`.
    pub fn image(&self, y: f64) -> ndarray::Array2<f64> {
        let n = self.n_x;
        ndarray::Array2::from_shape_fn((n, n), |(i, j)| {
            let px = 0.5 + self.bin_offset(j);
            let py = 0.5 + self.bin_offset(i);
            self.disks
                .iter()
                .filter(|d| d.covers_row(y) && d.contains(px, py))
                .map(|d| d.density)
                .sum()
        })
    }
}

/// Synthetic full-field scan: `(θ, y, x)` or, with `n_scan > 1`,
/// `(θ, y, x, scan)` transmission counts plus dark and flat fields.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTomo {
    pub name: String,
    pub phantom: PhantomSpec,
    pub n_y: usize,
    pub n_scan: usize,
    /// Names of the dark and flat datasets, if they are produced.
    pub dark_flat: Option<(String, String)>,
}

impl SyntheticTomo {
    pub fn new(name: impl Into<String>, phantom: PhantomSpec, n_y: usize) -> Self {
        SyntheticTomo { name: name.into(), phantom, n_y, n_scan: 1, dark_flat: Some(("dark".into(), "flat".into())) }
    }

    pub fn from_params(p: &Params) -> Result<Self, PluginError> {
        let phantom = PhantomSpec { disks: p.parse("disks")?, n_x: p.usize("n_x")?, n_theta: p.usize("n_theta")? };
        let dark_flat = p.bool("dark_flat")?.then(|| Ok::<_, PluginError>((p.string("dark_name")?, p.string("flat_name")?)));
        let s = SyntheticTomo {
            name: p.string("name")?,
            phantom,
            n_y: p.usize("n_y")?,
            n_scan: p.usize("n_scan")?,
            dark_flat: dark_flat.transpose()?,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), PluginError> {
        self.phantom.validate()?;
        if self.n_y == 0 || self.n_scan == 0 {
            return Err(PluginError::InvalidSpec("n_y and n_scan must be positive".into()));
        }
        if let Some((d, f)) = &self.dark_flat {
            if d == f || *d == self.name || *f == self.name {
                return Err(PluginError::InvalidSpec("dataset names must differ".into()));
            }
        }
        Ok(())
    }

    /// Centre of detector row `y` in unit coordinates.
    pub fn row_position(&self, y: usize) -> f64 {
        (y as f64 + 0.5) / self.n_y as f64
    }

    /// Multiplier applied to the integrals of scan `s`.
    pub fn scan_factor(&self, s: usize) -> f64 {
        1.0 + s as f64 / self.n_scan as f64
    }

    /// Global factor keeping every transmission at or above 1%.
    pub fn integral_scale(&self) -> f64 {
        let mut max = 0.0f64;
        for y in 0..self.n_y {
            for t in 0..self.phantom.n_theta {
                for b in 0..self.phantom.n_x {
                    max = max.max(self.phantom.integral(t, b, self.row_position(y)));
                }
            }
        }
        max *= self.scan_factor(self.n_scan - 1);
        let limit = -MIN_TRANSMISSION.ln();
        if max > limit {
            limit / max
        } else {
            1.0
        }
    }

    /// Line integrals the chain should recover, laid out like the scan.
    pub fn integrals(&self) -> ArrayD<f64> {
        let scale = self.integral_scale();
        ArrayD::from_shape_fn(IxDyn(&self.shape()), |ix| {
            let scan = if ix.ndim() > 3 { ix[3] } else { 0 };
            scale * self.scan_factor(scan) * self.phantom.integral(ix[0], ix[2], self.row_position(ix[1]))
        })
    }

    /// Raw counts as stored before U16 rounding.
    pub fn counts(integral: f64) -> f64 {
        DARK_LEVEL + (I0 - DARK_LEVEL) * (-integral).exp()
    }

    pub fn shape(&self) -> Vec<usize> {
        let mut shape = vec![self.phantom.n_theta, self.n_y, self.phantom.n_x];
        if self.n_scan > 1 {
            shape.push(self.n_scan);
        }
        shape
    }

    pub fn tomo_descriptor(&self) -> DatasetDescriptor {
        let shape = self.shape();
        let mut labels: Vec<String> = ["theta", "y", "x"].map(String::from).to_vec();
        let d = if self.n_scan > 1 {
            labels.push("scan".into());
            DatasetDescriptor::new(&self.name, shape, DType::U16, labels)
                .with_pattern(Pattern::new("PROJECTION", &[2, 1], &[0, 3]))
                .with_pattern(Pattern::new("SINOGRAM", &[2, 0], &[1, 3]))
                .with_pattern(Pattern::new("SPECTRUM", &[3], &[0, 1, 2]))
        } else {
            tomo_patterns(DatasetDescriptor::new(&self.name, shape, DType::U16, labels))
        };
        let mut d = d;
        d.metadata = BTreeMap::from([
            ("integral_scale".to_string(), json!(self.integral_scale())),
            ("i0".to_string(), json!(I0)),
            ("dark_level".to_string(), json!(DARK_LEVEL)),
        ]);
        d
    }

    fn field_descriptor(&self, name: &str) -> DatasetDescriptor {
        let labels = ["theta", "y", "x"].map(String::from).to_vec();
        tomo_patterns(DatasetDescriptor::new(name, vec![1, self.n_y, self.phantom.n_x], DType::U16, labels))
    }

    pub fn descriptors(&self) -> Vec<DatasetDescriptor> {
        let mut out = vec![self.tomo_descriptor()];
        if let Some((dark, flat)) = &self.dark_flat {
            out.push(self.field_descriptor(dark));
            out.push(self.field_descriptor(flat));
        }
        out
    }

    /// Writes the scan into `tomo` one projection at a time.
    pub fn write_tomo(&self, tomo: &Container) -> Result<(), PluginError> {
        let scale = self.integral_scale();
        let (n_x, n_y) = (self.phantom.n_x, self.n_y);
        let rows: Vec<f64> = (0..n_y).map(|y| self.row_position(y)).collect();
        let pattern = tomo.header().pattern("PROJECTION").cloned().expect("loader registers PROJECTION");
        let frames = pattern.frame_count(tomo.shape());
        for ordinal in 0..frames {
            let coords = pattern.frame_coords(tomo.shape(), ordinal)?;
            let (t, scan) = (coords[0], coords.get(1).copied().unwrap_or(0));
            let factor = scale * self.scan_factor(scan);
            // PROJECTION core order is (x, y)
            let block = ArrayD::from_shape_fn(IxDyn(&[1, n_x, n_y]), |ix| {
                Self::counts(factor * self.phantom.integral(t, ix[1], rows[ix[2]]))
            });
            tomo.write_frames_with::<f64>(&pattern, ordinal, block.view())?;
        }
        Ok(())
    }
}

fn tomo_patterns(d: DatasetDescriptor) -> DatasetDescriptor {
    d.with_pattern(Pattern::new("PROJECTION", &[2, 1], &[0]))
        .with_pattern(Pattern::new("SINOGRAM", &[2, 0], &[1]))
}

impl Loader for SyntheticTomo {
    fn describe(&self, _: Option<&Path>) -> Result<Vec<DatasetDescriptor>, PluginError> {
        Ok(self.descriptors())
    }

    fn load(&self, _: Option<&Path>, create: &mut CreateContainer<'_>) -> Result<Vec<PathBuf>, PluginError> {
        let descriptors = self.descriptors();
        let tomo = create(&descriptors[0])?;
        self.write_tomo(&tomo)?;
        let mut paths = vec![tomo.path().to_path_buf()];
        for (d, level) in descriptors[1..].iter().zip([DARK_LEVEL, I0]) {
            let c = create(d)?;
            let block = ArrayD::from_elem(IxDyn(&d.shape), level);
            c.write_all::<f64>(block.view())?;
            paths.push(c.path().to_path_buf());
        }
        Ok(paths)
    }
}

pub(crate) fn synthetic_defaults() -> Vec<(&'static str, serde_json::Value, &'static str)> {
    vec![
        ("name", json!("tomo"), "name of the scan dataset"),
        ("n_theta", json!(90), "projections over [0, 180) degrees"),
        ("n_y", json!(8), "detector rows"),
        ("n_x", json!(64), "detector bins"),
        ("n_scan", json!(1), "repeat scans; above 1 adds a fourth dimension"),
        ("disks", json!([{ "center": [0.5, 0.5], "radius": 0.3, "density": 1.0 }]), "phantom disks"),
        ("dark_flat", json!(true), "also register dark and flat fields"),
        ("dark_name", json!("dark"), "name of the dark field dataset"),
        ("flat_name", json!("flat"), "name of the flat field dataset"),
    ]
}

/// Registers the dataset stored in an existing container, optionally under
/// another name. Reads the header only.
#[derive(Debug, Clone, Default)]
pub struct ContainerLoader {
    pub rename: Option<String>,
}

impl Loader for ContainerLoader {
    fn uses_data_path(&self) -> bool {
        true
    }

    fn describe(&self, data_path: Option<&Path>) -> Result<Vec<DatasetDescriptor>, PluginError> {
        let path = data_path.ok_or_else(|| PluginError::InvalidSpec("container loader needs a data path".into()))?;
        let mut d = Container::read_header(path)?.descriptor();
        if let Some(name) = &self.rename {
            d.name = name.clone();
        }
        Ok(vec![d])
    }

    fn load(&self, data_path: Option<&Path>, _: &mut CreateContainer<'_>) -> Result<Vec<PathBuf>, PluginError> {
        let path = data_path.ok_or_else(|| PluginError::InvalidSpec("container loader needs a data path".into()))?;
        Container::read_header(path)?;
        Ok(vec![path.to_path_buf()])
    }
}
