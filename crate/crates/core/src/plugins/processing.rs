use ndarray::{ArrayD, Axis, IxDyn};

use super::kernels::{dark_flat, fbp_slice, median_window, minus_log, ratio, uniform_angles, zip_map, RampFilter};
use crate::engine::{mirror_setup, Driver, OutputSpec, Params, Plugin, PluginError, PluginSetup, PluginSpec};
use crate::model::{DType, DatasetDescriptor, Pattern, PluginDatasetView};
use crate::scalar::Scalar;

fn cpu(nr_in: usize, nr_out: usize) -> PluginSpec {
    PluginSpec { nr_in_datasets: nr_in, nr_out_datasets: nr_out, driver: Driver::Cpu }
}

fn same_shape<T: Scalar>(what: &str, a: &ArrayD<T>, b: &ArrayD<T>) -> Result<(), PluginError> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(PluginError::ShapeMismatch(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())))
    }
}

fn inputs_n<T>(inputs: &[ArrayD<T>], n: usize) -> Result<(), PluginError> {
    if inputs.len() == n {
        Ok(())
    } else {
        Err(PluginError::InvalidSpec(format!("expected {n} input blocks, got {}", inputs.len())))
    }
}

/// Pattern and frames-per-call shared by the processing plugins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewParams {
    pub pattern: String,
    pub frames: usize,
}

impl ViewParams {
    pub fn from_params(p: &Params) -> Result<Self, PluginError> {
        let frames = p.usize("frames")?;
        if frames == 0 {
            return Err(PluginError::param("frames", "must be at least 1"));
        }
        Ok(ViewParams { pattern: p.string("pattern")?, frames })
    }
}

/// Detector normalisation `(raw - dark) / max(flat - dark, eps)`; inputs
/// are raw, dark and flat, output is F32.
#[derive(Debug, Clone)]
pub struct DarkFlatCorrect {
    pub view: ViewParams,
}

impl<T: Scalar> Plugin<T> for DarkFlatCorrect {
    fn spec(&self) -> PluginSpec {
        cpu(3, 1)
    }

    fn setup(&mut self, inputs: &[DatasetDescriptor], out_names: &[String]) -> Result<PluginSetup, PluginError> {
        mirror_setup(inputs, out_names, &self.view.pattern, self.view.frames)
    }

    fn process(&self, inputs: &[ArrayD<T>]) -> Result<Vec<ArrayD<T>>, PluginError> {
        inputs_n(inputs, 3)?;
        let (raw, dark, flat) = (&inputs[0], &inputs[1], &inputs[2]);
        same_shape("dark", raw, dark)?;
        same_shape("flat", raw, flat)?;
        let mut out = raw.clone();
        ndarray::Zip::from(&mut out).and(dark).and(flat).for_each(|r, &d, &f| *r = dark_flat(*r, d, f));
        Ok(vec![out])
    }
}

/// Beer-Lambert linearisation `-ln(max(v, eps))`.
#[derive(Debug, Clone)]
pub struct MinusLog {
    pub view: ViewParams,
}

impl<T: Scalar> Plugin<T> for MinusLog {
    fn spec(&self) -> PluginSpec {
        cpu(1, 1)
    }

    fn setup(&mut self, inputs: &[DatasetDescriptor], out_names: &[String]) -> Result<PluginSetup, PluginError> {
        mirror_setup(inputs, out_names, &self.view.pattern, self.view.frames)
    }

    fn process(&self, inputs: &[ArrayD<T>]) -> Result<Vec<ArrayD<T>>, PluginError> {
        inputs_n(inputs, 1)?;
        Ok(vec![inputs[0].mapv(minus_log)])
    }
}

/// 3-wide median along the first slice dimension of the pattern combined
/// with a 3×3 median over the two core dimensions.
#[derive(Debug, Clone)]
pub struct MedianFilter3x3 {
    pub view: ViewParams,
}

impl<T: Scalar> Plugin<T> for MedianFilter3x3 {
    fn spec(&self) -> PluginSpec {
        cpu(1, 1)
    }

    fn setup(&mut self, inputs: &[DatasetDescriptor], out_names: &[String]) -> Result<PluginSetup, PluginError> {
        let mut setup = mirror_setup(inputs, out_names, &self.view.pattern, self.view.frames)?;
        let d = &inputs[0];
        let p = d.pattern(&self.view.pattern)?;
        if p.core_dims.len() != 2 || p.slice_dims.is_empty() {
            return Err(PluginError::InvalidSpec(format!(
                "pattern '{}' needs two core dimensions and a slice dimension",
                p.name
            )));
        }
        let mut padding = vec![0; d.ndims()];
        padding[p.slice_dims[0]] = 1;
        setup.in_views[0].padding = padding;
        Ok(setup)
    }

    fn process(&self, inputs: &[ArrayD<T>]) -> Result<Vec<ArrayD<T>>, PluginError> {
        inputs_n(inputs, 1)?;
        let block = &inputs[0];
        if block.ndim() != 4 || block.shape()[1] != 3 {
            return Err(PluginError::ShapeMismatch(format!("expected [m, 3, a, b], got {:?}", block.shape())));
        }
        let (m, a, b) = (block.shape()[0], block.shape()[2], block.shape()[3]);
        let mut out = ArrayD::zeros(IxDyn(&[m, a, b]));
        for (k, frame) in block.axis_iter(Axis(0)).enumerate() {
            let stack = frame.into_dimensionality::<ndarray::Ix3>().expect("4-d block");
            out.index_axis_mut(Axis(0), k).assign(&median_window(stack));
        }
        Ok(vec![out])
    }
}

/// Elementwise `num / max(den, eps)`.
#[derive(Debug, Clone)]
pub struct DatasetRatio {
    pub view: ViewParams,
}

impl<T: Scalar> Plugin<T> for DatasetRatio {
    fn spec(&self) -> PluginSpec {
        cpu(2, 1)
    }

    fn setup(&mut self, inputs: &[DatasetDescriptor], out_names: &[String]) -> Result<PluginSetup, PluginError> {
        mirror_setup(inputs, out_names, &self.view.pattern, self.view.frames)
    }

    fn process(&self, inputs: &[ArrayD<T>]) -> Result<Vec<ArrayD<T>>, PluginError> {
        inputs_n(inputs, 2)?;
        same_shape("denominator", &inputs[0], &inputs[1])?;
        Ok(vec![zip_map(&inputs[0], &inputs[1], ratio)])
    }
}

pub const SLICE_PATTERN: &str = "SLICE";

/// Filtered back-projection of SINOGRAM frames into `n_x × n_x` slices.
pub struct FbpRecon<T: Scalar> {
    pub frames: usize,
    /// Rotation axis in detector bins; `n_x / 2` if unset.
    pub center: Option<f64>,
    /// Projection angles in degrees; uniform over [0, 180) if unset.
    pub angles_deg: Option<Vec<f64>>,
    pub driver: Driver,
    geometry: Option<FbpGeometry<T>>,
}

struct FbpGeometry<T: Scalar> {
    n_x: usize,
    n_theta: usize,
    center: f64,
    angles: Vec<f64>,
    filter: Option<RampFilter<T>>,
}

impl<T: Scalar> FbpRecon<T> {
    pub fn new(frames: usize, center: Option<f64>, angles_deg: Option<Vec<f64>>, driver: Driver) -> Self {
        FbpRecon { frames, center, angles_deg, driver, geometry: None }
    }

    /// Output descriptor for a sinogram dataset: the SINOGRAM slice dims
    /// followed by two `n_x` image dims.
    pub fn output_descriptor(input: &DatasetDescriptor, name: &str) -> Result<DatasetDescriptor, PluginError> {
        let sino = input.pattern("SINOGRAM")?;
        if sino.core_dims.len() != 2 {
            return Err(PluginError::InvalidSpec("SINOGRAM needs core dims (x, theta)".into()));
        }
        let n_x = input.shape[sino.core_dims[0]];
        let mut shape: Vec<usize> = sino.slice_dims.iter().map(|&d| input.shape[d]).collect();
        let mut labels: Vec<String> = sino
            .slice_dims
            .iter()
            .map(|&d| input.axis_labels.get(d).cloned().unwrap_or_default())
            .collect();
        let k = shape.len();
        shape.extend([n_x, n_x]);
        labels.extend(["row".to_string(), "col".to_string()]);
        let slice: Vec<usize> = (0..k).collect();
        Ok(DatasetDescriptor::new(name, shape, DType::F32, labels).with_pattern(Pattern::new(SLICE_PATTERN, &[k, k + 1], &slice)))
    }
}

impl<T: Scalar> Plugin<T> for FbpRecon<T> {
    fn spec(&self) -> PluginSpec {
        PluginSpec { nr_in_datasets: 1, nr_out_datasets: 1, driver: self.driver }
    }

    fn setup(&mut self, inputs: &[DatasetDescriptor], out_names: &[String]) -> Result<PluginSetup, PluginError> {
        let input = inputs.first().ok_or_else(|| PluginError::InvalidSpec("no input".into()))?;
        let name = out_names.first().map(String::as_str).unwrap_or("recon");
        let descriptor = Self::output_descriptor(input, name)?;
        let sino = input.pattern("SINOGRAM")?;
        let n_x = input.shape[sino.core_dims[0]];
        let n_theta = input.shape[sino.core_dims[1]];
        let angles = match &self.angles_deg {
            Some(a) if a.len() != n_theta => {
                return Err(PluginError::AnglesMismatch(format!("{} angles for {n_theta} projections", a.len())))
            }
            Some(a) => a.iter().map(|d| d.to_radians()).collect(),
            None => uniform_angles(n_theta),
        };
        let center = self.center.unwrap_or(n_x as f64 / 2.0);
        self.geometry = Some(FbpGeometry { n_x, n_theta, center, angles, filter: None });
        Ok(PluginSetup {
            in_views: vec![PluginDatasetView::new(&input.name, "SINOGRAM", self.frames)],
            outputs: vec![OutputSpec { descriptor, pattern: SLICE_PATTERN.to_string() }],
        })
    }

    fn pre_process(&mut self) -> Result<(), PluginError> {
        let g = self.geometry.as_mut().ok_or_else(|| PluginError::Failed("pre_process before setup".into()))?;
        g.filter = Some(RampFilter::new(g.n_x));
        Ok(())
    }

    fn process(&self, inputs: &[ArrayD<T>]) -> Result<Vec<ArrayD<T>>, PluginError> {
        inputs_n(inputs, 1)?;
        let g = self.geometry.as_ref().ok_or_else(|| PluginError::Failed("process before setup".into()))?;
        let filter = g.filter.as_ref().ok_or_else(|| PluginError::Failed("process before pre_process".into()))?;
        let block = &inputs[0];
        if block.ndim() != 3 || block.shape()[1] != g.n_x || block.shape()[2] != g.n_theta {
            return Err(PluginError::ShapeMismatch(format!(
                "expected [m, {}, {}], got {:?}",
                g.n_x,
                g.n_theta,
                block.shape()
            )));
        }
        let m = block.shape()[0];
        let mut out = ArrayD::zeros(IxDyn(&[m, g.n_x, g.n_x]));
        for (k, sino) in block.axis_iter(Axis(0)).enumerate() {
            let sino = sino.into_dimensionality::<ndarray::Ix2>().expect("3-d block");
            out.index_axis_mut(Axis(0), k).assign(&fbp_slice(sino, filter, &g.angles, g.center));
        }
        Ok(vec![out])
    }
}
