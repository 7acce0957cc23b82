use framechain::engine::{Plugin, PluginEntry, PluginError, ProcessList, RunOptions};
use framechain::model::{DType, DatasetDescriptor, Pattern};
use framechain::plugins::kernels::{fbp_slice, uniform_angles, RampFilter, EPSILON};
use framechain::plugins::{
    default_engine, ContainerLoader, DarkFlatCorrect, DatasetRatio, Disk, FbpRecon, MedianFilter3x3, MinusLog, PhantomSpec,
    SyntheticTomo, ViewParams, I0,
};
use framechain::engine::{Driver, Loader};
use framechain::storage::{Container, OpenMode, StorageError};
use ndarray::{Array2, ArrayD, Dimension, IxDyn};
use serde_json::{json, Value};

fn entry(name: &str, params: Value) -> PluginEntry {
    PluginEntry::new(name, params.as_object().cloned().unwrap())
}

fn view(pattern: &str) -> ViewParams {
    ViewParams { pattern: pattern.into(), frames: 1 }
}

fn block(shape: &[usize], f: impl Fn(&[usize]) -> f32) -> ArrayD<f32> {
    ArrayD::from_shape_fn(IxDyn(shape), |ix| f(ix.slice()))
}

fn final_output(outcome: &framechain::engine::RunOutcome, name: &str) -> ArrayD<f32> {
    let link = outcome.manifest.final_outputs.iter().find(|o| o.dataset == name).unwrap();
    Container::open(&link.path, OpenMode::Read).unwrap().read_all().unwrap()
}

#[test]
fn empty_phantom_is_flat_field() {
    let dir = tempfile::tempdir().unwrap();
    let list = ProcessList::from_entries([
        entry("SyntheticTomoLoader", json!({ "n_theta": 6, "n_y": 2, "n_x": 5, "disks": [] })),
        entry("ContainerSaver", json!({})),
    ]);
    let outcome = default_engine::<f32>().run(&[], &list, &RunOptions::new(dir.path())).unwrap();
    assert!(final_output(&outcome, "tomo").iter().all(|&v| v == I0 as f32));
    assert!(final_output(&outcome, "flat").iter().all(|&v| v == I0 as f32));
    assert!(final_output(&outcome, "dark").iter().all(|&v| v == 1000.0));
    assert_eq!(final_output(&outcome, "dark").shape(), &[1, 2, 5]);
}

/// Marches along the ray and sums the density of every covered sample.
fn marched_integral(disks: &[Disk], theta: f64, s: f64) -> f64 {
    let (sn, cs) = theta.sin_cos();
    let steps = 20_000;
    let dt = 2.0 / steps as f64;
    (0..steps)
        .map(|k| {
            let t = -1.0 + (k as f64 + 0.5) * dt;
            let x = 0.5 + s * cs - t * sn;
            let y = 0.5 + s * sn + t * cs;
            disks.iter().filter(|d| d.contains(x, y)).map(|d| d.density).sum::<f64>() * dt
        })
        .sum()
}

#[test]
fn off_center_disk_matches_geometric_oracle_and_traces_a_sinusoid() {
    let disks = vec![Disk::new([0.7, 0.4], 0.1, 1.5)];
    let phantom = PhantomSpec { disks: disks.clone(), n_x: 64, n_theta: 24 };
    for t in 0..24 {
        let theta = phantom.angle(t);
        let mut best = (0, f64::MIN);
        for b in 0..64 {
            let analytic = phantom.integral(t, b, 0.5);
            let marched = marched_integral(&disks, theta, phantom.bin_offset(b));
            assert!((analytic - marched).abs() < 2e-3, "t {t} b {b}: {analytic} vs {marched}");
            if analytic > best.1 {
                best = (b, analytic);
            }
        }
        // peak sits at the projected centre offset
        let s0 = 0.2 * theta.cos() - 0.1 * theta.sin();
        assert!((phantom.bin_offset(best.0) - s0).abs() <= 1.0 / 64.0, "t {t}");
    }
}

#[test]
fn centered_disk_ray_through_axis() {
    let phantom = PhantomSpec { disks: vec![Disk::new([0.5, 0.5], 0.25, 2.0)], n_x: 32, n_theta: 7 };
    for t in 0..7 {
        assert!((phantom.integral(t, 16, 0.5) - 2.0 * 0.25 * 2.0).abs() < 1e-12);
    }
}

#[test]
fn loader_rejects_invalid_spec() {
    let list = ProcessList::from_entries([
        entry("SyntheticTomoLoader", json!({ "disks": [{ "center": [0.5, 0.5], "radius": -1.0, "density": 1.0 }] })),
        entry("ContainerSaver", json!({})),
    ]);
    let report = default_engine::<f32>().check(&list, &[]);
    assert!(!report.is_ok());
    assert!(report.issues[0].to_string().contains("radius"), "{report}");
}

#[test]
fn container_loader_round_trips_descriptor() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scan.cnt");
    let d = DatasetDescriptor::new("scan", vec![4, 3, 5, 2], DType::U16, ["theta", "y", "x", "scan"].map(String::from).to_vec())
        .with_pattern(Pattern::new("PROJECTION", &[2, 1], &[0, 3]))
        .with_pattern(Pattern::new("SINOGRAM", &[2, 0], &[1, 3]));
    let c = Container::create(&path, &d, &[2, 3, 5, 1]).unwrap();
    let data = ArrayD::from_shape_fn(IxDyn(&[4, 3, 5, 2]), |ix| (ix[0] * 1000 + ix[1] * 100 + ix[2] * 10 + ix[3]) as f32);
    c.write_all(data.view()).unwrap();
    drop(c);

    let loader = ContainerLoader::default();
    let described = loader.describe(Some(&path)).unwrap();
    assert_eq!(described, vec![d.clone()]);
    let renamed = ContainerLoader { rename: Some("fluo".into()) }.describe(Some(&path)).unwrap();
    assert_eq!(renamed[0].name, "fluo");

    // SINOGRAM frames walk y fastest, then scan
    let c = Container::open(&path, OpenMode::Read).unwrap();
    let expect = [(0, 0), (1, 0), (2, 0), (0, 1), (1, 1), (2, 1)];
    for (ordinal, (y, scan)) in expect.into_iter().enumerate() {
        let frame: ArrayD<f32> = c.read_frames("SINOGRAM", ordinal, 1, &[]).unwrap();
        assert_eq!(frame.shape(), &[1, 5, 4]);
        for x in 0..5 {
            for t in 0..4 {
                assert_eq!(frame[[0, x, t]], data[[t, y, x, scan]]);
            }
        }
    }

    let truncated = dir.path().join("bad.cnt");
    std::fs::write(&truncated, b"SAVU").unwrap();
    assert!(matches!(
        loader.describe(Some(&truncated)),
        Err(PluginError::Storage(StorageError::BadMagic | StorageError::CorruptHeader(_) | StorageError::Io(_)))
    ));
    std::fs::write(&truncated, b"NOTACONTAINER___").unwrap();
    assert!(matches!(loader.describe(Some(&truncated)), Err(PluginError::Storage(StorageError::BadMagic))));
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[8] = 9;
    std::fs::write(&truncated, &bytes).unwrap();
    assert!(matches!(loader.describe(Some(&truncated)), Err(PluginError::Storage(StorageError::UnsupportedVersion(9)))));
}

#[test]
fn dark_flat_examples() {
    let p = DarkFlatCorrect { view: view("PROJECTION") };
    let dark = block(&[2, 3, 2], |_| 100.0);
    let flat = block(&[2, 3, 2], |ix| 300.0 + ix[1] as f32 * 100.0);
    let half = ndarray::Zip::from(&dark).and(&flat).map_collect(|&d, &f| d + 0.5 * (f - d));
    let run = |raw: &ArrayD<f32>| Plugin::<f32>::process(&p, &[raw.clone(), dark.clone(), flat.clone()]).unwrap().remove(0);
    assert!(run(&flat).iter().all(|&v| v == 1.0));
    assert!(run(&dark).iter().all(|&v| v == 0.0));
    assert!(run(&half).iter().all(|&v| v == 0.5));
    let wrong = block(&[2, 3, 1], |_| 0.0);
    assert!(matches!(
        Plugin::<f32>::process(&p, &[flat.clone(), wrong, flat.clone()]),
        Err(PluginError::ShapeMismatch(_))
    ));
    // flat == dark falls back to epsilon
    let same = Plugin::<f32>::process(&p, &[flat.clone(), dark.clone(), dark.clone()]).unwrap().remove(0);
    assert!(same.iter().all(|v| v.is_finite()));
}

#[test]
fn minus_log_examples() {
    let p = MinusLog { view: view("SINOGRAM") };
    let b = ArrayD::from_shape_vec(IxDyn(&[1, 3]), vec![1.0f64, (-1.0f64).exp(), 0.0]).unwrap();
    let out = Plugin::<f64>::process(&p, &[b]).unwrap().remove(0);
    assert_eq!(out[[0, 0]], 0.0);
    assert!((out[[0, 1]] - 1.0).abs() < 1e-12);
    assert!((out[[0, 2]] + EPSILON.ln()).abs() < 1e-12);
}

#[test]
fn median_examples_and_padding_layout() {
    let mut p = MedianFilter3x3 { view: view("PROJECTION") };
    let d = DatasetDescriptor::new("tomo", vec![5, 4, 6], DType::F32, vec![String::new(); 3])
        .with_pattern(Pattern::new("PROJECTION", &[2, 1], &[0]));
    let setup = Plugin::<f32>::setup(&mut p, &[d], &["tomo".into()]).unwrap();
    assert_eq!(setup.in_views[0].padding, vec![1, 0, 0]);

    let constant = block(&[2, 3, 6, 4], |_| 7.0);
    assert_eq!(Plugin::<f32>::process(&p, &[constant]).unwrap()[0], block(&[2, 6, 4], |_| 7.0));
    let impulse = block(&[1, 3, 6, 4], |ix| if ix == [0, 1, 2, 2] { 50.0 } else { 1.0 });
    assert!(Plugin::<f32>::process(&p, &[impulse]).unwrap()[0].iter().all(|&v| v == 1.0));
}

#[test]
fn ratio_examples() {
    let p = DatasetRatio { view: view("PROJECTION") };
    let num = block(&[2, 3, 3], |ix| (ix[0] + ix[1] * 3 + ix[2]) as f32 + 0.5);
    let ones = block(&[2, 3, 3], |_| 1.0);
    assert!(Plugin::<f32>::process(&p, &[num.clone(), num.clone()]).unwrap()[0].iter().all(|&v| v == 1.0));
    assert_eq!(Plugin::<f32>::process(&p, &[num.clone(), ones]).unwrap()[0], num);
}

#[test]
fn ratio_broadcasts_three_d_denominator_over_scans() {
    let dir = tempfile::tempdir().unwrap();
    let disks = json!([{ "center": [0.45, 0.5], "radius": 0.2, "density": 1.0 }]);
    let list = ProcessList::from_entries([
        entry("SyntheticTomoLoader", json!({ "name": "fluo", "n_theta": 7, "n_y": 3, "n_x": 6, "n_scan": 3, "dark_flat": false, "disks": disks })),
        entry("SyntheticTomoLoader", json!({ "name": "tomo", "n_theta": 7, "n_y": 3, "n_x": 6, "dark_flat": false,
            "disks": [{ "center": [0.55, 0.5], "radius": 0.3, "density": 2.0 }] })),
        entry("DatasetRatio", json!({ "frames": 4 })),
        entry("ContainerSaver", json!({})),
    ]);
    for workers in [1, 3] {
        let out = dir.path().join(format!("w{workers}"));
        let outcome = default_engine::<f32>().run(&[], &list, &RunOptions::new(&out).with_workers(workers)).unwrap();
        let num = final_output(&outcome, "fluo");
        let den = final_output(&outcome, "tomo");
        let ratio = final_output(&outcome, "ratio");
        assert_eq!(ratio.shape(), &[7, 3, 6, 3]);
        for t in 0..7 {
            for y in 0..3 {
                for x in 0..6 {
                    for s in 0..3 {
                        let expected = num[[t, y, x, s]] / den[[t, y, x]].max(EPSILON as f32);
                        assert_eq!(ratio[[t, y, x, s]], expected);
                    }
                }
            }
        }
    }
}

#[test]
fn chain_recovers_line_integrals() {
    let dir = tempfile::tempdir().unwrap();
    let disks = json!([
        { "center": [0.5, 0.5], "radius": 0.3, "density": 1.0 },
        { "center": [0.62, 0.45], "radius": 0.08, "density": 2.0, "rows": [0.0, 0.6] }
    ]);
    let list = ProcessList::from_entries([
        entry("SyntheticTomoLoader", json!({ "n_theta": 20, "n_y": 4, "n_x": 32, "disks": disks.clone() })),
        entry("DarkFlatCorrect", json!({})),
        entry("MinusLog", json!({})),
        entry("ContainerSaver", json!({})),
    ]);
    let outcome = default_engine::<f32>().run(&[], &list, &RunOptions::new(dir.path()).with_workers(2)).unwrap();
    let got = final_output(&outcome, "tomo");
    let phantom = PhantomSpec { disks: serde_json::from_value(disks).unwrap(), n_x: 32, n_theta: 20 };
    let expected = SyntheticTomo::new("tomo", phantom, 4).integrals();
    let max = expected.iter().copied().fold(0.0, f64::max);
    for (g, e) in got.iter().zip(expected.iter()) {
        assert!((*g as f64 - e).abs() <= 1e-4 * max, "{g} vs {e}");
    }
}

fn fbp_with(center: Option<f64>, angles: Option<Vec<f64>>, n_x: usize, n_theta: usize) -> Result<FbpRecon<f64>, PluginError> {
    let mut p = FbpRecon::<f64>::new(1, center, angles, Driver::Cpu);
    let d = DatasetDescriptor::new("tomo", vec![n_theta, 2, n_x], DType::F32, ["theta", "y", "x"].map(String::from).to_vec())
        .with_pattern(Pattern::new("SINOGRAM", &[2, 0], &[1]));
    let setup = Plugin::<f64>::setup(&mut p, &[d], &["recon".into()])?;
    let out = &setup.outputs[0].descriptor;
    assert_eq!(out.shape, vec![2, n_x, n_x]);
    assert_eq!(out.patterns["SLICE"].core_dims, vec![1, 2]);
    assert_eq!(out.patterns["SLICE"].slice_dims, vec![0]);
    Plugin::<f64>::pre_process(&mut p)?;
    Ok(p)
}

#[test]
fn fbp_zero_linearity_and_angle_checks() {
    let p = fbp_with(None, None, 16, 12).unwrap();
    let zero = ArrayD::<f64>::zeros(IxDyn(&[2, 16, 12]));
    assert!(Plugin::<f64>::process(&p, &[zero]).unwrap()[0].iter().all(|&v| v == 0.0));
    let s = ArrayD::from_shape_fn(IxDyn(&[1, 16, 12]), |ix| ((ix[1] * 5 + ix[2] * 3) % 7) as f64);
    let a = Plugin::<f64>::process(&p, std::slice::from_ref(&s)).unwrap().remove(0);
    let b = Plugin::<f64>::process(&p, &[s.mapv(|v| 4.0 * v)]).unwrap().remove(0);
    for (x, y) in a.iter().zip(b.iter()) {
        assert!((4.0 * x - y).abs() <= 1e-9 * (1.0 + y.abs()));
    }
    assert!(matches!(fbp_with(None, Some(vec![0.0; 5]), 16, 12), Err(PluginError::AnglesMismatch(_))));
    let explicit = fbp_with(Some(8.0), Some((0..12).map(|k| k as f64 * 15.0).collect()), 16, 12).unwrap();
    let c = Plugin::<f64>::process(&explicit, &[s]).unwrap().remove(0);
    for (x, y) in a.iter().zip(c.iter()) {
        assert!((x - y).abs() < 1e-9);
    }
}

fn circle_error(recon: &Array2<f64>, truth: &Array2<f64>) -> f64 {
    let n = recon.nrows();
    let c = n as f64 / 2.0;
    let (mut num, mut den) = (0.0, 0.0);
    for ((i, j), &t) in truth.indexed_iter() {
        let (dx, dy) = (j as f64 - c, i as f64 - c);
        if dx * dx + dy * dy <= c * c {
            num += (recon[[i, j]] - t).powi(2);
            den += t * t;
        }
    }
    (num / den).sqrt()
}

#[test]
fn fbp_reconstructs_centered_disk() {
    let phantom = PhantomSpec { disks: vec![Disk::new([0.5, 0.5], 0.3, 1.0)], n_x: 64, n_theta: 90 };
    let sino = Array2::from_shape_fn((64, 90), |(b, t)| phantom.integral(t, b, 0.5));
    let recon = fbp_slice(sino.view(), &RampFilter::new(64), &uniform_angles(90), 32.0);
    let err = circle_error(&recon, &phantom.image(0.5));
    assert!(err <= 0.25, "relative L2 error {err}");
}

#[test]
fn process_hooks_are_pure() {
    let b = block(&[2, 3, 4, 5], |ix| ((ix[0] * 7 + ix[1] * 5 + ix[2] * 3 + ix[3]) % 11) as f32);
    let m = MedianFilter3x3 { view: view("PROJECTION") };
    assert_eq!(Plugin::<f32>::process(&m, std::slice::from_ref(&b)).unwrap(), Plugin::<f32>::process(&m, std::slice::from_ref(&b)).unwrap());
    let l = MinusLog { view: view("SINOGRAM") };
    assert_eq!(Plugin::<f32>::process(&l, std::slice::from_ref(&b)).unwrap(), Plugin::<f32>::process(&l, &[b]).unwrap());
}

#[test]
fn golden_median_block() {
    // window [3 frames, 3 rows, 3 cols] around the centre of a 1..=27 ramp
    let b = block(&[1, 3, 3, 3], |ix| (ix[1] * 9 + ix[2] * 3 + ix[3] + 1) as f32);
    let out = Plugin::<f32>::process(&MedianFilter3x3 { view: view("PROJECTION") }, &[b]).unwrap().remove(0);
    assert_eq!(out[[0, 1, 1]], 14.0);
    // corner clamps to rows {0,0,1} and cols {0,0,1}
    let mut corner: Vec<f32> = Vec::new();
    for k in 0..3 {
        for i in [0, 0, 1] {
            for j in [0, 0, 1] {
                corner.push((k * 9 + i * 3 + j + 1) as f32);
            }
        }
    }
    corner.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(out[[0, 0, 0]], corner[13]);
}
