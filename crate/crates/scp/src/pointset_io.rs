//! Point-cloud dataset plumbing: XYZ file I/O, normalization, farthest-point
//! sampling, JSON manifests, and a deterministic synthetic shape generator
//! used to build the desk-scale 8-class benchmark.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point cloud: `n` rows of xyz coordinates, an integer class label
/// (-1 while unset), and an identifier used in manifests and reports.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub id: String,
    pub label: i32,
    pub points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(id: impl Into<String>, label: i32, points: Vec<[f64; 3]>) -> Self {
        PointCloud { id: id.into(), label, points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for p in &self.points {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        let n = self.points.len().max(1) as f64;
        [c[0] / n, c[1] / n, c[2] / n]
    }
}

/// Load an ASCII XYZ file: one `x y z` triple per line, `#` starts a comment
/// line, blank lines are skipped. The label stays unset (-1); the cloud id is
/// the file stem.
pub fn load_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut points = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                msg: format!("expected 3 coordinates, found {}", fields.len()),
            });
        }
        let mut p = [0.0f64; 3];
        for (k, f) in fields.iter().enumerate() {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                msg: format!("bad float {f:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    msg: format!("non-finite coordinate {f:?}"),
                });
            }
            p[k] = v;
        }
        points.push(p);
    }
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(PointCloud { id, label: -1, points })
}

/// Write a cloud as ASCII XYZ with 9 significant digits per coordinate,
/// enough for a lossless-to-1e-6 round trip and stable byte-for-byte output.
pub fn save_xyz(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(cloud.len() * 48);
    for p in &cloud.points {
        out.push_str(&format!("{:.8e} {:.8e} {:.8e}\n", p[0], p[1], p[2]));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Center the cloud on its centroid and scale so the farthest point sits on
/// the unit sphere. Fails on empty clouds and on degenerate (zero-spread)
/// clouds where the scale would vanish.
pub fn normalize(cloud: &PointCloud) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let c = cloud.centroid();
    let mut scale = 0.0f64;
    for p in &cloud.points {
        let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2);
        scale = scale.max(d2);
    }
    let scale = scale.sqrt();
    if scale < 1e-12 {
        return Err(Error::ZeroScale);
    }
    let points = cloud
        .points
        .iter()
        .map(|p| {
            [
                (p[0] - c[0]) / scale,
                (p[1] - c[1]) / scale,
                (p[2] - c[2]) / scale,
            ]
        })
        .collect();
    Ok(PointCloud { id: cloud.id.clone(), label: cloud.label, points })
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Indices picked by farthest-point sampling: the seed is the point farthest
/// from the centroid, then each pick maximizes the distance to the already
/// chosen set. All ties resolve to the lowest index, so the result is a pure
/// function of the input. `m >= n` returns the identity selection.
pub fn fps_indices(points: &[[f64; 3]], m: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if n == 0 {
        return Err(Error::EmptyCloud);
    }
    if m == 0 {
        return Err(Error::InvalidArgument("fps target size must be >= 1".into()));
    }
    if m >= n {
        return Ok((0..n).collect());
    }
    let mut c = [0.0f64; 3];
    for p in points {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    for k in &mut c {
        *k /= n as f64;
    }
    let mut seed = 0usize;
    let mut best = -1.0f64;
    for (i, p) in points.iter().enumerate() {
        let d = dist2(p, &c);
        if d > best {
            best = d;
            seed = i;
        }
    }
    let mut picked = vec![seed];
    let mut min_d: Vec<f64> = points.iter().map(|p| dist2(p, &points[seed])).collect();
    while picked.len() < m {
        let mut next = 0usize;
        let mut best = -1.0f64;
        for (i, &d) in min_d.iter().enumerate() {
            if d > best {
                best = d;
                next = i;
            }
        }
        picked.push(next);
        for (i, d) in min_d.iter_mut().enumerate() {
            let nd = dist2(&points[i], &points[next]);
            if nd < *d {
                *d = nd;
            }
        }
    }
    Ok(picked)
}

/// Farthest-point resampling of a cloud down to `m` points (pick order).
pub fn fps_sample(cloud: &PointCloud, m: usize) -> Result<PointCloud> {
    let idx = fps_indices(&cloud.points, m)?;
    Ok(PointCloud {
        id: cloud.id.clone(),
        label: cloud.label,
        points: idx.iter().map(|&i| cloud.points[i]).collect(),
    })
}

/// Train/test split tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleEntry {
    /// Path of the XYZ file, relative to the manifest location.
    pub path: String,
    pub label: usize,
    pub split: Split,
}

/// Dataset manifest: class names, the generation seed, and one entry per
/// sample file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    pub seed: u64,
    pub samples: Vec<SampleEntry>,
}

pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Json { path: path.to_path_buf(), source: e })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Load and validate a manifest: labels must index into `classes` and every
/// referenced file must exist next to the manifest.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Json { path: path.to_path_buf(), source: e })?;
    if manifest.classes.is_empty() {
        return Err(Error::Manifest("manifest lists no classes".into()));
    }
    let root = path.parent().unwrap_or_else(|| Path::new("."));
    for entry in &manifest.samples {
        if entry.label >= manifest.classes.len() {
            return Err(Error::Manifest(format!(
                "label {} out of range for {} classes ({})",
                entry.label,
                manifest.classes.len(),
                entry.path
            )));
        }
        let file = root.join(&entry.path);
        if !file.is_file() {
            return Err(Error::Manifest(format!(
                "referenced sample missing: {}",
                file.display()
            )));
        }
    }
    Ok(manifest)
}

/// A manifest with all referenced clouds loaded, labels applied.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub manifest: DatasetManifest,
    pub clouds: Vec<PointCloud>,
}

impl LoadedDataset {
    /// Assemble a dataset in memory (tests and synthetic pipelines); cloud
    /// labels must already be set.
    pub fn from_parts(classes: Vec<String>, seed: u64, entries: Vec<(PointCloud, Split)>) -> Self {
        let samples = entries
            .iter()
            .map(|(c, s)| SampleEntry {
                path: format!("{}.xyz", c.id),
                label: c.label.max(0) as usize,
                split: *s,
            })
            .collect();
        LoadedDataset {
            manifest: DatasetManifest { classes, seed, samples },
            clouds: entries.into_iter().map(|(c, _)| c).collect(),
        }
    }

    pub fn indices_of(&self, split: Split) -> Vec<usize> {
        self.manifest
            .samples
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.classes.len()
    }
}

/// Load a manifest and every cloud it references.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<LoadedDataset> {
    let manifest_path = manifest_path.as_ref();
    let manifest = load_manifest(manifest_path)?;
    let root = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut clouds = Vec::with_capacity(manifest.samples.len());
    for entry in &manifest.samples {
        let mut cloud = load_xyz(root.join(&entry.path))?;
        cloud.label = entry.label as i32;
        clouds.push(cloud);
    }
    Ok(LoadedDataset { manifest, clouds })
}

/// The eight synthetic shape classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeClass {
    Sphere,
    Cube,
    Cylinder,
    Cone,
    Torus,
    Pyramid,
    Disk,
    Helix,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 8] = [
        ShapeClass::Sphere,
        ShapeClass::Cube,
        ShapeClass::Cylinder,
        ShapeClass::Cone,
        ShapeClass::Torus,
        ShapeClass::Pyramid,
        ShapeClass::Disk,
        ShapeClass::Helix,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Sphere => "sphere",
            ShapeClass::Cube => "cube",
            ShapeClass::Cylinder => "cylinder",
            ShapeClass::Cone => "cone",
            ShapeClass::Torus => "torus",
            ShapeClass::Pyramid => "pyramid",
            ShapeClass::Disk => "disk",
            ShapeClass::Helix => "helix",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        ShapeClass::ALL
            .iter()
            .copied()
            .find(|s| s.name() == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown shape class {name:?}")))
    }
}

/// Settings for [`gen_synthetic`].
#[derive(Debug, Clone)]
pub struct GenSpec {
    pub classes: Vec<ShapeClass>,
    pub per_class: usize,
    pub n_points: usize,
    pub jitter_sigma: f64,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            classes: ShapeClass::ALL.to_vec(),
            per_class: 100,
            n_points: 256,
            jitter_sigma: 0.02,
            seed: 0,
        }
    }
}

impl GenSpec {
    fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::InvalidArgument("no shape classes requested".into()));
        }
        if self.per_class == 0 || self.n_points == 0 {
            return Err(Error::InvalidArgument(
                "per_class and n_points must be >= 1".into(),
            ));
        }
        if !self.jitter_sigma.is_finite() || self.jitter_sigma < 0.0 {
            return Err(Error::InvalidArgument("jitter sigma must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Generate one sample: surface-sample the shape, apply a random rotation and
/// Gaussian jitter, then normalize. Deterministic per (seed, class, index).
fn gen_cloud(spec: &GenSpec, class_idx: usize, class: ShapeClass, sample_idx: usize) -> Result<PointCloud> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(((class_idx as u64) << 32) | sample_idx as u64);
    let mut points = shapes::sample(class, spec.n_points, &mut rng);
    let rot = shapes::random_rotation(&mut rng);
    for p in &mut points {
        let q = [
            rot[0][0] * p[0] + rot[0][1] * p[1] + rot[0][2] * p[2],
            rot[1][0] * p[0] + rot[1][1] * p[1] + rot[1][2] * p[2],
            rot[2][0] * p[0] + rot[2][1] * p[1] + rot[2][2] * p[2],
        ];
        *p = q;
    }
    if spec.jitter_sigma > 0.0 {
        for p in &mut points {
            for k in 0..3 {
                let g: f64 = rng.sample(StandardNormal);
                p[k] += spec.jitter_sigma * g;
            }
        }
    }
    let id = format!("{}_{:04}", class.name(), sample_idx);
    normalize(&PointCloud::new(id, class_idx as i32, points))
}

/// Generate the synthetic dataset in memory with a stratified 80/20
/// train/test split per class.
pub fn gen_clouds(spec: &GenSpec) -> Result<Vec<(PointCloud, Split)>> {
    spec.validate()?;
    let n_train = ((spec.per_class as f64) * 0.8).round() as usize;
    let mut out = Vec::with_capacity(spec.classes.len() * spec.per_class);
    for (ci, &class) in spec.classes.iter().enumerate() {
        for si in 0..spec.per_class {
            let cloud = gen_cloud(spec, ci, class, si)?;
            let split = if si < n_train { Split::Train } else { Split::Test };
            out.push((cloud, split));
        }
    }
    Ok(out)
}

/// Generate the dataset under `out_dir` (one XYZ file per sample plus
/// `manifest.json`) and return the manifest. Byte-identical across calls
/// with the same spec.
pub fn gen_synthetic(out_dir: impl AsRef<Path>, spec: &GenSpec) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let clouds = gen_clouds(spec)?;
    let mut samples = Vec::with_capacity(clouds.len());
    for (cloud, split) in &clouds {
        let file = format!("{}.xyz", cloud.id);
        save_xyz(cloud, out_dir.join(&file))?;
        samples.push(SampleEntry {
            path: file,
            label: cloud.label as usize,
            split: *split,
        });
    }
    let manifest = DatasetManifest {
        classes: spec.classes.iter().map(|c| c.name().to_string()).collect(),
        seed: spec.seed,
        samples,
    };
    save_manifest(&manifest, out_dir.join("manifest.json"))?;
    Ok(manifest)
}

pub(crate) use shapes::random_rotation;

/// Surface samplers for the synthetic classes. Shapes are centered near the
/// origin at order-one scale; per-sample proportions (heights, tube ratios,
/// turn counts) vary so classes are not separable by trivial statistics.
mod shapes {
    use super::*;

    pub fn sample(class: ShapeClass, n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
        match class {
            ShapeClass::Sphere => sphere(n, rng),
            ShapeClass::Cube => cube(n, rng),
            ShapeClass::Cylinder => cylinder(n, rng),
            ShapeClass::Cone => cone(n, rng),
            ShapeClass::Torus => torus(n, rng),
            ShapeClass::Pyramid => pyramid(n, rng),
            ShapeClass::Disk => disk(n, rng),
            ShapeClass::Helix => helix(n, rng),
        }
    }

    /// Uniform rotation from a uniform unit quaternion.
    pub fn random_rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
        let tau = std::f64::consts::TAU;
        let u1: f64 = rng.random();
        let u2: f64 = rng.random::<f64>() * tau;
        let u3: f64 = rng.random::<f64>() * tau;
        let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
        let (x, y, z, w) = (a * u2.sin(), a * u2.cos(), b * u3.sin(), b * u3.cos());
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
            [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
            [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }

    /// Uniform on the unit sphere; every point has norm exactly 1 up to
    /// rounding, which downstream tests rely on.
    fn sphere(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
        (0..n)
            .map(|_| loop {
                let g = [
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                ];
                let r = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
                if r > 1e-9 {
                    return [g[0] / r, g[1] / r, g[2] / r];
                }
            })
            .collect()
    }

    fn cube(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
        (0..n)
            .map(|_| {
                let face = rng.random_range(0..6usize);
                let u = rng.random_range(-1.0..1.0);
                let v = rng.random_range(-1.0..1.0);
                let axis = face / 2;
                let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
                let mut p = [0.0; 3];
                p[axis] = sign;
                p[(axis + 1) % 3] = u;
                p[(axis + 2) % 3] = v;
                p
            })
            .collect()
    }

    fn cylinder(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
        let tau = std::f64::consts::TAU;
        let r = 0.7;
        let h = rng.random_range(1.4..2.4);
        let lateral = tau * r * h;
        let cap = std::f64::consts::PI * r * r;
        let total = lateral + 2.0 * cap;
        (0..n)
            .map(|_| {
                let pick = rng.random_range(0.0..total);
                let theta = rng.random_range(0.0..tau);
                if pick < lateral {
                    let z = rng.random_range(-0.5 * h..0.5 * h);
                    [r * theta.cos(), r * theta.sin(), z]
                } else {
                    let z = if pick < lateral + cap { 0.5 * h } else { -0.5 * h };
                    let rho = r * rng.random::<f64>().sqrt();
                    [rho * theta.cos(), rho * theta.sin(), z]
                }
            })
            .collect()
    }

    fn cone(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
        let tau = std::f64::consts::TAU;
        let r = 0.9;
        let h: f64 = rng.random_range(1.2..2.0);
        let slant = (r * r + h * h).sqrt();
        let lateral = std::f64::consts::PI * r * slant;
        let base = std::f64::consts::PI * r * r;
        (0..n)
            .map(|_| {
                let theta = rng.random_range(0.0..tau);
                if rng.random_range(0.0..lateral + base) < lateral {
                    // area density grows linearly from the apex
                    let f = rng.random::<f64>().sqrt();
                    [r * f * theta.cos(), r * f * theta.sin(), h * (1.0 - f)]
                } else {
                    let rho = r * rng.random::<f64>().sqrt();
                    [rho * theta.cos(), rho * theta.sin(), 0.0]
                }
            })
            .collect()
    }

    fn torus(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
        let tau = std::f64::consts::TAU;
        let big_r = 0.75;
        let small_r = big_r * rng.random_range(0.25..0.45);
        (0..n)
            .map(|_| {
                // rejection in the tube angle gives uniform surface area
                let v = loop {
                    let v = rng.random_range(0.0..tau);
                    let accept = (big_r + small_r * v.cos()) / (big_r + small_r);
                    if rng.random::<f64>() <= accept {
                        break v;
                    }
                };
                let u = rng.random_range(0.0..tau);
                let ring = big_r + small_r * v.cos();
                [ring * u.cos(), ring * u.sin(), small_r * v.sin()]
            })
            .collect()
    }

    fn pyramid(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
        let half = 0.8;
        let h: f64 = rng.random_range(1.0..1.8);
        let apex = [0.0, 0.0, h];
        let corners = [
            [half, half, 0.0],
            [-half, half, 0.0],
            [-half, -half, 0.0],
            [half, -half, 0.0],
        ];
        let base_area = (2.0 * half) * (2.0 * half);
        let slant = (h * h + half * half).sqrt();
        let side_area = 0.5 * (2.0 * half) * slant;
        let total = base_area + 4.0 * side_area;
        (0..n)
            .map(|_| {
                let pick = rng.random_range(0.0..total);
                if pick < base_area {
                    [
                        rng.random_range(-half..half),
                        rng.random_range(-half..half),
                        0.0,
                    ]
                } else {
                    let face = ((pick - base_area) / side_area) as usize % 4;
                    let (a, b, c) = (apex, corners[face], corners[(face + 1) % 4]);
                    let su = rng.random::<f64>().sqrt();
                    let v = rng.random::<f64>();
                    let mut p = [0.0; 3];
                    for k in 0..3 {
                        p[k] = (1.0 - su) * a[k] + su * (1.0 - v) * b[k] + su * v * c[k];
                    }
                    p
                }
            })
            .collect()
    }

    fn disk(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
        let tau = std::f64::consts::TAU;
        (0..n)
            .map(|_| {
                let rho = rng.random::<f64>().sqrt();
                let theta = rng.random_range(0.0..tau);
                [rho * theta.cos(), rho * theta.sin(), 0.0]
            })
            .collect()
    }

    fn helix(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
        let tau = std::f64::consts::TAU;
        let turns = rng.random_range(2.5..4.0);
        let r = 0.65;
        (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                let t = u * turns * tau;
                [r * t.cos(), r * t.sin(), -0.9 + 1.8 * u]
            })
            .collect()
    }

    #[cfg(test)]
    pub fn sphere_for_test(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
        sphere(n, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube_corners() -> Vec<[f64; 3]> {
        let mut pts = Vec::new();
        for i in 0..8u32 {
            let b = |k: u32| if (i >> k) & 1 == 1 { 1.0 } else { -1.0 };
            // bit 2 -> x, bit 1 -> y, bit 0 -> z
            pts.push([b(2), b(1), b(0)]);
        }
        pts
    }

    fn min_pairwise(points: &[[f64; 3]], subset: &[usize]) -> f64 {
        let mut best = f64::INFINITY;
        for (a, &i) in subset.iter().enumerate() {
            for &j in &subset[a + 1..] {
                best = best.min(dist2(&points[i], &points[j]).sqrt());
            }
        }
        best
    }

    fn brute_force_best_4_subset(points: &[[f64; 3]]) -> f64 {
        let n = points.len();
        let mut best = 0.0f64;
        for a in 0..n {
            for b in (a + 1)..n {
                for c in (b + 1)..n {
                    for d in (c + 1)..n {
                        best = best.max(min_pairwise(points, &[a, b, c, d]));
                    }
                }
            }
        }
        best
    }

    #[test]
    fn xyz_round_trip_preserves_coordinates() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let points: Vec<[f64; 3]> = (0..64)
            .map(|_| {
                [
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                ]
            })
            .collect();
        let cloud = PointCloud::new("rt", 3, points);
        let path = dir.path().join("rt.xyz");
        save_xyz(&cloud, &path).unwrap();
        let loaded = load_xyz(&path).unwrap();
        assert_eq!(loaded.id, "rt");
        assert_eq!(loaded.label, -1, "xyz files do not carry labels");
        assert_eq!(loaded.len(), cloud.len());
        for (a, b) in loaded.points.iter().zip(&cloud.points) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn xyz_skips_comments_and_blank_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.xyz");
        fs::write(&path, "# header\n\n 1.0 2.0 3.0 \n# trailing\n-1e-3 0 4\n").unwrap();
        let cloud = load_xyz(&path).unwrap();
        assert_eq!(cloud.points, vec![[1.0, 2.0, 3.0], [-1e-3, 0.0, 4.0]]);
    }

    #[test]
    fn xyz_rejects_malformed_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.xyz");
        fs::write(&path, "1.0 2.0 3.0\n4.0 5.0\n").unwrap();
        match load_xyz(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        fs::write(&path, "1.0 nan 3.0\n").unwrap();
        assert!(load_xyz(&path).is_err());
    }

    #[test]
    fn normalize_centers_and_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let points: Vec<[f64; 3]> = (0..100)
            .map(|_| {
                [
                    rng.random_range(3.0..9.0),
                    rng.random_range(-5.0..0.0),
                    rng.random_range(10.0..11.0),
                ]
            })
            .collect();
        let normed = normalize(&PointCloud::new("n", 0, points)).unwrap();
        let c = normed.centroid();
        assert!(c.iter().all(|v| v.abs() <= 1e-9), "centroid {c:?}");
        let max_norm = normed
            .points
            .iter()
            .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
            .fold(0.0f64, f64::max);
        assert!((max_norm - 1.0).abs() <= 1e-9, "max norm {max_norm}");
    }

    #[test]
    fn normalize_rejects_empty_and_degenerate() {
        assert!(matches!(
            normalize(&PointCloud::new("e", 0, vec![])),
            Err(Error::EmptyCloud)
        ));
        let flat = vec![[2.0, 2.0, 2.0]; 7];
        assert!(matches!(
            normalize(&PointCloud::new("d", 0, flat)),
            Err(Error::ZeroScale)
        ));
    }

    #[test]
    fn fps_on_cube_corners_is_deterministic_and_2_approximate() {
        let pts = cube_corners();
        let picked = fps_indices(&pts, 4).unwrap();
        // All corners tie for the seed (equidistant from the centroid), so the
        // lowest index starts; the body-diagonal corner follows, then the
        // lowest-index ties at distance 2.
        assert_eq!(picked, vec![0, 7, 1, 2]);
        // Greedy farthest-point picks satisfy the classic packing bound:
        // their min pairwise distance is at least half the best 4-subset's.
        let greedy = min_pairwise(&pts, &picked);
        let best = brute_force_best_4_subset(&pts);
        assert!((best - 2.0 * 2.0f64.sqrt()).abs() < 1e-12, "tetrahedral optimum");
        assert!(greedy >= 0.5 * best - 1e-12, "greedy {greedy} vs optimal {best}");
    }

    #[test]
    fn fps_on_regular_octagon_matches_brute_force_optimum() {
        let tau = std::f64::consts::TAU;
        let pts: Vec<[f64; 3]> = (0..8)
            .map(|i| {
                let a = tau * (i as f64) / 8.0;
                [a.cos(), a.sin(), 0.0]
            })
            .collect();
        let picked = fps_indices(&pts, 4).unwrap();
        let greedy = min_pairwise(&pts, &picked);
        let best = brute_force_best_4_subset(&pts);
        assert!(
            (greedy - best).abs() <= 1e-12,
            "greedy {greedy} should be optimal {best} on the octagon"
        );
    }

    #[test]
    fn fps_identity_when_m_covers_cloud() {
        let pts = cube_corners();
        assert_eq!(fps_indices(&pts, 8).unwrap(), (0..8).collect::<Vec<_>>());
        assert_eq!(fps_indices(&pts, 20).unwrap(), (0..8).collect::<Vec<_>>());
        assert!(fps_indices(&pts, 0).is_err());
    }

    #[test]
    fn sphere_samples_sit_on_unit_sphere_before_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let pts = shapes::sphere_for_test(500, &mut rng);
        for p in pts {
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert!((r - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn gen_synthetic_is_byte_deterministic() {
        let spec = GenSpec {
            per_class: 4,
            n_points: 32,
            jitter_sigma: 0.02,
            seed: 123,
            ..GenSpec::default()
        };
        let da = tempfile::tempdir().unwrap();
        let db = tempfile::tempdir().unwrap();
        gen_synthetic(da.path(), &spec).unwrap();
        gen_synthetic(db.path(), &spec).unwrap();
        let mut names: Vec<String> = fs::read_dir(da.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert_eq!(names.len(), 8 * 4 + 1, "32 samples plus manifest");
        for name in names {
            let a = fs::read(da.path().join(&name)).unwrap();
            let b = fs::read(db.path().join(&name)).unwrap();
            assert_eq!(a, b, "file {name} differs between identical runs");
        }
    }

    #[test]
    fn gen_synthetic_split_and_labels() {
        let spec = GenSpec {
            per_class: 10,
            n_points: 16,
            seed: 9,
            ..GenSpec::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let manifest = gen_synthetic(dir.path(), &spec).unwrap();
        assert_eq!(manifest.classes.len(), 8);
        assert_eq!(manifest.samples.len(), 80);
        for (ci, class) in spec.classes.iter().enumerate() {
            let of_class: Vec<_> = manifest
                .samples
                .iter()
                .filter(|s| s.label == ci)
                .collect();
            assert_eq!(of_class.len(), 10);
            let train = of_class.iter().filter(|s| s.split == Split::Train).count();
            assert_eq!(train, 8, "80/20 split for {}", class.name());
            assert!(of_class[0].path.starts_with(class.name()));
        }
        // loads back with validation
        let ds = load_dataset(dir.path().join("manifest.json")).unwrap();
        assert_eq!(ds.clouds.len(), 80);
        assert!(ds.clouds.iter().all(|c| c.len() == 16));
        assert_eq!(ds.indices_of(Split::Test).len(), 16);
    }

    #[test]
    fn manifest_validation_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let manifest = DatasetManifest {
            classes: vec!["a".into()],
            seed: 0,
            samples: vec![SampleEntry { path: "missing.xyz".into(), label: 0, split: Split::Train }],
        };
        save_manifest(&manifest, &path).unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::Manifest(_))));

        fs::write(dir.path().join("missing.xyz"), "0 0 0\n").unwrap();
        assert!(load_manifest(&path).is_ok());

        let manifest = DatasetManifest {
            classes: vec!["a".into()],
            seed: 0,
            samples: vec![SampleEntry { path: "missing.xyz".into(), label: 3, split: Split::Test }],
        };
        save_manifest(&manifest, &path).unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::Manifest(_))));
    }
}
