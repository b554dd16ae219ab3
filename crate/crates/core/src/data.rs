//! Feature ingestion, view pairing, normalization and synthetic cross-view
//! data.
//!
//! # Feature CSV
//!
//! UTF-8, `.` decimal separator, header `id,cam,f0,f1,...,f{m-1}`, one row
//! per image.
//!
//! # Binary features
//!
//! Little-endian: the 8-byte magic `XCRCFEAT`, `u64` row count `n`, `u64`
//! feature width `m`, then per row a `u32` byte length and UTF-8 bytes of
//! the id followed by the same for the camera, then the `n·m` features as
//! row-major `f64`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 8] = b"XCRCFEAT";

/// Labeled feature vectors, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub ids: Vec<String>,
    pub cams: Vec<String>,
    pub features: DMatrix<f64>,
}

impl SampleSet {
    pub fn new(ids: Vec<String>, cams: Vec<String>, features: DMatrix<f64>) -> Result<Self> {
        if ids.len() != cams.len() || ids.len() != features.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} ids, {} cameras, {} feature rows",
                ids.len(),
                cams.len(),
                features.nrows()
            )));
        }
        if let Some(i) = (0..features.nrows()).find(|&i| features.row(i).iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!("features of sample {}", ids[i])));
        }
        Ok(SampleSet { ids, cams, features })
    }

    pub fn empty(dim: usize) -> Self {
        SampleSet {
            ids: Vec::new(),
            cams: Vec::new(),
            features: DMatrix::zeros(0, dim),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> SampleSet {
        SampleSet {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            cams: indices.iter().map(|&i| self.cams[i].clone()).collect(),
            features: self.features.select_rows(indices),
        }
    }

    pub fn concat(&self, other: &SampleSet) -> Result<SampleSet> {
        if self.dim() != other.dim() && !self.is_empty() && !other.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "cannot join {}- and {}-dimensional sample sets",
                self.dim(),
                other.dim()
            )));
        }
        let dim = if self.is_empty() { other.dim() } else { self.dim() };
        let n = self.len() + other.len();
        let features = DMatrix::from_fn(n, dim, |i, j| {
            if i < self.len() {
                self.features[(i, j)]
            } else {
                other.features[(i - self.len(), j)]
            }
        });
        let mut ids = self.ids.clone();
        ids.extend(other.ids.iter().cloned());
        let mut cams = self.cams.clone();
        cams.extend(other.cams.iter().cloned());
        Ok(SampleSet { ids, cams, features })
    }

    /// First `(id, cam)` pair that occurs more than once, if any.
    pub fn first_duplicate(&self) -> Option<(String, String)> {
        let mut seen = BTreeSet::new();
        self.ids
            .iter()
            .zip(&self.cams)
            .find(|(i, c)| !seen.insert((*i, *c)))
            .map(|(i, c)| (i.clone(), c.clone()))
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads a feature CSV. With `single_shot`, a repeated `(id, cam)` pair is
/// an error.
pub fn load_csv(path: impl AsRef<Path>, single_shot: bool) -> Result<SampleSet> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(BufReader::new(file));
    let mut records = rdr.records();

    let header = match records.next() {
        Some(r) => r.map_err(|e| parse_err(path, 1, e.to_string()))?,
        None => return Err(parse_err(path, 1, "empty file, expected header")),
    };
    if header.len() < 2 || header[0].trim() != "id" || header[1].trim() != "cam" {
        return Err(parse_err(path, 1, "header must start with id,cam"));
    }
    let m = header.len() - 2;
    for (k, name) in header.iter().skip(2).enumerate() {
        if name.trim() != format!("f{k}") {
            return Err(parse_err(path, 1, format!("expected column f{k}, found {name:?}")));
        }
    }

    let mut ids = Vec::new();
    let mut cams = Vec::new();
    let mut values = Vec::new();
    let mut seen = BTreeSet::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if rec.len() != m + 2 {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, found {}", m + 2, rec.len()),
            ));
        }
        let id = rec[0].trim().to_string();
        let cam = rec[1].trim().to_string();
        if id.is_empty() || cam.is_empty() {
            return Err(parse_err(path, line, "empty id or camera"));
        }
        for (k, field) in rec.iter().skip(2).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line, format!("feature f{k}: {field:?} is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, format!("feature f{k} is not finite")));
            }
            values.push(v);
        }
        if single_shot && !seen.insert((id.clone(), cam.clone())) {
            return Err(parse_err(
                path,
                line,
                format!("duplicate sample for id {id:?} in camera {cam:?} (single-shot)"),
            ));
        }
        ids.push(id);
        cams.push(cam);
    }
    let n = ids.len();
    SampleSet::new(ids, cams, DMatrix::from_row_slice(n, m, &values))
}

/// Writes a feature CSV. Values use the shortest representation that reads
/// back to the same `f64`.
pub fn save_csv(path: impl AsRef<Path>, set: &SampleSet) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let mut header = String::from("id,cam");
    for k in 0..set.dim() {
        header.push_str(&format!(",f{k}"));
    }
    writeln!(w, "{header}").map_err(io)?;
    for i in 0..set.len() {
        let mut line = format!("{},{}", csv_field(&set.ids[i]), csv_field(&set.cams[i]));
        for v in set.features.row(i).iter() {
            line.push_str(&format!(",{v:?}"));
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn save_binary(path: impl AsRef<Path>, set: &SampleSet) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(BINARY_MAGIC).map_err(io)?;
    w.write_all(&(set.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&(set.dim() as u64).to_le_bytes()).map_err(io)?;
    for (id, cam) in set.ids.iter().zip(&set.cams) {
        for s in [id, cam] {
            w.write_all(&(s.len() as u32).to_le_bytes()).map_err(io)?;
            w.write_all(s.as_bytes()).map_err(io)?;
        }
    }
    for i in 0..set.len() {
        for v in set.features.row(i).iter() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn load_binary(path: impl AsRef<Path>) -> Result<SampleSet> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io = |e| Error::io(path, e);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != BINARY_MAGIC {
        return Err(parse_err(path, 0, "bad magic header"));
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf).map_err(io)?;
    let n = u64::from_le_bytes(u64buf) as usize;
    r.read_exact(&mut u64buf).map_err(io)?;
    let m = u64::from_le_bytes(u64buf) as usize;
    let read_str = |r: &mut BufReader<fs::File>| -> Result<String> {
        let mut len = [0u8; 4];
        r.read_exact(&mut len).map_err(io)?;
        let mut bytes = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut bytes).map_err(io)?;
        String::from_utf8(bytes).map_err(|_| parse_err(path, 0, "label is not UTF-8"))
    };
    let mut ids = Vec::with_capacity(n);
    let mut cams = Vec::with_capacity(n);
    for _ in 0..n {
        ids.push(read_str(&mut r)?);
        cams.push(read_str(&mut r)?);
    }
    let mut values = Vec::with_capacity(n * m);
    for _ in 0..n * m {
        r.read_exact(&mut u64buf).map_err(io)?;
        values.push(f64::from_le_bytes(u64buf));
    }
    SampleSet::new(ids, cams, DMatrix::from_row_slice(n, m, &values))
}

/// Probe view, gallery view and the gallery identities that have no probe.
///
/// Every non-distractor gallery id appears in the probe view and no
/// distractor does. In single-shot data, row `i` of both views holds the
/// same identity for every paired row.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossViewDataset {
    pub view_a: SampleSet,
    pub view_b: SampleSet,
    pub distractor_ids: Vec<String>,
}

impl CrossViewDataset {
    pub fn validate(&self) -> Result<()> {
        let a: BTreeSet<&String> = self.view_a.ids.iter().collect();
        let d: BTreeSet<&String> = self.distractor_ids.iter().collect();
        if let Some(x) = d.iter().find(|x| a.contains(*x)) {
            return Err(Error::InvalidParameter(format!(
                "distractor {x} also appears in the probe view"
            )));
        }
        if let Some(x) = self.view_b.ids.iter().find(|x| !d.contains(x) && !a.contains(x)) {
            return Err(Error::InvalidParameter(format!(
                "gallery identity {x} has no probe and is not a distractor"
            )));
        }
        if self.view_a.dim() != self.view_b.dim() && !self.view_a.is_empty() && !self.view_b.is_empty() {
            return Err(Error::DimensionMismatch("views differ in feature width".into()));
        }
        Ok(())
    }

    /// Identities present in both views, sorted.
    pub fn paired_ids(&self) -> Vec<String> {
        let a: BTreeSet<&String> = self.view_a.ids.iter().collect();
        let b: BTreeSet<&String> = self.view_b.ids.iter().collect();
        a.intersection(&b).map(|s| s.to_string()).collect()
    }

    pub fn dim(&self) -> usize {
        self.view_a.dim()
    }
}

fn rows_by_id(set: &SampleSet, cam: &str) -> BTreeMap<String, Vec<usize>> {
    let mut map: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for i in 0..set.len() {
        if set.cams[i] == cam {
            map.entry(set.ids[i].clone()).or_default().push(i);
        }
    }
    // Multi-shot rows are ordered by feature values so that input order
    // never leaks into the dataset.
    for rows in map.values_mut() {
        rows.sort_by(|&p, &q| {
            set.features
                .row(p)
                .iter()
                .zip(set.features.row(q).iter())
                .map(|(a, b)| a.total_cmp(b))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
    }
    map
}

/// Splits a mixed sample set into a probe view (`cam_a`) and a gallery view
/// (`cam_b`). Shared identities are sorted and aligned; gallery-only
/// identities become distractors placed after them; probe-only identities
/// are dropped.
pub fn pair_views(set: &SampleSet, cam_a: &str, cam_b: &str, single_shot: bool) -> Result<CrossViewDataset> {
    let a = rows_by_id(set, cam_a);
    let b = rows_by_id(set, cam_b);
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData(format!(
            "cameras {cam_a:?} and {cam_b:?} must both have samples"
        )));
    }
    if single_shot {
        for (map, cam) in [(&a, cam_a), (&b, cam_b)] {
            if let Some((id, _)) = map.iter().find(|(_, rows)| rows.len() > 1) {
                return Err(Error::InvalidParameter(format!(
                    "identity {id:?} has several samples in camera {cam:?} (single-shot)"
                )));
            }
        }
    }
    let mut rows_a = Vec::new();
    let mut rows_b = Vec::new();
    let mut distractors = Vec::new();
    for (id, rb) in &b {
        if let Some(ra) = a.get(id) {
            rows_a.extend_from_slice(ra);
            rows_b.extend_from_slice(rb);
        }
    }
    for (id, rb) in &b {
        if !a.contains_key(id) {
            rows_b.extend_from_slice(rb);
            distractors.push(id.clone());
        }
    }
    if rows_a.is_empty() {
        return Err(Error::InsufficientData("no identity appears in both cameras".into()));
    }
    let ds = CrossViewDataset {
        view_a: set.select(&rows_a),
        view_b: set.select(&rows_b),
        distractor_ids: distractors,
    };
    ds.validate()?;
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormScheme {
    #[default]
    None,
    UnitL2,
    UnitL1Nonneg,
}

/// Row-wise normalization. Returns the normalized set and the indices of
/// all-zero rows, which are left unchanged.
pub fn normalize(set: &SampleSet, scheme: NormScheme) -> Result<(SampleSet, Vec<usize>)> {
    let mut out = set.clone();
    let mut zero_rows = Vec::new();
    if scheme == NormScheme::None {
        return Ok((out, zero_rows));
    }
    if scheme == NormScheme::UnitL1Nonneg {
        crate::kernels::check_nonnegative(&set.features)?;
    }
    for i in 0..set.len() {
        let mut row = out.features.row_mut(i);
        let norm = match scheme {
            NormScheme::UnitL2 => row.norm(),
            _ => row.iter().sum(),
        };
        if norm == 0.0 {
            zero_rows.push(i);
        } else {
            row /= norm;
        }
    }
    Ok((out, zero_rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transition {
    Identity,
    Linear,
    TanhNonlinear,
}

/// Scale of the pre-activation of the nonlinear transition: entries of the
/// linear map are `N(0, 1)·TANH_GAIN/√m`.
pub const TANH_GAIN: f64 = 1.5;
/// Standard deviation of the bias inside the nonlinear transition.
pub const TANH_BIAS_SCALE: f64 = 0.5;

pub const SYNTH_CAM_A: &str = "a";
pub const SYNTH_CAM_B: &str = "b";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_identities: usize,
    pub m_dim: usize,
    pub transition: Transition,
    pub noise_sigma: f64,
    #[serde(default)]
    pub n_distractors: usize,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_identities < 2 {
            return Err(Error::InvalidParameter("n_identities must be at least 2".into()));
        }
        if self.m_dim == 0 {
            return Err(Error::InvalidParameter("m_dim must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidParameter("noise_sigma must be nonnegative".into()));
        }
        Ok(())
    }

    /// The camera transition drawn from the head of the seeded stream.
    pub fn transition_map(&self) -> TransitionMap {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        draw_transition(self, &mut rng)
    }
}

/// Camera transition `T` of the synthetic generator.
#[derive(Debug, Clone, PartialEq)]
pub enum TransitionMap {
    Identity,
    /// Orthogonal factor of the QR decomposition of a Gaussian matrix.
    Linear(DMatrix<f64>),
    /// `tanh(A a + b)` elementwise.
    Tanh { a: DMatrix<f64>, b: DVector<f64> },
}

impl TransitionMap {
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            TransitionMap::Identity => v.clone(),
            TransitionMap::Linear(a) => a * v,
            TransitionMap::Tanh { a, b } => (a * v + b).map(f64::tanh),
        }
    }
}

fn gaussian_rows(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let values: Vec<f64> = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    DMatrix::from_row_slice(rows, cols, &values)
}

fn draw_transition(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> TransitionMap {
    let m = cfg.m_dim;
    match cfg.transition {
        Transition::Identity => TransitionMap::Identity,
        Transition::Linear => TransitionMap::Linear(gaussian_rows(m, m, rng).qr().q()),
        Transition::TanhNonlinear => {
            let a = gaussian_rows(m, m, rng) * (TANH_GAIN / (m as f64).sqrt());
            let b = gaussian_rows(1, m, rng).transpose() * TANH_BIAS_SCALE;
            TransitionMap::Tanh {
                a,
                b: b.column(0).into_owned(),
            }
        }
    }
}

pub fn synth_identity_id(i: usize) -> String {
    format!("s{i:05}")
}

pub fn synth_distractor_id(i: usize) -> String {
    format!("d{i:05}")
}

/// Seeded synthetic cross-view dataset.
///
/// Draw order from `ChaCha8Rng::seed_from_u64(seed)`, all standard normal
/// and row-major: transition parameters (linear: an `m×m` matrix; tanh: an
/// `m×m` matrix then an `m` bias), the `n×m` probe-view features, the `n×m`
/// gallery noise, then for distractors their `n_d×m` latent features and
/// `n_d×m` noise. Gallery features are `T(a) + noise_sigma·ε`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<CrossViewDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let t = draw_transition(cfg, &mut rng);
    let (n, m, nd) = (cfg.n_identities, cfg.m_dim, cfg.n_distractors);

    let va = gaussian_rows(n, m, &mut rng);
    let noise = gaussian_rows(n, m, &mut rng);
    let dist_latent = gaussian_rows(nd, m, &mut rng);
    let dist_noise = gaussian_rows(nd, m, &mut rng);

    let mut vb = DMatrix::zeros(n + nd, m);
    for (src, eps, offset) in [(&va, &noise, 0), (&dist_latent, &dist_noise, n)] {
        for i in 0..src.nrows() {
            let mapped = t.apply(&src.row(i).transpose());
            for c in 0..m {
                vb[(offset + i, c)] = mapped[c] + cfg.noise_sigma * eps[(i, c)];
            }
        }
    }

    let ids_a: Vec<String> = (0..n).map(synth_identity_id).collect();
    let distractor_ids: Vec<String> = (0..nd).map(synth_distractor_id).collect();
    let mut ids_b = ids_a.clone();
    ids_b.extend(distractor_ids.iter().cloned());
    let view_a = SampleSet::new(ids_a, vec![SYNTH_CAM_A.to_string(); n], va)?;
    let view_b = SampleSet::new(ids_b, vec![SYNTH_CAM_B.to_string(); n + nd], vb)?;
    Ok(CrossViewDataset {
        view_a,
        view_b,
        distractor_ids,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewSource {
    pub path: PathBuf,
    pub cam: String,
}

/// Dataset manifest JSON. Relative paths are resolved against the
/// manifest's directory; both views may point at the same file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub probe: ViewSource,
    pub gallery: ViewSource,
    #[serde(default)]
    pub normalization: NormScheme,
    #[serde(default = "default_true")]
    pub single_shot: bool,
    #[serde(default)]
    pub distractor_ids: Vec<String>,
}

fn default_true() -> bool {
    true
}

fn load_features(path: &Path, single_shot: bool) -> Result<SampleSet> {
    let mut head = [0u8; 8];
    let is_binary = fs::File::open(path)
        .and_then(|mut f| f.read_exact(&mut head))
        .map(|_| &head == BINARY_MAGIC)
        .unwrap_or(false);
    if is_binary {
        let set = load_binary(path)?;
        if single_shot {
            if let Some((id, cam)) = set.first_duplicate() {
                return Err(parse_err(path, 0, format!("duplicate sample for id {id:?} in camera {cam:?}")));
            }
        }
        Ok(set)
    } else {
        load_csv(path, single_shot)
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads, normalizes and pairs the views named by a manifest file.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<CrossViewDataset> {
    let path = path.as_ref();
    let manifest = read_manifest(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    let probe_path = resolve(&manifest.probe.path);
    let gallery_path = resolve(&manifest.gallery.path);
    let mut set = load_features(&probe_path, manifest.single_shot)?;
    if gallery_path != probe_path {
        set = set.concat(&load_features(&gallery_path, manifest.single_shot)?)?;
    }
    let (set, _) = normalize(&set, manifest.normalization)?;
    let ds = pair_views(&set, &manifest.probe.cam, &manifest.gallery.cam, manifest.single_shot)?;
    if !manifest.distractor_ids.is_empty() {
        let listed: BTreeSet<&String> = manifest.distractor_ids.iter().collect();
        let found: BTreeSet<&String> = ds.distractor_ids.iter().collect();
        if listed != found {
            return Err(Error::InvalidParameter(
                "manifest distractor list disagrees with the gallery-only identities".into(),
            ));
        }
    }
    Ok(ds)
}

/// Writes `probe.csv`, `gallery.csv` and `manifest.json` into `dir`.
pub fn write_dataset(dir: impl AsRef<Path>, ds: &CrossViewDataset) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cam_of = |s: &SampleSet, default: &str| s.cams.first().cloned().unwrap_or_else(|| default.to_string());
    let manifest = DatasetManifest {
        probe: ViewSource {
            path: PathBuf::from("probe.csv"),
            cam: cam_of(&ds.view_a, SYNTH_CAM_A),
        },
        gallery: ViewSource {
            path: PathBuf::from("gallery.csv"),
            cam: cam_of(&ds.view_b, SYNTH_CAM_B),
        },
        normalization: NormScheme::None,
        single_shot: true,
        distractor_ids: ds.distractor_ids.clone(),
    };
    save_csv(dir.join("probe.csv"), &ds.view_a)?;
    save_csv(dir.join("gallery.csv"), &ds.view_b)?;
    let mpath = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&mpath, text + "\n").map_err(|e| Error::io(&mpath, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn set(rows: &[(&str, &str, &[f64])]) -> SampleSet {
        let m = rows[0].2.len();
        let vals: Vec<f64> = rows.iter().flat_map(|r| r.2.iter().copied()).collect();
        SampleSet::new(
            rows.iter().map(|r| r.0.to_string()).collect(),
            rows.iter().map(|r| r.1.to_string()).collect(),
            DMatrix::from_row_slice(rows.len(), m, &vals),
        )
        .unwrap()
    }

    #[test]
    fn load_two_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        fs::write(&p, "id,cam,f0,f1,f2\n7,a,1,2,3\n7,b,0.5,-1e-3,4\n").unwrap();
        let s = load_csv(&p, true).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.dim(), 3);
        assert_eq!(s.features[(1, 1)], -1e-3);
        assert_eq!(s.cams, vec!["a", "b"]);
    }

    #[test]
    fn load_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        fs::write(&p, "id,cam,f0,f1\n1,a,1,2\n2,a,,\n").unwrap();
        let err = load_csv(&p, true).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");

        fs::write(&p, "id,cam,f0,f1\n1,a,1,2\n2,a,3\n").unwrap();
        assert!(matches!(load_csv(&p, true).unwrap_err(), Error::Parse { line: 3, .. }));

        fs::write(&p, "id,cam,f0,f1\n1,a,1,x\n").unwrap();
        assert!(matches!(load_csv(&p, true).unwrap_err(), Error::Parse { line: 2, .. }));

        fs::write(&p, "id,cam,f0\n1,a,1\n1,a,2\n").unwrap();
        assert!(matches!(load_csv(&p, true).unwrap_err(), Error::Parse { line: 3, .. }));
        assert_eq!(load_csv(&p, false).unwrap().len(), 2);

        fs::write(&p, "name,cam,f0\n").unwrap();
        assert!(matches!(load_csv(&p, true).unwrap_err(), Error::Parse { line: 1, .. }));
        assert!(matches!(load_csv(dir.path().join("missing.csv"), true), Err(Error::Io { .. })));
    }

    #[test]
    fn binary_round_trip() {
        let s = set(&[("x", "a", &[1.5, -2.0]), ("y,z", "b", &[f64::MIN_POSITIVE, 3.0e300])]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        save_binary(&p, &s).unwrap();
        assert_eq!(load_binary(&p).unwrap(), s);
        let c = dir.path().join("f.csv");
        save_csv(&c, &s).unwrap();
        assert_eq!(load_csv(&c, true).unwrap(), s);
    }

    #[test]
    fn pair_views_examples() {
        let s = set(&[
            ("3", "a", &[3.0]),
            ("1", "b", &[10.0]),
            ("2", "a", &[2.0]),
            ("1", "a", &[1.0]),
            ("3", "b", &[30.0]),
            ("2", "b", &[20.0]),
        ]);
        let ds = pair_views(&s, "a", "b", true).unwrap();
        assert_eq!(ds.view_a.ids, vec!["1", "2", "3"]);
        assert_eq!(ds.view_b.ids, vec!["1", "2", "3"]);
        assert_eq!(ds.view_b.features[(2, 0)], 30.0);
        assert!(ds.distractor_ids.is_empty());

        let extra = s
            .concat(&set(&[("9", "b", &[90.0]), ("8", "b", &[80.0]), ("5", "a", &[5.0])]))
            .unwrap();
        let ds = pair_views(&extra, "a", "b", true).unwrap();
        assert_eq!(ds.distractor_ids, vec!["8", "9"]);
        assert_eq!(ds.view_b.len(), 5);
        assert_eq!(ds.view_a.ids, vec!["1", "2", "3"]);
    }

    #[test]
    fn pair_views_rejects_multi_shot_in_single_shot_mode() {
        let s = set(&[("1", "a", &[1.0]), ("1", "a", &[2.0]), ("1", "b", &[3.0])]);
        assert!(matches!(pair_views(&s, "a", "b", true), Err(Error::InvalidParameter(_))));
        let ds = pair_views(&s, "a", "b", false).unwrap();
        assert_eq!(ds.view_a.len(), 2);
        assert!(matches!(pair_views(&s, "a", "c", false), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn normalize_examples() {
        let s = set(&[("1", "a", &[3.0, 4.0]), ("2", "a", &[0.0, 0.0])]);
        let (n, zeros) = normalize(&s, NormScheme::UnitL2).unwrap();
        assert_relative_eq!(n.features[(0, 0)], 0.6);
        assert_relative_eq!(n.features[(0, 1)], 0.8);
        assert_eq!(zeros, vec![1]);
        let h = set(&[("1", "a", &[2.0, 2.0])]);
        let (n, _) = normalize(&h, NormScheme::UnitL1Nonneg).unwrap();
        assert_eq!(n.features.row(0).iter().copied().collect::<Vec<_>>(), vec![0.5, 0.5]);
        let neg = set(&[("1", "a", &[2.0, -2.0])]);
        assert!(matches!(normalize(&neg, NormScheme::UnitL1Nonneg), Err(Error::NegativeInput { .. })));
    }

    #[test]
    fn synth_identity_noise_free() {
        let cfg = SynthConfig {
            n_identities: 6,
            m_dim: 3,
            transition: Transition::Identity,
            noise_sigma: 0.0,
            n_distractors: 2,
            seed: 5,
        };
        let ds = synth_generate(&cfg).unwrap();
        assert_eq!(ds.view_a.features, ds.view_b.features.rows(0, 6));
        assert_eq!(ds.distractor_ids.len(), 2);
        assert_eq!(ds, synth_generate(&cfg).unwrap());
        ds.validate().unwrap();
    }

    #[test]
    fn synth_linear_transition_is_orthogonal() {
        let cfg = SynthConfig {
            n_identities: 4,
            m_dim: 5,
            transition: Transition::Linear,
            noise_sigma: 0.0,
            n_distractors: 0,
            seed: 6,
        };
        let TransitionMap::Linear(a) = cfg.transition_map() else {
            panic!("expected a linear map")
        };
        assert!((a.tr_mul(&a) - DMatrix::identity(5, 5)).amax() < 1e-12);
        let ds = synth_generate(&cfg).unwrap();
        let mapped = &a * ds.view_a.features.row(2).transpose();
        assert!((mapped - ds.view_b.features.row(2).transpose()).amax() < 1e-12);
    }
}
