//! Batch orchestration: repair, generate, extract, verify, metrics and
//! benchmark runs over mesh files, with a manifest per run.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::axis::{
    heuristic_axis, parse_axis, query_vlm, render_preview, vlm, AxisReport, AxisSource, Role, VlmSession,
};
use crate::clearance::{pair_grid, specify_clearance, verify_pair, AssemblyPair, ClearanceSpec, Provenance, RepairReport};
use crate::complement::{
    complement_grid, export_completion_request, generate_complement, import_completion_result, make_pair,
    plug_axis, CompletionRequest, HousingParams, HousingShape,
};
use crate::contact::{extract_contacts, ContactExtraction, ContactSurfaceSet};
use crate::error::{Error, Result};
use crate::mesh::{load_mesh, normalize_to_unit_box, save_mesh, MeshFormat, RigidTransform, TriangleMesh};
use crate::metrics::{dataset_diversity, greedy_select, AssetDescriptor, DescriptorOptions, DiversityReport, DEFAULT_K};
use crate::voxel::{DEFAULT_RESOLUTION, MIN_RESOLUTION};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_FILE: &str = "report.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const EXTRACT_FILE: &str = "extract.json";
pub const TRANSCRIPT_FILE: &str = "vlm_transcript.json";
/// Resolution of the six-direction heuristic axis search.
pub const DEFAULT_AXIS_RESOLUTION: usize = 64;
pub const DEFAULT_IMAGE_SIZE: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Repair,
    Generate,
    Extract,
    Metrics,
    Verify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    M,
    #[default]
    Mm,
}

impl Units {
    /// Meters per file unit.
    pub fn scale(self) -> f64 {
        match self {
            Units::M => 1.0,
            Units::Mm => 1e-3,
        }
    }
}

impl std::str::FromStr for Units {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "m" => Ok(Units::M),
            "mm" => Ok(Units::Mm),
            other => Err(Error::InvalidArgument(format!("unknown units '{other}'"))),
        }
    }
}

/// Housing settings; lengths in meters. Unset lengths are derived from the
/// contact footprint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HousingConfig {
    pub shape: HousingShape,
    pub wall_thickness: Option<f64>,
    pub height: Option<f64>,
}

impl Default for HousingConfig {
    fn default() -> Self {
        Self {
            shape: HousingShape::Box,
            wall_thickness: None,
            height: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VlmConfig {
    pub endpoint: Option<String>,
    pub model: String,
    pub api_key_env: String,
    /// Recorded transcript replayed instead of calling the endpoint.
    pub fixture: Option<PathBuf>,
    pub image_size: usize,
}

impl Default for VlmConfig {
    fn default() -> Self {
        Self {
            endpoint: None,
            model: String::new(),
            api_key_env: vlm::DEFAULT_API_KEY_ENV.to_string(),
            fixture: None,
            image_size: DEFAULT_IMAGE_SIZE,
        }
    }
}

/// Run settings. Lengths are meters; `units` only says how mesh files are
/// scaled on load and save.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub clearance: f64,
    pub resolution: usize,
    pub axis_source: AxisSource,
    /// User axis label (`+z` ...). For repair and verify it is the plug's
    /// withdrawal direction; for generate and extract it follows
    /// `AxisReport` and needs `role`.
    pub axis: Option<String>,
    pub role: Option<Role>,
    pub seeds: Vec<u64>,
    pub units: Units,
    pub parallelism: usize,
    pub erode_target: Role,
    pub housing: HousingConfig,
    pub axis_resolution: usize,
    pub vlm: VlmConfig,
    /// External completion: requests go to `<dir>/<uid>/`, and candidates
    /// found there are imported instead of generating procedurally.
    pub handoff_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::default(),
            clearance: 5e-4,
            resolution: DEFAULT_RESOLUTION,
            axis_source: AxisSource::Heuristic,
            axis: None,
            role: None,
            seeds: vec![0],
            units: Units::default(),
            parallelism: std::thread::available_parallelism().map_or(1, |n| n.get()),
            erode_target: Role::Plug,
            housing: HousingConfig::default(),
            axis_resolution: DEFAULT_AXIS_RESOLUTION,
            vlm: VlmConfig::default(),
            handoff_dir: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clearance >= 0.0 && self.clearance.is_finite()) {
            return Err(Error::InvalidArgument(format!("clearance must be >= 0, got {}", self.clearance)));
        }
        for (name, r) in [("resolution", self.resolution), ("axis_resolution", self.axis_resolution)] {
            if r < MIN_RESOLUTION {
                return Err(Error::InvalidArgument(format!("{name} must be >= {MIN_RESOLUTION}, got {r}")));
            }
        }
        if self.parallelism == 0 {
            return Err(Error::InvalidArgument("parallelism must be >= 1".into()));
        }
        for v in [self.housing.wall_thickness, self.housing.height].into_iter().flatten() {
            if !(v > 0.0) {
                return Err(Error::InvalidArgument("housing wall and height must be positive".into()));
            }
        }
        if let Some(a) = &self.axis {
            parse_axis(a)?;
        }
        Ok(())
    }

    fn user_axis(&self) -> Result<Vector3<f64>> {
        let label = self
            .axis
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("axis source 'user' needs an axis".into()))?;
        parse_axis(label)
    }

    /// Config bytes that identify a run; worker count does not change results.
    fn identity_json(&self) -> Vec<u8> {
        let mut c = self.clone();
        c.parallelism = 0;
        serde_json::to_vec(&c).expect("config serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Rejected,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub uid: String,
    pub inputs: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Plug withdrawal direction of the emitted pair, or the asset axis for extract.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub axis: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    /// Seconds per stage.
    pub timings: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<RepairReport>,
    /// Relative to the output directory.
    pub outputs: Vec<PathBuf>,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl ManifestEntry {
    fn new(uid: String, inputs: Vec<PathBuf>) -> Self {
        Self {
            uid,
            inputs,
            seed: None,
            axis: None,
            role: None,
            provenance: None,
            timings: BTreeMap::new(),
            report: None,
            outputs: Vec::new(),
            status: Status::Ok,
            reason: None,
        }
    }

    fn fail(&mut self, err: &Error) {
        self.status = match err {
            Error::DegenerateRepair { .. } => Status::Rejected,
            _ => Status::Error,
        };
        self.reason = Some(err.to_string());
    }

    fn reject(&mut self, reason: impl Into<String>) {
        self.status = Status::Rejected;
        self.reason = Some(reason.into());
    }

    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        *self.timings.entry(stage.to_string()).or_default() += t.elapsed().as_secs_f64();
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub mode: Mode,
    pub config: PipelineConfig,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn all_ok(&self) -> bool {
        self.entries.iter().all(|e| e.status == Status::Ok)
    }

    pub fn count(&self, status: Status) -> usize {
        self.entries.iter().filter(|e| e.status == status).count()
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        write_json(self, &out_dir.join(MANIFEST_FILE))
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<PathBuf> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

fn hash_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(&h.finalize()[..6])
}

fn scale_transform(s: f64) -> RigidTransform {
    RigidTransform::new(Matrix3::identity(), Vector3::zeros(), s).expect("positive scale")
}

/// Loads a mesh file and rescales it to meters.
pub fn load_scaled(path: &Path, units: Units) -> Result<TriangleMesh> {
    let mesh = load_mesh(path, MeshFormat::detect(path)?)?;
    if mesh.is_empty() {
        return Err(Error::EmptyInput(format!("{} has no triangles", path.display())));
    }
    Ok(match units {
        Units::M => mesh,
        u => mesh.transformed(&scale_transform(u.scale())),
    })
}

/// Writes a mesh given in meters as OBJ in the configured units.
fn save_scaled(mesh: &TriangleMesh, path: &Path, units: Units) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let out = match units {
        Units::M => mesh.clone(),
        u => mesh.transformed(&scale_transform(1.0 / u.scale())),
    };
    save_mesh(&out, path, MeshFormat::Obj)
}

/// Input files of one batch entry with its content-derived uid.
#[derive(Debug, Clone)]
struct Job {
    uid: String,
    inputs: Vec<PathBuf>,
    seed: Option<u64>,
}

/// Hashes every input file with the config; unreadable files hash their path
/// so the entry still gets an identity and reports the error later.
fn make_jobs(inputs: &[Vec<PathBuf>], seeds: &[Option<u64>], config: &PipelineConfig) -> Vec<Job> {
    let cfg = config.identity_json();
    let cfg = cfg.as_slice();
    let mut jobs: Vec<Job> = inputs
        .iter()
        .flat_map(|files| {
            let contents: Vec<Vec<u8>> = files
                .iter()
                .map(|p| fs::read(p).unwrap_or_else(|_| p.to_string_lossy().as_bytes().to_vec()))
                .collect();
            seeds.iter().map(move |seed| {
                let seed_bytes = seed.map(u64::to_le_bytes).unwrap_or_default();
                let mut parts: Vec<&[u8]> = contents.iter().map(Vec::as_slice).collect();
                parts.push(cfg);
                parts.push(&seed_bytes);
                Job {
                    uid: hash_hex(&parts),
                    inputs: files.clone(),
                    seed: *seed,
                }
            })
        })
        .collect();
    jobs.sort_by(|a, b| (&a.uid, &a.inputs, a.seed).cmp(&(&b.uid, &b.inputs, b.seed)));
    // the same content twice in one batch still needs separate output folders
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for j in &mut jobs {
        let n = seen.entry(j.uid.clone()).or_default();
        *n += 1;
        if *n > 1 {
            j.uid = format!("{}-{}", j.uid, *n);
        }
    }
    jobs
}

/// Runs `f` on every job in a pool of `config.parallelism` workers and
/// returns the entries sorted by uid.
fn run_jobs<F>(jobs: Vec<Job>, config: &PipelineConfig, f: F) -> Result<Vec<ManifestEntry>>
where
    F: Fn(&Job) -> ManifestEntry + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    let mut entries: Vec<ManifestEntry> = pool.install(|| jobs.par_iter().map(&f).collect());
    entries.sort_by(|a, b| a.uid.cmp(&b.uid));
    Ok(entries)
}

fn vlm_session(cfg: &VlmConfig) -> Result<VlmSession> {
    match (&cfg.fixture, &cfg.endpoint) {
        (Some(f), _) => VlmSession::from_fixture(f),
        (None, Some(url)) => Ok(VlmSession::http(url, &cfg.model, &cfg.api_key_env)),
        (None, None) => Err(Error::InvalidArgument("axis source 'vlm' needs an endpoint or a fixture".into())),
    }
}

/// Stage 1 axis: role and mating direction of one asset from the configured
/// source. VLM runs also return their transcript.
pub fn detect_axis(mesh: &TriangleMesh, config: &PipelineConfig) -> Result<(AxisReport, Option<Vec<vlm::TranscriptEntry>>)> {
    match config.axis_source {
        AxisSource::User => {
            let role = config
                .role
                .ok_or_else(|| Error::InvalidArgument("axis source 'user' needs a role".into()))?;
            Ok((AxisReport::user(role, config.user_axis()?)?, None))
        }
        AxisSource::Heuristic => Ok((heuristic_axis(mesh, config.axis_resolution)?, None)),
        AxisSource::Vlm => {
            let mut session = vlm_session(&config.vlm)?;
            let (unit, _) = normalize_to_unit_box(mesh)?;
            let image = render_preview(&unit, config.vlm.image_size)?;
            let report = query_vlm(&mut session, &image)?;
            Ok((report, Some(session.transcript().to_vec())))
        }
    }
}

/// Plug withdrawal direction for a given pair: the user axis as is, or the
/// detected axis of the receptacle.
fn pair_axis(receptacle: &TriangleMesh, config: &PipelineConfig) -> Result<Vector3<f64>> {
    if config.axis_source == AxisSource::User {
        return config.user_axis();
    }
    let (report, _) = detect_axis(receptacle, config)?;
    Ok(plug_axis(&report.axis, report.role))
}

/// Writes both parts and the report under `<out>/<uid>/`.
fn write_pair(e: &mut ManifestEntry, pair: &AssemblyPair, report: &RepairReport, out_dir: &Path, units: Units) -> Result<()> {
    let dir = PathBuf::from(&e.uid);
    let plug = dir.join("plug.obj");
    let receptacle = dir.join("receptacle.obj");
    save_scaled(&pair.plug_assembled(), &out_dir.join(&plug), units)?;
    save_scaled(&pair.receptacle, &out_dir.join(&receptacle), units)?;
    write_json(report, &out_dir.join(dir.join(REPORT_FILE)))?;
    e.outputs = vec![plug, receptacle, dir.join(REPORT_FILE)];
    Ok(())
}

/// Report of the repair with the verification's clearance, profile and verdict.
fn merged_report(repair: &RepairReport, verify: RepairReport) -> RepairReport {
    RepairReport {
        cells_removed: repair.cells_removed,
        volume_removed: repair.volume_removed,
        separation_travel: repair.separation_travel,
        ..verify
    }
}

fn record_verdict(e: &mut ManifestEntry, report: &RepairReport, c: f64) {
    if !report.passed {
        e.reject(format!(
            "clearance verification failed: measured {:.3e} m for c = {:.3e} m",
            report.min_clearance_measured, c
        ));
    }
}

fn load_pair(e: &mut ManifestEntry, job: &Job, config: &PipelineConfig) -> Result<AssemblyPair> {
    let [p, r] = job.inputs.as_slice() else {
        return Err(Error::InvalidArgument(format!("a pair needs two files, got {}", job.inputs.len())));
    };
    let (plug, receptacle) = e.time("load", || Ok::<_, Error>((load_scaled(p, config.units)?, load_scaled(r, config.units)?)))?;
    let axis = e.time("axis", || pair_axis(&receptacle, config))?;
    e.axis = Some(axis.into());
    AssemblyPair::new(plug, receptacle, RigidTransform::identity(), axis, Provenance::External)
}

fn repair_entry(e: &mut ManifestEntry, job: &Job, out_dir: &Path, config: &PipelineConfig) -> Result<()> {
    let pair = load_pair(e, job, config)?;
    let grid = pair_grid(&pair, config.resolution, config.clearance)?;
    let spec = ClearanceSpec::new(config.clearance, config.resolution)?
        .with_grid(grid)
        .with_target(config.erode_target);
    let (repaired, report) = e.time("clearance", || specify_clearance(&pair, &spec))?;
    let verified = e.time("verify", || verify_pair(&repaired, &spec))?;
    let report = merged_report(&report, verified);
    e.provenance = Some(repaired.provenance);
    let t = Instant::now();
    write_pair(e, &repaired, &report, out_dir, config.units)?;
    e.timings.insert("write".into(), t.elapsed().as_secs_f64());
    record_verdict(e, &report, config.clearance);
    e.report = Some(report);
    Ok(())
}

fn verify_entry(e: &mut ManifestEntry, job: &Job, out_dir: &Path, config: &PipelineConfig) -> Result<()> {
    let pair = load_pair(e, job, config)?;
    let grid = pair_grid(&pair, config.resolution, config.clearance)?;
    let spec = ClearanceSpec::new(config.clearance, config.resolution)?.with_grid(grid);
    let report = e.time("verify", || verify_pair(&pair, &spec))?;
    let path = PathBuf::from(&e.uid).join(REPORT_FILE);
    write_json(&report, &out_dir.join(&path))?;
    e.outputs = vec![path];
    record_verdict(e, &report, config.clearance);
    e.report = Some(report);
    Ok(())
}

/// Failed entries keep no files, so the manifest and the disk agree.
fn finish(mut e: ManifestEntry, result: Result<()>, out_dir: &Path) -> ManifestEntry {
    if let Err(err) = result {
        e.fail(&err);
        let dir = out_dir.join(&e.uid);
        if dir.exists() {
            if let Err(io) = fs::remove_dir_all(&dir) {
                log::warn!("could not remove {}: {io}", dir.display());
            }
        }
        e.outputs.clear();
    }
    e
}

fn pair_manifest(
    pairs: &[(PathBuf, PathBuf)],
    out_dir: &Path,
    config: &PipelineConfig,
    mode: Mode,
    run: fn(&mut ManifestEntry, &Job, &Path, &PipelineConfig) -> Result<()>,
) -> Result<Manifest> {
    config.validate()?;
    let config = PipelineConfig { mode, ..config.clone() };
    let inputs: Vec<Vec<PathBuf>> = pairs.iter().map(|(p, r)| vec![p.clone(), r.clone()]).collect();
    let jobs = make_jobs(&inputs, &[None], &config);
    let entries = run_jobs(jobs, &config, |job| {
        let mut e = ManifestEntry::new(job.uid.clone(), job.inputs.clone());
        let result = run(&mut e, job, out_dir, &config);
        finish(e, result, out_dir)
    })?;
    let manifest = Manifest { mode, config, entries };
    manifest.write(out_dir)?;
    Ok(manifest)
}

/// Repairs each (plug, receptacle) file pair to the configured clearance and
/// verifies the result. Outputs go to `<out_dir>/<uid>/`.
pub fn run_repair(pairs: &[(PathBuf, PathBuf)], out_dir: &Path, config: &PipelineConfig) -> Result<Manifest> {
    pair_manifest(pairs, out_dir, config, Mode::Repair, repair_entry)
}

/// Verifies each (plug, receptacle) file pair without changing it.
pub fn run_verify(pairs: &[(PathBuf, PathBuf)], out_dir: &Path, config: &PipelineConfig) -> Result<Manifest> {
    pair_manifest(pairs, out_dir, config, Mode::Verify, verify_entry)
}

/// Stage 1 result for one asset.
struct Contacts {
    mesh: TriangleMesh,
    report: AxisReport,
    transcript: Option<Vec<vlm::TranscriptEntry>>,
    extraction: ContactExtraction,
}

/// Stage 1: axis then contacts. `Ok(Err(reason))` means the asset is rejected.
fn stage_one(timings: &mut ManifestEntry, asset: &Path, config: &PipelineConfig) -> Result<std::result::Result<Contacts, String>> {
    let mesh = timings.time("load", || load_scaled(asset, config.units))?;
    let (report, transcript) = timings.time("axis", || detect_axis(&mesh, config))?;
    let extraction = timings.time("contacts", || extract_contacts(&mesh, &report.axis, report.role, config.resolution))?;
    if extraction.set.is_empty() {
        return Ok(Err(format!("empty free region: no contact surface as a {} along the axis", report.role)));
    }
    Ok(Ok(Contacts {
        mesh,
        report,
        transcript,
        extraction,
    }))
}

/// Housing for a contact set in the aligned frame; unset lengths default to a
/// wall of a quarter of the footprint's larger side, and a height of the
/// footprint's depth plus one wall.
pub fn housing_params(set: &ContactSurfaceSet, cfg: &HousingConfig) -> HousingParams {
    let e = set.contact_mesh().bounds().extent();
    let wall = cfg.wall_thickness.unwrap_or(0.25 * e[0].max(e[1]));
    HousingParams {
        shape: cfg.shape,
        wall_thickness: wall,
        height: cfg.height.unwrap_or(e[2] + wall),
    }
}

enum Completion {
    Pair(AssemblyPair),
    Rejected(String),
    Pending(PathBuf),
}

fn external_completion(dir: &Path, s1: &Contacts, req: &CompletionRequest) -> Result<Completion> {
    let has_candidates = fs::read_dir(dir).is_ok_and(|rd| {
        rd.flatten()
            .any(|f| f.file_name().to_string_lossy().starts_with("candidate_"))
    });
    if !has_candidates {
        export_completion_request(req, dir)?;
        return Ok(Completion::Pending(dir.to_path_buf()));
    }
    let mut outcome = import_completion_result(dir, &s1.mesh, &s1.report.axis)?;
    if outcome.accepted.is_empty() {
        let why: Vec<String> = outcome
            .rejected
            .iter()
            .map(|(p, r)| format!("{}: {r:?}", p.display()))
            .collect();
        return Ok(Completion::Rejected(format!("no acceptable candidate ({})", why.join("; "))));
    }
    Ok(Completion::Pair(outcome.accepted.remove(0)))
}

fn generate_entry(e: &mut ManifestEntry, s1: &Contacts, seed: u64, out_dir: &Path, config: &PipelineConfig) -> Result<()> {
    let (role, axis) = (s1.report.role, s1.report.axis);
    e.role = Some(role);
    let ex = &s1.extraction;
    let params = housing_params(&ex.set, &config.housing).jittered(seed);
    let req = CompletionRequest::from_contacts(&ex.set, &ex.alignment, role, seed, params)?;
    let uid = e.uid.clone();
    let completion = e.time("complement", || match &config.handoff_dir {
        Some(root) => external_completion(&root.join(&uid), s1, &req),
        None => {
            let grid = complement_grid(&s1.mesh, &axis, &req, config.resolution)?;
            let other = generate_complement(&s1.mesh, &axis, &req, &grid)?;
            Ok(Completion::Pair(make_pair(&s1.mesh, role, other, &axis, Provenance::Generated)?))
        }
    })?;
    let pair = match completion {
        Completion::Pair(p) => p,
        Completion::Rejected(why) => {
            e.reject(why);
            return Ok(());
        }
        Completion::Pending(dir) => {
            return Err(Error::Generation(format!(
                "external completion pending: request written to {}",
                dir.display()
            )))
        }
    };
    e.axis = Some(pair.axis.into());

    let grid = pair_grid(&pair, config.resolution, config.clearance)?;
    let spec = ClearanceSpec::new(config.clearance, config.resolution)?
        .with_grid(grid)
        .with_target(role.other());
    let (mut repaired, report) = e.time("clearance", || specify_clearance(&pair, &spec))?;
    repaired.provenance = pair.provenance;
    let verified = e.time("verify", || verify_pair(&repaired, &spec))?;
    let report = merged_report(&report, verified);
    e.provenance = Some(repaired.provenance);

    let t = Instant::now();
    write_pair(e, &repaired, &report, out_dir, config.units)?;
    if let Some(tr) = &s1.transcript {
        let path = PathBuf::from(&e.uid).join(TRANSCRIPT_FILE);
        write_json(tr, &out_dir.join(&path))?;
        e.outputs.push(path);
    }
    e.timings.insert("write".into(), t.elapsed().as_secs_f64());
    record_verdict(e, &report, config.clearance);
    e.report = Some(report);
    Ok(())
}

fn single_asset_jobs(assets: &[PathBuf], seeds: &[Option<u64>], config: &PipelineConfig) -> Vec<Job> {
    let inputs: Vec<Vec<PathBuf>> = assets.iter().map(|a| vec![a.clone()]).collect();
    make_jobs(&inputs, seeds, config)
}

/// Generates one clearance-specified pair per configured seed around a single
/// asset. Stage 1 runs once and is shared by all seeds.
pub fn run_generate(asset: &Path, out_dir: &Path, config: &PipelineConfig) -> Result<Manifest> {
    config.validate()?;
    if config.seeds.is_empty() {
        return Err(Error::InvalidArgument("generate needs at least one seed".into()));
    }
    let config = PipelineConfig { mode: Mode::Generate, ..config.clone() };
    let seeds: Vec<Option<u64>> = config.seeds.iter().map(|&s| Some(s)).collect();
    let jobs = single_asset_jobs(&[asset.to_path_buf()], &seeds, &config);

    let mut shared = ManifestEntry::new(String::new(), Vec::new());
    let s1 = stage_one(&mut shared, asset, &config);
    let entries = run_jobs(jobs, &config, |job| {
        let mut e = ManifestEntry::new(job.uid.clone(), job.inputs.clone());
        e.seed = job.seed;
        e.timings = shared.timings.clone();
        let result = match &s1 {
            Err(err) => {
                e.status = Status::Error;
                e.reason = Some(format!("stage 1 (axis and contacts): {err}"));
                Ok(())
            }
            Ok(Err(why)) => {
                e.reject(why.clone());
                Ok(())
            }
            Ok(Ok(c)) => generate_entry(&mut e, c, job.seed.unwrap_or_default(), out_dir, &config),
        };
        finish(e, result, out_dir)
    })?;
    let manifest = Manifest {
        mode: Mode::Generate,
        config,
        entries,
    };
    manifest.write(out_dir)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractReport {
    /// Direction the mating part travels onto the asset.
    pub axis: [f64; 3],
    pub role: Role,
    pub patch_count: usize,
    /// Square meters.
    pub contact_area: f64,
}

fn extract_entry(e: &mut ManifestEntry, job: &Job, out_dir: &Path, config: &PipelineConfig) -> Result<()> {
    let s1 = match stage_one(e, &job.inputs[0], config)? {
        Ok(c) => c,
        Err(why) => {
            e.reject(why);
            return Ok(());
        }
    };
    let set = &s1.extraction.set;
    e.role = Some(s1.report.role);
    e.axis = Some(s1.report.axis.into());
    let report = ExtractReport {
        axis: s1.report.axis.into(),
        role: s1.report.role,
        patch_count: set.patch_count(),
        contact_area: set.contact_area(),
    };
    let dir = PathBuf::from(&e.uid);
    let mesh = set.contact_mesh().transformed(&s1.extraction.alignment.inverse());
    save_scaled(&mesh, &out_dir.join(dir.join("contact.obj")), config.units)?;
    write_json(&report, &out_dir.join(dir.join(EXTRACT_FILE)))?;
    e.outputs = vec![dir.join("contact.obj"), dir.join(EXTRACT_FILE)];
    if let Some(tr) = &s1.transcript {
        write_json(tr, &out_dir.join(dir.join(TRANSCRIPT_FILE)))?;
        e.outputs.push(dir.join(TRANSCRIPT_FILE));
    }
    Ok(())
}

/// Detects the axis of each asset and writes its contact surface (asset
/// frame) and an [`ExtractReport`].
pub fn run_extract(assets: &[PathBuf], out_dir: &Path, config: &PipelineConfig) -> Result<Manifest> {
    config.validate()?;
    let config = PipelineConfig { mode: Mode::Extract, ..config.clone() };
    let jobs = single_asset_jobs(assets, &[None], &config);
    let entries = run_jobs(jobs, &config, |job| {
        let mut e = ManifestEntry::new(job.uid.clone(), job.inputs.clone());
        let result = extract_entry(&mut e, job, out_dir, &config);
        finish(e, result, out_dir)
    })?;
    let manifest = Manifest {
        mode: Mode::Extract,
        config,
        entries,
    };
    manifest.write(out_dir)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetMetrics {
    pub uid: String,
    pub path: PathBuf,
    pub complexity: f64,
    pub grasp_difficulty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedAsset {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub assets: Vec<AssetMetrics>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub failed: Vec<FailedAsset>,
    /// Absent with fewer than two assets.
    pub diversity: Option<DiversityReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub selected: Option<Vec<String>>,
}

/// File stems, or the whole path where stems repeat.
fn metric_uids(assets: &[PathBuf]) -> Vec<String> {
    let stems: Vec<String> = assets
        .iter()
        .map(|p| p.file_stem().map_or_else(|| p.to_string_lossy(), |s| s.to_string_lossy()).into_owned())
        .collect();
    stems
        .iter()
        .zip(assets)
        .map(|(s, p)| {
            if stems.iter().filter(|t| *t == s).count() > 1 {
                p.to_string_lossy().into_owned()
            } else {
                s.clone()
            }
        })
        .collect()
}

/// Per-asset scores, dataset diversity and optionally a greedy subset of
/// `select` assets. Uids are file stems (whole paths where stems repeat). Writes `metrics.json`.
pub fn run_metrics(assets: &[PathBuf], out_dir: &Path, config: &PipelineConfig, select: Option<usize>) -> Result<MetricsReport> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    let opts = DescriptorOptions::default();
    let uids = metric_uids(assets);
    let results: Vec<(PathBuf, Result<AssetDescriptor>)> = pool.install(|| {
        assets
            .par_iter()
            .zip(uids)
            .map(|(p, uid)| (p.clone(), load_scaled(p, config.units).and_then(|m| AssetDescriptor::new(uid, &m, &opts))))
            .collect()
    });
    let mut descs = Vec::new();
    let mut report = MetricsReport {
        assets: Vec::new(),
        failed: Vec::new(),
        diversity: None,
        selected: None,
    };
    for (path, r) in results {
        match r {
            Ok(d) => {
                report.assets.push(AssetMetrics {
                    uid: d.uid.clone(),
                    path,
                    complexity: d.complexity,
                    grasp_difficulty: d.grasp_difficulty,
                });
                descs.push(d);
            }
            Err(e) => report.failed.push(FailedAsset {
                path,
                reason: e.to_string(),
            }),
        }
    }
    report.assets.sort_by(|a, b| a.uid.cmp(&b.uid));
    descs.sort_by(|a, b| a.uid.cmp(&b.uid));
    if descs.len() >= 2 {
        let k = DEFAULT_K.min(descs.len() - 1);
        report.diversity = Some(pool.install(|| dataset_diversity(&descs, k))?);
        if let Some(n) = select {
            report.selected = Some(pool.install(|| greedy_select(&descs, n, k))?);
        }
    } else if select.is_some() {
        return Err(Error::InvalidArgument("selection needs at least two assets".into()));
    }
    write_json(&report, &out_dir.join(METRICS_FILE))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub uid: String,
    pub resolution: usize,
    pub parallelism: usize,
    pub load_s: f64,
    pub clearance_s: f64,
    pub verify_s: f64,
    pub total_s: f64,
    /// Grid cells per second of the clearance stage.
    pub cells_per_second: f64,
}

/// Times load, clearance and verification of each pair at the configured
/// resolution and worker count. Nothing is written.
pub fn run_benchmark(pairs: &[(PathBuf, PathBuf)], config: &PipelineConfig) -> Result<Vec<BenchRow>> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    let inputs: Vec<Vec<PathBuf>> = pairs.iter().map(|(p, r)| vec![p.clone(), r.clone()]).collect();
    let mut rows = Vec::new();
    for job in make_jobs(&inputs, &[None], config) {
        let row = pool.install(|| -> Result<BenchRow> {
            let mut e = ManifestEntry::new(job.uid.clone(), job.inputs.clone());
            let start = Instant::now();
            let pair = load_pair(&mut e, &job, config)?;
            let load_s = start.elapsed().as_secs_f64();
            let grid = pair_grid(&pair, config.resolution, config.clearance)?;
            let spec = ClearanceSpec::new(config.clearance, config.resolution)?
                .with_grid(grid)
                .with_target(config.erode_target);
            let t = Instant::now();
            let (repaired, _) = specify_clearance(&pair, &spec)?;
            let clearance_s = t.elapsed().as_secs_f64();
            let t = Instant::now();
            verify_pair(&repaired, &spec)?;
            let verify_s = t.elapsed().as_secs_f64();
            Ok(BenchRow {
                uid: job.uid.clone(),
                resolution: config.resolution,
                parallelism: config.parallelism,
                load_s,
                clearance_s,
                verify_s,
                total_s: start.elapsed().as_secs_f64(),
                cells_per_second: grid.cell_count() as f64 / clearance_s.max(1e-9),
            })
        })?;
        rows.push(row);
    }
    Ok(rows)
}
