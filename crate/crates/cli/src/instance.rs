use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use problm::io::{read_ba, read_correspondences, read_file, read_key_values, read_pgm, write_ba, write_correspondences, write_key_values, write_pgm};
use problm::problems::*;
use problm::{gnc_run, solve, GncSchedule, KernelKind, ResidualModel, RobustKernel, SolveReport, Termination, TraceRecord};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::args::{GenerateArgs, Kind};
use crate::error::CliError;
use crate::settings::Settings;

pub const MANIFEST: &str = "manifest.txt";
const HOMOGRAPHY_MARGIN: usize = 4;
const BA_START_ANGLE: f64 = 0.05;

/// Loaded problem, ready to solve.
pub enum Instance {
    Essential {
        model: EssentialModel,
        truth: Option<EssentialParams>,
        robust: bool,
    },
    Homography {
        model: HomographyModel,
    },
    Ba {
        model: BaModel,
        truth: BaParams,
    },
}

/// What a single solve reports back, independent of the parameter type.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub final_cost: f64,
    pub evals: u64,
    pub iterations: usize,
    pub termination: Termination,
    pub final_batch_size: usize,
    pub trace: Vec<TraceRecord>,
}

impl<P> From<SolveReport<P>> for RunOutcome {
    fn from(r: SolveReport<P>) -> Self {
        Self {
            final_cost: r.final_cost,
            evals: r.evals,
            iterations: r.iterations,
            termination: r.termination,
            final_batch_size: r.final_batch_size,
            trace: r.trace,
        }
    }
}

fn vector_text(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

fn quaternion_text(q: &UnitQuaternion<f64>) -> String {
    vector_text(&[q.w, q.i, q.j, q.k])
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    Ok(BufWriter::new(fs::File::create(path).map_err(CliError::io(path))?))
}

fn finish(path: &Path, w: BufWriter<fs::File>) -> Result<(), CliError> {
    w.into_inner()
        .map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e.into_error(),
        })?
        .sync_all()
        .map_err(CliError::io(path))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<(), CliError> {
    let mut w = create(path)?;
    f(&mut w).map_err(CliError::io(path))?;
    finish(path, w)
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn check_generate(args: &GenerateArgs) -> Result<(), CliError> {
    if let Some(noise) = args.noise {
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(usage(format!("noise must be non-negative, got {noise}")));
        }
    }
    match args.kind {
        Kind::Essential | Kind::EssentialRobust => {
            if args.points.is_some_and(|n| n < 8) {
                return Err(usage("essential instances need at least 8 correspondences"));
            }
            if let Some(f) = args.outliers {
                if !(0.0..=1.0).contains(&f) {
                    return Err(usage(format!("outlier fraction must be in [0, 1], got {f}")));
                }
            }
        }
        Kind::Homography => {
            if args.size < 16 {
                return Err(usage("images must be at least 16 pixels wide"));
            }
            if !(args.magnitude >= 0.0 && args.magnitude < 0.5) {
                return Err(usage(format!("magnitude must be in [0, 0.5), got {}", args.magnitude)));
            }
        }
        Kind::Ba => {
            if args.cameras < 2 {
                return Err(usage("bundle adjustment needs at least 2 cameras"));
            }
            if args.points == Some(0) {
                return Err(usage("bundle adjustment needs at least 1 point"));
            }
        }
    }
    Ok(())
}

/// Writes the instance files and `manifest.txt` into `args.out`.
pub fn generate(args: &GenerateArgs) -> Result<Vec<PathBuf>, CliError> {
    check_generate(args)?;
    let dir = &args.out;
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let mut manifest = BTreeMap::new();
    manifest.insert("kind".to_string(), args.kind.as_str().to_string());
    manifest.insert("seed".to_string(), args.seed.to_string());
    let mut written = Vec::new();

    match args.kind {
        Kind::Essential | Kind::EssentialRobust => {
            let robust = args.kind == Kind::EssentialRobust;
            let defaults = EssentialGenerator::default();
            let opts = EssentialGenerator {
                num_points: args.points.unwrap_or(if robust { 5000 } else { defaults.num_points }),
                noise: args.noise.unwrap_or(defaults.noise),
                outlier_fraction: if robust { args.outliers.unwrap_or(0.5) } else { args.outliers.unwrap_or(0.0) },
                ..defaults
            };
            let mut inst = generate_essential_instance(args.seed, &opts);
            if !robust && opts.outlier_fraction == 0.0 {
                inst.correspondences.inliers = None;
            }
            let path = dir.join("correspondences.txt");
            write_with(&path, |w| write_correspondences(w, &inst.correspondences))?;
            written.push(path);
            manifest.insert("correspondences".into(), "correspondences.txt".into());
            manifest.insert("points".into(), opts.num_points.to_string());
            manifest.insert("noise".into(), opts.noise.to_string());
            manifest.insert("outliers".into(), opts.outlier_fraction.to_string());
            manifest.insert("truth_rotation".into(), quaternion_text(&inst.ground_truth.rotation));
            manifest.insert("truth_translation".into(), vector_text(inst.ground_truth.translation.as_slice()));
        }
        Kind::Homography => {
            let opts = HomographyGenerator {
                width: args.size,
                height: args.size,
                noise: args.noise.unwrap_or(0.0),
                ..Default::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed ^ 0x5eed);
            let truth = HomographyParams::random_near_identity(args.magnitude, &mut rng);
            let pair = generate_homography_instance(args.seed, &truth, &opts);
            for (name, image) in [("source.pgm", &pair.source), ("target.pgm", &pair.target)] {
                let path = dir.join(name);
                write_with(&path, |w| write_pgm(w, image))?;
                written.push(path);
            }
            manifest.insert("source".into(), "source.pgm".into());
            manifest.insert("target".into(), "target.pgm".into());
            manifest.insert("size".into(), args.size.to_string());
            manifest.insert("noise".into(), opts.noise.to_string());
            manifest.insert("truth_homography".into(), vector_text(&truth.to_vector()));
        }
        Kind::Ba => {
            let defaults = BaGenerator::default();
            let opts = BaGenerator {
                num_cameras: args.cameras,
                num_points: args.points.unwrap_or(defaults.num_points),
                noise: args.noise.unwrap_or(defaults.noise),
                ..defaults
            };
            let prob = generate_ba_instance(args.seed, &opts);
            let path = dir.join("ba.txt");
            write_with(&path, |w| write_ba(w, &prob.instance))?;
            written.push(path);
            manifest.insert("observations".into(), "ba.txt".into());
            manifest.insert("cameras".into(), opts.num_cameras.to_string());
            manifest.insert("points".into(), opts.num_points.to_string());
            manifest.insert("noise".into(), opts.noise.to_string());
            for (i, cam) in prob.ground_truth.cameras.iter().enumerate() {
                let mut v = vec![cam.rotation.w, cam.rotation.i, cam.rotation.j, cam.rotation.k];
                v.extend(cam.translation.iter());
                manifest.insert(format!("truth_camera_{i}"), vector_text(&v));
            }
        }
    }

    let path = dir.join(MANIFEST);
    write_with(&path, |w| write_key_values(w, &manifest))?;
    written.push(path);
    Ok(written)
}

struct Manifest {
    path: PathBuf,
    dir: PathBuf,
    map: BTreeMap<String, String>,
}

impl Manifest {
    fn get(&self, key: &str) -> Result<&str, CliError> {
        self.map.get(key).map(String::as_str).ok_or_else(|| CliError::Format {
            path: self.path.clone(),
            message: format!("missing key `{key}`"),
        })
    }

    fn numbers(&self, key: &str, len: usize) -> Result<Option<Vec<f64>>, CliError> {
        let Some(text) = self.map.get(key) else {
            return Ok(None);
        };
        let bad = || CliError::Format {
            path: self.path.clone(),
            message: format!("`{key}` must hold {len} numbers"),
        };
        let v: Vec<f64> = text
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| bad())?;
        if v.len() != len || v.iter().any(|x| !x.is_finite()) {
            return Err(bad());
        }
        Ok(Some(v))
    }

    fn file(&self, key: &str) -> Result<PathBuf, CliError> {
        Ok(self.dir.join(self.get(key)?))
    }
}

fn quaternion(v: &[f64]) -> UnitQuaternion<f64> {
    UnitQuaternion::from_quaternion(Quaternion::new(v[0], v[1], v[2], v[3]))
}

/// Reads an instance directory, or a manifest path directly.
pub fn load(path: &Path) -> Result<Instance, CliError> {
    let manifest_path = if path.is_dir() { path.join(MANIFEST) } else { path.to_path_buf() };
    let map = read_key_values(&manifest_path).map_err(CliError::format(&manifest_path))?;
    let m = Manifest {
        dir: manifest_path.parent().map(Path::to_path_buf).unwrap_or_default(),
        path: manifest_path,
        map,
    };
    match m.get("kind")? {
        kind @ ("essential" | "essential-robust") => {
            let file = m.file("correspondences")?;
            let set = read_file(&file, read_correspondences).map_err(CliError::format(&file))?;
            if set.len() < 8 {
                return Err(CliError::Format {
                    path: file,
                    message: format!("need at least 8 correspondences, found {}", set.len()),
                });
            }
            let truth = match (m.numbers("truth_rotation", 4)?, m.numbers("truth_translation", 3)?) {
                (Some(q), Some(t)) => Some(EssentialParams::new(quaternion(&q), Vector3::new(t[0], t[1], t[2]))),
                _ => None,
            };
            Ok(Instance::Essential {
                model: EssentialModel::new(&set),
                truth,
                robust: kind == "essential-robust",
            })
        }
        "homography" => {
            let source = m.file("source")?;
            let target = m.file("target")?;
            let pair = ImagePair {
                source: read_file(&source, read_pgm).map_err(CliError::format(&source))?,
                target: read_file(&target, read_pgm).map_err(CliError::format(&target))?,
            };
            if pair.source.width() != pair.target.width() || pair.source.height() != pair.target.height() {
                return Err(CliError::Format {
                    path: target,
                    message: "source and target sizes differ".into(),
                });
            }
            if pair.source.width() <= 2 * HOMOGRAPHY_MARGIN + 2 || pair.source.height() <= 2 * HOMOGRAPHY_MARGIN + 2 {
                return Err(CliError::Format {
                    path: source,
                    message: "image is too small".into(),
                });
            }
            Ok(Instance::Homography {
                model: HomographyModel::new(&pair, HOMOGRAPHY_MARGIN, 1, JacobianMode::Esm),
            })
        }
        "ba" => {
            let file = m.file("observations")?;
            let inst = read_file(&file, read_ba).map_err(CliError::format(&file))?;
            if inst.num_cameras < 2 || inst.depths.iter().any(|&d| !(d > 0.0)) {
                return Err(CliError::Format {
                    path: file,
                    message: "need at least 2 cameras and positive depths".into(),
                });
            }
            let cameras = (0..inst.num_cameras)
                .map(|i| {
                    let v = m.numbers(&format!("truth_camera_{i}"), 7)?.ok_or_else(|| CliError::Format {
                        path: m.path.clone(),
                        message: format!("missing key `truth_camera_{i}`"),
                    })?;
                    Ok(Camera {
                        rotation: quaternion(&v),
                        translation: Vector3::new(v[4], v[5], v[6]),
                    })
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            Ok(Instance::Ba {
                model: BaModel::new(inst),
                truth: BaParams { cameras },
            })
        }
        other => Err(CliError::Format {
            path: m.path.clone(),
            message: format!("unknown kind `{other}`"),
        }),
    }
}

impl Instance {
    pub fn num_residuals(&self) -> usize {
        match self {
            Instance::Essential { model, .. } => model.num_residuals(),
            Instance::Homography { model } => model.num_residuals(),
            Instance::Ba { model, .. } => model.num_residuals(),
        }
    }

    fn default_kernel(&self) -> KernelKind {
        match self {
            Instance::Essential { robust: true, .. } => KernelKind::SmoothTruncated,
            _ => KernelKind::None,
        }
    }

    fn default_tau(&self) -> f64 {
        match self {
            Instance::Essential { .. } => 5e-3,
            Instance::Homography { .. } => 0.1,
            Instance::Ba { .. } => 1e-2,
        }
    }

    /// Solves from the start implied by `settings` and `settings.solver.seed`:
    /// a random essential matrix (or the truth rotated by `init_noise`), the
    /// identity homography, or perturbed true cameras.
    pub fn run(&self, settings: &Settings) -> Result<RunOutcome, CliError> {
        let seed = settings.solver.seed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
        let kernel = RobustKernel::new(
            settings.kernel.unwrap_or(self.default_kernel()),
            settings.tau.unwrap_or(self.default_tau()),
        );
        match self {
            Instance::Essential { model, truth, .. } => {
                let start = match (settings.init_noise, truth) {
                    (Some(angle), Some(t)) => t.perturbed(angle, &mut rng),
                    (Some(_), None) => return Err(usage("init-noise needs the ground truth in the manifest")),
                    (None, _) => EssentialParams::random(&mut rng),
                };
                run_model(model, start, settings, kernel)
            }
            Instance::Homography { model } => run_model(model, HomographyParams::identity(), settings, kernel),
            Instance::Ba { model, truth } => {
                let start = truth.perturbed(settings.init_noise.unwrap_or(BA_START_ANGLE), &mut rng);
                run_model(model, start, settings, kernel)
            }
        }
    }
}

fn run_model<M: ResidualModel>(model: &M, start: M::Params, settings: &Settings, kernel: RobustKernel) -> Result<RunOutcome, CliError> {
    let report: RunOutcome = if kernel.kind == KernelKind::None {
        solve(model, start, &settings.solver, settings.method)?.into()
    } else {
        let schedule = GncSchedule::halving(settings.gnc_levels);
        gnc_run(model, kernel, start, &settings.solver, &schedule, settings.method)?.into()
    };
    Ok(report)
}

/// Writes `records` as a trace CSV at `path`, creating parent directories.
pub fn write_trace(path: &Path, records: &[TraceRecord], zero_timing: bool) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(CliError::io(parent))?;
    }
    let mut w = create(path)?;
    problm::write_trace_csv(&mut w, records, zero_timing).map_err(CliError::io(path))?;
    w.flush().map_err(CliError::io(path))?;
    finish(path, w)
}
