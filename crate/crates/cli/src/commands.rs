use std::path::Path;

use log::info;
use obscorr::assimilation::{build_obs_cov, replicate_seed, selection_from_config};
use obscorr::config::{CovKind, ObsErrorConfig, ObsMode};
use obscorr::fem::{Normalization, NormalizationReport};
use obscorr::io::{fmt, read_obs_file, write_csv_file, write_json_file};
use obscorr::kernels::circulant_eigenvalues;
use obscorr::mesh::build_track_mesh;
use obscorr::spectral::{log_grid, ratio_surface as surface, scale_table, variance_crossing};
use obscorr::{
    run_experiment, simulate_innovation, ArKernel, CirculantCov, CirculantSpectrum, CorrelationModel,
    DiffusionOperator, Error, ExperimentConfig, Result, ScaleDecomposition,
};
use serde::Serialize;

use crate::Common;

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(obs) = &c.obs {
        cfg.observations.mode = ObsMode::File;
        cfg.observations.path = Some(obs.clone());
    }
    Ok(cfg)
}

fn out_dir(c: &Common) -> Result<&Path> {
    std::fs::create_dir_all(&c.out)?;
    Ok(&c.out)
}

pub fn kernel(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    cfg.validate_kernel()?;
    let k = &cfg.kernel;
    let mut rows = Vec::new();
    for (i, curve) in k.curves.iter().enumerate() {
        let model = CorrelationModel::new(curve.m, curve.rho_km)
            .map_err(|e| Error::Config(format!("kernel.curves[{i}]: {e}")))?;
        let kern = ArKernel::new(&model);
        let last = (k.n_points - 1) as f64;
        for j in 0..k.n_points {
            let r = k.r_max_km * j as f64 / last;
            let wk = k.k_max * j as f64 / last;
            rows.push(vec![
                curve.m.to_string(),
                fmt(curve.rho_km),
                fmt(r),
                fmt(kern.correlation(r)),
                fmt(wk),
                fmt(kern.spectral_density(wk)),
            ]);
        }
    }
    let path = out_dir(c)?.join("kernel.csv");
    write_csv_file(&path, &["m", "rho_km", "r_km", "corr", "k", "density"], rows)?;
    info!("wrote {}", path.display());
    Ok(())
}

fn obs_spectrum(o: &ObsErrorConfig, n: usize, h: f64) -> Result<CirculantSpectrum> {
    match o.kind {
        CovKind::Diagonal => CirculantSpectrum::white(n, h),
        CovKind::Diffusion | CovKind::Circulant => circulant_eigenvalues(&o.model()?, n, h),
    }
}

#[derive(Serialize)]
struct SpectrumSummary {
    n: usize,
    h_km: f64,
    crossing_wavenumber: Option<f64>,
    crossing_scale_km: Option<f64>,
    crossing_lam_s: Option<f64>,
    crossing_sign_changes: usize,
    practical: Option<String>,
}

pub fn spectrum(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    cfg.validate()?;
    let (n, h) = (cfg.grid.n, cfg.grid.h_km);
    let bspec = if cfg.background.diagonal {
        CirculantSpectrum::white(n, h)?
    } else {
        circulant_eigenvalues(&cfg.background_model()?, n, h)?
    };
    let sb2 = cfg.background.sigma_b.powi(2);
    let mut dec = ScaleDecomposition::new(sb2, bspec, cfg.truth.sigma_o.powi(2), obs_spectrum(&cfg.truth, n, h)?)?;
    let practical = cfg.specified.first();
    if let Some(s) = practical {
        dec = dec.with_practical(s.sigma_o.powi(2), obs_spectrum(s, n, h)?)?;
    }
    let rows = scale_table(&dec)?;
    let out = out_dir(c)?;
    write_csv_file(
        &out.join("spectrum.csv"),
        &[
            "k",
            "scale_km",
            "lam_b_var",
            "lam_o_var",
            "lam_s",
            "lam_a_var",
            "lam_a_var_subopt",
        ],
        rows.iter().map(|r| {
            vec![
                r.k.to_string(),
                fmt(r.scale_km),
                fmt(r.lam_b_var),
                fmt(r.lam_o_var),
                fmt(r.lam_s),
                fmt(r.lam_a_var),
                fmt(r.lam_a_var_subopt),
            ]
        }),
    )?;
    let cross = variance_crossing(&dec);
    write_json_file(
        &out.join("spectrum_summary.json"),
        &SpectrumSummary {
            n,
            h_km: h,
            crossing_wavenumber: cross.map(|x| x.wavenumber),
            crossing_scale_km: cross.map(|x| x.scale_km),
            crossing_lam_s: cross.map(|x| x.lam_s),
            crossing_sign_changes: cross.map(|x| x.sign_changes).unwrap_or(0),
            practical: practical.map(ObsErrorConfig::label),
        },
    )?;
    Ok(())
}

pub fn ratio_surface(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    cfg.validate_ratio_surface()?;
    let s = &cfg.ratio_surface;
    let oo = log_grid(s.eta_oo_min, s.eta_oo_max, s.n_oo);
    let ob = log_grid(s.eta_ob_min, s.eta_ob_max, s.n_ob);
    let surf = surface(&oo, &ob)?;
    let mut rows = Vec::with_capacity(oo.len() * ob.len());
    for (i, b) in ob.iter().enumerate() {
        for (j, o) in oo.iter().enumerate() {
            rows.push([fmt(*o), fmt(*b), fmt(surf.at(i, j))]);
        }
    }
    write_csv_file(
        &out_dir(c)?.join("ratio_surface.csv"),
        &["eta_oo", "eta_ob", "eta_aa"],
        rows,
    )
}

#[derive(Serialize)]
struct TrackNormalization {
    track_id: String,
    p: usize,
    mean_spacing_km: f64,
    n_iter: usize,
    lambda_max: f64,
    applications: usize,
    gamma_min: f64,
    gamma_max: f64,
    gamma_mean: f64,
    exact_applications: Option<usize>,
    mean_rel_error: Option<f64>,
    max_rel_error: Option<f64>,
}

#[derive(Serialize)]
struct NormalizeSummary {
    m: u32,
    rho_km: f64,
    spacing_factor: f64,
    total_applications: usize,
    tracks: Vec<TrackNormalization>,
}

pub fn normalize(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    cfg.validate()?;
    let path = cfg
        .observations
        .path
        .clone()
        .ok_or_else(|| Error::Config("normalize needs an observation file (--obs)".into()))?;
    if cfg.truth.kind != CovKind::Diffusion {
        return Err(Error::Config(
            "truth.kind: normalize needs a \"diffusion\" covariance".into(),
        ));
    }
    let model = cfg.truth.model()?;
    let spacing_factor = cfg.normalization.spacing_factor;
    let mut settings = cfg.normalization.diffusion_settings(cfg.seed);
    settings.normalization = Normalization::None;

    let mut rows = Vec::new();
    let mut tracks = Vec::new();
    for track in read_obs_file(&path)? {
        for mesh in build_track_mesh(&track.track_id, &track.locations, cfg.normalization.gap_split_factor)? {
            let op = DiffusionOperator::unnormalized(&mesh, &model, &settings)?;
            let spaced = op.compute_normalization(Normalization::Spaced { spacing_factor })?;
            let exact: Option<NormalizationReport> = if c.exact_normalization {
                Some(op.compute_normalization(Normalization::Exact)?)
            } else {
                None
            };
            let errors: Option<Vec<f64>> = exact.as_ref().map(|e| {
                spaced
                    .gamma
                    .iter()
                    .zip(&e.gamma)
                    .map(|(s, x)| ((s - x) / x).abs())
                    .collect()
            });
            for i in 0..mesh.len() {
                let mut row = vec![
                    mesh.track_id().to_string(),
                    i.to_string(),
                    fmt(mesh.positions()[i]),
                    fmt(spaced.gamma[i]),
                ];
                if let (Some(e), Some(err)) = (&exact, &errors) {
                    row.push(fmt(e.gamma[i]));
                    row.push(fmt(err[i]));
                }
                rows.push(row);
            }
            let g = &spaced.gamma;
            let cal = op.calibration();
            tracks.push(TrackNormalization {
                track_id: mesh.track_id().to_string(),
                p: mesh.len(),
                mean_spacing_km: mesh.mean_spacing(),
                n_iter: cal.n_iter,
                lambda_max: cal.lambda_max,
                applications: spaced.applications,
                gamma_min: g.iter().cloned().fold(f64::INFINITY, f64::min),
                gamma_max: g.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                gamma_mean: g.iter().sum::<f64>() / g.len() as f64,
                exact_applications: exact.as_ref().map(|e| e.applications),
                mean_rel_error: errors.as_ref().map(|e| e.iter().sum::<f64>() / e.len() as f64),
                max_rel_error: errors.as_ref().map(|e| e.iter().cloned().fold(0.0, f64::max)),
            });
        }
    }
    let out = out_dir(c)?;
    let mut header = vec!["track_id", "node", "arc_km", "gamma"];
    if c.exact_normalization {
        header.extend(["gamma_exact", "rel_error"]);
    }
    write_csv_file(&out.join("normalization.csv"), &header, rows)?;
    write_json_file(
        &out.join("normalize_summary.json"),
        &NormalizeSummary {
            m: model.m(),
            rho_km: model.rho(),
            spacing_factor,
            total_applications: tracks.iter().map(|t| t.applications).sum(),
            tracks,
        },
    )
}

pub fn sample(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    cfg.validate()?;
    let g = selection_from_config(&cfg)?;
    let (n, h) = (cfg.grid.n, cfg.grid.h_km);
    let b = if cfg.background.diagonal {
        CirculantCov::white(n, h, cfg.background.sigma_b)?
    } else {
        CirculantCov::build(n, h, cfg.background.sigma_b, &cfg.background_model()?)?
    };
    let settings = cfg.normalization.diffusion_settings(cfg.seed);
    let r = build_obs_cov(&cfg.truth, &g, h, &settings)?;
    let mut rows = Vec::new();
    for draw in 0..cfg.sample.draws {
        let st = simulate_innovation(&b, r.as_ref(), &g, replicate_seed(cfg.seed, draw))?;
        for (i, v) in st.eps_b.iter().enumerate() {
            rows.push([draw.to_string(), "background".into(), i.to_string(), fmt(*v)]);
        }
        for (j, v) in st.eps_o.iter().enumerate() {
            rows.push([
                draw.to_string(),
                "observation".into(),
                g.indices()[j].to_string(),
                fmt(*v),
            ]);
        }
    }
    write_csv_file(
        &out_dir(c)?.join("samples.csv"),
        &["draw", "space", "index", "value"],
        rows,
    )
}

#[derive(Serialize)]
struct Paired {
    variant: String,
    reference: String,
    mean_difference: f64,
    std_error: f64,
}

#[derive(Serialize)]
struct AssimilateSummary<'a> {
    seed: u64,
    n: usize,
    p: usize,
    replicates: usize,
    variants: Vec<&'a obscorr::assimilation::VariantSummary>,
    paired_vs_first: Vec<Paired>,
}

pub fn assimilate(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    cfg.validate()?;
    let g = selection_from_config(&cfg)?;
    let report = run_experiment(&cfg, &g, c.workers)?;
    let out = out_dir(c)?;

    let mut rows = Vec::new();
    for v in &report.variants {
        for r in &v.replicates {
            for it in 0..r.rms.len() {
                rows.push([
                    v.name.clone(),
                    r.replicate.to_string(),
                    it.to_string(),
                    fmt(r.rms[it]),
                    fmt(r.grad_bnorm_rel[it]),
                    fmt(r.cost[it]),
                ]);
            }
        }
    }
    write_csv_file(
        &out.join("report.csv"),
        &[
            "specified",
            "replicate",
            "iteration",
            "rms_analysis_error",
            "grad_bnorm_rel",
            "cost",
        ],
        rows,
    )?;

    let mut paired = Vec::new();
    if let Some((first, rest)) = report.variants.split_first() {
        for v in rest {
            let diffs: Vec<f64> = v
                .replicates
                .iter()
                .zip(&first.replicates)
                .map(|(a, b)| a.final_rms() - b.final_rms())
                .collect();
            let k = diffs.len() as f64;
            if diffs.is_empty() {
                continue;
            }
            let mean = diffs.iter().sum::<f64>() / k;
            let var = if diffs.len() > 1 {
                diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (k - 1.0)
            } else {
                0.0
            };
            paired.push(Paired {
                variant: v.name.clone(),
                reference: first.name.clone(),
                mean_difference: mean,
                std_error: (var / k).sqrt(),
            });
        }
    }
    write_json_file(
        &out.join("summary.json"),
        &AssimilateSummary {
            seed: report.seed,
            n: report.n,
            p: report.p,
            replicates: cfg.replicates,
            variants: report.variants.iter().map(|v| &v.summary).collect(),
            paired_vs_first: paired,
        },
    )
}
