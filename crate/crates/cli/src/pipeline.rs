//! Subcommand implementations. Each reads its inputs from the config paths
//! and the output directory and writes flat files back there.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use prevmap::areal::{fit_bym, AdjacencyGraph, BymModel};
use prevmap::functionals::{
    area_averages, excursion_sets, group_areas, write_grid_csv, EvalGrid, ExcursionLabel,
    SurfaceModel,
};
use prevmap::geometry::io::{
    polygons_from_csv, polygons_from_geojson, polygons_to_geojson, read_mesh, write_mesh_triangles,
    write_mesh_vertices,
};
use prevmap::geometry::partition::{demo_areas, demo_country};
use prevmap::geometry::{build_mesh, Point2, Polygon, TriMesh};
use prevmap::geostat::{binomial_spde_model, ClusterCovariates};
use prevmap::inference::{fit, sample_joint, JointSamples};
use prevmap::render::{choropleth_svg, excursion_svg, heatmap_svg, write_excursion_pgm, Raster};
use prevmap::simulate::{read_locations_csv, replicate_seed, simulate_survey, HouseholdSizes};
use prevmap::special::logit;
use prevmap::survey::{direct_estimates, write_direct_csv, SurveyFrame};

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

/// Output file names.
pub mod files {
    pub const CONFIG: &str = "config.resolved.toml";
    pub const BOUNDARY: &str = "boundary.geojson";
    pub const AREAS: &str = "areas.geojson";
    pub const SURVEY: &str = "survey.csv";
    pub const TRUTH_LATTICE: &str = "truth_lattice.csv";
    pub const AREA_TRUTH: &str = "area_truth.csv";
    pub const CLUSTER_FIELD: &str = "cluster_field.csv";
    pub const DIRECT: &str = "direct.csv";
    pub const BYM_AREAS: &str = "bym_areas.csv";
    pub const BYM_LATENT: &str = "bym_latent.csv";
    pub const BYM_THETA: &str = "bym_theta_grid.csv";
    pub const MESH_VERTICES: &str = "mesh_vertices.csv";
    pub const MESH_TRIANGLES: &str = "mesh_triangles.csv";
    pub const SPDE_LATENT: &str = "spde_latent.csv";
    pub const SPDE_THETA: &str = "spde_theta_grid.csv";
    pub const SPDE_SAMPLES: &str = "spde_samples.bin";
    pub const FIELD_GRID: &str = "spde_field_grid.csv";
    pub const SPDE_AREAS: &str = "spde_areas.csv";
    pub const EXCURSIONS: &str = "excursions.csv";
    pub const MAP_MEDIAN_SVG: &str = "map_median.svg";
    pub const MAP_MEDIAN_PGM: &str = "map_median.pgm";
    pub const MAP_EXCURSION_SVG: &str = "map_excursions.svg";
    pub const MAP_EXCURSION_PGM: &str = "map_excursions.pgm";
    pub const MAP_SPDE_AREAS: &str = "map_spde_areas.svg";
    pub const MAP_BYM_AREAS: &str = "map_bym_areas.svg";
    pub const MAP_DIRECT: &str = "map_direct.svg";
    pub const MAP_TRUTH: &str = "map_truth.svg";
}

/// Stream offsets of the derived seeds.
const SEED_SAMPLES: usize = 1;
const SEED_AREAS: usize = 2;

/// Seed of derived stream `k`; stream 0 is the master seed itself.
pub fn derived_seed(seed: u64, k: usize) -> u64 {
    if k == 0 {
        seed
    } else {
        replicate_seed(seed, 10_000 + k)
    }
}

pub struct Geometry {
    pub boundary: Polygon,
    pub areas: Vec<Polygon>,
}

fn read_polygons(path: &Path) -> CliResult<Vec<Polygon>> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    let step = format!("reading {}", path.display());
    if ext == "json" || ext == "geojson" {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        polygons_from_geojson(&text).map_err(CliError::context(&step))
    } else {
        polygons_from_csv(open(path)?).map_err(CliError::context(&step))
    }
}

pub fn load_geometry(cfg: &PipelineConfig) -> CliResult<Geometry> {
    let boundary = match &cfg.paths.boundary {
        Some(p) => {
            let mut polys = read_polygons(p)?;
            if polys.len() != 1 {
                return Err(CliError::Data(format!(
                    "{}: boundary must hold exactly one polygon, found {}",
                    p.display(),
                    polys.len()
                )));
            }
            polys.remove(0)
        }
        None => demo_country(),
    };
    let areas = match &cfg.paths.areas {
        Some(p) => read_polygons(p)?,
        None => demo_areas(1).map_err(CliError::context("building demo areas"))?,
    };
    if areas.is_empty() {
        return Err(CliError::Data("no areas defined".into()));
    }
    Ok(Geometry { boundary, areas })
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(CliError::io(path))
}

fn open_input(cfg: &PipelineConfig, name: &str) -> CliResult<BufReader<File>> {
    let path = cfg.paths.output.join(name);
    if !path.is_file() {
        return Err(CliError::Data(format!(
            "missing input {}; run the producing subcommand first",
            path.display()
        )));
    }
    open(&path)
}

fn create(cfg: &PipelineConfig, name: &str) -> CliResult<BufWriter<File>> {
    let path = cfg.paths.output.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(CliError::io(&path))
}

fn write_text(cfg: &PipelineConfig, name: &str, text: &str) -> CliResult<()> {
    let path = cfg.paths.output.join(name);
    std::fs::write(&path, text).map_err(CliError::io(&path))
}

fn prepare_output(cfg: &PipelineConfig) -> CliResult<()> {
    let out = &cfg.paths.output;
    std::fs::create_dir_all(out).map_err(CliError::io(out))?;
    let echo = cfg.to_toml();
    write_text(cfg, files::CONFIG, &echo)?;
    log::info!("resolved configuration:\n{echo}");
    Ok(())
}

fn survey_path(cfg: &PipelineConfig) -> PathBuf {
    cfg.paths
        .data
        .clone()
        .unwrap_or_else(|| cfg.paths.output.join(files::SURVEY))
}

pub fn load_frame(cfg: &PipelineConfig) -> CliResult<SurveyFrame> {
    let path = survey_path(cfg);
    if !path.is_file() {
        return Err(CliError::Data(format!(
            "missing survey data {}; set paths.data or run `simulate`",
            path.display()
        )));
    }
    let design = cfg.survey.design();
    SurveyFrame::from_csv(open(&path)?, Some(&design))
        .map_err(CliError::context(&format!("reading {}", path.display())))
}

pub fn cmd_simulate(cfg: &PipelineConfig) -> CliResult<()> {
    prepare_output(cfg)?;
    let geo = load_geometry(cfg)?;
    let sizes = match &cfg.paths.household_sizes {
        Some(p) => HouseholdSizes::from_csv(open(p)?)
            .map_err(CliError::context(&format!("reading {}", p.display())))?,
        None => HouseholdSizes::default(),
    };
    let locations = match &cfg.paths.locations {
        Some(p) => Some(
            read_locations_csv(open(p)?)
                .map_err(CliError::context(&format!("reading {}", p.display())))?,
        ),
        None => None,
    };
    let sim_cfg = cfg.sim_config(sizes);
    let sim = simulate_survey(&sim_cfg, &geo.boundary, &geo.areas, locations.as_deref())
        .map_err(CliError::context("simulation"))?;

    let ctx = |name: &str| format!("writing {name}");
    sim.frame
        .to_csv(create(cfg, files::SURVEY)?)
        .map_err(CliError::context(&ctx(files::SURVEY)))?;
    let ids: Vec<String> = geo.areas.iter().map(|a| a.id().to_string()).collect();
    sim.write_lattice_csv(&ids, create(cfg, files::TRUTH_LATTICE)?)
        .map_err(CliError::context(&ctx(files::TRUTH_LATTICE)))?;
    sim.write_truth_csv(create(cfg, files::AREA_TRUTH)?)
        .map_err(CliError::context(&ctx(files::AREA_TRUTH)))?;
    sim.write_cluster_field_csv(create(cfg, files::CLUSTER_FIELD)?)
        .map_err(CliError::context(&ctx(files::CLUSTER_FIELD)))?;
    write_text(
        cfg,
        files::BOUNDARY,
        &polygons_to_geojson(std::slice::from_ref(&geo.boundary)),
    )?;
    write_text(cfg, files::AREAS, &polygons_to_geojson(&geo.areas))?;
    log::info!(
        "simulated {} clusters, {} households",
        sim.frame.clusters().len(),
        sim.frame.num_households()
    );
    Ok(())
}

fn read_covariates(path: &Path, frame: &SurveyFrame) -> CliResult<ClusterCovariates> {
    let ctx = |m: String| CliError::Data(format!("{}: {m}", path.display()));
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let header = rdr.headers().map_err(|e| ctx(e.to_string()))?.clone();
    if header.get(0) != Some("cluster_id") {
        return Err(ctx("first column must be cluster_id".into()));
    }
    let names: Vec<String> = header.iter().skip(1).map(String::from).collect();
    let mut by_id = std::collections::HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| ctx(e.to_string()))?;
        let vals = rec
            .iter()
            .skip(1)
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| ctx(format!("bad covariate value {v:?}")))
            })
            .collect::<CliResult<Vec<f64>>>()?;
        by_id.insert(rec[0].to_string(), vals);
    }
    let values = frame
        .clusters()
        .iter()
        .map(|c| {
            by_id
                .remove(&c.cluster_id)
                .ok_or_else(|| ctx(format!("no covariates for cluster {}", c.cluster_id)))
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(ClusterCovariates { names, values })
}

fn adjacency(cfg: &PipelineConfig, areas: &[Polygon]) -> CliResult<AdjacencyGraph> {
    match &cfg.paths.adjacency {
        Some(p) => {
            let ids = group_areas(areas).into_iter().map(|(id, _)| id).collect();
            AdjacencyGraph::from_edge_csv(ids, open(p)?)
                .map_err(CliError::context(&format!("reading {}", p.display())))
        }
        None => AdjacencyGraph::from_polygons(areas)
            .map_err(CliError::context("building the area adjacency")),
    }
}

pub fn eval_grid(cfg: &PipelineConfig, geo: &Geometry) -> CliResult<EvalGrid> {
    EvalGrid::new(&geo.boundary, cfg.grid_spacing())
        .map_err(CliError::context("building the map grid"))
}

pub fn build_study_mesh(cfg: &PipelineConfig, boundary: &Polygon) -> CliResult<TriMesh> {
    let m = &cfg.mesh;
    build_mesh(
        boundary,
        m.interior_max_edge,
        m.extension_factor,
        m.exterior_max_edge,
    )
    .map_err(CliError::context("mesh construction"))
}

pub fn cmd_fit(cfg: &PipelineConfig) -> CliResult<()> {
    prepare_output(cfg)?;
    let geo = load_geometry(cfg)?;
    let frame = load_frame(cfg)?;
    let direct = direct_estimates(&frame, &cfg.survey.fix_policy)
        .map_err(CliError::context("direct estimates"))?;
    write_direct_csv(&direct, create(cfg, files::DIRECT)?)
        .map_err(CliError::context("writing direct estimates"))?;
    if cfg.model.bym {
        fit_bym_path(cfg, &geo, &direct)?;
    }
    if cfg.model.spde {
        fit_spde_path(cfg, &geo, &frame)?;
    }
    Ok(())
}

fn fit_bym_path(
    cfg: &PipelineConfig,
    geo: &Geometry,
    direct: &[prevmap::survey::DirectEstimate],
) -> CliResult<()> {
    let graph = adjacency(cfg, &geo.areas)?;
    let model = BymModel::from_direct(graph, direct)
        .map_err(CliError::context("BYM model"))?
        .with_initial(
            cfg.model.bym_initial_log_precision_icar,
            cfg.model.bym_initial_log_precision_iid,
        );
    let result = fit_bym(&model, &cfg.model.fit_options()).map_err(CliError::context("BYM fit"))?;
    let ctx = CliError::context("writing BYM results");
    result
        .write_csv(create(cfg, files::BYM_AREAS)?)
        .map_err(&ctx)?;
    result
        .fit
        .write_latent_csv(create(cfg, files::BYM_LATENT)?)
        .map_err(&ctx)?;
    result
        .fit
        .write_theta_grid_csv(create(cfg, files::BYM_THETA)?)
        .map_err(&ctx)?;
    log::info!("BYM fit: {} areas", result.area_ids.len());
    Ok(())
}

fn fit_spde_path(cfg: &PipelineConfig, geo: &Geometry, frame: &SurveyFrame) -> CliResult<()> {
    let mesh = build_study_mesh(cfg, &geo.boundary)?;
    log::info!(
        "mesh: {} vertices, {} triangles",
        mesh.num_vertices(),
        mesh.num_triangles()
    );
    let covariates = match &cfg.paths.covariates {
        Some(p) => Some(read_covariates(p, frame)?),
        None => None,
    };
    let opts = cfg.model.spde_options();
    let model = binomial_spde_model(
        frame,
        &mesh,
        opts.initial_theta(&geo.boundary),
        &opts,
        covariates.as_ref(),
    )
    .map_err(CliError::context("SPDE model"))?;
    let result = fit(&model, &cfg.model.fit_options()).map_err(CliError::context("SPDE fit"))?;
    let b0 = result.latent[0];
    log::info!(
        "SPDE fit: intercept {:.4} [{:.4}, {:.4}]",
        b0.mean,
        b0.q025,
        b0.q975
    );

    let ctx = CliError::context("writing SPDE results");
    write_mesh_vertices(&mesh, create(cfg, files::MESH_VERTICES)?).map_err(&ctx)?;
    write_mesh_triangles(&mesh, create(cfg, files::MESH_TRIANGLES)?).map_err(&ctx)?;
    result
        .write_latent_csv(create(cfg, files::SPDE_LATENT)?)
        .map_err(&ctx)?;
    result
        .write_theta_grid_csv(create(cfg, files::SPDE_THETA)?)
        .map_err(&ctx)?;

    let samples = sample_joint(
        &result,
        cfg.model.num_samples,
        derived_seed(cfg.seed, SEED_SAMPLES),
    )
    .map_err(CliError::context("posterior sampling"))?;
    let intercept = result.component_range("intercept").unwrap().start;
    let field = result.component_range("spde").unwrap();
    let columns: Vec<usize> = std::iter::once(intercept).chain(field).collect();
    let surface = samples
        .select(&columns)
        .map_err(CliError::context("posterior sampling"))?;
    surface
        .write_binary(create(cfg, files::SPDE_SAMPLES)?)
        .map_err(&ctx)?;

    let model = surface_model(mesh)?;
    let grid = eval_grid(cfg, geo)?;
    let matrix = model
        .evaluate(&surface, &grid.points)
        .map_err(CliError::context("evaluating the surface"))?;
    let median = matrix.prevalence_quantile(0.5);
    let moments = matrix.prevalence_moments();
    let mut w = csv::Writer::from_writer(create(cfg, files::FIELD_GRID)?);
    let wctx = |e: csv::Error| CliError::Data(format!("writing {}: {e}", files::FIELD_GRID));
    w.write_record([
        "x",
        "y",
        "eta_median",
        "prevalence_median",
        "prevalence_mean",
        "prevalence_sd",
    ])
    .map_err(wctx)?;
    for (j, p) in grid.points.iter().enumerate() {
        w.write_record([
            p.x.to_string(),
            p.y.to_string(),
            logit(median[j]).to_string(),
            median[j].to_string(),
            moments[j].0.to_string(),
            moments[j].1.to_string(),
        ])
        .map_err(wctx)?;
    }
    w.flush()
        .map_err(|e| CliError::Data(format!("writing {}: {e}", files::FIELD_GRID)))?;
    Ok(())
}

fn surface_model(mesh: TriMesh) -> CliResult<SurfaceModel> {
    let nv = mesh.num_vertices();
    SurfaceModel::new(mesh, 0, 1..1 + nv).map_err(CliError::context("surface model"))
}

/// Mesh and surface samples written by `fit`.
pub fn load_surface(cfg: &PipelineConfig) -> CliResult<(SurfaceModel, JointSamples)> {
    let mesh = read_mesh(
        open_input(cfg, files::MESH_VERTICES)?,
        open_input(cfg, files::MESH_TRIANGLES)?,
    )
    .map_err(CliError::context("reading the mesh"))?;
    let samples = JointSamples::read_binary(open_input(cfg, files::SPDE_SAMPLES)?)
        .map_err(CliError::context("reading posterior samples"))?;
    Ok((surface_model(mesh)?, samples))
}

pub fn cmd_areas(cfg: &PipelineConfig) -> CliResult<()> {
    prepare_output(cfg)?;
    let geo = load_geometry(cfg)?;
    let (model, samples) = load_surface(cfg)?;
    let result = area_averages(
        &samples,
        &model,
        &geo.areas,
        cfg.functionals.points_per_area,
        derived_seed(cfg.seed, SEED_AREAS),
    )
    .map_err(CliError::context("area averages"))?;
    result
        .write_csv(create(cfg, files::SPDE_AREAS)?)
        .map_err(CliError::context("writing area averages"))?;
    log::info!("area averages for {} areas", result.areas.len());
    Ok(())
}

pub fn cmd_excursions(cfg: &PipelineConfig) -> CliResult<()> {
    prepare_output(cfg)?;
    let geo = load_geometry(cfg)?;
    let (model, samples) = load_surface(cfg)?;
    let grid = eval_grid(cfg, &geo)?;
    let matrix = model
        .evaluate(&samples, &grid.points)
        .map_err(CliError::context("evaluating the surface"))?;
    let f = &cfg.functionals;
    let exc =
        excursion_sets(&matrix, f.u, f.alpha_level).map_err(CliError::context("excursion sets"))?;
    write_grid_csv(
        &grid,
        &matrix.prevalence_moments(),
        &exc,
        create(cfg, files::EXCURSIONS)?,
    )
    .map_err(CliError::context("writing excursions"))?;
    log::info!(
        "excursions at u = {}: {} above, {} below, {} indeterminate",
        f.u,
        exc.count(ExcursionLabel::Above),
        exc.count(ExcursionLabel::Below),
        exc.count(ExcursionLabel::Indeterminate)
    );
    Ok(())
}

/// Reads named columns of a CSV written by an earlier step.
fn read_columns(cfg: &PipelineConfig, name: &str, columns: &[&str]) -> CliResult<Vec<Vec<String>>> {
    let bad = |m: String| CliError::Data(format!("{name}: {m}"));
    let mut rdr = csv::Reader::from_reader(open_input(cfg, name)?);
    let header = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let idx = columns
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h == *c)
                .ok_or_else(|| bad(format!("missing column {c}")))
        })
        .collect::<CliResult<Vec<_>>>()?;
    rdr.records()
        .map(|r| {
            let r = r.map_err(|e| bad(e.to_string()))?;
            Ok(idx.iter().map(|&i| r[i].to_string()).collect())
        })
        .collect()
}

fn parse_f64(name: &str, v: &str) -> CliResult<f64> {
    v.parse()
        .map_err(|_| CliError::Data(format!("{name}: bad number {v:?}")))
}

fn area_values(cfg: &PipelineConfig, name: &str, value: &str) -> CliResult<Vec<(String, f64)>> {
    read_columns(cfg, name, &["area_id", value])?
        .into_iter()
        .map(|r| Ok((r[0].clone(), parse_f64(name, &r[1])?)))
        .collect()
}

pub fn cmd_report(cfg: &PipelineConfig) -> CliResult<()> {
    prepare_output(cfg)?;
    let geo = load_geometry(cfg)?;
    let out = &cfg.paths.output;
    let mut required = vec![files::DIRECT];
    if cfg.model.spde {
        required.extend([files::FIELD_GRID, files::SPDE_AREAS, files::EXCURSIONS]);
    }
    if cfg.model.bym {
        required.push(files::BYM_AREAS);
    }
    let missing: Vec<String> = required
        .iter()
        .map(|f| out.join(f))
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Data(format!(
            "missing report inputs: {}",
            missing.join(", ")
        )));
    }
    let render = CliError::context("rendering");

    let choropleth = |file: &str, title: &str, values: &[(String, f64)]| -> CliResult<()> {
        let svg =
            choropleth_svg(&geo.areas, values, title).map_err(CliError::context("rendering"))?;
        write_text(cfg, file, &svg)
    };
    choropleth(
        files::MAP_DIRECT,
        "Direct (weighted) prevalence",
        &area_values(cfg, files::DIRECT, "p_hat")?,
    )?;
    if cfg.model.bym {
        choropleth(
            files::MAP_BYM_AREAS,
            "Smoothed direct prevalence (BYM)",
            &area_values(cfg, files::BYM_AREAS, "p_q50")?,
        )?;
    }
    if out.join(files::AREA_TRUTH).is_file() {
        choropleth(
            files::MAP_TRUTH,
            "True area prevalence",
            &area_values(cfg, files::AREA_TRUTH, "prevalence")?,
        )?;
    }
    if cfg.model.spde {
        choropleth(
            files::MAP_SPDE_AREAS,
            "Area prevalence (SPDE, posterior mean)",
            &area_values(cfg, files::SPDE_AREAS, "mean")?,
        )?;

        let grid = eval_grid(cfg, &geo)?;
        let rows = read_columns(cfg, files::FIELD_GRID, &["x", "y", "prevalence_median"])?;
        check_grid(&grid, &rows, files::FIELD_GRID)?;
        let median = rows
            .iter()
            .map(|r| parse_f64(files::FIELD_GRID, &r[2]))
            .collect::<CliResult<Vec<_>>>()?;
        let outline = std::slice::from_ref(&geo.boundary);
        let svg =
            heatmap_svg(&grid, &median, outline, "Posterior median prevalence").map_err(&render)?;
        write_text(cfg, files::MAP_MEDIAN_SVG, &svg)?;
        let mut w = create(cfg, files::MAP_MEDIAN_PGM)?;
        Raster::from_grid(&grid, &median)
            .and_then(|r| r.write_pgm(None, &mut w))
            .map_err(&render)?;
        w.flush().map_err(|e| CliError::Data(e.to_string()))?;

        let rows = read_columns(cfg, files::EXCURSIONS, &["x", "y", "label"])?;
        check_grid(&grid, &rows, files::EXCURSIONS)?;
        let labels = rows
            .iter()
            .map(|r| parse_label(&r[2]))
            .collect::<CliResult<Vec<_>>>()?;
        let title = format!(
            "Excursion sets, u = {}, alpha = {}",
            cfg.functionals.u, cfg.functionals.alpha_level
        );
        let svg = excursion_svg(&grid, &labels, outline, &title).map_err(&render)?;
        write_text(cfg, files::MAP_EXCURSION_SVG, &svg)?;
        let mut w = create(cfg, files::MAP_EXCURSION_PGM)?;
        write_excursion_pgm(&grid, &labels, &mut w).map_err(&render)?;
        w.flush().map_err(|e| CliError::Data(e.to_string()))?;
    }
    Ok(())
}

fn parse_label(s: &str) -> CliResult<ExcursionLabel> {
    [
        ExcursionLabel::Above,
        ExcursionLabel::Below,
        ExcursionLabel::Indeterminate,
    ]
    .into_iter()
    .find(|l| l.as_str() == s)
    .ok_or_else(|| CliError::Data(format!("{}: unknown label {s:?}", files::EXCURSIONS)))
}

/// Guards against grid files produced under a different configuration.
fn check_grid(grid: &EvalGrid, rows: &[Vec<String>], name: &str) -> CliResult<()> {
    let stale = || {
        CliError::Data(format!(
            "{name} does not match the configured map grid; rerun the producing step"
        ))
    };
    if rows.len() != grid.len() {
        return Err(stale());
    }
    for (r, p) in rows.iter().zip(&grid.points) {
        let q = Point2::new(parse_f64(name, &r[0])?, parse_f64(name, &r[1])?);
        if q.dist(p) > 1e-9 * (1.0 + p.x.abs() + p.y.abs()) {
            return Err(stale());
        }
    }
    Ok(())
}

/// Every step in order; simulates first when no data file is configured.
pub fn cmd_run(cfg: &PipelineConfig) -> CliResult<()> {
    if cfg.paths.data.is_none() {
        cmd_simulate(cfg)?;
    }
    cmd_fit(cfg)?;
    if cfg.model.spde {
        cmd_areas(cfg)?;
        cmd_excursions(cfg)?;
    }
    cmd_report(cfg)
}
