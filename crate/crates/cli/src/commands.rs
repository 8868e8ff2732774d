//! Command implementations behind the CLI surface.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use mdpattr::catalog::{self, GridworldLayout, RandomMdpSpec};
use mdpattr::encodings::{self, serialize_lp, EncodingConfig, OptSense};
use mdpattr::importance::{self, ImportanceError};
use mdpattr::mdp::PathSpec;
use mdpattr::preprocess::{memory_product, PreprocessError};
use mdpattr::{Mdp, SolveOptions, StrategyClass};

use crate::model_file::ModelFile;
use crate::report::{class_name, csv_field, format_probability, AnalysisReport, QueryEcho};

/// Errors mapped onto the exit-code contract: usage/input problems exit 1,
/// undefined importance exits 2, exhausted budgets exit 3.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Undefined(String),
    Budget(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Undefined(_) => 2,
            CliError::Budget(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Undefined(m) | CliError::Budget(m) => m,
        }
    }
}

impl From<ImportanceError> for CliError {
    fn from(err: ImportanceError) -> Self {
        match &err {
            ImportanceError::Undefined(_) | ImportanceError::InfeasibleClass(_) => {
                CliError::Undefined(err.to_string())
            }
            ImportanceError::Preprocess(PreprocessError::PathImportanceUndefined) => {
                CliError::Undefined(err.to_string())
            }
            ImportanceError::Budget(_) => CliError::Budget(err.to_string()),
            _ => CliError::Input(err.to_string()),
        }
    }
}

impl From<crate::model_file::ModelFileError> for CliError {
    fn from(err: crate::model_file::ModelFileError) -> Self {
        CliError::Input(err.to_string())
    }
}

fn write_output(path: Option<&str>, content: &str) -> Result<(), CliError> {
    match path {
        Some(path) => std::fs::write(path, content)
            .map_err(|e| CliError::Input(format!("cannot write `{path}`: {e}"))),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn load_model(path: &str) -> Result<(ModelFile, Mdp), CliError> {
    let file = ModelFile::load(path)?;
    let mdp = file.to_mdp()?;
    Ok((file, mdp))
}

fn resolve_target(file: &ModelFile, flag: Option<&str>) -> Result<String, CliError> {
    match flag.map(str::to_string).or_else(|| file.target.clone()) {
        Some(t) => Ok(t),
        None => Err(CliError::Input(
            "no target: pass --target or set \"target\" in the model file".into(),
        )),
    }
}

pub struct GenParams {
    pub seed: u64,
    pub states: usize,
    pub actions: usize,
    pub density: f64,
    pub width: usize,
    pub height: usize,
    pub lava_row: usize,
    pub door_x: usize,
}

pub fn cmd_gen(kind: &str, params: &GenParams, out: Option<&str>) -> Result<(), CliError> {
    let file = match kind {
        "loan" => ModelFile::from_raw(&catalog::loan_raw(), Some(catalog::LOAN_TARGET.into())),
        "nonmono" => ModelFile::from_raw(
            &catalog::nonmono_raw(),
            Some(catalog::NONMONO_TARGET.into()),
        ),
        "gridworld" => {
            let layout = GridworldLayout {
                width: params.width,
                height: params.height,
                lava_row: params.lava_row,
                door_x: params.door_x,
                start: (0, params.height - 1),
                key: (params.width - 1, params.height - 1),
                target: (params.width - 1, 0),
            };
            layout.validate().map_err(CliError::Input)?;
            ModelFile::from_raw(
                &catalog::gridworld_raw(&layout),
                Some(layout.target_state()),
            )
        }
        "random" => {
            let spec = RandomMdpSpec {
                states: params.states,
                actions: params.actions,
                density: params.density,
                seed: params.seed,
            };
            if spec.states < 2 || spec.actions < 1 || !(0.0..=1.0).contains(&spec.density) {
                return Err(CliError::Input("invalid random-model parameters".into()));
            }
            ModelFile::from_raw(
                &catalog::random_raw(&spec),
                Some(catalog::random_target(&spec)),
            )
        }
        other => {
            return Err(CliError::Input(format!(
                "unknown model kind `{other}`; expected loan, nonmono, gridworld, or random"
            )))
        }
    };
    let text = {
        let mut t = serde_json::to_string_pretty(&file).expect("model serializes");
        t.push('\n');
        t
    };
    write_output(out, &text)
}

pub struct QueryParams {
    pub state: Option<String>,
    pub path: Option<String>,
    pub target: Option<String>,
    pub class: StrategyClass,
    pub absolute: bool,
    pub epsilon: f64,
    pub node_cap: u64,
    pub wall_cap_secs: u64,
}

impl QueryParams {
    fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            epsilon: self.epsilon,
            node_cap: self.node_cap,
            wall_cap: std::time::Duration::from_secs(self.wall_cap_secs),
            ..SolveOptions::default()
        }
    }
}

pub fn cmd_importance(
    model_path: &str,
    params: &QueryParams,
    out: Option<&str>,
) -> Result<(), CliError> {
    let (file, mdp) = load_model(model_path)?;
    let target = resolve_target(&file, params.target.as_deref())?;
    let options = params.solve_options();
    let (subject_kind, subject, analysis) = match (&params.state, &params.path) {
        (Some(state), None) => {
            let analysis = if params.absolute {
                importance::absolute_importance_bounds(
                    &mdp,
                    state,
                    &target,
                    params.class,
                    params.epsilon,
                    &options,
                )?
            } else {
                importance::state_importance_bounds(
                    &mdp,
                    state,
                    &target,
                    params.class,
                    true,
                    params.epsilon,
                    &options,
                )?
            };
            ("state", state.clone(), analysis)
        }
        (None, Some(path_text)) => {
            if params.absolute {
                return Err(CliError::Input(
                    "absolute importance is defined for states, not paths".into(),
                ));
            }
            let path = PathSpec::parse(path_text).map_err(|e| CliError::Input(e.to_string()))?;
            let analysis = importance::path_importance_bounds(
                &mdp,
                &path,
                &target,
                params.class,
                params.epsilon,
                &options,
            )?;
            ("path", path_text.clone(), analysis)
        }
        _ => {
            return Err(CliError::Input(
                "pass exactly one of --state or --path".into(),
            ))
        }
    };
    if analysis.hit_budget() {
        return Err(CliError::Budget(format!(
            "search budget exhausted; best-known interval [{}, {}]",
            format_probability(analysis.interval.lower),
            format_probability(analysis.interval.upper),
        )));
    }
    let echo = QueryEcho {
        model: model_path.to_string(),
        subject_kind: subject_kind.to_string(),
        subject,
        target,
        class: class_name(params.class).into(),
        normalized: !params.absolute,
        epsilon: params.epsilon,
    };
    let report = AnalysisReport::build(&mdp, echo, &analysis)?;
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    write_output(out, &text)
}

pub struct BatchParams {
    pub target: Option<String>,
    pub class: StrategyClass,
    pub absolute: bool,
    pub epsilon: f64,
    pub jobs: usize,
    pub format: String,
    /// Timing columns are opt-in: without them the output is byte-identical
    /// regardless of the worker count.
    pub timings: bool,
}

pub fn cmd_batch(
    model_path: &str,
    params: &BatchParams,
    out: Option<&str>,
) -> Result<(), CliError> {
    let (file, mdp) = load_model(model_path)?;
    let target = resolve_target(&file, params.target.as_deref())?;
    let options = SolveOptions {
        epsilon: params.epsilon,
        ..SolveOptions::default()
    };
    let rows = mdpattr::par::with_jobs(params.jobs, || {
        importance::batch_state_bounds(
            &mdp,
            &target,
            params.class,
            !params.absolute,
            params.epsilon,
            &options,
        )
    })?;
    let text = match params.format.as_str() {
        "csv" => {
            let mut csv = String::from(if params.timings {
                "state,lower,upper,status,seconds\n"
            } else {
                "state,lower,upper,status\n"
            });
            for row in &rows {
                let (lower, upper, status) = match &row.result {
                    Ok(a) => (
                        format_probability(a.interval.lower),
                        format_probability(a.interval.upper),
                        if a.hit_budget() {
                            "budget".to_string()
                        } else {
                            "optimal".into()
                        },
                    ),
                    Err(e) => (String::new(), String::new(), e.to_string()),
                };
                let _ = write!(
                    csv,
                    "{},{},{},{}",
                    csv_field(&row.state),
                    lower,
                    upper,
                    csv_field(&status)
                );
                if params.timings {
                    let _ = write!(csv, ",{:.6}", row.wall_time.as_secs_f64());
                }
                csv.push('\n');
            }
            csv
        }
        "json" => {
            #[derive(serde::Serialize)]
            struct JsonRow {
                state: String,
                #[serde(skip_serializing_if = "Option::is_none")]
                lower: Option<f64>,
                #[serde(skip_serializing_if = "Option::is_none")]
                upper: Option<f64>,
                status: String,
                #[serde(skip_serializing_if = "Option::is_none")]
                seconds: Option<f64>,
            }
            let rows: Vec<JsonRow> = rows
                .iter()
                .map(|row| {
                    let seconds = params.timings.then_some(row.wall_time.as_secs_f64());
                    match &row.result {
                        Ok(a) => JsonRow {
                            state: row.state.clone(),
                            lower: Some(a.interval.lower),
                            upper: Some(a.interval.upper),
                            status: if a.hit_budget() {
                                "budget".into()
                            } else {
                                "optimal".into()
                            },
                            seconds,
                        },
                        Err(e) => JsonRow {
                            state: row.state.clone(),
                            lower: None,
                            upper: None,
                            status: e.to_string(),
                            seconds,
                        },
                    }
                })
                .collect();
            let mut t = serde_json::to_string_pretty(&rows).expect("rows serialize");
            t.push('\n');
            t
        }
        other => return Err(CliError::Input(format!("unknown format `{other}`"))),
    };
    write_output(out, &text)
}

pub struct ExportParams {
    pub encoding: String,
    pub state: String,
    pub target: Option<String>,
    pub sense: String,
    pub p_star: Option<String>,
    pub hierarchical: bool,
    pub epsilon: f64,
    pub big_m: f64,
}

pub fn cmd_export(
    model_path: &str,
    params: &ExportParams,
    out_prefix: &str,
) -> Result<(), CliError> {
    let (file, mdp) = load_model(model_path)?;
    let target = resolve_target(&file, params.target.as_deref())?;
    let t = mdp
        .state_index(&target)
        .map_err(|e| CliError::Input(e.to_string()))?;
    let product = memory_product(&mdp, &params.state).map_err(|e| match e {
        PreprocessError::PivotIsInitial => CliError::Input(format!(
            "`{}` is the initial state; its importance is 1 by definition and needs no encoding",
            params.state
        )),
        other => CliError::Input(other.to_string()),
    })?;
    encodings::feasibility_precheck(&product, t).map_err(|_| {
        CliError::Undefined(format!("importance undefined: `{target}` is unreachable"))
    })?;
    let sense = match params.sense.as_str() {
        "min" => OptSense::Minimize,
        "max" => OptSense::Maximize,
        other => return Err(CliError::Input(format!("unknown sense `{other}`"))),
    };
    let cfg = EncodingConfig {
        epsilon: params.epsilon,
        big_m: params.big_m,
        ..EncodingConfig::default()
    };
    let p_star = match params.p_star.as_deref() {
        None => None,
        Some("auto") => Some(mdpattr::reach::max_reach(&mdp, t).0),
        Some(text) => Some(text.parse::<f64>().map_err(|_| {
            CliError::Input(format!("--pstar expects `auto` or a number, got `{text}`"))
        })?),
    };
    let mut built =
        match params.encoding.as_str() {
            "qp" => {
                let mut built = encodings::build_qp(&product, t, sense, &cfg)
                    .map_err(|e| CliError::Input(e.to_string()))?;
                match p_star {
                    Some(p) => {
                        encodings::pin_denominator(&mut built.model, p)
                            .map_err(|e| CliError::Input(e.to_string()))?;
                        built.meta.p_star = Some(p);
                    }
                    None => return Err(CliError::Input(
                        "the qp encoding has a fractional objective, which the LP format cannot \
                         express; pass --pstar auto (or a value) to pin the denominator, or \
                         export qpstar/lpstar instead"
                            .into(),
                    )),
                }
                built
            }
            "qpstar" => {
                let p = p_star.unwrap_or_else(|| mdpattr::reach::max_reach(&mdp, t).0);
                encodings::build_qp_star(&product, t, p, sense, params.hierarchical, &cfg)
                    .map_err(|e| CliError::Input(e.to_string()))?
            }
            "lpstar" => {
                let p = p_star.unwrap_or_else(|| mdpattr::reach::max_reach(&mdp, t).0);
                encodings::build_lp_star(&product, t, p, sense, &cfg)
                    .map_err(|e| CliError::Input(e.to_string()))?
            }
            other => {
                return Err(CliError::Input(format!(
                    "unknown encoding `{other}`; expected qp, qpstar, or lpstar"
                )))
            }
        };
    built.model.name = format!("{}_{}_{}", built.meta.encoding, params.state, target);
    let lp_text = serialize_lp(&built.model).map_err(|e| CliError::Input(e.to_string()))?;
    let lp_path = format!("{out_prefix}.lp");
    let meta_path = format!("{out_prefix}.meta.json");
    std::fs::write(&lp_path, lp_text)
        .map_err(|e| CliError::Input(format!("cannot write `{lp_path}`: {e}")))?;
    let mut meta_text = serde_json::to_string_pretty(&built.meta).expect("meta serializes");
    meta_text.push('\n');
    std::fs::write(&meta_path, meta_text)
        .map_err(|e| CliError::Input(format!("cannot write `{meta_path}`: {e}")))?;
    println!("wrote {lp_path} and {meta_path}");
    Ok(())
}

pub fn cmd_explain(
    model_path: &str,
    target: Option<&str>,
    high: f64,
    low: f64,
    epsilon: f64,
) -> Result<String, CliError> {
    let (file, mdp) = load_model(model_path)?;
    let target = resolve_target(&file, target)?;
    let options = SolveOptions {
        epsilon,
        ..SolveOptions::default()
    };
    let rows =
        importance::batch_state_bounds(&mdp, &target, StrategyClass::All, true, epsilon, &options)?;
    let initial_name = mdp.state_name(mdp.initial()).to_string();
    let mut indispensable = Vec::new();
    let mut detrimental = Vec::new();
    for row in &rows {
        if row.state == initial_name || row.state == target {
            continue;
        }
        if let Ok(a) = &row.result {
            if a.interval.lower >= high {
                indispensable.push(row.state.clone());
            }
            if a.interval.upper <= low {
                detrimental.push(row.state.clone());
            }
        }
    }
    let mut text = String::new();
    let _ = writeln!(text, "States indispensable for reaching {target} include:");
    let _ = writeln!(
        text,
        " {}",
        if indispensable.is_empty() {
            "(none)".into()
        } else {
            indispensable.join(", ")
        }
    );
    let _ = writeln!(text, "States detrimental for reaching {target} include:");
    let _ = writeln!(
        text,
        " {}",
        if detrimental.is_empty() {
            "(none)".into()
        } else {
            detrimental.join(", ")
        }
    );
    let _ = writeln!(
        text,
        "({initial_name} and {target} are always indispensable by definition and are omitted.)"
    );
    Ok(text)
}

pub struct HeatmapParams {
    pub target: Option<String>,
    pub epsilon: f64,
    pub grid: Option<(usize, usize)>,
    pub image: Option<String>,
}

pub fn cmd_heatmap(
    model_path: &str,
    params: &HeatmapParams,
    out_csv: &str,
) -> Result<(), CliError> {
    let (file, mdp) = load_model(model_path)?;
    let target = resolve_target(&file, params.target.as_deref())?;
    let options = SolveOptions {
        epsilon: params.epsilon,
        ..SolveOptions::default()
    };
    let rows = importance::batch_state_bounds(
        &mdp,
        &target,
        StrategyClass::All,
        true,
        params.epsilon,
        &options,
    )?;
    let mut csv = String::from("state,lower,upper\n");
    for row in &rows {
        if let Ok(a) = &row.result {
            let _ = writeln!(
                csv,
                "{},{},{}",
                csv_field(&row.state),
                format_probability(a.interval.lower),
                format_probability(a.interval.upper)
            );
        }
    }
    std::fs::write(out_csv, csv)
        .map_err(|e| CliError::Input(format!("cannot write `{out_csv}`: {e}")))?;

    let Some(image_path) = &params.image else {
        println!("wrote {out_csv}");
        return Ok(());
    };
    // Cell coordinates come from `x=..`/`y=..` state labels.
    let mut coords: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut max_x = 0;
    let mut max_y = 0;
    for row in &rows {
        let Ok(a) = &row.result else { continue };
        let s = match mdp.state_index(&row.state) {
            Ok(s) => s,
            Err(_) => continue,
        };
        let labels = mdp.labels_of(s);
        let coord = |prefix: &str| {
            labels
                .iter()
                .find_map(|l| l.strip_prefix(prefix))
                .and_then(|v| v.parse::<usize>().ok())
        };
        if let (Some(x), Some(y)) = (coord("x="), coord("y=")) {
            max_x = max_x.max(x);
            max_y = max_y.max(y);
            let cell = coords.entry((x, y)).or_insert(0.0);
            *cell = cell.max(a.interval.lower);
        }
    }
    if coords.is_empty() {
        return Err(CliError::Input(
            "--image needs grid coordinates: states must carry x=/y= labels".into(),
        ));
    }
    let (width, height) = params.grid.unwrap_or((max_x + 1, max_y + 1));
    // Plain PPM, white for lower bound 1 down to red for 0.
    let mut ppm = format!("P3\n{width} {height}\n255\n");
    for y in 0..height {
        for x in 0..width {
            let value = coords.get(&(x, y)).copied().unwrap_or(0.0);
            let channel = (value.clamp(0.0, 1.0) * 255.0).round() as u8;
            let _ = write!(ppm, "255 {channel} {channel} ");
        }
        ppm.push('\n');
    }
    std::fs::write(image_path, ppm)
        .map_err(|e| CliError::Input(format!("cannot write `{image_path}`: {e}")))?;
    println!("wrote {out_csv} and {image_path}");
    Ok(())
}

pub fn cmd_crosscheck(
    model_path: &str,
    meta_path: &str,
    solution_path: Option<&str>,
    epsilon: f64,
) -> Result<(), CliError> {
    let (_, mdp) = load_model(model_path)?;
    let meta_text = std::fs::read_to_string(meta_path)
        .map_err(|e| CliError::Input(format!("cannot read `{meta_path}`: {e}")))?;
    let meta: encodings::ModelMeta = serde_json::from_str(&meta_text)
        .map_err(|e| CliError::Input(format!("invalid metadata `{meta_path}`: {e}")))?;
    let solution_path = match solution_path {
        Some(p) => p.to_string(),
        None => {
            // Fall back to <dir>/<prefix>.sol under the solution directory.
            let dir = std::env::var("MDPATTR_SOLVER_SOLUTION_DIR").map_err(|_| {
                CliError::Input("pass --solution or set MDPATTR_SOLVER_SOLUTION_DIR".into())
            })?;
            let stem = std::path::Path::new(meta_path)
                .file_name()
                .and_then(|f| f.to_str())
                .map(|f| f.trim_end_matches(".meta.json"))
                .unwrap_or("solution");
            format!("{dir}/{stem}.sol")
        }
    };
    let solution_text = std::fs::read_to_string(&solution_path)
        .map_err(|e| CliError::Input(format!("cannot read `{solution_path}`: {e}")))?;
    let solution =
        encodings::parse_solution(&solution_text).map_err(|e| CliError::Input(e.to_string()))?;
    let product = memory_product(&mdp, &meta.pivot).map_err(|e| CliError::Input(e.to_string()))?;
    let options = SolveOptions {
        epsilon,
        ..SolveOptions::default()
    };
    let target = meta.target.clone();
    let report = encodings::cross_check_external(&product, &target, &meta, &solution, &options)
        .map_err(|e| CliError::Input(e.to_string()))?;
    #[derive(serde::Serialize)]
    struct CrossCheckOut {
        external_objective: f64,
        exact_recompute: f64,
        solver_optimum: Option<f64>,
        recompute_gap: f64,
        optimum_gap: Option<f64>,
        agreement_bound: f64,
        flagged: bool,
    }
    let out = CrossCheckOut {
        external_objective: report.external_objective,
        exact_recompute: report.exact_recompute,
        solver_optimum: report.solver_optimum,
        recompute_gap: report.recompute_gap,
        optimum_gap: report.optimum_gap,
        agreement_bound: encodings::AGREEMENT_BOUND,
        flagged: report.flagged,
    };
    let mut text = serde_json::to_string_pretty(&out).expect("report serializes");
    text.push('\n');
    print!("{text}");
    Ok(())
}
