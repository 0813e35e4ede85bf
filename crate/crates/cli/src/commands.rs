//! One function per subcommand. Each returns the text for standard output
//! and the exit status.


use serde::Serialize;

use charblow::characteristics::{self, Lemma3Report};
use charblow::coefficients::{self, ModelBounds};
use charblow::evolve::{self, RunOptions, Trajectory};
use charblow::floats::csv_cell;
use charblow::initialdata::{BumpProfile, InitialDataSpec};
use charblow::lifespan::{self, BlowupEstimate, ConstantChain, RiccatiLifespan};
use charblow::model::{self, AssumptionReport};
use charblow::spectral::{self, FrameDump};
use charblow::{Error, Result, SystemModel};

use crate::config::{Command, RunConfig};
use crate::output::{csv_string, json_string, write_atomic, write_csv, write_json};
use crate::plot::{self, Axes, Series};

pub struct Outcome {
    pub stdout: String,
    pub exit: i32,
}

impl Outcome {
    fn ok(stdout: String) -> Self {
        Self { stdout, exit: 0 }
    }
}

pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    let model = model::resolve_model(&cfg.model, &cfg.params)?;
    match cfg.command {
        Command::Verify => verify(cfg, &model),
        Command::Spectral => spectral_cmd(cfg, &model),
        Command::Constants => constants(cfg, &model),
        Command::Data => data(cfg, &model),
        Command::Simulate => simulate(cfg, &model),
        Command::Lemma3 => lemma3(cfg, &model),
        Command::Lifespan => scan(cfg, &model),
    }
}

fn emit<T: Serialize>(cfg: &RunConfig, result: &T) -> Result<String> {
    if let Some(p) = &cfg.out {
        write_json(p, cfg, result)?;
    }
    json_string(cfg, result)
}

#[derive(Serialize)]
struct VerifyResult<'a> {
    model: &'a str,
    all_ok: bool,
    report: AssumptionReport,
}

fn verify(cfg: &RunConfig, model: &SystemModel) -> Result<Outcome> {
    let report = model::verify_assumptions(model, cfg.tol);
    let all_ok = report.all_ok();
    let text = emit(
        cfg,
        &VerifyResult {
            model: model.name(),
            all_ok,
            report,
        },
    )?;
    Ok(Outcome {
        stdout: text,
        exit: if all_ok { 0 } else { 2 },
    })
}

#[derive(Serialize)]
struct SpectralResult {
    u: Vec<f64>,
    frame: FrameDump,
    c: Vec<Vec<Vec<f64>>>,
    gamma: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "Gamma")]
    big_gamma: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "G")]
    g: Vec<Vec<f64>>,
}

fn spectral_cmd(cfg: &RunConfig, model: &SystemModel) -> Result<Outcome> {
    let u = if cfg.u.is_empty() { vec![0.0; model.dim()] } else { cfg.u.clone() };
    if u.len() != model.dim() {
        return Err(Error::Config(format!(
            "`u` has {} entries but the model has {} fields",
            u.len(),
            model.dim()
        )));
    }
    let frame = spectral::eigenframe(model, &u)?;
    let derivs = spectral::frame_derivatives(model, &u, model.fd_step())?;
    let set = coefficients::coefficient_set_from(model, &frame, &derivs)?;
    let g = (0..set.g.nrows())
        .map(|i| set.g.row(i).iter().copied().collect())
        .collect();
    let res = SpectralResult {
        u,
        frame: FrameDump::new(&frame, &derivs),
        c: set.c.to_nested(),
        gamma: set.gamma.to_nested(),
        big_gamma: set.big_gamma.to_nested(),
        g,
    };
    Ok(Outcome::ok(emit(cfg, &res)?))
}

fn chain_for(cfg: &RunConfig, model: &SystemModel) -> Result<(ModelBounds, BumpProfile, ConstantChain)> {
    let bounds = coefficients::model_bounds_seeded(model, cfg.samples, cfg.seed)?;
    let bump = BumpProfile::new(cfg.amplitude)?;
    let chain = lifespan::constant_chain(&bounds, &bump)?;
    Ok((bounds, bump, chain))
}

#[derive(Serialize)]
struct EpsBound {
    eps: f64,
    t_eps: f64,
}

#[derive(Serialize)]
struct ConstantsResult {
    bounds: ModelBounds,
    chain: ConstantChain,
    t_eps: Vec<EpsBound>,
    riccati: Vec<RiccatiLifespan>,
}

fn constants(cfg: &RunConfig, model: &SystemModel) -> Result<Outcome> {
    let (bounds, _bump, chain) = chain_for(cfg, model)?;
    let t_eps = cfg.eps.iter().map(|&e| EpsBound { eps: e, t_eps: chain.t_eps(e) }).collect();
    let riccati = cfg
        .kappa
        .iter()
        .flat_map(|&k| cfg.eps.iter().map(move |&e| (e, k)))
        .map(|(e, k)| lifespan::riccati_lifespan(chain.riccati(e, k)))
        .collect::<Result<_>>()?;
    let res = ConstantsResult {
        bounds,
        chain,
        t_eps,
        riccati,
    };
    Ok(Outcome::ok(emit(cfg, &res)?))
}

fn data_spec(cfg: &RunConfig, model: &SystemModel) -> Result<InitialDataSpec> {
    let bump = BumpProfile::new(cfg.amplitude)?;
    InitialDataSpec::for_model(model, cfg.single_eps()?, Some(cfg.single_kappa()?), cfg.rescaled, bump)
}

#[derive(Serialize)]
struct FileSummary {
    files: Vec<String>,
}

fn data(cfg: &RunConfig, model: &SystemModel) -> Result<Outcome> {
    let spec = data_spec(cfg, model)?;
    let n = cfg.finest_cells()?;
    let grid = cfg.scan_config().grid(n, spec.length_scale());
    let dx = grid.dx();
    let mut header = vec!["x".to_string(), "alpha".to_string()];
    header.extend((0..model.dim()).map(|c| format!("u{c}")));
    header.push("w_p".into());
    let mut rows = Vec::with_capacity(n);
    for j in 0..n {
        let x = grid.x_min + (j as f64 + 0.5) * dx;
        let u = spec.evaluate(x)?;
        let mut row = vec![csv_cell(x), csv_cell(spec.profile.evaluate(x / spec.length_scale()))];
        row.extend(u.iter().map(|v| csv_cell(*v)));
        row.push(csv_cell(spec.initial_wp(x)));
        rows.push(row);
    }
    let out = cfg.out_or("data.csv");
    write_csv(&out, cfg, &header, &rows)?;
    Ok(Outcome::ok(json_string(cfg, &FileSummary { files: vec![out.display().to_string()] })?))
}

/// Runs the finest grid of the config once.
fn single_run(cfg: &RunConfig, model: &SystemModel) -> Result<(InitialDataSpec, Trajectory)> {
    let spec = data_spec(cfg, model)?;
    let t_end = match cfg.t_end {
        Some(t) => t,
        None => {
            let zero = vec![0.0; model.dim()];
            let p = model.gnl_index();
            let g0 = coefficients::gamma_tensor(model, &zero)?.get(p, p, p);
            if !(g0 > 0.0) {
                return Err(Error::Config(
                    "cannot derive a default final time for a model without genuine nonlinearity; set t_end".into(),
                ));
            }
            let t_bar = 4.0 / (g0 * spec.profile.max_dalpha);
            let bound = if cfg.rescaled {
                t_bar * cfg.single_kappa()?
            } else {
                0.75 * t_bar / spec.epsilon
            };
            cfg.t_cap_factor * bound
        }
    };
    let mut opts = RunOptions::new(t_end, spec.source_scale());
    opts.snap_every = t_end / cfg.snapshots.max(1) as f64;
    let grid = cfg.scan_config().grid(cfg.finest_cells()?, spec.length_scale());
    let traj = evolve::simulate_with(model, &spec, &grid, &opts)?;
    Ok((spec, traj))
}

#[derive(Serialize)]
struct SimulateResult {
    model: String,
    status: evolve::RunStatus,
    stop_trigger: String,
    final_time: f64,
    steps: usize,
    support: [f64; 2],
    cone_speeds: [f64; 2],
    cone_violations: usize,
    estimate: BlowupEstimate,
    files: Vec<String>,
}

fn simulate(cfg: &RunConfig, model: &SystemModel) -> Result<Outcome> {
    let (spec, traj) = single_run(cfg, model)?;
    let est = lifespan::estimate_from_runs(&[&traj], &cfg.fit(), cfg.richardson_order)?;
    let dir = cfg.out_or("charblow-out");
    let mut files = Vec::new();

    let peak = &traj.tracers[traj.peak];
    let header: Vec<String> = ["t", "x_peak", "W", "inv_W", "max_gradient", "max_state"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = (0..traj.step_times.len())
        .map(|k| {
            vec![
                csv_cell(traj.step_times[k]),
                csv_cell(peak.xs[k]),
                csv_cell(peak.ws[k]),
                csv_cell(1.0 / peak.ws[k]),
                csv_cell(traj.max_gradient[k]),
                csv_cell(traj.max_state[k]),
            ]
        })
        .collect();
    let p = dir.join("peak.csv");
    write_csv(&p, cfg, &header, &rows)?;
    files.push(p.display().to_string());

    let mut header = vec!["t".to_string(), "x".to_string()];
    header.extend((0..traj.dim).map(|c| format!("u{c}")));
    let mut rows = Vec::new();
    for s in &traj.snapshots {
        for j in 0..s.len() {
            let mut row = vec![csv_cell(s.t), csv_cell(s.x(j))];
            row.extend(s.state(j).iter().map(|v| csv_cell(*v)));
            rows.push(row);
        }
    }
    let p = dir.join("snapshots.csv");
    write_csv(&p, cfg, &header, &rows)?;
    files.push(p.display().to_string());

    if cfg.plot {
        let w: Vec<(f64, f64)> = traj.step_times.iter().copied().zip(peak.ws.iter().copied()).collect();
        let inv: Vec<(f64, f64)> = w.iter().map(|&(t, v)| (t, 1.0 / v)).collect();
        let mut inv_series = vec![Series::line("1/W", inv)];
        if let Some(f) = est.levels.last().map(|l| &l.fit) {
            if let Some(ts) = f.t_star {
                inv_series.push(Series::line("tail fit", vec![(f.t_first, f.intercept + f.slope * f.t_first), (ts, 0.0)]));
            }
        }
        for (name, title, ylabel, series) in [
            ("W.svg", "W along the peak characteristic", "W", vec![Series::line("W", w)]),
            ("inverse_W.svg", "1/W and tail fit", "1/W", inv_series),
        ] {
            let axes = Axes {
                title: title.into(),
                x_label: "t".into(),
                y_label: ylabel.into(),
                log_x: false,
                log_y: false,
            };
            let p = dir.join(name);
            write_atomic(&p, plot::svg(&axes, &series).as_bytes())?;
            files.push(p.display().to_string());
        }
    }

    let cone_violations = evolve::support_bounds(&traj, cfg.cone_threshold * spec.epsilon)
        .iter()
        .filter(|b| b.violation)
        .count();
    let res = SimulateResult {
        model: traj.model.clone(),
        status: traj.status,
        stop_trigger: traj.stop_trigger.clone(),
        final_time: traj.final_time(),
        steps: traj.step_times.len(),
        support: traj.support,
        cone_speeds: traj.cone_speeds,
        cone_violations,
        estimate: est,
        files,
    };
    let p = dir.join("trajectory.json");
    write_json(&p, cfg, &res)?;
    Ok(Outcome::ok(json_string(cfg, &res)?))
}

#[derive(Serialize)]
struct Lemma3Result {
    report: Lemma3Report,
    files: Vec<String>,
}

fn lemma3(cfg: &RunConfig, model: &SystemModel) -> Result<Outcome> {
    let (spec, traj) = single_run(cfg, model)?;
    // Flags need the constant chain, which only exists for models passing
    // the assumption checks.
    let bounds = chain_for(cfg, model).ok().map(|(_, _, c)| c.lemma3_bounds(spec.epsilon));
    let report = characteristics::lemma3_quantities(model, &traj, bounds)?;
    let dir = cfg.out_or("charblow-out");
    let mut files = Vec::new();
    let header: Vec<String> = ["t", "J", "M", "S", "V_tilde", "W_p_out", "V", "a_p", "b_p"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let r = &report;
    let rows: Vec<Vec<String>> = (0..r.times.len())
        .map(|k| {
            [r.times[k], r.j[k], r.m[k], r.s[k], r.v_tilde[k], r.w_p_out[k], r.v[k], r.a_p[k], r.b_p[k]]
                .iter()
                .map(|v| csv_cell(*v))
                .collect()
        })
        .collect();
    let p = dir.join("lemma3.csv");
    write_csv(&p, cfg, &header, &rows)?;
    files.push(p.display().to_string());
    if cfg.plot {
        let series = |name: &str, v: &[f64]| Series::line(name, r.times.iter().copied().zip(v.iter().copied()).collect());
        let axes = Axes {
            title: "Running suprema".into(),
            x_label: "t".into(),
            y_label: "value".into(),
            log_x: false,
            log_y: true,
        };
        let svg = plot::svg(
            &axes,
            &[series("J", &r.j), series("M", &r.m), series("V", &r.v), series("V_tilde", &r.v_tilde)],
        );
        let p = dir.join("lemma3.svg");
        write_atomic(&p, svg.as_bytes())?;
        files.push(p.display().to_string());
    }
    let res = Lemma3Result { report, files };
    let p = dir.join("lemma3.json");
    write_json(&p, cfg, &res)?;
    Ok(Outcome::ok(json_string(cfg, &res)?))
}

#[derive(Serialize)]
struct ScanOutput<'a> {
    summary: &'a lifespan::ScanSummary,
    rows: &'a [lifespan::ScanRow],
    files: Vec<String>,
}

fn scan(cfg: &RunConfig, model: &SystemModel) -> Result<Outcome> {
    let (_, bump, chain) = chain_for(cfg, model)?;
    let res = lifespan::scaling_scan(model, &chain, &bump, &cfg.scan_config())?;
    let out = cfg.out_or("scan.csv");
    let mut files = Vec::new();
    let body = lifespan::scan_csv(&res.rows)?;
    let text = format!(
        "{}{}",
        csv_string(cfg, &[], &[])?.lines().next().map(|l| format!("{l}\n")).unwrap_or_default(),
        body
    );
    write_atomic(&out, text.as_bytes())?;
    files.push(out.display().to_string());
    if cfg.plot {
        let mut series = Vec::new();
        for &k in &cfg.kappa {
            let pts: Vec<(f64, f64)> = res
                .rows
                .iter()
                .filter(|r| r.kappa == k)
                .filter_map(|r| r.t_star.map(|t| (r.eps, t)))
                .collect();
            series.push(Series::dots(&format!("t_star, kappa = {k}"), pts));
        }
        let mut eps = cfg.eps.clone();
        eps.sort_by(f64::total_cmp);
        series.push(Series::line(
            "T_eps",
            eps.iter().map(|&e| (e, chain.t_eps(e))).collect(),
        ));
        let axes = Axes {
            title: "Lifespan against amplitude".into(),
            x_label: "eps".into(),
            y_label: "t".into(),
            log_x: true,
            log_y: true,
        };
        let p = out.with_extension("svg");
        write_atomic(&p, plot::svg(&axes, &series).as_bytes())?;
        files.push(p.display().to_string());
    }
    let json_path = out.with_extension("json");
    files.push(json_path.display().to_string());
    let payload = ScanOutput {
        summary: &res.summary,
        rows: &res.rows,
        files,
    };
    write_json(&json_path, cfg, &payload)?;
    Ok(Outcome::ok(json_string(cfg, &payload.summary)?))
}
