use std::io::Write;
use std::net::{SocketAddr, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;
use wipsim::harness::{
    dof_sweep, run_scenario, run_scenario_with_policy, write_sweep_csv, write_trajectory, DofMask,
    Policy, Scenario,
};
use wipsim::leg::{reduce_to_pendulum, JointConfiguration};
use wipsim::lqr::{self, LqrWeights};
use wipsim::ppo::{self, EnvConfig, Hyperparameters, PolicyNet};
use wipsim_teleop::TeleopConfig;

use crate::{
    resolve, DesignArgs, EvalArgs, Failure, SimulateArgs, SweepArgs, TeleopArgs, TrainArgs,
};

type CmdResult = Result<(), Failure>;

fn runtime(context: impl std::fmt::Display) -> impl FnOnce(std::io::Error) -> Failure {
    move |e| Failure::Runtime(format!("{context}: {e}"))
}

fn create_dir(dir: &Path) -> CmdResult {
    std::fs::create_dir_all(dir).map_err(runtime(dir.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CmdResult {
    std::fs::write(path, contents).map_err(runtime(path.display()))
}

fn pretty(value: &impl Serialize) -> String {
    serde_json::to_string_pretty(value).expect("report serializes")
}

/// Prints a report; a closed stdout (e.g. piped to `head`) is not an error.
fn emit(text: &str) -> CmdResult {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(runtime("stdout")(e)),
        _ => Ok(()),
    }
}

fn load_policy(path: &Path) -> Result<Arc<Policy>, Failure> {
    Ok(Arc::new(Policy::load(path)?))
}

pub fn design(args: DesignArgs) -> CmdResult {
    let robot = resolve::robot(&args.links)?;
    let pose = JointConfiguration::preset(&args.pose).ok_or_else(|| {
        Failure::Validation(format!(
            "unknown pose preset '{}' (known: {})",
            args.pose,
            JointConfiguration::PRESETS.join(", ")
        ))
    })?;
    let mut weights = LqrWeights::default();
    if let Some(q) = args.q {
        weights = LqrWeights::diagonal([q[0], q[1], q[2], q[3]], weights.r);
    }
    if let Some(r) = args.r {
        weights.r = r;
    }
    let params = reduce_to_pendulum(&pose, &robot.links, &robot.limits)?;
    let d = lqr::design(&params, &weights, args.dt)?;
    let report = json!({
        "pose": args.pose,
        "dt": d.dt,
        "pendulum": d.params,
        "k": d.k.iter().collect::<Vec<_>>(),
        "p": d.p.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
        "closed_loop_moduli": d.closed_loop_moduli,
        "spectral_radius": d.spectral_radius(),
        "residual": d.residual,
        "iterations": d.iterations,
    });
    let text = pretty(&report);
    if let Some(out) = args.out {
        write_file(&out, &text)?;
    }
    emit(&text)?;
    Ok(())
}

pub fn simulate(args: SimulateArgs) -> CmdResult {
    let mut scenario = resolve::scenario(&args.scenario)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    if let Some(d) = args.duration {
        scenario.duration = d;
    }
    if let Some(dt) = args.dt {
        scenario.dt = dt;
    }
    if let Some(links) = &args.links {
        let robot = resolve::robot(links)?;
        scenario.links = robot.links;
        scenario.limits = robot.limits;
    }
    scenario.truth_feed |= args.truth_feed;
    if let Some(p) = &args.policy {
        scenario.controller.policy = Some(p.clone());
    }
    scenario.check()?;
    let output = match (&args.policy, scenario.uses_policy()) {
        (Some(p), true) => run_scenario_with_policy(&scenario, load_policy(p)?)?,
        _ => run_scenario(&scenario)?,
    };

    create_dir(&args.out)?;
    let mut csv = Vec::new();
    write_trajectory(&mut csv, &output.rows)?;
    write_file(&args.out.join("trajectory.csv"), csv)?;
    let metrics = pretty(&output.metrics);
    write_file(&args.out.join("metrics.json"), &metrics)?;
    write_file(&args.out.join("config.json"), pretty(&scenario))?;
    if output.metrics.fell {
        log::warn!("robot fell during '{}'", scenario.name);
    }
    emit(&metrics)?;
    Ok(())
}

/// Optional tables of a training or evaluation config file.
#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
struct TrainConfig {
    env: EnvConfig,
    hyper: Hyperparameters,
}

fn read_train_config(path: Option<&PathBuf>) -> Result<TrainConfig, Failure> {
    let Some(path) = path else {
        return Ok(TrainConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))
}

pub fn train(args: TrainArgs) -> CmdResult {
    let mut config = read_train_config(args.config.as_ref())?;
    if let Some(steps) = args.steps {
        config.hyper.total_steps = steps;
    }
    if let Some(lr) = args.learning_rate {
        config.hyper.learning_rate = lr;
    }
    config.env.check()?;
    config.hyper.check()?;
    if args.eval_episodes == 0 {
        return Err(Failure::Validation(
            "--eval-episodes must be positive".into(),
        ));
    }

    let eval_seed = args.seed.wrapping_add(1);
    let initial = ppo::initial_policy(&config.hyper, args.seed);
    let baseline =
        ppo::evaluate_policy(&initial, &config.env, args.eval_episodes, eval_seed, false)?;
    log::info!("untrained policy return {baseline:.3}");
    let run = ppo::train(&config.env, &config.hyper, args.seed)?;
    let trained = ppo::evaluate_policy(
        &run.policy,
        &config.env,
        args.eval_episodes,
        eval_seed,
        false,
    )?;

    create_dir(&args.out)?;
    write_file(
        &args.out.join("policy.json"),
        run.policy.to_json(&config.env.meta())?,
    )?;
    let mut curve = Vec::new();
    ppo::write_curve(&mut curve, &run.curve)?;
    write_file(&args.out.join("curve.csv"), curve)?;
    write_file(
        &args.out.join("config.json"),
        pretty(&json!({ "seed": args.seed, "env": config.env, "hyper": config.hyper })),
    )?;
    emit(&pretty(&json!({
        "seed": args.seed,
        "steps": config.hyper.total_steps,
        "iterations": run.curve.len(),
        "eval_episodes": args.eval_episodes,
        "baseline_return": baseline,
        "trained_return": trained,
        "policy": args.out.join("policy.json"),
    })))?;
    Ok(())
}

pub fn eval(args: EvalArgs) -> CmdResult {
    let config = read_train_config(args.config.as_ref())?;
    config.env.check()?;
    if args.episodes == 0 {
        return Err(Failure::Validation("--episodes must be positive".into()));
    }
    let (net, meta): (PolicyNet, _) = PolicyNet::load(&args.policy)?;
    let mut env = config.env;
    env.control_period = meta.control_period;
    env.torque_scale = meta.torque_scale;
    env.check()?;
    let mean = ppo::evaluate_policy(&net, &env, args.episodes, args.seed, args.stochastic)?;
    emit(&pretty(&json!({
        "policy": args.policy,
        "episodes": args.episodes,
        "seed": args.seed,
        "stochastic": args.stochastic,
        "mean_return": mean,
    })))?;
    Ok(())
}

pub fn sweep(args: SweepArgs) -> CmdResult {
    let base: Scenario = resolve::scenario(&args.scenario)?;
    let masks = args
        .masks
        .split(';')
        .map(str::trim)
        .filter(|m| !m.is_empty())
        .map(|m| {
            m.parse::<DofMask>()
                .map_err(|e| Failure::Validation(format!("mask '{m}': {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if masks.is_empty() {
        return Err(Failure::Validation("--masks lists no masks".into()));
    }
    for m in &masks {
        m.check(&base.limits)?;
    }
    let policy = args.policy.as_deref().map(load_policy).transpose()?;
    let rows = dof_sweep(&base, &masks, args.seeds, policy)?;

    create_dir(&args.out)?;
    let mut csv = Vec::new();
    write_sweep_csv(&mut csv, &rows)?;
    write_file(&args.out.join("sweep.csv"), csv)?;
    let text = pretty(&rows);
    write_file(&args.out.join("sweep.json"), &text)?;
    emit(&text)?;
    Ok(())
}

pub fn teleop(args: TeleopArgs) -> CmdResult {
    let scenario = resolve::scenario(&args.scenario)?;
    let policy = args.policy.as_deref().map(load_policy).transpose()?;
    let addr: SocketAddr = (args.host.as_str(), args.port)
        .to_socket_addrs()
        .ok()
        .and_then(|mut a| a.next())
        .ok_or_else(|| {
            Failure::Validation(format!("cannot resolve {}:{}", args.host, args.port))
        })?;
    let rt = tokio::runtime::Runtime::new().map_err(runtime("tokio runtime"))?;
    rt.block_on(async move {
        let handle = wipsim_teleop::serve(TeleopConfig {
            addr,
            scenario,
            policy,
        })
        .await
        .map_err(|e| match e {
            wipsim_teleop::TeleopError::Sim(e) => Failure::from(e),
            other => Failure::Runtime(other.to_string()),
        })?;
        eprintln!("listening on ws://{} (Ctrl-C to stop)", handle.local_addr);
        tokio::signal::ctrl_c()
            .await
            .map_err(runtime("signal handler"))?;
        handle.shutdown().await;
        Ok(())
    })
}
