use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use madpl_core::acts::Role;
use madpl_core::episode::EpisodeConfig;
use madpl_core::eval::{evaluate, AgentSpec};
use madpl_core::policy::{pretrain, read_corpus, DialogPolicy, PretrainConfig};
use madpl_core::rules::{generate_corpus, CORPUS_FILE, DIALOGS_FILE};
use madpl_core::trainer::{
    random_policies, read_episodes_csv, train_with_progress, write_episodes_csv, write_metrics_csv, TrainConfig,
};
use madpl_core::world::{
    domain_count_weights, read_goals, sample_goal_set, write_goals, World, WorldConfig, DATABASE_FILE, ONTOLOGY_FILE,
};
use serde_json::json;

use crate::args::*;
use crate::error::{require, CliError, CliResult};
use crate::manifest::{git_describe, now_unix, RunManifest, MANIFEST_FILE};
use crate::report::{merge_curves, results_table};

pub const GOALS_FILE: &str = "goals.jsonl";
pub const SYSTEM_CKPT: &str = "system.json";
pub const USER_CKPT: &str = "user.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const EPISODES_FILE: &str = "episodes.csv";

const DEFAULT_ROOT: &str = "madpl-lab";

pub fn lab_root(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("MADPL_LAB_DIR").map(PathBuf::from)).unwrap_or_else(|| DEFAULT_ROOT.into())
}

fn abs(p: PathBuf) -> PathBuf {
    std::path::absolute(&p).unwrap_or(p)
}

fn or_default(p: &Option<PathBuf>, default: PathBuf) -> Option<PathBuf> {
    Some(abs(p.clone().unwrap_or(default)))
}

/// What a command produced, for its manifest.
struct StageRecord {
    config: serde_json::Value,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

pub fn execute(command: Command, root: &Path) -> CliResult<()> {
    if let Command::Rerun(args) = command {
        return rerun(args, root);
    }
    let command = resolve(command, root);
    let started = now_unix();
    let (out, record) = match &command {
        Command::GenWorld(a) => (a.out.clone(), gen_world(a)?),
        Command::GenCorpus(a) => (a.out.clone(), with_workers(a.workers, || gen_corpus(a))?),
        Command::Pretrain(a) => (a.out.clone(), pretrain_cmd(a)?),
        Command::Train(a) => (a.out.clone(), with_workers(a.workers, || train_cmd(a))?),
        Command::Evaluate(a) => (a.out.clone(), with_workers(a.workers, || evaluate_cmd(a))?),
        Command::Report(a) => (a.out.clone(), report_cmd(a)?),
        Command::Rerun(_) => unreachable!("handled above"),
    };
    let out = out.expect("resolved");
    let manifest = RunManifest {
        command: command.name().into(),
        invocation: command,
        config: record.config,
        seeds: record.seeds,
        git_describe: git_describe(),
        started_unix: started,
        finished_unix: now_unix(),
        inputs: record.inputs,
        outputs: record.outputs.iter().map(|f| out.join(f)).collect(),
    };
    manifest.write(&out)
}

/// Fills every defaulted path from the artifact root.
fn resolve(command: Command, root: &Path) -> Command {
    let world = || root.join("world");
    match command {
        Command::GenWorld(mut a) => {
            a.config = a.config.map(abs);
            a.out = or_default(&a.out, world());
            Command::GenWorld(a)
        }
        Command::GenCorpus(mut a) => {
            a.world = or_default(&a.world, world());
            a.out = or_default(&a.out, root.join("corpus"));
            Command::GenCorpus(a)
        }
        Command::Pretrain(mut a) => {
            a.world = or_default(&a.world, world());
            a.corpus = or_default(&a.corpus, root.join("corpus"));
            a.out = or_default(&a.out, root.join("pretrain"));
            Command::Pretrain(a)
        }
        Command::Train(mut a) => {
            a.world = or_default(&a.world, world());
            a.init = a.init.map(abs);
            a.config = a.config.map(abs);
            let name = format!("{}-seed{}", a.algo, a.seed.unwrap_or(0));
            a.out = or_default(&a.out, root.join("runs").join(name));
            Command::Train(a)
        }
        Command::Evaluate(mut a) => {
            a.world = or_default(&a.world, world());
            a.goals = or_default(&a.goals, a.world.clone().expect("set above").join(GOALS_FILE));
            a.policies = or_default(&a.policies, root.join("runs").join("madpl-seed0"));
            a.sl = or_default(&a.sl, root.join("pretrain"));
            let tag: String =
                a.pair.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect();
            a.out = or_default(&a.out, root.join("eval").join(tag));
            Command::Evaluate(a)
        }
        Command::Report(mut a) => {
            a.runs = a.runs.into_iter().map(abs).collect();
            a.out = or_default(&a.out, root.join("report"));
            Command::Report(a)
        }
        Command::Rerun(a) => Command::Rerun(a),
    }
}

fn rerun(args: RerunArgs, root: &Path) -> CliResult<()> {
    let manifest = RunManifest::read(&args.manifest)?;
    let mut command = manifest.invocation;
    let out = args.out.map(abs);
    match &mut command {
        Command::GenWorld(a) => a.out = out.or(a.out.take()),
        Command::GenCorpus(a) => {
            a.out = out.or(a.out.take());
            a.workers = 1;
        }
        Command::Pretrain(a) => a.out = out.or(a.out.take()),
        Command::Train(a) => {
            a.out = out.or(a.out.take());
            a.workers = 1;
        }
        Command::Evaluate(a) => {
            a.out = out.or(a.out.take());
            a.workers = 1;
        }
        Command::Report(a) => a.out = out.or(a.out.take()),
        Command::Rerun(_) => return Err(CliError::config("a manifest cannot record a rerun")),
    }
    execute(command, root)
}

fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> CliResult<T> + Send) -> CliResult<T> {
    if workers == 0 {
        return Err(CliError::config("--workers must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError { code: crate::error::EXIT_FAILURE, message: e.to_string() })?;
    pool.install(f)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn load_world(dir: &Path) -> CliResult<World> {
    require(&dir.join(ONTOLOGY_FILE))?;
    require(&dir.join(DATABASE_FILE))?;
    Ok(World::load(dir)?)
}

fn load_policy(dir: &Path, role: Role) -> CliResult<DialogPolicy> {
    let file = dir.join(match role {
        Role::System => SYSTEM_CKPT,
        Role::User => USER_CKPT,
    });
    require(&file)?;
    Ok(DialogPolicy::load(&file, role)?)
}

fn seeds(pairs: &[(&str, u64)]) -> BTreeMap<String, u64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn gen_world(a: &GenWorldArgs) -> CliResult<StageRecord> {
    let out = a.out.as_deref().expect("resolved");
    let mut config = match &a.config {
        Some(path) => {
            require(path)?;
            WorldConfig::parse(&std::fs::read_to_string(path)?)?
        }
        None => WorldConfig::default_world(),
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let world = World::from_config(&config)?;
    let goal_seed = a.goal_seed.unwrap_or(config.seed.wrapping_add(1));
    let weights = domain_count_weights(&world.ontology);
    let goals = sample_goal_set(&world.ontology, &world.db, goal_seed, a.eval_goals, &weights)?;
    create_dir(out)?;
    std::fs::write(out.join(ONTOLOGY_FILE), config.to_toml())?;
    std::fs::write(out.join(DATABASE_FILE), world.db.to_json())?;
    write_goals(&out.join(GOALS_FILE), &goals)?;
    eprintln!(
        "world: {} domains, {} system acts, {} user acts, {} evaluation goals",
        world.ontology.num_domains(),
        world.system_space.dim(),
        world.user_space.dim(),
        goals.len()
    );
    Ok(StageRecord {
        config: json!({ "world": config, "eval_goals": a.eval_goals }),
        seeds: seeds(&[("world", config.seed), ("goals", goal_seed)]),
        inputs: a.config.iter().cloned().collect(),
        outputs: vec![ONTOLOGY_FILE.into(), DATABASE_FILE.into(), GOALS_FILE.into()],
    })
}

fn gen_corpus(a: &GenCorpusArgs) -> CliResult<StageRecord> {
    let world_dir = a.world.as_deref().expect("resolved");
    let out = a.out.as_deref().expect("resolved");
    let world = load_world(world_dir)?;
    let corpus = generate_corpus(&world, a.dialogs, a.seed)?;
    create_dir(out)?;
    corpus.write(out)?;
    eprintln!(
        "corpus: {} dialogs, {} records, rule success {:.3}",
        corpus.dialogs.len(),
        corpus.records.len(),
        corpus.success_rate()
    );
    Ok(StageRecord {
        config: json!({ "dialogs": a.dialogs }),
        seeds: seeds(&[("corpus", a.seed)]),
        inputs: vec![world_dir.to_path_buf()],
        outputs: vec![CORPUS_FILE.into(), DIALOGS_FILE.into()],
    })
}

fn pretrain_cmd(a: &PretrainArgs) -> CliResult<StageRecord> {
    let world_dir = a.world.as_deref().expect("resolved");
    let corpus_dir = a.corpus.as_deref().expect("resolved");
    let out = a.out.as_deref().expect("resolved");
    let world = load_world(world_dir)?;
    let corpus_file = corpus_dir.join(CORPUS_FILE);
    require(&corpus_file)?;
    let records = read_corpus(File::open(&corpus_file)?).map_err(|e| match e {
        madpl_core::Error::Csv(c) => CliError::malformed(format!("{}: {c}", corpus_file.display())),
        other => other.into(),
    })?;
    let (mut system, mut user) = random_policies(&world, a.seed);
    create_dir(out)?;
    let mut log = csv::Writer::from_path(out.join("pretrain.csv")).map_err(madpl_core::Error::from)?;
    log.write_record(["role", "epoch", "loss", "heldout_f1"]).map_err(madpl_core::Error::from)?;
    let mut configs = Vec::new();
    for (policy, role, beta) in [(&mut system, Role::System, a.beta_sys), (&mut user, Role::User, a.beta_user)] {
        let cfg = PretrainConfig {
            epochs: a.epochs,
            batch_size: a.batch_size,
            lr: a.lr,
            beta,
            seed: a.seed,
            ..PretrainConfig::default()
        };
        let report = pretrain(policy, &records, &cfg)?;
        for (e, (loss, f1)) in report.epoch_loss.iter().zip(&report.heldout_f1).enumerate() {
            log.write_record([role.as_str().to_string(), (e + 1).to_string(), loss.to_string(), f1.to_string()])
                .map_err(madpl_core::Error::from)?;
        }
        eprintln!("pretrain {}: held-out micro-F1 {:.4}", role.as_str(), report.final_f1());
        configs.push(cfg);
    }
    log.flush()?;
    system.save(&out.join(SYSTEM_CKPT))?;
    user.save(&out.join(USER_CKPT))?;
    Ok(StageRecord {
        config: json!({ "system": configs[0], "user": configs[1] }),
        seeds: seeds(&[("pretrain", a.seed)]),
        inputs: vec![world_dir.to_path_buf(), corpus_file],
        outputs: vec![SYSTEM_CKPT.into(), USER_CKPT.into(), "pretrain.csv".into()],
    })
}

fn train_config(a: &TrainArgs) -> CliResult<TrainConfig> {
    let mut config = match &a.config {
        Some(path) => {
            require(path)?;
            let text = std::fs::read_to_string(path)?;
            toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(n) = a.episodes {
        config.episodes = n;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    config.validate()?;
    Ok(config)
}

fn train_cmd(a: &TrainArgs) -> CliResult<StageRecord> {
    let world_dir = a.world.as_deref().expect("resolved");
    let out = a.out.as_deref().expect("resolved");
    let config = train_config(a)?;
    let world = load_world(world_dir)?;
    let (system, user) = match &a.init {
        Some(dir) => (load_policy(dir, Role::System)?, load_policy(dir, Role::User)?),
        None => random_policies(&world, config.seed),
    };
    let step = (config.episodes / 10).max(1);
    let mut next = step;
    let output = train_with_progress(a.algo, &config, &world, system, user, |m| {
        if m.episodes >= next {
            eprintln!(
                "{} episode {:>6}: success {:.2}, turns {:.2}, L_V {:.3}",
                a.algo, m.episodes, m.success, m.avg_turns, m.l_v
            );
            next += step;
        }
    })?;
    create_dir(out)?;
    write_metrics_csv(BufWriter::new(File::create(out.join(METRICS_FILE))?), &output.metrics)?;
    write_episodes_csv(BufWriter::new(File::create(out.join(EPISODES_FILE))?), &output.episodes)?;
    output.system.save(&out.join(SYSTEM_CKPT))?;
    output.user.save(&out.join(USER_CKPT))?;
    output.critic.save(out)?;
    std::fs::write(out.join("train.toml"), toml::to_string(&config).expect("train config serializes"))?;
    let mut inputs = vec![world_dir.to_path_buf()];
    inputs.extend(a.init.iter().cloned());
    inputs.extend(a.config.iter().cloned());
    Ok(StageRecord {
        config: json!({ "algo": a.algo, "train": config }),
        seeds: seeds(&[("train", config.seed)]),
        inputs,
        outputs: vec![METRICS_FILE.into(), EPISODES_FILE.into(), SYSTEM_CKPT.into(), USER_CKPT.into(), "train.toml".into()],
    })
}

enum Side {
    Rule,
    Policy(PathBuf),
}

fn parse_side(token: &str, a: &EvaluateArgs, role: Role) -> CliResult<Side> {
    let rule_alias = match role {
        Role::User => "rule-user",
        Role::System => "rule-sys",
    };
    Ok(match token {
        "rule" => Side::Rule,
        t if t == rule_alias => Side::Rule,
        "rule-user" | "rule-sys" => {
            return Err(CliError::config(format!("`{token}` cannot play the {} side", role.as_str())));
        }
        "trained" => Side::Policy(a.policies.clone().expect("resolved")),
        "sl" => Side::Policy(a.sl.clone().expect("resolved")),
        "" => return Err(CliError::config("empty side in --pair")),
        path => Side::Policy(abs(path.into())),
    })
}

fn evaluate_cmd(a: &EvaluateArgs) -> CliResult<StageRecord> {
    let world_dir = a.world.as_deref().expect("resolved");
    let goals_file = a.goals.as_deref().expect("resolved");
    let out = a.out.as_deref().expect("resolved");
    let (u_tok, s_tok) =
        a.pair.split_once(':').ok_or_else(|| CliError::config(format!("--pair `{}` is not USER:SYSTEM", a.pair)))?;
    let (u_side, s_side) = (parse_side(u_tok, a, Role::User)?, parse_side(s_tok, a, Role::System)?);
    let world = load_world(world_dir)?;
    require(goals_file)?;
    let goals = read_goals(goals_file)?;
    let mut inputs = vec![world_dir.to_path_buf(), goals_file.to_path_buf()];
    let user = match &u_side {
        Side::Rule => None,
        Side::Policy(dir) => {
            inputs.push(dir.join(USER_CKPT));
            Some(load_policy(dir, Role::User)?)
        }
    };
    let system = match &s_side {
        Side::Rule => None,
        Side::Policy(dir) => {
            inputs.push(dir.join(SYSTEM_CKPT));
            Some(load_policy(dir, Role::System)?)
        }
    };
    fn spec(p: &Option<DialogPolicy>) -> AgentSpec<'_> {
        p.as_ref().map_or(AgentSpec::Rule, AgentSpec::Policy)
    }
    let config = EpisodeConfig { max_turns: a.max_turns, ..EpisodeConfig::default() };
    let report = evaluate(&world, &goals, spec(&user), spec(&system), &config)?;
    create_dir(out)?;
    report.write_goals_csv(BufWriter::new(File::create(out.join("eval.csv"))?))?;
    let table = report.summary_table(&a.pair);
    std::fs::write(out.join("summary.txt"), &table)?;
    let summary = json!({
        "pair": a.pair,
        "overall": report.overall,
        "by_domain_count": report.by_domain_count,
        "by_domain": report.by_domain,
    });
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    print!("{table}");
    Ok(StageRecord {
        config: json!({ "pair": a.pair, "max_turns": a.max_turns, "goals": goals.len() }),
        seeds: BTreeMap::new(),
        inputs,
        outputs: vec!["eval.csv".into(), "summary.txt".into(), "summary.json".into()],
    })
}

fn run_label(dir: &Path) -> String {
    RunManifest::read(&dir.join(MANIFEST_FILE))
        .ok()
        .and_then(|m| match m.invocation {
            Command::Train(t) => Some(t.algo.to_string()),
            _ => None,
        })
        .unwrap_or_else(|| dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
}

fn report_cmd(a: &ReportArgs) -> CliResult<StageRecord> {
    let out = a.out.as_deref().expect("resolved");
    if a.bin == 0 || a.final_window == 0 {
        return Err(CliError::config("--bin and --final-window must be positive"));
    }
    let mut groups: BTreeMap<String, Vec<(String, Vec<madpl_core::trainer::EpisodeLog>)>> = BTreeMap::new();
    let mut inputs = Vec::new();
    for dir in &a.runs {
        let file = dir.join(EPISODES_FILE);
        require(&file)?;
        let logs = read_episodes_csv(&file).map_err(|e| CliError::malformed(e.to_string()))?;
        if logs.is_empty() {
            return Err(CliError::malformed(format!("{}: no episodes", file.display())));
        }
        groups.entry(run_label(dir)).or_default().push((dir.display().to_string(), logs));
        inputs.push(file);
    }
    create_dir(out)?;
    let mut outputs = vec![PathBuf::from("table.txt")];
    for (label, runs) in &groups {
        let name = format!("curves_{label}.csv");
        std::fs::write(out.join(&name), merge_curves(runs, a.bin)?)?;
        outputs.push(name.into());
    }
    let table_groups = groups.iter().map(|(k, v)| (k.clone(), v.iter().map(|(_, l)| l.clone()).collect())).collect();
    let table = results_table(&table_groups, a.final_window);
    std::fs::write(out.join("table.txt"), &table)?;
    print!("{table}");
    Ok(StageRecord {
        config: json!({ "bin": a.bin, "final_window": a.final_window }),
        seeds: BTreeMap::new(),
        inputs,
        outputs,
    })
}
