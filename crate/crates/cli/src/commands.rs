use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use soc_agent::install::{install_daemon, InstallMode};
use soc_agent::AgentConfig;
use soc_autoconfig::formatter::Questionnaire;
use soc_autoconfig::vault::is_vault;
use soc_autoconfig::{
    execute_plan, formatter, parse_topology, plan_deployment, vault_decrypt, vault_encrypt, Answers, Integrations, LocalTransport,
    PlanOptions, SshStub,
};
use soc_core::package::{self, PackageSize};
use soc_manager::{ApiServer, IngestServer, Manager, ManagerConfig};

use crate::harness;
use crate::scenario::Scenario;

#[derive(Parser)]
#[command(name = "soc", version, about = "Plugin-based security monitoring: manager, agent and deployment tools")]
pub struct Cli {
    /// More logging (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the manager.
    Manager {
        #[command(subcommand)]
        command: ManagerCommand,
    },
    /// Run the agent daemon or manage its scheduler entry.
    Agent {
        #[command(subcommand)]
        command: AgentCommand,
    },
    /// Build and check plugin archives.
    Plugin {
        #[command(subcommand)]
        command: PluginCommand,
    },
    /// Write or read topology files.
    Topology {
        #[command(subcommand)]
        command: TopologyCommand,
    },
    /// Install the hosts listed in a topology file.
    Deploy(DeployArgs),
    /// Run a scenario file against an in-process manager and agents.
    Simulate {
        scenario: PathBuf,
        /// Print the interaction transcript.
        #[arg(long)]
        transcript: bool,
        /// Print the full report as JSON instead of the summary.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand)]
enum ManagerCommand {
    Serve {
        #[arg(long, env = "SOC_MANAGER_CONFIG")]
        config: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum AgentCommand {
    Run(AgentConfigArg),
    /// Register the daemon with the host scheduler.
    Startup(AgentConfigArg),
    /// Remove the scheduler entry.
    Delstartup(AgentConfigArg),
}

#[derive(Args)]
struct AgentConfigArg {
    #[arg(long, env = "SOC_AGENT_CONFIG")]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Size {
    Full,
    Minimal,
}

#[derive(Subcommand)]
enum PluginCommand {
    /// Zip a plugin directory.
    Pack {
        dir: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "full")]
        size: Size,
    },
    /// Check an archive and print its metadata.
    Validate { archive: PathBuf },
    /// Write the template plugin archive.
    Template {
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum TopologyCommand {
    /// Ask for the hosts (or read answers from a file) and write a topology file.
    Format {
        /// Only add agents to an existing deployment.
        #[arg(long)]
        agents_only: bool,
        /// Answers as TOML instead of prompting.
        #[arg(long)]
        answers: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Encrypt the topology file.
        #[arg(long)]
        seal: bool,
        #[arg(long)]
        passphrase_file: Option<PathBuf>,
    },
    /// Parse a topology file (plain or sealed) and print its entries.
    Parse {
        file: PathBuf,
        #[arg(long)]
        passphrase_file: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportKind {
    Local,
    SshStub,
}

#[derive(Args)]
struct DeployArgs {
    #[arg(long)]
    topology: PathBuf,
    #[arg(long, value_enum, default_value = "local")]
    transport: TransportKind,
    /// Where the local transport installs everything.
    #[arg(long, default_value = "soc-deployment")]
    root: PathBuf,
    /// Ticketing webhook URL.
    #[arg(long)]
    webhook: Option<String>,
    #[arg(long)]
    reputation_key: Option<String>,
    /// Reputation service base URL, or `mock:<file>`.
    #[arg(long)]
    reputation_backend: Option<String>,
    /// Ask for the integrations instead of reading them from flags.
    #[arg(long)]
    ask_integrations: bool,
    #[arg(long, default_value_t = 55002)]
    api_port: u16,
    #[arg(long, default_value_t = 1514)]
    ingest_port: u16,
    #[arg(long)]
    passphrase_file: Option<PathBuf>,
    /// Stop the daemons again once the run has been verified.
    #[arg(long)]
    teardown: bool,
}

/// Parse `args` and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Manager { command: ManagerCommand::Serve { config } } => serve_manager(config.as_deref()),
        Command::Agent { command } => agent(command),
        Command::Plugin { command } => plugin(command),
        Command::Topology { command } => topology(command),
        Command::Deploy(args) => deploy(args),
        Command::Simulate { scenario, transcript, json } => simulate(&scenario, transcript, json),
    }
}

fn stop_flag() -> Result<Arc<AtomicBool>> {
    let stop = Arc::new(AtomicBool::new(false));
    let s = stop.clone();
    ctrlc::set_handler(move || s.store(true, Ordering::SeqCst)).context("cannot install the signal handler")?;
    Ok(stop)
}

fn serve_manager(path: Option<&Path>) -> Result<i32> {
    let mut config = ManagerConfig::load(path)?;
    config.apply_env(|k| std::env::var(k).ok())?;
    let bind = config.bind.clone();
    let (api_port, ingest_port) = (config.api_port, config.ingest_port);
    let manager = Manager::open(config)?;
    let api = ApiServer::spawn(manager.clone(), &format!("{bind}:{api_port}")).context("cannot bind the API port")?;
    let ingest = IngestServer::spawn(manager.clone(), &format!("{bind}:{ingest_port}")).context("cannot bind the ingest port")?;
    log::info!("manager API on {}, log ingest on {}", api.base_url(), ingest.local_addr());
    let stop = stop_flag()?;
    while !stop.load(Ordering::SeqCst) {
        std::thread::sleep(Duration::from_millis(100));
    }
    manager.shutdown();
    Ok(0)
}

fn agent_config(path: Option<&Path>) -> Result<AgentConfig> {
    let mut config = AgentConfig::load(path)?;
    config.apply_env(|k| std::env::var(k).ok())?;
    config.validate()?;
    Ok(config)
}

fn agent(command: AgentCommand) -> Result<i32> {
    let (arg, mode) = match command {
        AgentCommand::Run(arg) => {
            let config = agent_config(arg.config.as_deref())?;
            let stats = soc_agent::run(config, stop_flag()?)?;
            log::info!("agent stopped: {stats:?}");
            return Ok(0);
        }
        AgentCommand::Startup(arg) => (arg, InstallMode::Startup),
        AgentCommand::Delstartup(arg) => (arg, InstallMode::Delstartup),
    };
    let config = agent_config(arg.config.as_deref())?;
    let exe = std::env::current_exe().context("cannot locate this program")?;
    let mut launch = format!("{} agent run", exe.display());
    if let Some(p) = &arg.config {
        let p = fs::canonicalize(p).unwrap_or_else(|_| p.clone());
        launch.push_str(&format!(" --config {}", p.display()));
    }
    install_daemon(&config, mode, &launch)?;
    println!("{}", soc_agent::install::descriptor_path(&config).display());
    Ok(0)
}

fn write_out(output: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match output {
        Some(p) => fs::write(p, bytes).with_context(|| format!("cannot write {}", p.display())),
        None => io::stdout().write_all(bytes).context("cannot write to stdout"),
    }
}

fn plugin(command: PluginCommand) -> Result<i32> {
    match command {
        PluginCommand::Pack { dir, output, size } => {
            let pkg = package::read_dir(&dir).with_context(|| format!("{}", dir.display()))?;
            let size = match size {
                Size::Full => PackageSize::Full,
                Size::Minimal => PackageSize::Minimal,
            };
            let archive = package::pack(&pkg, size)?;
            let output = output.unwrap_or_else(|| PathBuf::from(format!("{}.zip", pkg.metadata.id)));
            write_out(Some(&output), &archive)?;
            println!("{}", output.display());
        }
        PluginCommand::Validate { archive } => {
            let bytes = fs::read(&archive).with_context(|| format!("cannot read {}", archive.display()))?;
            match package::validate_package(&bytes) {
                Ok(pkg) => {
                    let m = &pkg.metadata;
                    println!("{} {} version {} ({}, {} members)", m.id, m.name, m.version, pkg.size().as_str(), pkg.members().len());
                }
                Err(e) => {
                    eprintln!("invalid: {e}");
                    return Ok(1);
                }
            }
        }
        PluginCommand::Template { output } => {
            let archive = package::pack(&package::template_package(), PackageSize::Full)?;
            write_out(output.as_deref(), &archive)?;
        }
    }
    Ok(0)
}

fn passphrase(file: Option<&Path>, confirm: bool) -> Result<String> {
    if let Some(p) = file {
        let text = fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
        return Ok(text.trim_end_matches(['\r', '\n']).to_string());
    }
    if let Ok(v) = std::env::var("SOC_VAULT_PASSPHRASE") {
        return Ok(v);
    }
    let first = rpassword::prompt_password("Vault passphrase: ")?;
    if confirm && rpassword::prompt_password("Repeat passphrase: ")? != first {
        bail!("passphrases differ");
    }
    Ok(first)
}

fn read_topology(file: &Path, passphrase_file: Option<&Path>) -> Result<String> {
    let bytes = fs::read(file).with_context(|| format!("cannot read {}", file.display()))?;
    if !is_vault(&bytes) {
        return String::from_utf8(bytes).context("topology file is not text");
    }
    let pass = passphrase(passphrase_file, false)?;
    let plain = vault_decrypt(&String::from_utf8_lossy(&bytes), &pass)?;
    String::from_utf8(plain).context("decrypted topology is not text")
}

fn topology(command: TopologyCommand) -> Result<i32> {
    match command {
        TopologyCommand::Format { agents_only, answers, output, seal, passphrase_file } => {
            let answers = match answers {
                Some(p) => {
                    let text = fs::read_to_string(&p).with_context(|| format!("cannot read {}", p.display()))?;
                    let mut a: Answers = toml::from_str(&text).with_context(|| format!("{}", p.display()))?;
                    a.agents_only |= agents_only;
                    a
                }
                None => {
                    let stdin = io::stdin();
                    let mut input = stdin.lock();
                    let mut prompts = io::stderr();
                    Questionnaire::new(&mut input, &mut prompts).run(agents_only)?
                }
            };
            let text = formatter(&answers)?;
            let bytes = if seal { vault_encrypt(text.as_bytes(), &passphrase(passphrase_file.as_deref(), true)?)?.into_bytes() } else { text.into_bytes() };
            write_out(output.as_deref(), &bytes)?;
        }
        TopologyCommand::Parse { file, passphrase_file } => {
            let text = read_topology(&file, passphrase_file.as_deref())?;
            for e in parse_topology(&text)? {
                println!("{:<16} {:<8} {:<10} {}", e.ip, e.device_type.token(), e.ssh_user, e.key_path);
            }
        }
    }
    Ok(0)
}

fn ask(input: &mut impl BufRead, question: &str) -> Result<Option<String>> {
    eprint!("{question} (blank to skip): ");
    let mut line = String::new();
    input.read_line(&mut line)?;
    let line = line.trim();
    Ok((!line.is_empty()).then(|| line.to_string()))
}

fn deploy(args: DeployArgs) -> Result<i32> {
    let text = read_topology(&args.topology, args.passphrase_file.as_deref())?;
    let entries = parse_topology(&text)?;
    let mut integrations = Integrations {
        ticket_webhook: args.webhook,
        reputation_key: args.reputation_key,
        reputation_backend: args.reputation_backend,
    };
    if args.ask_integrations {
        let stdin = io::stdin();
        let mut input = stdin.lock();
        integrations.ticket_webhook = ask(&mut input, "Ticketing webhook URL")?.or(integrations.ticket_webhook);
        integrations.reputation_backend = ask(&mut input, "Reputation service URL")?.or(integrations.reputation_backend);
        integrations.reputation_key = ask(&mut input, "Reputation API key")?.or(integrations.reputation_key);
    }
    let options = PlanOptions { api_port: args.api_port, ingest_port: args.ingest_port };
    let plan = plan_deployment(&entries, &integrations, options)?;
    let result = match args.transport {
        TransportKind::Local => {
            let program = std::env::current_exe().context("cannot locate this program")?;
            fs::create_dir_all(&args.root).with_context(|| format!("cannot create {}", args.root.display()))?;
            let mut local = LocalTransport::new(fs::canonicalize(&args.root)?, program);
            let result = execute_plan(&plan, &mut local);
            if args.teardown {
                local.teardown();
            }
            result
        }
        TransportKind::SshStub => {
            let mut stub = SshStub::new();
            let result = execute_plan(&plan, &mut stub);
            for line in &stub.transcript {
                println!("{line}");
            }
            result
        }
    };
    let code = match &result {
        Ok(report) => {
            print!("{}", report.render());
            0
        }
        Err(failure) => {
            print!("{}", failure.report.render());
            eprintln!("error: {failure}");
            1
        }
    };
    Ok(code)
}

fn simulate(path: &Path, transcript: bool, json: bool) -> Result<i32> {
    let scenario = Scenario::load(path)?;
    let report = harness::simulate(&scenario)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        if transcript {
            print!("{}", report.transcript_text());
        }
        print!("{}", report.summary());
    }
    Ok(if report.passed() { 0 } else { 1 })
}
