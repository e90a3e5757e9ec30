use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use craftplan::commands::{self, Agent, Ctx, ModeChoice, ABLATION_VARIANTS};
use craftplan::config::parse_config;
use craftplan_core::harness::PipelineConfig;

#[derive(Parser)]
#[command(
    name = "craftplan",
    version,
    about = "Hierarchical subgoal planning in crafting text environments"
)]
struct Cli {
    /// Run seed; overrides `seed` from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat `key = value` file overriding the default configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a recipe universe.
    GenUniverse,
    /// Generate train, val and test demonstrations and the validity classifier.
    GenData,
    /// Decompose the training demonstrations into subgoal datasets.
    Decompose(ModeArgs),
    /// Behaviour-clone one agent.
    Pretrain {
        #[arg(value_enum)]
        agent: AgentArg,
        #[command(flatten)]
        mode: ModeArgs,
    },
    /// Fine-tune one agent inside its world model.
    Finetune {
        #[arg(value_enum)]
        agent: AgentArg,
        #[command(flatten)]
        mode: ModeArgs,
    },
    /// Evaluate saved checkpoints on the test split.
    Eval {
        #[command(flatten)]
        mode: ModeArgs,
        /// Use the pretrained checkpoints.
        #[arg(long)]
        pretrained: bool,
    },
    /// Train and score every ablation variant, then write the report.
    Ablate {
        /// Seeds to run, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
        seeds: Vec<u64>,
    },
    /// Rebuild the report from the ablation files.
    Report,
}

#[derive(Clone, Copy, ValueEnum)]
enum AgentArg {
    Employee,
    Manager,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeName {
    Llm,
    Hand,
    NoQuantity,
    Flat,
    Remap,
}

#[derive(Args, Clone, Copy)]
struct ModeArgs {
    /// Subgoal decomposition.
    #[arg(long, value_enum, default_value = "llm")]
    mode: ModeName,
    /// Fraction of items permuted by the remap mode.
    #[arg(long, default_value_t = 0.5)]
    p: f64,
}

impl ModeArgs {
    fn choice(self) -> ModeChoice {
        match self.mode {
            ModeName::Llm => ModeChoice::Llm,
            ModeName::Hand => ModeChoice::Hand,
            ModeName::NoQuantity => ModeChoice::NoQuantity,
            ModeName::Flat => ModeChoice::Flat,
            ModeName::Remap => ModeChoice::Remap(self.p),
        }
    }
}

fn agent(a: AgentArg) -> Agent {
    match a {
        AgentArg::Employee => Agent::Employee,
        AgentArg::Manager => Agent::Manager,
    }
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read {}", path.display()))?;
            parse_config(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => PipelineConfig::default(),
    };
    let ctx = Ctx {
        seed: cli.seed.unwrap_or(cfg.train.seed),
        cfg,
        out: cli.out,
    };
    match cli.command {
        Command::GenUniverse => {
            let u = commands::gen_universe(&ctx)?;
            println!("items={} recipes={}", u.items.len(), u.recipes.len());
        }
        Command::GenData => {
            let s = commands::gen_data(&ctx)?;
            print!("train={} val={} test={}", s.train, s.val, s.test);
            match s.classifier_accuracy {
                Some(a) => println!(" classifier_accuracy={a:.4}"),
                None => println!(" classifier=none"),
            }
        }
        Command::Decompose(m) => {
            let s = commands::decompose(&ctx, m.choice())?;
            println!(
                "kept={} dropped={} phi={} phi0={}",
                s.kept, s.dropped, s.phi, s.phi0
            );
        }
        Command::Pretrain { agent: a, mode } => {
            println!(
                "{}",
                commands::pretrain(&ctx, agent(a), mode.choice())?.display()
            );
        }
        Command::Finetune { agent: a, mode } => {
            println!(
                "{}",
                commands::finetune(&ctx, agent(a), mode.choice())?.display()
            );
        }
        Command::Eval { mode, pretrained } => {
            let r = commands::eval(&ctx, mode.choice(), pretrained)?;
            print!("{}", std::fs::read_to_string(&r.path)?);
        }
        Command::Ablate { seeds } => {
            let rows = commands::ablate(&ctx, &seeds, &ABLATION_VARIANTS)?;
            let absent = rows.iter().filter(|r| r.score.is_none()).count();
            println!("rows={} absent={absent}", rows.len());
        }
        Command::Report => {
            let (table, curves) = commands::report_cmd(&ctx)?;
            println!("{}\n{}", table.display(), curves.display());
        }
    }
    Ok(())
}
