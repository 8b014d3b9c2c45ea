use std::path::PathBuf;

use adaptdepth::scenes::{generate_dataset, CorridorRecipe};
use serde::{Deserialize, Serialize};

use crate::config::{self, Overrides};
use crate::error::CliError;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthRun {
    pub spec: CorridorRecipe,
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct SynthArgs {
    /// Corridor recipe (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    /// Dataset directory to create.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn run(args: &SynthArgs) -> Result<(), CliError> {
    let mut flags = Overrides::default();
    flags.set("seed", args.seed);
    let spec: CorridorRecipe = config::resolve(Some(&args.spec), flags)?;
    let run = SynthRun {
        spec,
        out: args.out.clone(),
    };
    let scene = run.spec.build().map_err(CliError::Config)?;
    let manifest = generate_dataset(&scene, &run.out)?;
    config::write_resolved(&run.out, &run)?;
    eprintln!(
        "wrote {} frames ({}x{}) to {}",
        manifest.frames,
        manifest.width,
        manifest.height,
        run.out.display()
    );
    Ok(())
}
