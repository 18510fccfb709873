use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Debug, Clone, Parser)]
#[command(name = "bvfield", version, about = "Gaussian fields from elliptic precision operators")]
pub struct Cli {
    /// Mesh file (JSON).
    #[arg(long, global = true)]
    pub mesh: Option<PathBuf>,
    /// Model file (JSON).
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Observations CSV: x[,y],value,noise_sd.
    #[arg(long, global = true)]
    pub obs: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Interpolate observations exactly instead of treating them as noisy.
    #[arg(long, global = true)]
    pub hard: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Write the precision matrix and its dof map.
    Assemble,
    /// Posterior mean and standard deviation at every node.
    Krige,
    /// Conditional (or, without --obs, unconditional) samples.
    Simulate {
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
    /// Schur-complement reduction onto a node subset.
    Reduce {
        /// `all`, `boundary`, or comma-separated node indices.
        #[arg(long, default_value = "all")]
        keep: String,
    },
    /// Empirical variogram by pair class from prior samples.
    Variogram {
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        #[arg(long, default_value_t = 15)]
        bins: usize,
        /// Largest lag; defaults to half the domain diameter.
        #[arg(long)]
        max_lag: Option<f64>,
        /// Boundary buffer; defaults to 1/m.
        #[arg(long)]
        buffer: Option<f64>,
    },
    /// Dirichlet vs Neumann variograms of the same operator.
    BcCompare,
    /// Covariance column across an interface for a list of penalties.
    InterfaceSweep {
        #[arg(long, value_delimiter = ',', default_value = "0,1,10,100")]
        alphas: Vec<f64>,
        /// Source location; defaults to midway between the left end and the first interface.
        #[arg(long, allow_negative_numbers = true)]
        source: Option<f64>,
    },
    /// Maximum-likelihood fit of m, alpha and anisotropy.
    Fit {
        #[arg(long, value_delimiter = ',', default_value = "m")]
        params: Vec<String>,
        #[arg(long, default_value_t = 400)]
        budget: usize,
        #[arg(long)]
        init_m: Option<f64>,
        #[arg(long)]
        init_alpha: Option<f64>,
        #[arg(long)]
        init_anisotropy: Option<f64>,
    },
    /// Kriging on interval x circle through circle-mode decomposition.
    Modes {
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        /// Highest retained circle mode N.
        #[arg(long, default_value_t = 8)]
        modes: usize,
        /// Number of equally spaced output angles.
        #[arg(long, default_value_t = 8)]
        angles: usize,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Assemble => "assemble",
            Command::Krige => "krige",
            Command::Simulate { .. } => "simulate",
            Command::Reduce { .. } => "reduce",
            Command::Variogram { .. } => "variogram",
            Command::BcCompare => "bc-compare",
            Command::InterfaceSweep { .. } => "interface-sweep",
            Command::Fit { .. } => "fit",
            Command::Modes { .. } => "modes",
        }
    }
}
