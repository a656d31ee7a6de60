//! `exgen`: train knowledge tracers and exercise generators, decode
//! constrained exercises, recommend curricula, and run simulation studies.
//!
//! Runtime failures print a JSON diagnostic on stderr and exit with code 1;
//! usage errors exit with clap's code 2.

mod artifacts;
mod commands;
mod corpus_file;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "exgen", version, about = "Knowledge tracing and exercise generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a 5-column interaction-log TSV into a corpus file.
    Ingest(commands::IngestArgs),
    /// Generate a synthetic corpus with a ground-truth mastery oracle.
    Synth(commands::SynthArgs),
    /// Train the knowledge tracer alone.
    TrainKt(commands::TrainKtArgs),
    /// Train the generator against a frozen tracer.
    TrainGen(commands::TrainGenArgs),
    /// Train tracer and generator jointly.
    TrainJoint(commands::TrainJointArgs),
    /// Decode one exercise under difficulty and target-word constraints.
    Generate(commands::GenerateArgs),
    /// Recommend the next exercise for a student.
    Recommend(commands::RecommendArgs),
    /// Score tracer predictions and generation quality on held-out data.
    Eval(commands::EvalArgs),
    /// Run a simulation study (calibration, efficiency, or grid).
    Simulate(commands::SimulateArgs),
    /// Reduce simulation artifacts to plottable series.
    PlotData(commands::PlotDataArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(a),
        Command::Synth(a) => commands::synth(a),
        Command::TrainKt(a) => commands::train_kt(a),
        Command::TrainGen(a) => commands::train_gen(a),
        Command::TrainJoint(a) => commands::train_joint(a),
        Command::Generate(a) => commands::generate(a),
        Command::Recommend(a) => commands::recommend(a),
        Command::Eval(a) => commands::eval(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::PlotData(a) => commands::plot_data(a),
    };
    if let Err(err) = result {
        let diag = serde_json::json!({ "error": format!("{err:#}") });
        eprintln!("{diag}");
        std::process::exit(1);
    }
}
